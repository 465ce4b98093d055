//! Stacked per-species nodal fields.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldKind {
    /// A density `F_i ≥ 0`.
    Density,
    /// A perturbation `f_i = (F_i − M_i)/√M_i`.
    Perturbation,
}

/// Nodal values ordered species-major, node lexicographic.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    pub values: Vec<f64>,
    pub n_species: usize,
    pub kind: FieldKind,
}

impl DistributionField {
    pub fn new(values: Vec<f64>, n_species: usize, kind: FieldKind) -> Self {
        assert!(n_species > 0 && values.len() % n_species == 0, "field length not divisible by species count");
        Self { values, n_species, kind }
    }

    pub fn zeros(n_species: usize, block: usize, kind: FieldKind) -> Self {
        Self::new(vec![0.0; n_species * block], n_species, kind)
    }

    pub fn block_len(&self) -> usize {
        self.values.len() / self.n_species
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let g = self.block_len();
        &self.values[i * g..(i + 1) * g]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let g = self.block_len();
        &mut self.values[i * g..(i + 1) * g]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.values.iter().map(|v| c * v).collect(), self.n_species, self.kind)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
