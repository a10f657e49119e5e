//! Laplacian weight schemes, selectable by name.

use crate::mesh::Mesh;

/// Produces the neighbor weights of one Laplacian row.
pub trait WeightScheme: Send + Sync {
    fn name(&self) -> &'static str;

    /// Weights aligned with `mesh.neighbors(v)`; must sum to 1.
    fn weights(&self, mesh: &Mesh, v: usize) -> Vec<f64>;
}

/// w_ij = 1 / card(N_i).
pub struct Uniform;

impl WeightScheme for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weights(&self, mesh: &Mesh, v: usize) -> Vec<f64> {
        let n = mesh.neighbors(v).len();
        vec![1.0 / n as f64; n]
    }
}

/// Distance-attenuated variant: w_ij ∝ exp(−(d_ij/d̄_i)²) / card(N_i) with
/// d̄_i the mean incident edge length, renormalized to sum 1. Falls back to
/// uniform weights on degenerate (zero-length) one-rings.
pub struct GaussUniform;

impl WeightScheme for GaussUniform {
    fn name(&self) -> &'static str {
        "gauss-uniform"
    }

    fn weights(&self, mesh: &Mesh, v: usize) -> Vec<f64> {
        let neighbors = mesh.neighbors(v);
        let lengths: Vec<f64> = neighbors
            .iter()
            .map(|&j| (mesh.vertices[j] - mesh.vertices[v]).norm())
            .collect();
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        if mean <= 0.0 {
            return Uniform.weights(mesh, v);
        }
        let raw: Vec<f64> = lengths.iter().map(|d| (-(d / mean).powi(2)).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Looks a scheme up by its registered name.
pub fn weight_scheme(name: &str) -> Option<Box<dyn WeightScheme>> {
    match name {
        "uniform" => Some(Box::new(Uniform)),
        "gauss-uniform" => Some(Box::new(GaussUniform)),
        _ => None,
    }
}

pub fn weight_scheme_names() -> Vec<&'static str> {
    vec!["uniform", "gauss-uniform"]
}
