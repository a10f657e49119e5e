//! Laplacian mesh morphing with anchor and control constraints.
//!
//! Differential coordinates δ_i = V_i − Σ_j w_ij·V_j capture local shape;
//! morphing solves the stacked least-squares system
//!
//! ```text
//! | L |        | Δ |
//! | C | · V' = | U |
//! ```
//!
//! where C holds one weighted identity row per anchored or controlled vertex.
//! The normal equations are factored once (sparse Cholesky) and reused for
//! the x, y and z right-hand sides.

pub mod weights;

use crate::ellipsoid::GraspSpace;
use crate::mesh::Mesh;
use nalgebra::{DMatrix, Point3, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use std::collections::BTreeMap;
use thiserror::Error;

pub use weights::{weight_scheme, weight_scheme_names, GaussUniform, Uniform, WeightScheme};

pub type MorphResult<T> = Result<T, MorphError>;

#[derive(Debug, Error)]
pub enum MorphError {
    #[error("constraint references vertex {vertex}, but the mesh has {vertex_count} vertices")]
    BadVertex { vertex: usize, vertex_count: usize },

    #[error("vertex {0} is both an anchor and a control")]
    ConflictingConstraint(usize),

    #[error("no anchors or controls; the morph system is rank deficient")]
    Unconstrained,

    #[error("vertex {0} has no neighbors; its Laplacian row is undefined")]
    IsolatedVertex(usize),

    #[error("sparse Cholesky failed; the normal matrix is not positive definite")]
    Factorization,

    #[error(
        "morph target for vertex {vertex} lies outside the grasp space \
         (containment slack {slack:.3e})"
    )]
    TargetOutsideSpace { vertex: usize, slack: f64 },

    #[error("unknown weight scheme {requested:?}; available: {available:?}")]
    UnknownWeightScheme {
        requested: String,
        available: Vec<&'static str>,
    },
}

/// Assembled morph problem: Laplacian, differential coordinates and the
/// constraint sets.
pub struct MorphSystem {
    vertex_count: usize,
    laplacian: CscMatrix<f64>,
    pub deltas: Vec<Vector3<f64>>,
    pub anchors: BTreeMap<usize, Point3<f64>>,
    pub controls: BTreeMap<usize, Point3<f64>>,
    /// Weight of every constraint row (anchors and controls alike).
    pub constraint_weight: f64,
}

/// Solved morph: new vertex positions and the reached objective.
#[derive(Debug, Clone)]
pub struct Morph {
    pub vertices: Vec<Point3<f64>>,
    /// ‖M·V' − b‖ over all three axes (square root of the energy).
    pub residual_norm: f64,
    /// Deformation energy: Σ‖δ_i − δ'_i‖² plus the weighted constraint
    /// penalties, recomputed from the morphed vertices.
    pub energy: f64,
}

/// Laplacian L = I − W (CSC) and differential coordinates of the mesh.
pub fn build_laplacian(
    mesh: &Mesh,
    scheme: &dyn WeightScheme,
) -> MorphResult<(CscMatrix<f64>, Vec<Vector3<f64>>)> {
    let s = mesh.vertex_count();
    let mut coo = CooMatrix::new(s, s);
    let mut deltas = Vec::with_capacity(s);
    for v in 0..s {
        let neighbors = mesh.neighbors(v);
        if neighbors.is_empty() {
            return Err(MorphError::IsolatedVertex(v));
        }
        let w = scheme.weights(mesh, v);
        coo.push(v, v, 1.0);
        let mut avg = Vector3::zeros();
        for (k, &j) in neighbors.iter().enumerate() {
            coo.push(v, j, -w[k]);
            avg += w[k] * mesh.vertices[j].coords;
        }
        deltas.push(mesh.vertices[v].coords - avg);
    }
    Ok((CscMatrix::from(&coo), deltas))
}

impl MorphSystem {
    pub fn new(mesh: &Mesh, scheme: &dyn WeightScheme) -> MorphResult<Self> {
        let (laplacian, deltas) = build_laplacian(mesh, scheme)?;
        Ok(MorphSystem {
            vertex_count: mesh.vertex_count(),
            laplacian,
            deltas,
            anchors: BTreeMap::new(),
            controls: BTreeMap::new(),
            constraint_weight: 1.0,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    fn check_constraints(&self) -> MorphResult<()> {
        for &v in self.anchors.keys().chain(self.controls.keys()) {
            if v >= self.vertex_count {
                return Err(MorphError::BadVertex {
                    vertex: v,
                    vertex_count: self.vertex_count,
                });
            }
        }
        if let Some(&v) = self.anchors.keys().find(|v| self.controls.contains_key(v)) {
            return Err(MorphError::ConflictingConstraint(v));
        }
        if self.anchors.is_empty() && self.controls.is_empty() {
            return Err(MorphError::Unconstrained);
        }
        Ok(())
    }

    /// Stacked system matrix [L; C] and right-hand side columns (x, y, z).
    fn stacked(&self) -> (CscMatrix<f64>, DMatrix<f64>) {
        let s = self.vertex_count;
        let c = self.anchors.len() + self.controls.len();
        let mut coo = CooMatrix::new(s + c, s);
        for (col, col_vec) in self.laplacian.col_iter().enumerate() {
            for (&row, &val) in col_vec.row_indices().iter().zip(col_vec.values()) {
                coo.push(row, col, val);
            }
        }
        let mut b = DMatrix::zeros(s + c, 3);
        for (i, d) in self.deltas.iter().enumerate() {
            for k in 0..3 {
                b[(i, k)] = d[k];
            }
        }
        for (row_offset, (&v, target)) in self
            .anchors
            .iter()
            .chain(self.controls.iter())
            .enumerate()
            .map(|(r, kv)| (s + r, kv))
        {
            coo.push(row_offset, v, self.constraint_weight);
            for k in 0..3 {
                b[(row_offset, k)] = self.constraint_weight * target[k];
            }
        }
        (CscMatrix::from(&coo), b)
    }

    /// Solves the morph through the normal equations with one sparse
    /// Cholesky factorization shared by all three axes.
    pub fn solve(&self) -> MorphResult<Morph> {
        self.check_constraints()?;
        let (m, b) = self.stacked();
        let mt = m.transpose();
        let normal = &mt * &m;
        let rhs = &mt * &b;
        let chol = CscCholesky::factor(&normal).map_err(|_| MorphError::Factorization)?;
        let x = chol.solve(&rhs);

        let residual = &m * &x - &b;
        let residual_norm = residual.norm();
        let vertices: Vec<Point3<f64>> = (0..self.vertex_count)
            .map(|i| Point3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)]))
            .collect();
        let energy = self.energy(&vertices);
        Ok(Morph {
            vertices,
            residual_norm,
            energy,
        })
    }

    /// Deformation energy of candidate positions, recomputed entry by entry
    /// (independent of the solve path): Σ_i ‖δ_i − (V'_i − Σ_j w_ij V'_j)‖²
    /// plus weighted anchor and control penalties.
    pub fn energy(&self, positions: &[Point3<f64>]) -> f64 {
        let mut total = 0.0;
        let mut delta_prime = vec![Vector3::zeros(); self.vertex_count];
        for i in 0..self.vertex_count {
            delta_prime[i] += positions[i].coords;
        }
        // Column-major walk of L accumulates L·V' without forming it twice.
        for (col, col_vec) in self.laplacian.col_iter().enumerate() {
            for (&row, &val) in col_vec.row_indices().iter().zip(col_vec.values()) {
                if row != col {
                    delta_prime[row] += val * positions[col].coords;
                }
            }
        }
        for i in 0..self.vertex_count {
            total += (self.deltas[i] - delta_prime[i]).norm_squared();
        }
        let w2 = self.constraint_weight * self.constraint_weight;
        for (&v, target) in self.anchors.iter().chain(self.controls.iter()) {
            total += w2 * (positions[v] - target).norm_squared();
        }
        total
    }
}

/// Options for [`morph_by_grasp`].
pub struct GraspMorphOptions {
    pub scheme: Box<dyn WeightScheme>,
    pub constraint_weight: f64,
    /// Containment slack when testing targets against the grasp space.
    pub membership_slack: f64,
}

impl Default for GraspMorphOptions {
    fn default() -> Self {
        GraspMorphOptions {
            scheme: Box::new(Uniform),
            constraint_weight: 1.0,
            membership_slack: 1e-6,
        }
    }
}

/// Morphs a mesh toward fingertip targets inside a grasp space.
///
/// Every target must lie inside the ellipsoid union. Ellipsoids containing at
/// least one target are the finger-covering set; vertices outside all of them
/// become anchors at their rest positions, target vertices become controls,
/// and the rest follow the Laplacian.
pub fn morph_by_grasp(
    mesh: &Mesh,
    space: &GraspSpace,
    targets: &BTreeMap<usize, Point3<f64>>,
    options: &GraspMorphOptions,
) -> MorphResult<(Mesh, Morph)> {
    for (&v, t) in targets {
        if v >= mesh.vertex_count() {
            return Err(MorphError::BadVertex {
                vertex: v,
                vertex_count: mesh.vertex_count(),
            });
        }
        let slack = space.best_slack(t);
        if slack > options.membership_slack {
            return Err(MorphError::TargetOutsideSpace { vertex: v, slack });
        }
    }

    let covering: Vec<&crate::ellipsoid::ObliqueEllipsoid> = space
        .ellipsoids
        .iter()
        .filter(|e| targets.values().any(|t| e.contains(t, options.membership_slack)))
        .collect();

    let mut system = MorphSystem::new(mesh, options.scheme.as_ref())?;
    system.constraint_weight = options.constraint_weight;
    system.controls = targets.clone();
    for v in 0..mesh.vertex_count() {
        if targets.contains_key(&v) {
            continue;
        }
        let inside_covering = covering
            .iter()
            .any(|e| e.contains(&mesh.vertices[v], options.membership_slack));
        if !inside_covering {
            system.anchors.insert(v, mesh.vertices[v]);
        }
    }

    let morph = system.solve()?;
    let morphed = Mesh::from_vertices_faces(morph.vertices.clone(), mesh.faces.clone())
        .expect("morphed mesh keeps the face list of a valid mesh");
    Ok((morphed, morph))
}
