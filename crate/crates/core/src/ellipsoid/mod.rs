//! Minimum-volume enclosing ellipsoids and oblique-ellipsoid grasp spaces.
//!
//! An ellipsoid is carried both as a quadratic form `A` with center `c`
//! (point `x` inside iff `(x-c)ᵀ A (x-c) ≤ 1`) and in decomposed form:
//! semi-axes plus Z-Y-X rotation angles. The rotation convention follows the
//! row-vector affine map `[x y z] ← [x y z]·R` with `R = Rz·Ry·Rx`, which
//! makes the form reconstruct as `A = Rᵀ·diag(x_r⁻², y_r⁻², z_r⁻²)·R`.

pub mod space;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use space::{build_grasp_space, GraspSpace, GraspSpaceParams};

pub type EllipsoidResult<T> = Result<T, EllipsoidError>;

#[derive(Debug, Error)]
pub enum EllipsoidError {
    #[error("minimum-volume ellipsoid needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error(
        "point set is degenerate (affine rank {rank} < 3); an enclosing ellipsoid is not unique"
    )]
    DegenerateInput { rank: usize },

    #[error(
        "minimum-volume ellipsoid did not converge within {iterations} iterations \
         (containment residual {residual:.3e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("quadratic form is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("grasp space build failed: {0}")]
    SpaceBuild(String),
}

/// Iteration parameters for [`mvee`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MveeParams {
    /// Approximation tolerance: all points end up inside `1 + eps` of the
    /// form, and support points no deeper than `1 - eps`.
    pub eps: f64,
    pub max_iterations: usize,
}

impl Default for MveeParams {
    fn default() -> Self {
        MveeParams {
            eps: 1e-4,
            max_iterations: 10_000,
        }
    }
}

/// Ellipsoid in world coordinates: quadratic form plus its decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObliqueEllipsoid {
    /// Center P_s (mm).
    pub center: Point3<f64>,
    /// Semi-axes (x_r, y_r, z_r) (mm), sorted ascending (descending
    /// eigenvalues of the form).
    pub semi_axes: Vector3<f64>,
    /// Z-Y-X rotation angles (θx, θy, θz) (rad) with R = Rz·Ry·Rx.
    pub angles: Vector3<f64>,
    /// Quadratic form A (mm⁻²), symmetric positive definite.
    pub form: Matrix3<f64>,
}

impl ObliqueEllipsoid {
    /// Decomposes a quadratic form into semi-axes and Z-Y-X angles.
    ///
    /// Eigenvalues are sorted descending; inside an (almost) equal group the
    /// eigenvectors are re-based to lie closest to the world axes, so
    /// spheres come out with zero angles. Gimbal lock (|R₃₁| = 1) resolves
    /// with θz = 0.
    pub fn from_quadratic_form(center: Point3<f64>, form: Matrix3<f64>) -> EllipsoidResult<Self> {
        let sym = (form + form.transpose()) * 0.5;
        if (form - sym).norm() > 1e-9 * sym.norm().max(1.0) {
            return Err(EllipsoidError::NotPositiveDefinite);
        }
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        if lambda[2] <= 0.0 {
            return Err(EllipsoidError::NotPositiveDefinite);
        }
        let mut axes: Vec<Vector3<f64>> = order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();

        // Group near-equal eigenvalues and align each eigenspace with the
        // world axes; any basis of the eigenspace reconstructs A identically.
        let tol = 1e-8 * lambda[0];
        let mut start = 0;
        while start < 3 {
            let mut end = start + 1;
            while end < 3 && (lambda[start] - lambda[end]).abs() <= tol {
                end += 1;
            }
            if end - start > 1 {
                align_eigenspace(&mut axes[start..end]);
            }
            start = end;
        }
        for axis in &mut axes {
            canonical_sign(axis);
        }
        let mut v = Matrix3::from_columns(&axes);
        if v.determinant() < 0.0 {
            let flipped = -v.column(2).into_owned();
            v.set_column(2, &flipped);
        }
        let r = v.transpose();
        let angles = euler_zyx_from_rotation(&r);
        Ok(ObliqueEllipsoid {
            center,
            semi_axes: Vector3::new(
                1.0 / lambda[0].sqrt(),
                1.0 / lambda[1].sqrt(),
                1.0 / lambda[2].sqrt(),
            ),
            angles,
            form: sym,
        })
    }

    /// R = Rz·Ry·Rx rebuilt from the stored angles.
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_zyx(self.angles.x, self.angles.y, self.angles.z)
    }

    /// Rᵀ·diag(semi⁻²)·R; matches [`Self::form`] up to round-off.
    pub fn reconstructed_form(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let q = Matrix3::from_diagonal(&Vector3::new(
            self.semi_axes.x.powi(-2),
            self.semi_axes.y.powi(-2),
            self.semi_axes.z.powi(-2),
        ));
        r.transpose() * q * r
    }

    /// Value of (x-c)ᵀA(x-c); ≤ 1 means inside.
    pub fn form_value(&self, p: &Point3<f64>) -> f64 {
        let d = p - self.center;
        (self.form * d).dot(&d)
    }

    /// Containment with slack: form value ≤ 1 + slack.
    pub fn contains(&self, p: &Point3<f64>, slack: f64) -> bool {
        self.form_value(p) <= 1.0 + slack
    }

    /// Maps a unit direction to the corresponding surface point.
    pub fn surface_point(&self, unit_dir: &Vector3<f64>) -> Point3<f64> {
        let scaled = Vector3::new(
            self.semi_axes.x * unit_dir.x,
            self.semi_axes.y * unit_dir.y,
            self.semi_axes.z * unit_dir.z,
        );
        self.center + self.rotation().transpose() * scaled
    }

    /// Volume (4/3)π·x_r·y_r·z_r.
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }

    /// Axis-aligned box enclosing the ellipsoid: half-extent along axis k is
    /// sqrt((A⁻¹)ₖₖ).
    pub fn aabb(&self) -> crate::mesh::BoundingBox {
        let inv = self
            .form
            .try_inverse()
            .expect("stored form is positive definite");
        let half = Vector3::new(inv[(0, 0)].sqrt(), inv[(1, 1)].sqrt(), inv[(2, 2)].sqrt());
        crate::mesh::BoundingBox {
            min: self.center - half,
            max: self.center + half,
        }
    }
}

fn canonical_sign(axis: &mut Vector3<f64>) {
    let k = axis.iamax();
    if axis[k] < 0.0 {
        *axis = -*axis;
    }
}

/// Replaces a (near-)degenerate eigenvector family with the orthonormalized
/// projections of the world axes onto its eigenspace.
fn align_eigenspace(axes: &mut [Vector3<f64>]) {
    let projector: Matrix3<f64> = axes
        .iter()
        .map(|v| v * v.transpose())
        .fold(Matrix3::zeros(), |acc, m| acc + m);
    let mut candidates: Vec<Vector3<f64>> = (0..3)
        .map(|k| projector * Vector3::ith(k, 1.0))
        .collect();
    candidates.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mut basis: Vec<Vector3<f64>> = Vec::with_capacity(axes.len());
    for mut c in candidates {
        for b in &basis {
            c -= b * b.dot(&c);
        }
        if c.norm() > 1e-9 {
            basis.push(c.normalize());
            if basis.len() == axes.len() {
                break;
            }
        }
    }
    if basis.len() == axes.len() {
        axes.copy_from_slice(&basis);
    }
}

/// R = Rz(θz)·Ry(θy)·Rx(θx).
pub fn rotation_zyx(theta_x: f64, theta_y: f64, theta_z: f64) -> Matrix3<f64> {
    let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), theta_x);
    let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), theta_y);
    let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), theta_z);
    (rz * ry * rx).into_inner()
}

/// Inverse of [`rotation_zyx`]; gimbal lock (|R₃₁| = 1) resolves with θz = 0.
pub fn euler_zyx_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let s = -r[(2, 0)];
    if s.abs() < 1.0 - 1e-12 {
        Vector3::new(
            r[(2, 1)].atan2(r[(2, 2)]),
            s.asin(),
            r[(1, 0)].atan2(r[(0, 0)]),
        )
    } else if s > 0.0 {
        // θy = +π/2: R = [0 sx cx; 0 cx -sx; -1 0 0] with θz = 0.
        Vector3::new(r[(0, 1)].atan2(r[(1, 1)]), std::f64::consts::FRAC_PI_2, 0.0)
    } else {
        Vector3::new(
            (-r[(0, 1)]).atan2(r[(1, 1)]),
            -std::f64::consts::FRAC_PI_2,
            0.0,
        )
    }
}

/// Minimum-volume enclosing ellipsoid of a 3D point set.
///
/// Khachiyan's barycentric ascent on the lifted points, extended with away
/// steps on support weights and, once the support set is small and the
/// iterate is close, a damped Newton polish of the support weights (the
/// optimum satisfies M_j = d+1 on the support). Returns the quadratic form
/// and center; every input point satisfies `(p-c)ᵀA(p-c) ≤ 1 + eps`.
pub fn mvee(
    points: &[Point3<f64>],
    params: &MveeParams,
) -> EllipsoidResult<(Matrix3<f64>, Point3<f64>)> {
    const D: f64 = 3.0;
    const N_LIFT: f64 = D + 1.0;
    let n = points.len();
    if n < 4 {
        return Err(EllipsoidError::TooFewPoints { needed: 4, got: n });
    }
    affine_rank_check(points)?;

    let lifted: Vec<Vector4<f64>> = points
        .iter()
        .map(|p| Vector4::new(p.x, p.y, p.z, 1.0))
        .collect();
    let mut u = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;

    for _ in 0..params.max_iterations {
        let x_inv = weighted_scatter(&u, &lifted)
            .try_inverse()
            .ok_or(EllipsoidError::DegenerateInput { rank: 2 })?;

        let mut kappa_plus = f64::NEG_INFINITY;
        let mut j_plus = 0;
        let mut kappa_minus = f64::INFINITY;
        let mut j_minus = 0;
        for (j, q) in lifted.iter().enumerate() {
            let m = (x_inv * q).dot(q);
            if m > kappa_plus {
                kappa_plus = m;
                j_plus = j;
            }
            if u[j] > 0.0 && m < kappa_minus {
                kappa_minus = m;
                j_minus = j;
            }
        }

        residual = (kappa_plus / N_LIFT - 1.0).max(1.0 - kappa_minus / N_LIFT);
        if residual <= params.eps {
            return assemble_form(points, &u);
        }

        let support = u.iter().filter(|w| **w > 0.0).count();
        if residual < 1e-3 && support <= 64 {
            if let Some(next) = newton_polish(&u, &lifted, &x_inv) {
                let polished_residual = residual_of(&next, &lifted);
                if polished_residual < residual {
                    u = next;
                    continue;
                }
            }
        }

        if kappa_plus - N_LIFT >= N_LIFT - kappa_minus {
            // Shift weight onto the most violated point.
            let lambda = (kappa_plus - N_LIFT) / (N_LIFT * (kappa_plus - 1.0));
            for w in &mut u {
                *w *= 1.0 - lambda;
            }
            u[j_plus] += lambda;
        } else {
            // Move weight off the slackest support point, possibly dropping it.
            let cap = u[j_minus] / (1.0 - u[j_minus]).max(f64::MIN_POSITIVE);
            let lambda = if kappa_minus > 1.0 + 1e-15 {
                cap.min((N_LIFT - kappa_minus) / (N_LIFT * (kappa_minus - 1.0)))
            } else {
                cap
            };
            // u ← (1+λ)u − λ·e<j−>; the clamp absorbs round-off at drop steps.
            for w in &mut u {
                *w *= 1.0 + lambda;
            }
            u[j_minus] = (u[j_minus] - lambda).max(0.0);
        }
    }

    Err(EllipsoidError::NonConvergence {
        iterations: params.max_iterations,
        residual,
    })
}

fn weighted_scatter(u: &[f64], lifted: &[Vector4<f64>]) -> Matrix4<f64> {
    let mut x = Matrix4::zeros();
    for (w, q) in u.iter().zip(lifted) {
        if *w > 0.0 {
            x += *w * q * q.transpose();
        }
    }
    x
}

fn residual_of(u: &[f64], lifted: &[Vector4<f64>]) -> f64 {
    const N_LIFT: f64 = 4.0;
    let Some(x_inv) = weighted_scatter(u, lifted).try_inverse() else {
        return f64::INFINITY;
    };
    let mut kappa_plus = f64::NEG_INFINITY;
    let mut kappa_minus = f64::INFINITY;
    for (j, q) in lifted.iter().enumerate() {
        let m = (x_inv * q).dot(q);
        kappa_plus = kappa_plus.max(m);
        if u[j] > 0.0 {
            kappa_minus = kappa_minus.min(m);
        }
    }
    (kappa_plus / N_LIFT - 1.0).max(1.0 - kappa_minus / N_LIFT)
}

/// One damped Newton step on the support weights toward M_j = d+1.
///
/// With B = Q_Sᵀ X⁻¹ Q_S the derivative is ∂M_j/∂u_k = −B_jk², so the step
/// solves (B∘B)·δ = M − (d+1)·1 subject to Σδ = 0 and is damped to keep all
/// weights strictly positive.
fn newton_polish(u: &[f64], lifted: &[Vector4<f64>], x_inv: &Matrix4<f64>) -> Option<Vec<f64>> {
    use nalgebra::{DMatrix, DVector};
    const N_LIFT: f64 = 4.0;
    let support: Vec<usize> = (0..u.len()).filter(|&j| u[j] > 0.0).collect();
    let s = support.len();
    let transformed: Vec<Vector4<f64>> = support.iter().map(|&j| x_inv * lifted[j]).collect();

    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for a in 0..s {
        for b in 0..s {
            let bab = transformed[a].dot(&lifted[support[b]]);
            kkt[(a, b)] = bab * bab;
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        rhs[a] = transformed[a].dot(&lifted[support[a]]) - N_LIFT;
    }
    let delta = kkt.lu().solve(&rhs)?;

    let mut alpha: f64 = 1.0;
    for (a, &j) in support.iter().enumerate() {
        if delta[a] < 0.0 {
            alpha = alpha.min(0.95 * u[j] / -delta[a]);
        }
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return None;
    }
    let mut next = u.to_vec();
    for (a, &j) in support.iter().enumerate() {
        next[j] = (u[j] + alpha * delta[a]).max(0.0);
    }
    let total: f64 = next.iter().sum();
    if total <= 0.0 {
        return None;
    }
    for w in &mut next {
        *w /= total;
    }
    Some(next)
}

/// Convenience wrapper returning the decomposed ellipsoid.
pub fn mvee_ellipsoid(
    points: &[Point3<f64>],
    params: &MveeParams,
) -> EllipsoidResult<ObliqueEllipsoid> {
    let (form, center) = mvee(points, params)?;
    ObliqueEllipsoid::from_quadratic_form(center, form)
}

fn assemble_form(
    points: &[Point3<f64>],
    u: &[f64],
) -> EllipsoidResult<(Matrix3<f64>, Point3<f64>)> {
    let mut center = Vector3::zeros();
    for (w, p) in u.iter().zip(points) {
        center += *w * p.coords;
    }
    let mut scatter = Matrix3::zeros();
    for (w, p) in u.iter().zip(points) {
        scatter += *w * p.coords * p.coords.transpose();
    }
    scatter -= center * center.transpose();
    let form = scatter
        .try_inverse()
        .ok_or(EllipsoidError::NotPositiveDefinite)?
        / 3.0;
    Ok(((form + form.transpose()) * 0.5, Point3::from(center)))
}

fn affine_rank_check(points: &[Point3<f64>]) -> EllipsoidResult<()> {
    let mean: Vector3<f64> =
        points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    let mut scale: f64 = 0.0;
    for p in points {
        let d = p.coords - mean;
        scale = scale.max(d.norm_squared());
        scatter += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(scatter);
    let cutoff = 1e-12 * scale.max(f64::MIN_POSITIVE) * points.len() as f64;
    let rank = eig.eigenvalues.iter().filter(|&&l| l > cutoff).count();
    if rank < 3 {
        return Err(EllipsoidError::DegenerateInput { rank });
    }
    Ok(())
}
