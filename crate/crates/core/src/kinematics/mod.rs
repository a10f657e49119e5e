//! Serial-chain kinematics and multi-finger grasp statics.
//!
//! Chains are described by Denavit-Hartenberg rows (all joints revolute, the
//! joint variable is `theta`). Forward kinematics is the ordered product of
//! link transforms, the velocity Jacobian is assembled per column from the
//! joint axes, and joint torques follow from the transpose map tau = J^T F.
//!
//! Grasps use a soft-finger contact model: each contact transmits three force
//! components plus a moment about the contact normal, so a k-contact grasp
//! matrix has 6 rows and 4k columns. Object twists map to contact-frame rates
//! through G^T, and finger joint rates follow from a block-diagonal
//! least-squares solve with a numeric rank report.
//!
//! Units: millimetres, radians, newtons, newton-millimetres.

use nalgebra::{DMatrix, DVector, Matrix4, Point3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::io;
use thiserror::Error;

pub type KinematicsResult<T> = Result<T, KinematicsError>;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("chain has no links")]
    EmptyChain,

    #[error("expected {expected} joint angles, got {got}")]
    JointCountMismatch { expected: usize, got: usize },

    #[error("grasp model has {fingers} fingers but {contacts} contacts")]
    ContactCountMismatch { fingers: usize, contacts: usize },

    #[error("contact normal is degenerate (norm {0:.3e})")]
    DegenerateNormal(f64),

    #[error("no contacts given")]
    NoContacts,

    #[error("joint schedule row {row} column {column}: {message}")]
    Schedule {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("failed to read joint schedule: {0}")]
    ScheduleIo(#[from] csv::Error),
}

/// One Denavit-Hartenberg row. `theta` is the joint angle (rad), `d` the
/// offset along the previous z (mm), `a` the link length along the new x
/// (mm) and `alpha` the twist about the new x (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    pub theta: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
}

impl DhLink {
    pub fn new(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        DhLink { theta, d, a, alpha }
    }

    /// Homogeneous transform Rot(z, theta) Trans(z, d) Trans(x, a)
    /// Rot(x, alpha), written out in closed form.
    pub fn transform(&self) -> Matrix4<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct, -st * ca, st * sa, self.a * ct,
            st, ct * ca, -ct * sa, self.a * st,
            0.0, sa, ca, self.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

/// A serial revolute chain with a fixed base pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SerialChain {
    pub base: Matrix4<f64>,
    pub links: Vec<DhLink>,
}

impl SerialChain {
    pub fn new(links: Vec<DhLink>) -> Self {
        SerialChain {
            base: Matrix4::identity(),
            links,
        }
    }

    pub fn with_base(base: Matrix4<f64>, links: Vec<DhLink>) -> Self {
        SerialChain { base, links }
    }

    pub fn joint_count(&self) -> usize {
        self.links.len()
    }

    /// Current joint angles, one per link.
    pub fn joint_angles(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.theta).collect()
    }

    /// The same chain posed at new joint angles.
    pub fn at(&self, q: &[f64]) -> KinematicsResult<SerialChain> {
        if q.len() != self.links.len() {
            return Err(KinematicsError::JointCountMismatch {
                expected: self.links.len(),
                got: q.len(),
            });
        }
        let mut posed = self.clone();
        for (link, &angle) in posed.links.iter_mut().zip(q) {
            link.theta = angle;
        }
        Ok(posed)
    }

    /// Cumulative frames: element 0 is the base, element i+1 the frame after
    /// link i. Length is joint_count() + 1.
    pub fn frames(&self) -> Vec<Matrix4<f64>> {
        let mut frames = Vec::with_capacity(self.links.len() + 1);
        frames.push(self.base);
        for link in &self.links {
            let last = *frames.last().unwrap();
            frames.push(last * link.transform());
        }
        frames
    }

    /// Fingertip pose: base times the product of all link transforms.
    pub fn forward_kinematics(&self) -> Matrix4<f64> {
        *self.frames().last().unwrap()
    }

    /// Fingertip position in world coordinates.
    pub fn fingertip(&self) -> Point3<f64> {
        let t = self.forward_kinematics();
        Point3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
    }

    /// Geometric velocity Jacobian, 6 x joint_count. Rows 0..3 are the linear
    /// fingertip velocity, rows 3..6 the angular velocity; column i is the
    /// twist per unit rate of joint i: [z_i x (p_tip - p_i); z_i].
    pub fn jacobian(&self) -> DMatrix<f64> {
        let frames = self.frames();
        let tip = frames.last().unwrap();
        let p_tip = Vector3::new(tip[(0, 3)], tip[(1, 3)], tip[(2, 3)]);
        let mut j = DMatrix::zeros(6, self.links.len());
        for (i, frame) in frames[..self.links.len()].iter().enumerate() {
            let z = Vector3::new(frame[(0, 2)], frame[(1, 2)], frame[(2, 2)]);
            let origin = Vector3::new(frame[(0, 3)], frame[(1, 3)], frame[(2, 3)]);
            let linear = z.cross(&(p_tip - origin));
            for r in 0..3 {
                j[(r, i)] = linear[r];
                j[(r + 3, i)] = z[r];
            }
        }
        j
    }

    /// Joint torques balancing a fingertip wrench (force in rows 0..3,
    /// moment in rows 3..6): tau = J^T F.
    pub fn joint_torques(&self, wrench: &Vector6<f64>) -> DVector<f64> {
        let j = self.jacobian();
        let mut tau = DVector::zeros(self.links.len());
        for i in 0..self.links.len() {
            let mut sum = 0.0;
            for r in 0..6 {
                sum += j[(r, i)] * wrench[r];
            }
            tau[i] = sum;
        }
        tau
    }
}

/// A soft-finger contact: a point on the object surface and the inward
/// surface normal at that point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Contact {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
}

impl Contact {
    pub fn new(point: Point3<f64>, normal: Vector3<f64>) -> Self {
        Contact { point, normal }
    }

    /// Orthonormal contact frame (t1, t2, n). The first tangent comes from
    /// Gram-Schmidt against the world axis least aligned with the normal,
    /// the second closes the right-handed triad t2 = n x t1.
    pub fn frame(&self) -> KinematicsResult<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
        let norm = self.normal.norm();
        if norm < 1e-12 {
            return Err(KinematicsError::DegenerateNormal(norm));
        }
        let n = self.normal / norm;
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let seed = axes
            .iter()
            .min_by(|a, b| {
                let da = a.dot(&n).abs();
                let db = b.dot(&n).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let t1 = (seed - n * seed.dot(&n)).normalize();
        let t2 = n.cross(&t1);
        Ok((t1, t2, n))
    }
}

/// Grasp matrix for soft-finger contacts: 6 rows (object wrench), four
/// columns per contact in the order tangent-1 force, tangent-2 force,
/// normal force, normal moment. A unit force f applied at contact point c
/// contributes the wrench [f; c x f]; the spin column contributes [0; n].
pub fn grasp_matrix(contacts: &[Contact]) -> KinematicsResult<DMatrix<f64>> {
    if contacts.is_empty() {
        return Err(KinematicsError::NoContacts);
    }
    let mut g = DMatrix::zeros(6, 4 * contacts.len());
    for (k, contact) in contacts.iter().enumerate() {
        let (t1, t2, n) = contact.frame()?;
        let c = contact.point.coords;
        for (col, dir) in [t1, t2, n].iter().enumerate() {
            let moment = c.cross(dir);
            for r in 0..3 {
                g[(r, 4 * k + col)] = dir[r];
                g[(r + 3, 4 * k + col)] = moment[r];
            }
        }
        for r in 0..3 {
            g[(r + 3, 4 * k + 3)] = n[r];
        }
    }
    Ok(g)
}

/// Fingers plus the contacts their tips make with the object. Finger i is
/// assumed to touch the object at contact i with its fingertip.
#[derive(Debug, Clone)]
pub struct GraspModel {
    pub fingers: Vec<SerialChain>,
    pub contacts: Vec<Contact>,
}

/// Result of resolving an object twist into finger joint rates.
#[derive(Debug, Clone)]
pub struct GraspRates {
    /// Contact-frame rates x_dot = G^T u, four per contact.
    pub contact_rates: DVector<f64>,
    /// Joint rates per finger, least-squares solution of J q_dot = x_dot.
    pub joint_rates: Vec<DVector<f64>>,
    /// Numeric rank of the block-diagonal selection Jacobian.
    pub rank: usize,
    /// Euclidean norm of J q_dot - x_dot at the solution.
    pub residual: f64,
}

impl GraspModel {
    pub fn new(fingers: Vec<SerialChain>, contacts: Vec<Contact>) -> KinematicsResult<Self> {
        if fingers.len() != contacts.len() {
            return Err(KinematicsError::ContactCountMismatch {
                fingers: fingers.len(),
                contacts: contacts.len(),
            });
        }
        if fingers.iter().any(|f| f.links.is_empty()) {
            return Err(KinematicsError::EmptyChain);
        }
        Ok(GraspModel { fingers, contacts })
    }

    pub fn grasp_matrix(&self) -> KinematicsResult<DMatrix<f64>> {
        grasp_matrix(&self.contacts)
    }

    /// Selection map of one contact: rows pick the two tangential and the
    /// normal linear velocity plus the angular rate about the normal from a
    /// 6-vector twist.
    fn selection(contact: &Contact) -> KinematicsResult<DMatrix<f64>> {
        let (t1, t2, n) = contact.frame()?;
        let mut s = DMatrix::zeros(4, 6);
        for c in 0..3 {
            s[(0, c)] = t1[c];
            s[(1, c)] = t2[c];
            s[(2, c)] = n[c];
            s[(3, c + 3)] = n[c];
        }
        Ok(s)
    }

    /// Block-diagonal matrix diag(S_1 J_1, ..., S_k J_k) mapping stacked
    /// joint rates to contact-frame rates.
    pub fn selection_jacobian(&self) -> KinematicsResult<DMatrix<f64>> {
        let total_joints: usize = self.fingers.iter().map(|f| f.joint_count()).sum();
        let mut big = DMatrix::zeros(4 * self.contacts.len(), total_joints);
        let mut col0 = 0;
        for (k, (finger, contact)) in self.fingers.iter().zip(&self.contacts).enumerate() {
            let block = Self::selection(contact)? * finger.jacobian();
            for r in 0..4 {
                for c in 0..finger.joint_count() {
                    big[(4 * k + r, col0 + c)] = block[(r, c)];
                }
            }
            col0 += finger.joint_count();
        }
        Ok(big)
    }

    /// Resolves an object twist u = [v; w] into contact rates and finger
    /// joint rates. Rank deficiency is not an error: the SVD produces the
    /// minimum-norm least-squares solution and the rank is reported.
    pub fn solve_rates(&self, twist: &Vector6<f64>) -> KinematicsResult<GraspRates> {
        let g = self.grasp_matrix()?;
        let mut contact_rates = DVector::zeros(g.ncols());
        for c in 0..g.ncols() {
            let mut sum = 0.0;
            for r in 0..6 {
                sum += g[(r, c)] * twist[r];
            }
            contact_rates[c] = sum;
        }

        let big = self.selection_jacobian()?;
        let svd = big.clone().svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-10 * max_sv.max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let stacked = svd
            .solve(&contact_rates, tol)
            .expect("SVD was computed with both factors");
        let residual = (&big * &stacked - &contact_rates).norm();

        let mut joint_rates = Vec::with_capacity(self.fingers.len());
        let mut offset = 0;
        for finger in &self.fingers {
            let t = finger.joint_count();
            joint_rates.push(DVector::from_iterator(
                t,
                (0..t).map(|i| stacked[offset + i]),
            ));
            offset += t;
        }
        Ok(GraspRates {
            contact_rates,
            joint_rates,
            rank,
            residual,
        })
    }

    /// Fingertip positions in the current pose, in finger order. These are
    /// the natural control targets when a grasp drives a morph.
    pub fn fingertip_positions(&self) -> Vec<Point3<f64>> {
        self.fingers.iter().map(|f| f.fingertip()).collect()
    }
}

/// Reads a joint-angle schedule: one CSV row per time sample, one column per
/// joint, values in radians. No header row.
pub fn read_joint_schedule<R: io::Read>(reader: R) -> KinematicsResult<Vec<Vec<f64>>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (r, record) in csv_reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|e| KinematicsError::Schedule {
                row: r,
                column: c,
                message: format!("{e}: {field:?}"),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar_two_link() -> SerialChain {
        SerialChain::new(vec![
            DhLink::new(0.0, 0.0, 1.0, 0.0),
            DhLink::new(0.0, 0.0, 1.0, 0.0),
        ])
    }

    // A chain with every parameter kind nonzero, used for randomized checks.
    fn spatial_three_link() -> SerialChain {
        SerialChain::new(vec![
            DhLink::new(0.0, 0.4, 1.2, FRAC_PI_2),
            DhLink::new(0.0, -0.2, 0.9, -0.7),
            DhLink::new(0.0, 0.1, 0.6, 0.3),
        ])
    }

    #[test]
    fn zero_parameters_give_identity() {
        let t = DhLink::new(0.0, 0.0, 0.0, 0.0).transform();
        assert!((t - Matrix4::identity()).norm() < 1e-15);
    }

    #[test]
    fn pure_joint_rotation() {
        let t = DhLink::new(FRAC_PI_2, 0.0, 0.0, 0.0).transform();
        let expected = Matrix4::new(
            0.0, -1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert!((t - expected).norm() < 1e-12);
    }

    #[test]
    fn full_parameter_transform_matches_hand_expansion() {
        // theta = pi/2, d = 1, a = 2, alpha = pi/2; the four-factor product
        // evaluated entry by entry.
        let t = DhLink::new(FRAC_PI_2, 1.0, 2.0, FRAC_PI_2).transform();
        let expected = Matrix4::new(
            0.0, 0.0, 1.0, 0.0,
            1.0, 0.0, 0.0, 2.0,
            0.0, 1.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert!((t - expected).norm() < 1e-12, "got {t}");
    }

    #[test]
    fn rotation_blocks_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let link = DhLink::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..2.0),
                rng.gen_range(-3.0..3.0),
            );
            let t = link.transform();
            let r = t.fixed_view::<3, 3>(0, 0);
            assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-12);
            assert_eq!(t.row(3), Matrix4::identity().row(3));
        }
    }

    #[test]
    fn straight_planar_arm_reaches_two() {
        let tip = planar_two_link().fingertip();
        assert!((tip - Point3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bent_planar_arm_matches_trigonometry() {
        let chain = planar_two_link().at(&[FRAC_PI_2, -FRAC_PI_2]).unwrap();
        let tip = chain.fingertip();
        // x = cos(t0) + cos(t0+t1), y = sin(t0) + sin(t0+t1)
        assert!((tip - Point3::new(1.0, 1.0, 0.0)).norm() < 1e-12, "tip {tip}");

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q0 = rng.gen_range(-3.0..3.0);
            let q1 = rng.gen_range(-3.0..3.0);
            let tip = planar_two_link().at(&[q0, q1]).unwrap().fingertip();
            let expected = Point3::new(
                q0.cos() + (q0 + q1).cos(),
                q0.sin() + (q0 + q1).sin(),
                0.0,
            );
            assert!((tip - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn chain_of_identity_links_is_identity() {
        let chain = SerialChain::new(vec![DhLink::new(0.0, 0.0, 0.0, 0.0); 4]);
        assert!((chain.forward_kinematics() - Matrix4::identity()).norm() < 1e-15);
    }

    #[test]
    fn forward_kinematics_composes() {
        let a = spatial_three_link().at(&[0.3, -0.8, 1.1]).unwrap();
        let b_links = vec![
            DhLink::new(0.5, 0.2, 0.7, -0.4),
            DhLink::new(-1.0, 0.0, 0.3, 0.9),
        ];
        let joined = SerialChain::new(
            a.links.iter().chain(&b_links).cloned().collect::<Vec<_>>(),
        );
        let b = SerialChain::with_base(a.forward_kinematics(), b_links);
        assert!((joined.forward_kinematics() - b.forward_kinematics()).norm() < 1e-12);
    }

    #[test]
    fn planar_jacobian_matches_lever_arms() {
        let j = planar_two_link().jacobian();
        // Linear rows: x picks up nothing, y the lever arms 2 and 1, z nothing.
        let expected = [
            [0.0, 0.0], // x
            [2.0, 1.0], // y
            [0.0, 0.0], // z
        ];
        for (r, row) in expected.iter().enumerate() {
            for c in 0..2 {
                assert!(
                    (j[(r, c)] - row[c]).abs() < 1e-12,
                    "row {r} col {c}: {}",
                    j[(r, c)]
                );
            }
        }
        // Both joints rotate about world z.
        assert!((j[(5, 0)] - 1.0).abs() < 1e-12);
        assert!((j[(5, 1)] - 1.0).abs() < 1e-12);
    }

    // Central-difference twist oracle: linear part from the position, angular
    // part from the skew of dR R^T.
    fn finite_difference_jacobian(chain: &SerialChain, h: f64) -> DMatrix<f64> {
        let q0 = chain.joint_angles();
        let t_center = chain.forward_kinematics();
        let r_center = t_center.fixed_view::<3, 3>(0, 0).into_owned();
        let mut j = DMatrix::zeros(6, q0.len());
        for i in 0..q0.len() {
            let mut qp = q0.clone();
            let mut qm = q0.clone();
            qp[i] += h;
            qm[i] -= h;
            let tp = chain.at(&qp).unwrap().forward_kinematics();
            let tm = chain.at(&qm).unwrap().forward_kinematics();
            for r in 0..3 {
                j[(r, i)] = (tp[(r, 3)] - tm[(r, 3)]) / (2.0 * h);
            }
            let dr = (tp.fixed_view::<3, 3>(0, 0) - tm.fixed_view::<3, 3>(0, 0)) / (2.0 * h);
            let omega_skew = dr * r_center.transpose();
            j[(3, i)] = omega_skew[(2, 1)];
            j[(4, i)] = omega_skew[(0, 2)];
            j[(5, i)] = omega_skew[(1, 0)];
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences_over_random_poses() {
        let chain = spatial_three_link();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let posed = chain.at(&q).unwrap();
            let j = posed.jacobian();
            let fd = finite_difference_jacobian(&posed, 1e-6);
            let scale = j.amax().max(1.0);
            let err = (j - fd).amax() / scale;
            worst = worst.max(err);
        }
        assert!(worst <= 1e-5, "worst relative Jacobian error {worst:.3e}");
    }

    #[test]
    fn torques_from_tip_force_follow_the_lever_arms() {
        let chain = planar_two_link();
        let zero = chain.joint_torques(&Vector6::zeros());
        assert!(zero.amax() == 0.0);

        let f_y = Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let tau = chain.joint_torques(&f_y);
        assert!((tau[0] - 2.0).abs() < 1e-12 && (tau[1] - 1.0).abs() < 1e-12, "tau {tau}");

        // Linearity.
        let f2 = Vector6::new(0.3, -0.4, 0.9, 0.1, 0.0, -0.2);
        let sum = chain.joint_torques(&(f_y + f2));
        let parts = chain.joint_torques(&f_y) + chain.joint_torques(&f2);
        assert!((sum - parts).amax() < 1e-12);
    }

    #[test]
    fn power_balance_between_joint_and_tip_space() {
        let chain = spatial_three_link();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let posed = chain.at(&q).unwrap();
            let qdot = DVector::from_iterator(3, (0..3).map(|_| rng.gen_range(-1.0..1.0)));
            let wrench = Vector6::from_iterator((0..6).map(|_| rng.gen_range(-2.0..2.0)));
            let tau = posed.joint_torques(&wrench);
            let tip_twist = posed.jacobian() * &qdot;
            let joint_power = tau.dot(&qdot);
            let tip_power = (0..6).map(|r| wrench[r] * tip_twist[r]).sum::<f64>();
            assert!(
                (joint_power - tip_power).abs() < 1e-9,
                "joint {joint_power} vs tip {tip_power}"
            );
        }
    }

    #[test]
    fn contact_frames_are_right_handed_and_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let normal = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if normal.norm() < 1e-3 {
                continue;
            }
            let contact = Contact::new(Point3::origin(), normal);
            let (t1, t2, n) = contact.frame().unwrap();
            assert!((t1.norm() - 1.0).abs() < 1e-12);
            assert!(t1.dot(&n).abs() < 1e-12);
            assert!(t2.dot(&n).abs() < 1e-12);
            assert!(t1.dot(&t2).abs() < 1e-12);
            assert!((t1.cross(&t2) - n).norm() < 1e-12, "left-handed frame");
        }
        assert!(matches!(
            Contact::new(Point3::origin(), Vector3::zeros()).frame(),
            Err(KinematicsError::DegenerateNormal(_))
        ));
    }

    #[test]
    fn single_contact_transmits_normal_translation() {
        let contact = Contact::new(Point3::origin(), Vector3::z());
        let g = grasp_matrix(&[contact]).unwrap();
        assert_eq!((g.nrows(), g.ncols()), (6, 4));
        let u = Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let x: Vec<f64> = (0..4)
            .map(|c| (0..6).map(|r| g[(r, c)] * u[r]).sum())
            .collect();
        // Tangential and spin rates vanish, the normal rate carries the twist.
        assert!((x[0], x[1], x[3]) == (0.0, 0.0, 0.0));
        assert!((x[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn antipodal_soft_finger_contacts_span_the_full_wrench_space() {
        let r = 1.5;
        let contacts = [
            Contact::new(Point3::new(r, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)),
            Contact::new(Point3::new(-r, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)),
        ];
        let g = grasp_matrix(&contacts).unwrap();
        assert_eq!((g.nrows(), g.ncols()), (6, 8));
        // Numeric rank oracle straight from the singular values.
        let svd = g.svd(false, false);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * max_sv)
            .count();
        assert_eq!(rank, 6, "two soft-finger contacts grasp all six wrench axes");
    }

    #[test]
    fn zero_twist_gives_zero_rates() {
        let fingers = vec![
            spatial_three_link().at(&[0.2, 0.4, -0.3]).unwrap(),
            spatial_three_link().at(&[-0.5, 0.1, 0.8]).unwrap(),
        ];
        let contacts = vec![
            Contact::new(fingers[0].fingertip(), Vector3::new(0.0, 0.0, -1.0)),
            Contact::new(fingers[1].fingertip(), Vector3::new(0.0, 1.0, 0.0)),
        ];
        let model = GraspModel::new(fingers, contacts).unwrap();
        let rates = model.solve_rates(&Vector6::zeros()).unwrap();
        assert!(rates.contact_rates.amax() == 0.0);
        for qdot in &rates.joint_rates {
            assert!(qdot.amax() < 1e-15);
        }
    }

    #[test]
    fn grasp_rates_reproduce_the_requested_contact_motion() {
        // Three 3-joint fingers: 9 joint rates against 12 contact rates; the
        // least-squares solve keeps the residual small and reports full
        // column rank.
        let base_chain = spatial_three_link();
        let poses = [[0.2, 0.5, -0.4], [1.0, -0.3, 0.6], [-0.7, 0.8, 0.2]];
        let fingers: Vec<SerialChain> = poses
            .iter()
            .map(|q| base_chain.at(q).unwrap())
            .collect();
        let contacts: Vec<Contact> = fingers
            .iter()
            .map(|f| {
                let tip = f.fingertip();
                Contact::new(tip, -tip.coords.normalize())
            })
            .collect();
        let model = GraspModel::new(fingers, contacts).unwrap();
        let twist = Vector6::new(0.02, -0.01, 0.03, 0.004, -0.002, 0.001);
        let rates = model.solve_rates(&twist).unwrap();
        assert_eq!(rates.rank, 9, "selection Jacobian should have rank 9");

        let big = model.selection_jacobian().unwrap();
        let mut stacked = DVector::zeros(9);
        let mut offset = 0;
        for qdot in &rates.joint_rates {
            for i in 0..qdot.len() {
                stacked[offset + i] = qdot[i];
            }
            offset += qdot.len();
        }
        let achieved = (&big * &stacked - &rates.contact_rates).norm();
        assert!(
            (achieved - rates.residual).abs() < 1e-12,
            "reported residual {} vs recomputed {achieved}",
            rates.residual
        );
    }

    #[test]
    fn rank_deficient_grasp_returns_minimum_norm_rates() {
        // One single-joint finger cannot realize four contact rates; the
        // solver must still answer with the rank and a least-squares q_dot.
        let finger = SerialChain::new(vec![DhLink::new(0.0, 0.0, 1.0, 0.0)]);
        let contact = Contact::new(finger.fingertip(), Vector3::new(-1.0, 0.0, 0.0));
        let model = GraspModel::new(vec![finger], vec![contact]).unwrap();
        let twist = Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let rates = model.solve_rates(&twist).unwrap();
        assert_eq!(rates.rank, 1);
        assert!(rates.joint_rates[0].len() == 1);
        assert!(rates.residual >= 0.0);
    }

    #[test]
    fn model_validation_errors() {
        let finger = spatial_three_link();
        assert!(matches!(
            GraspModel::new(vec![finger.clone()], vec![]),
            Err(KinematicsError::ContactCountMismatch { fingers: 1, contacts: 0 })
        ));
        assert!(matches!(
            GraspModel::new(
                vec![SerialChain::new(vec![])],
                vec![Contact::new(Point3::origin(), Vector3::z())]
            ),
            Err(KinematicsError::EmptyChain)
        ));
        assert!(matches!(grasp_matrix(&[]), Err(KinematicsError::NoContacts)));
    }

    #[test]
    fn schedule_parsing_round_trips() {
        let csv_text = "0.0,0.1,0.2\n0.05,0.15,0.25\n0.1,0.2,0.3\n";
        let rows = read_joint_schedule(csv_text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], vec![0.05, 0.15, 0.25]);

        let bad = read_joint_schedule("0.0,oops\n".as_bytes());
        match bad {
            Err(KinematicsError::Schedule { row: 0, column: 1, .. }) => {}
            other => panic!("expected schedule error, got {other:?}"),
        }
    }
}
