//! Synthetic articulated hand: a palm box plus five subdivided finger boxes,
//! each finger driven by a three-link serial chain whose rest pose lands the
//! fingertip exactly on a bound mesh vertex. The rig maps joint angles to
//! fingertip target points for the mesh morph.
//!
//! All dimensions are whole millimeters so the rest-pose forward kinematics
//! reproduce the bound vertices without rounding.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{DhLink, SerialChain};
use crate::mesh::primitives::subdivided_cuboid;
use crate::mesh::{weld_vertices, Mesh};

pub type HandResult<T> = Result<T, HandError>;

#[derive(Debug, Error)]
pub enum HandError {
    #[error("rig expects {expected} joint angles, got {got}")]
    JointCount { expected: usize, got: usize },

    #[error("finger {finger:?} binds vertex {vertex} but the mesh has {vertex_count}")]
    BadBinding {
        finger: String,
        vertex: usize,
        vertex_count: usize,
    },

    #[error(
        "finger {finger:?} rest fingertip sits {distance} mm away from its bound vertex"
    )]
    RestMismatch { finger: String, distance: f64 },

    #[error("kinematics failed: {0}")]
    Kinematics(#[from] crate::kinematics::KinematicsError),
}

/// One finger: a serial chain plus the mesh vertex its tip drives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerBinding {
    pub name: String,
    pub chain: SerialChain,
    /// Index of the driven mesh vertex.
    pub vertex: usize,
    /// Joint angles of the rest pose.
    pub rest: Vec<f64>,
}

/// All fingers of a hand; joint angles concatenate in finger order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspRig {
    pub fingers: Vec<FingerBinding>,
}

impl GraspRig {
    pub fn joint_count(&self) -> usize {
        self.fingers.iter().map(|f| f.chain.joint_count()).sum()
    }

    pub fn rest_angles(&self) -> Vec<f64> {
        self.fingers.iter().flat_map(|f| f.rest.clone()).collect()
    }

    /// Splits a concatenated joint vector per finger.
    fn split<'a>(&self, theta: &'a [f64]) -> HandResult<Vec<&'a [f64]>> {
        if theta.len() != self.joint_count() {
            return Err(HandError::JointCount {
                expected: self.joint_count(),
                got: theta.len(),
            });
        }
        let mut parts = Vec::with_capacity(self.fingers.len());
        let mut offset = 0;
        for finger in &self.fingers {
            let n = finger.chain.joint_count();
            parts.push(&theta[offset..offset + n]);
            offset += n;
        }
        Ok(parts)
    }

    /// Fingertip positions under the given joint angles, in finger order.
    pub fn fingertip_positions(&self, theta: &[f64]) -> HandResult<Vec<Point3<f64>>> {
        let parts = self.split(theta)?;
        let mut tips = Vec::with_capacity(self.fingers.len());
        for (finger, q) in self.fingers.iter().zip(parts) {
            tips.push(finger.chain.at(q)?.fingertip());
        }
        Ok(tips)
    }

    /// Morph control targets: bound vertex index to fingertip position.
    pub fn fingertip_targets(
        &self,
        theta: &[f64],
    ) -> HandResult<BTreeMap<usize, Point3<f64>>> {
        let tips = self.fingertip_positions(theta)?;
        Ok(self
            .fingers
            .iter()
            .zip(tips)
            .map(|(finger, tip)| (finger.vertex, tip))
            .collect())
    }

    /// Checks bindings against a mesh: indices in range and rest-pose
    /// fingertips on their vertices within `tolerance`.
    pub fn validate(&self, mesh: &Mesh, tolerance: f64) -> HandResult<()> {
        for finger in &self.fingers {
            if finger.vertex >= mesh.vertex_count() {
                return Err(HandError::BadBinding {
                    finger: finger.name.clone(),
                    vertex: finger.vertex,
                    vertex_count: mesh.vertex_count(),
                });
            }
            let tip = finger.chain.at(&finger.rest)?.fingertip();
            let distance = nalgebra::distance(&tip, &mesh.vertices[finger.vertex]);
            if distance > tolerance {
                return Err(HandError::RestMismatch {
                    finger: finger.name.clone(),
                    distance,
                });
            }
        }
        Ok(())
    }
}

/// Base frame whose local x axis points along `direction` (the finger) and
/// whose local z axis (the joint axis) points along `joint_axis`.
fn finger_base(
    root: Point3<f64>,
    direction: [f64; 3],
    joint_axis: [f64; 3],
) -> Matrix4<f64> {
    let x = nalgebra::Vector3::from(direction);
    let z = nalgebra::Vector3::from(joint_axis);
    let y = z.cross(&x);
    let mut base = Matrix4::identity();
    base.fixed_view_mut::<3, 1>(0, 0).copy_from(&x);
    base.fixed_view_mut::<3, 1>(0, 1).copy_from(&y);
    base.fixed_view_mut::<3, 1>(0, 2).copy_from(&z);
    base.fixed_view_mut::<3, 1>(0, 3).copy_from(&root.coords);
    base
}

fn three_link(base: Matrix4<f64>, lengths: [f64; 3]) -> SerialChain {
    let links = lengths
        .iter()
        .map(|&a| DhLink {
            theta: 0.0,
            d: 0.0,
            a,
            alpha: 0.0,
        })
        .collect();
    SerialChain::with_base(base, links)
}

/// Index of the vertex closest to `p`; panics if farther than 1e-6.
fn bound_vertex(mesh: &Mesh, p: Point3<f64>) -> usize {
    let (index, distance) = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (i, nalgebra::distance(v, &p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("mesh has vertices");
    assert!(
        distance < 1e-6,
        "no vertex at the expected fingertip {p:?}; nearest is {distance} away"
    );
    index
}

/// Builds the demo hand and its rig. Deterministic; roughly life-size in
/// millimeters. Finger boxes stay disjoint from the palm so every component
/// remains a closed manifold.
pub fn synthetic_hand() -> (Mesh, GraspRig) {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut append = |mesh: Mesh| {
        let offset = vertices.len();
        vertices.extend(mesh.vertices);
        faces.extend(
            mesh.faces
                .iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
    };

    // Palm.
    append(subdivided_cuboid(
        Point3::new(-24.0, -40.0, 0.0),
        Point3::new(24.0, 0.0, 14.0),
        [6, 5, 2],
    ));

    // Four fingers along +y: (name, x center, total length split in links).
    let fingers: [(&str, f64, [f64; 3]); 4] = [
        ("index", -18.0, [12.0, 10.0, 8.0]),
        ("middle", -6.0, [14.0, 12.0, 10.0]),
        ("ring", 6.0, [13.0, 11.0, 9.0]),
        ("little", 18.0, [11.0, 9.0, 7.0]),
    ];
    for &(_, center, lengths) in &fingers {
        let length: f64 = lengths.iter().sum();
        append(subdivided_cuboid(
            Point3::new(center - 4.0, 2.0, 3.0),
            Point3::new(center + 4.0, 2.0 + length, 11.0),
            [2, 6, 2],
        ));
    }

    // Thumb along +x off the palm's right side.
    let thumb_lengths = [10.0, 8.0, 6.0];
    let thumb_length: f64 = thumb_lengths.iter().sum();
    append(subdivided_cuboid(
        Point3::new(26.0, -34.0, 3.0),
        Point3::new(26.0 + thumb_length, -26.0, 11.0),
        [6, 2, 2],
    ));

    weld_vertices(&mut vertices, &mut faces, 1e-9);
    let mesh = Mesh::from_vertices_faces(vertices, faces)
        .expect("hand assembly is well-formed");

    let mut rig_fingers = Vec::new();
    for &(name, center, lengths) in &fingers {
        let length: f64 = lengths.iter().sum();
        let tip = Point3::new(center, 2.0 + length, 7.0);
        rig_fingers.push(FingerBinding {
            name: name.to_string(),
            chain: three_link(
                finger_base(Point3::new(center, 2.0, 7.0), [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
                lengths,
            ),
            vertex: bound_vertex(&mesh, tip),
            rest: vec![0.0; 3],
        });
    }
    let thumb_tip = Point3::new(26.0 + thumb_length, -30.0, 7.0);
    rig_fingers.push(FingerBinding {
        name: "thumb".to_string(),
        chain: three_link(
            finger_base(Point3::new(26.0, -30.0, 7.0), [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            thumb_lengths,
        ),
        vertex: bound_vertex(&mesh, thumb_tip),
        rest: vec![0.0; 3],
    });

    (mesh, GraspRig { fingers: rig_fingers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_is_a_closed_oriented_manifold() {
        let (mesh, _) = synthetic_hand();
        let report = mesh.validate();
        assert!(report.is_closed_manifold(), "{report:?}");
        assert!(report.is_consistently_oriented());
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn rest_fingertips_sit_exactly_on_their_bound_vertices() {
        let (mesh, rig) = synthetic_hand();
        assert_eq!(rig.fingers.len(), 5);
        assert_eq!(rig.joint_count(), 15);
        for finger in &rig.fingers {
            let tip = finger.chain.at(&finger.rest).unwrap().fingertip();
            let bound = mesh.vertices[finger.vertex];
            assert_eq!(tip.x, bound.x, "{}", finger.name);
            assert_eq!(tip.y, bound.y, "{}", finger.name);
            assert_eq!(tip.z, bound.z, "{}", finger.name);
        }
        rig.validate(&mesh, 0.0).unwrap();
    }

    #[test]
    fn curling_moves_fingertips_off_their_rest_points() {
        let (mesh, rig) = synthetic_hand();
        let mut theta = rig.rest_angles();
        for angle in theta.iter_mut() {
            *angle = 0.15;
        }
        let targets = rig.fingertip_targets(&theta).unwrap();
        assert_eq!(targets.len(), 5);
        for finger in &rig.fingers[..4] {
            let rest = mesh.vertices[finger.vertex];
            let moved = targets[&finger.vertex];
            // +y fingers curl about world x: tips retract in y and rise in z.
            assert!(moved.y < rest.y, "{}", finger.name);
            assert!(moved.z > rest.z, "{}", finger.name);
        }
    }

    #[test]
    fn joint_vector_length_is_enforced() {
        let (_, rig) = synthetic_hand();
        assert!(matches!(
            rig.fingertip_targets(&[0.0; 4]),
            Err(HandError::JointCount {
                expected: 15,
                got: 4
            })
        ));
    }

    #[test]
    fn rig_round_trips_through_json_and_validates() {
        let (mesh, rig) = synthetic_hand();
        let json = serde_json::to_string_pretty(&rig).unwrap();
        let back: GraspRig = serde_json::from_str(&json).unwrap();
        back.validate(&mesh, 1e-12).unwrap();
        let theta = vec![0.1; 15];
        let a = rig.fingertip_positions(&theta).unwrap();
        let b = back.fingertip_positions(&theta).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn validation_catches_bad_bindings() {
        let (mesh, mut rig) = synthetic_hand();
        rig.fingers[0].vertex = mesh.vertex_count() + 5;
        assert!(matches!(
            rig.validate(&mesh, 1e-9),
            Err(HandError::BadBinding { .. })
        ));

        let (mesh, mut rig) = synthetic_hand();
        rig.fingers[2].rest = vec![0.5, 0.0, 0.0];
        assert!(matches!(
            rig.validate(&mesh, 1e-9),
            Err(HandError::RestMismatch { .. })
        ));
    }
}
