//! Grasp-space mesh morphing and 3D-print energy modelling.
//!
//! This crate covers the geometry and numerics behind deforming a triangle
//! mesh inside a flexible grasping space and estimating what the deformed
//! part costs to print:
//!
//! - **mesh**: manifold triangle meshes, STL/OBJ I/O, welding, validation,
//!   and metrology (area, volume, centroid, bounds).
//! - **ellipsoid**: minimum-volume enclosing ellipsoids and grasp spaces
//!   built as unions of oblique ellipsoids covering a mesh.
//! - **morph**: Laplacian mesh morphing with anchor and control constraints,
//!   solved per axis through one sparse factorization.
//! - **kinematics**: Denavit-Hartenberg chains, geometric Jacobians, joint
//!   torques and soft-finger grasp statics.
//! - **slicer**: planar slicing, layer cross-section masks with convolution
//!   features, infill toolpaths and support statistics.
//! - **energy**: analytic melting/print-time/power models and geometric
//!   deviation bookkeeping.
//! - **resnet**: a small dense residual network, trained from scratch with
//!   SGD, for per-layer energy prediction.
//! - **moo**: NSGA-II multi-objective search over grasp poses and process
//!   parameters.
//! - **hand**: the procedurally generated articulated-hand example asset.
//!
//! # Units and conventions
//!
//! Lengths are millimetres, angles radians, time seconds, power watts and
//! energy kilojoules unless a field says otherwise. Coordinates are
//! right-handed with +z as the build direction. Triangle faces are
//! counter-clockwise when seen from outside the solid.
//!
//! # Quick start
//!
//! ```
//! use graspmorph_core::mesh::primitives::unit_cube;
//!
//! let cube = unit_cube();
//! let report = cube.measure().unwrap();
//! assert!((report.volume - 1.0).abs() < 1e-12);
//! ```

pub mod energy;
pub mod ellipsoid;
pub mod hand;
pub mod kinematics;
pub mod mesh;
pub mod moo;
pub mod morph;
pub mod resnet;
pub mod slicer;

pub use mesh::{BoundingBox, Mesh, MeshError, MeshReport};
