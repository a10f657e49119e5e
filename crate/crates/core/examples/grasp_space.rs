//! Build a grasping space around a sphere and print its envelope quality.

use graspmorph_core::ellipsoid::{build_grasp_space, GraspSpaceParams};
use graspmorph_core::mesh::primitives::icosphere;
use nalgebra::Point3;

fn main() {
    let params = GraspSpaceParams::default();
    let mesh = icosphere(8.0, 2, Point3::origin());
    let space = build_grasp_space(&mesh, &params).unwrap();
    assert!(space.envelope_error <= params.envelope_eps);
    println!(
        "{} ellipsoids, envelope error {:.3e}, volume {:.1} mm^3",
        space.ellipsoids.len(),
        space.envelope_error,
        space.volume
    );
}
