//! Procedural test and demo solids. All of them come out as closed CCW
//! manifolds except [`grid_patch`], which is an open sheet.

use super::Mesh;
use nalgebra::Point3;
use std::collections::HashMap;

/// Axis-aligned unit cube spanning [0,1]³.
pub fn unit_cube() -> Mesh {
    cuboid(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
}

/// Axis-aligned box between two opposite corners.
pub fn cuboid(min: Point3<f64>, max: Point3<f64>) -> Mesh {
    let v = vec![
        Point3::new(min.x, min.y, min.z),
        Point3::new(max.x, min.y, min.z),
        Point3::new(max.x, max.y, min.z),
        Point3::new(min.x, max.y, min.z),
        Point3::new(min.x, min.y, max.z),
        Point3::new(max.x, min.y, max.z),
        Point3::new(max.x, max.y, max.z),
        Point3::new(min.x, max.y, max.z),
    ];
    let f = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    Mesh::from_vertices_faces(v, f).expect("cuboid construction is well-formed")
}

/// Geodesic sphere from a subdivided icosahedron. `subdivisions = 3` yields
/// 1280 faces.
pub fn icosphere(radius: f64, subdivisions: u32, center: Point3<f64>) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(nalgebra::Vector3::new(x, y, z).normalize()))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = nalgebra::center(&vertices[a], &vertices[b]);
                vertices.push(Point3::from(m.coords.normalize()));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    for v in &mut vertices {
        *v = center + v.coords * radius;
    }
    Mesh::from_vertices_faces(vertices, faces).expect("icosphere construction is well-formed")
}

/// Rectangular ring: an `2·outer_x × 2·outer_y × height` box with a centered
/// rectangular through-hole of `2·inner_x × 2·inner_y`, sitting on z = 0.
pub fn box_with_hole(
    outer_x: f64,
    outer_y: f64,
    inner_x: f64,
    inner_y: f64,
    height: f64,
) -> Mesh {
    assert!(inner_x < outer_x && inner_y < outer_y && height > 0.0);
    let ring = |hx: f64, hy: f64, z: f64| {
        [
            Point3::new(-hx, -hy, z),
            Point3::new(hx, -hy, z),
            Point3::new(hx, hy, z),
            Point3::new(-hx, hy, z),
        ]
    };
    let mut vertices = Vec::with_capacity(16);
    vertices.extend(ring(outer_x, outer_y, 0.0)); // 0..4   bottom outer
    vertices.extend(ring(inner_x, inner_y, 0.0)); // 4..8   bottom inner
    vertices.extend(ring(outer_x, outer_y, height)); // 8..12  top outer
    vertices.extend(ring(inner_x, inner_y, height)); // 12..16 top inner

    let mut faces = Vec::with_capacity(32);
    let mut quad = |a: usize, b: usize, c: usize, d: usize| {
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    };
    for k in 0..4 {
        let k1 = (k + 1) % 4;
        let (bo, bi, to, ti) = (k, 4 + k, 8 + k, 12 + k);
        let (bo1, bi1, to1, ti1) = (k1, 4 + k1, 8 + k1, 12 + k1);
        quad(bo, bi, bi1, bo1); // bottom annulus, -z
        quad(to, to1, ti1, ti); // top annulus, +z
        quad(bo, bo1, to1, to); // outer wall, outward
        quad(bi1, bi, ti, ti1); // hole wall, toward the axis
    }
    Mesh::from_vertices_faces(vertices, faces).expect("ring construction is well-formed")
}

/// Open triangulated sheet in the z = 0 plane with `nx × ny` cells of size
/// `spacing`. The diagonal split is uniform, so every interior vertex equals
/// the average of its six neighbors.
pub fn grid_patch(nx: usize, ny: usize, spacing: f64) -> Mesh {
    assert!(nx >= 1 && ny >= 1);
    let cols = nx + 1;
    let mut vertices = Vec::with_capacity(cols * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let at = |i: usize, j: usize| j * cols + i;
    let mut faces = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    Mesh::from_vertices_faces(vertices, faces).expect("grid construction is well-formed")
}

/// Axis-aligned box with each face gridded into `divisions` cells per axis,
/// so edits have surface vertices to work with. Shared edges and corners are
/// welded into a closed manifold.
pub fn subdivided_cuboid(min: Point3<f64>, max: Point3<f64>, divisions: [usize; 3]) -> Mesh {
    assert!(divisions.iter().all(|&n| n >= 1));
    let span = max - min;
    let step = |axis: usize, i: usize| -> f64 {
        min[axis] + span[axis] * (i as f64 / divisions[axis] as f64)
    };
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // One gridded face per side; du x dv points along the outward normal.
    // (u_axis, v_axis, fixed_axis, fixed_at_max)
    let sides = [
        (0usize, 1usize, 2usize, true),  // +z
        (1, 0, 2, false),                // -z
        (1, 2, 0, true),                 // +x
        (2, 1, 0, false),                // -x
        (2, 0, 1, true),                 // +y
        (0, 2, 1, false),                // -y
    ];
    for (u_axis, v_axis, fixed_axis, at_max) in sides {
        let (nu, nv) = (divisions[u_axis], divisions[v_axis]);
        let fixed = if at_max { max[fixed_axis] } else { min[fixed_axis] };
        let base = vertices.len();
        for j in 0..=nv {
            for i in 0..=nu {
                let mut p = Point3::origin();
                p[u_axis] = step(u_axis, i);
                p[v_axis] = step(v_axis, j);
                p[fixed_axis] = fixed;
                vertices.push(p);
            }
        }
        let at = |i: usize, j: usize| base + j * (nu + 1) + i;
        for j in 0..nv {
            for i in 0..nu {
                faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
    }
    let tolerance = 1e-9 * span.norm().max(1.0);
    super::weld_vertices(&mut vertices, &mut faces, tolerance);
    Mesh::from_vertices_faces(vertices, faces).expect("subdivided box is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_are_closed_and_oriented() {
        for mesh in [
            unit_cube(),
            icosphere(2.0, 2, Point3::new(1.0, 0.0, 0.0)),
            box_with_hole(2.0, 1.5, 1.0, 0.5, 3.0),
        ] {
            let report = mesh.validate();
            assert!(report.is_consistently_oriented(), "{report:?}");
            assert!(mesh.signed_volume() > 0.0);
        }
    }

    #[test]
    fn subdivided_cuboid_matches_the_plain_box_measures() {
        let min = Point3::new(-2.0, 0.0, 1.0);
        let max = Point3::new(4.0, 3.0, 6.0);
        let fine = subdivided_cuboid(min, max, [3, 2, 4]);
        let report = fine.validate();
        assert!(report.is_closed_manifold(), "{report:?}");
        assert!(report.is_consistently_oriented());
        let measured = fine.measure().unwrap();
        assert!((measured.volume - 90.0).abs() < 1e-9);
        assert!((measured.surface_area - 126.0).abs() < 1e-9);
        // Welding leaves exactly the boundary lattice points: the full
        // (3+1)(2+1)(4+1) grid minus the (3-1)(2-1)(4-1) interior.
        assert_eq!(fine.vertex_count(), 4 * 3 * 5 - 2 * 1 * 3);
    }

    #[test]
    fn grid_patch_is_open_with_symmetric_interior() {
        let grid = grid_patch(4, 4, 1.0);
        assert!(!grid.validate().is_closed_manifold());
        // Interior vertex (2,2) = index 12: six neighbors averaging to it.
        let ns = grid.neighbors(12);
        assert_eq!(ns.len(), 6);
        let avg: nalgebra::Vector3<f64> =
            ns.iter().map(|&n| grid.vertices[n].coords).sum::<nalgebra::Vector3<f64>>()
                / ns.len() as f64;
        assert!((avg - grid.vertices[12].coords).norm() < 1e-12);
    }
}
