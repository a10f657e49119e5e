//! Manifold triangle meshes and their metrology.
//!
//! A [`Mesh`] stores vertices in millimetres and counter-clockwise faces.
//! Vertex adjacency is built on construction so downstream consumers
//! (Laplacian morphing, grasp spaces) never rebuild it. Loading welds
//! duplicate vertex records at [`WELD_TOLERANCE`], drops degenerate faces
//! and repairs globally inverted orientation; each repair leaves a warning
//! on the mesh.

pub mod io;
pub mod primitives;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_mesh, save_mesh, MeshFormat};

/// Vertices closer than this (mm) are considered the same point when welding.
pub const WELD_TOLERANCE: f64 = 1e-6;

/// Faces with area below this (mm²) are dropped as degenerate.
pub const DEGENERATE_FACE_AREA: f64 = 1e-12;

pub type MeshResult<T> = Result<T, MeshError>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no faces")]
    Empty,

    #[error("face {face} references vertex {vertex}, but the mesh has {vertex_count} vertices")]
    IndexOutOfBounds {
        face: usize,
        vertex: usize,
        vertex_count: usize,
    },

    #[error(
        "mesh is not a closed manifold: {boundary} boundary edge(s), {nonmanifold} edge(s) \
         shared by more than two faces (first offenders: {examples:?})"
    )]
    NotClosedManifold {
        boundary: usize,
        nonmanifold: usize,
        examples: Vec<(usize, usize)>,
    },

    #[error("cannot infer mesh format of {path:?}: expected an .stl or .obj extension")]
    UnknownFormat { path: String },

    #[error("failed to parse {path:?}: {message}")]
    Parse { path: String, message: String },

    #[error("I/O error on {path:?}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned bounding box in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl BoundingBox {
    /// Smallest box containing all `points`. Empty input yields a degenerate
    /// box at the origin.
    pub fn from_points<'a, I: IntoIterator<Item = &'a Point3<f64>>>(points: I) -> Self {
        let mut it = points.into_iter();
        let first = match it.next() {
            Some(p) => *p,
            None => Point3::origin(),
        };
        let mut bb = BoundingBox {
            min: first,
            max: first,
        };
        for p in it {
            bb.expand(p);
        }
        bb
    }

    pub fn expand(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            if p[k] < self.min[k] {
                self.min[k] = p[k];
            }
            if p[k] > self.max[k] {
                self.max[k] = p[k];
            }
        }
    }

    /// Extents (x_b, y_b, z_b) along the three axes.
    pub fn strokes(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.strokes().norm()
    }

    /// True when at least one extent collapses to zero thickness.
    pub fn is_degenerate(&self) -> bool {
        let s = self.strokes();
        s.x <= 0.0 || s.y <= 0.0 || s.z <= 0.0
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let mut bb = *self;
        bb.expand(&other.min);
        bb.expand(&other.max);
        bb
    }
}

/// Per-edge usage discovered by [`Mesh::validate`].
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    /// Undirected edges incident to exactly one face.
    pub boundary_edges: Vec<(usize, usize)>,
    /// Undirected edges incident to more than two faces.
    pub nonmanifold_edges: Vec<(usize, usize)>,
    /// Undirected edges whose two incident faces traverse them in the same
    /// direction (inconsistent winding).
    pub misoriented_edges: Vec<(usize, usize)>,
}

impl ValidationReport {
    /// Every edge is shared by exactly two faces.
    pub fn is_closed_manifold(&self) -> bool {
        self.boundary_edges.is_empty() && self.nonmanifold_edges.is_empty()
    }

    /// Closed manifold with consistent winding.
    pub fn is_consistently_oriented(&self) -> bool {
        self.is_closed_manifold() && self.misoriented_edges.is_empty()
    }
}

/// Metrology summary produced by [`Mesh::measure`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshReport {
    /// Total triangle area (mm²).
    pub surface_area: f64,
    /// Signed volume via the tetrahedron sum (mm³); positive for outward
    /// CCW orientation.
    pub volume: f64,
    /// Volume-weighted centroid (mm).
    pub centroid: Point3<f64>,
    pub aabb: BoundingBox,
    /// Extents normalized by the z stroke: (x_b/z_b, y_b/z_b, 1).
    pub stroke_ratio: [f64; 3],
    /// Centroid position inside the box, per axis: (centroid - min) / stroke.
    pub center_ratio: [f64; 3],
}

/// Triangle mesh with precomputed vertex adjacency.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    adjacency: Vec<Vec<usize>>,
    /// Notes left by loading/repair steps (welds, dropped faces, flips).
    pub warnings: Vec<String>,
}

impl Mesh {
    /// Builds a mesh from raw arrays, checking indices and dropping
    /// degenerate (area < [`DEGENERATE_FACE_AREA`]) faces with a warning.
    pub fn from_vertices_faces(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
    ) -> MeshResult<Self> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(MeshError::IndexOutOfBounds {
                        face: fi,
                        vertex: v,
                        vertex_count: vertices.len(),
                    });
                }
            }
        }
        let before = faces.len();
        let kept: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| {
                triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]])
                    >= DEGENERATE_FACE_AREA
            })
            .collect();
        if kept.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut warnings = Vec::new();
        if kept.len() < before {
            warnings.push(format!("dropped {} degenerate face(s)", before - kept.len()));
        }
        Ok(Mesh {
            adjacency: build_adjacency(vertices.len(), &kept),
            vertices,
            faces: kept,
            warnings,
        })
    }

    /// Sorted vertex indices sharing an edge with vertex `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Corner positions of face `f`.
    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Non-normalized outward normal of face `f` (norm = 2 × area).
    pub fn face_normal_raw(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    /// Unit outward normal of face `f`.
    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        self.face_normal_raw(f).normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_normal_raw(f).norm()
    }

    pub fn face_centroid(&self, f: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle(f);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Classifies every undirected edge by face incidence and winding.
    pub fn validate(&self) -> ValidationReport {
        use std::collections::BTreeMap;
        // (count, winding balance): each CCW traversal a->b adds +1 for
        // a<b and -1 otherwise; a consistently wound interior edge nets 0.
        let mut edges: BTreeMap<(usize, usize), (usize, i64)> = BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let dir = if a < b { 1 } else { -1 };
                let e = edges.entry(key).or_insert((0, 0));
                e.0 += 1;
                e.1 += dir;
            }
        }
        let mut report = ValidationReport::default();
        for (edge, (count, balance)) in edges {
            match count {
                1 => report.boundary_edges.push(edge),
                2 => {
                    if balance != 0 {
                        report.misoriented_edges.push(edge);
                    }
                }
                _ => report.nonmanifold_edges.push(edge),
            }
        }
        report
    }

    /// Errors with the offending edge lists unless the mesh is a closed
    /// 2-manifold.
    pub fn require_closed_manifold(&self) -> MeshResult<()> {
        let report = self.validate();
        if report.is_closed_manifold() {
            Ok(())
        } else {
            let examples: Vec<(usize, usize)> = report
                .boundary_edges
                .iter()
                .chain(report.nonmanifold_edges.iter())
                .take(8)
                .copied()
                .collect();
            Err(MeshError::NotClosedManifold {
                boundary: report.boundary_edges.len(),
                nonmanifold: report.nonmanifold_edges.len(),
                examples,
            })
        }
    }

    /// Total triangle area (mm²). Valid on open meshes too.
    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed volume (mm³) via the tetrahedron sum against the origin.
    /// Meaningful only for closed meshes; negative when wound inward.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (
                    self.vertices[a].coords,
                    self.vertices[b].coords,
                    self.vertices[c].coords,
                );
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn aabb(&self) -> BoundingBox {
        BoundingBox::from_points(self.vertices.iter())
    }

    /// Flips every face if the signed volume is negative, leaving a warning.
    /// Returns true when a flip happened.
    pub fn orient_outward(&mut self) -> bool {
        if self.signed_volume() < 0.0 {
            for f in &mut self.faces {
                f.swap(1, 2);
            }
            self.warnings
                .push("signed volume was negative; all faces flipped to outward orientation".into());
            true
        } else {
            false
        }
    }

    /// Full metrology report. Volume and centroid need a closed manifold;
    /// the signed volume is reported as-is, so an inward-wound mesh shows a
    /// negative volume rather than being silently repaired.
    pub fn measure(&self) -> MeshResult<MeshReport> {
        self.require_closed_manifold()?;
        let volume = self.signed_volume();
        // Tetrahedron (0, a, b, c) has centroid (a + b + c) / 4.
        let mut weighted = Vector3::zeros();
        for &[a, b, c] in &self.faces {
            let (a, b, c) = (
                self.vertices[a].coords,
                self.vertices[b].coords,
                self.vertices[c].coords,
            );
            let v = a.dot(&b.cross(&c)) / 6.0;
            weighted += v * (a + b + c) / 4.0;
        }
        let centroid = if volume.abs() > 0.0 {
            Point3::from(weighted / volume)
        } else {
            Point3::origin()
        };
        let aabb = self.aabb();
        let s = aabb.strokes();
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let stroke_ratio = [ratio(s.x, s.z), ratio(s.y, s.z), 1.0];
        let center_ratio = [
            ratio(centroid.x - aabb.min.x, s.x),
            ratio(centroid.y - aabb.min.y, s.y),
            ratio(centroid.z - aabb.min.z, s.z),
        ];
        Ok(MeshReport {
            surface_area: self.surface_area(),
            volume,
            centroid,
            aabb,
            stroke_ratio,
            center_ratio,
        })
    }

    /// Applies `f` to every vertex in place and returns the mesh.
    pub fn map_vertices(mut self, f: impl Fn(Point3<f64>) -> Point3<f64>) -> Self {
        for v in &mut self.vertices {
            *v = f(*v);
        }
        self
    }
}

pub(crate) fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn build_adjacency(vertex_count: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut adjacency = vec![Vec::new(); vertex_count];
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    adjacency
}

/// Merges vertices closer than `tolerance`, remapping faces and dropping
/// the collapsed ones. Returns the number of removed vertex records.
pub fn weld_vertices(
    vertices: &mut Vec<Point3<f64>>,
    faces: &mut Vec<[usize; 3]>,
    tolerance: f64,
) -> usize {
    use std::collections::HashMap;
    let quantize = |x: f64| (x / tolerance).round() as i64;
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut remap = vec![usize::MAX; vertices.len()];
    let mut kept: Vec<Point3<f64>> = Vec::with_capacity(vertices.len());

    for (i, p) in vertices.iter().enumerate() {
        let cell = (quantize(p.x), quantize(p.y), quantize(p.z));
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let key = (cell.0 + dx, cell.1 + dy, cell.2 + dz);
                    if let Some(candidates) = cells.get(&key) {
                        for &j in candidates {
                            if nalgebra::distance(&kept[j], p) <= tolerance {
                                found = Some(j);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        remap[i] = match found {
            Some(j) => j,
            None => {
                kept.push(*p);
                cells.entry(cell).or_default().push(kept.len() - 1);
                kept.len() - 1
            }
        };
    }

    let removed = vertices.len() - kept.len();
    *vertices = kept;
    for f in faces.iter_mut() {
        *f = [remap[f[0]], remap[f[1]], remap[f[2]]];
    }
    faces.retain(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2]);
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use primitives::{box_with_hole, cuboid, icosphere, unit_cube};

    #[test]
    fn unit_cube_metrology_is_exact() {
        let cube = unit_cube();
        let report = cube.measure().unwrap();
        assert!((report.surface_area - 6.0).abs() < 1e-12);
        assert!((report.volume - 1.0).abs() < 1e-12);
        for k in 0..3 {
            assert!((report.centroid[k] - 0.5).abs() < 1e-12);
            assert!((report.center_ratio[k] - 0.5).abs() < 1e-12);
            assert!((report.stroke_ratio[k] - 1.0).abs() < 1e-12);
        }
        assert_eq!(report.aabb.min, Point3::origin());
        assert_eq!(report.aabb.max, Point3::new(1.0, 1.0, 1.0));
        assert!((report.aabb.diagonal() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn translated_cuboid_reports_offset_centroid() {
        let mesh = cuboid(Point3::new(2.0, -1.0, 4.0), Point3::new(5.0, 1.0, 9.0));
        let report = mesh.measure().unwrap();
        assert!((report.volume - 3.0 * 2.0 * 5.0).abs() < 1e-9);
        assert!((report.centroid - Point3::new(3.5, 0.0, 6.5)).norm() < 1e-9);
    }

    #[test]
    fn icosphere_volume_approaches_analytic_ball() {
        let r = 10.0;
        let sphere = icosphere(r, 3, Point3::origin());
        assert_eq!(sphere.face_count(), 1280);
        let report = sphere.measure().unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!(
            (report.volume - exact).abs() / exact < 0.01,
            "volume {} vs analytic {}",
            report.volume,
            exact
        );
        assert!(report.volume < exact, "inscribed polyhedron must underestimate");
    }

    #[test]
    fn flipped_cube_reports_negative_volume_and_repairs() {
        let mut cube = unit_cube();
        for f in &mut cube.faces {
            f.swap(0, 2);
        }
        assert!((cube.signed_volume() + 1.0).abs() < 1e-12);
        assert!(cube.orient_outward());
        assert!((cube.signed_volume() - 1.0).abs() < 1e-12);
        assert!(cube.warnings.iter().any(|w| w.contains("flipped")));
    }

    #[test]
    fn open_mesh_measure_fails_with_boundary_edges() {
        let mut cube = unit_cube();
        cube.faces.pop();
        let cube = Mesh::from_vertices_faces(cube.vertices, cube.faces).unwrap();
        let err = cube.measure().unwrap_err();
        match err {
            MeshError::NotClosedManifold { boundary, examples, .. } => {
                assert_eq!(boundary, 3);
                assert!(!examples.is_empty());
            }
            other => panic!("unexpected error {other:?}"),
        }
        // Area and bounds still work on the open mesh.
        assert!(cube.surface_area() > 5.0);
        assert!(!cube.aabb().is_degenerate());
    }

    #[test]
    fn hole_model_volume_subtracts_core() {
        let ring = box_with_hole(1.0, 1.0, 0.5, 0.5, 1.0);
        let report = ring.measure().unwrap();
        assert!((report.volume - 3.0).abs() < 1e-12, "volume {}", report.volume);
        assert!(report.aabb.strokes() == Vector3::new(2.0, 2.0, 1.0));
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let vertices = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let faces = vec![[0, 1, 2], [0, 1, 1], [0, 0, 2]];
        let mesh = Mesh::from_vertices_faces(vertices, faces).unwrap();
        assert_eq!(mesh.face_count(), 1);
    }

    #[test]
    fn weld_merges_close_duplicates_only() {
        let mut vertices = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0 + 0.4e-6),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let mut faces = vec![[0, 2, 3], [1, 3, 2]];
        let removed = weld_vertices(&mut vertices, &mut faces, WELD_TOLERANCE);
        assert_eq!(removed, 1);
        assert_eq!(vertices.len(), 3);
        assert_eq!(faces.len(), 2);
        assert_eq!(faces[1][0], 0);
    }

    #[test]
    fn adjacency_is_symmetric_and_sorted() {
        let sphere = icosphere(1.0, 1, Point3::origin());
        for v in 0..sphere.vertex_count() {
            let ns = sphere.neighbors(v);
            assert!(ns.windows(2).all(|w| w[0] < w[1]));
            for &n in ns {
                assert!(sphere.neighbors(n).contains(&v));
            }
        }
    }

    #[test]
    fn validate_flags_misoriented_interior_edge() {
        let mut cube = unit_cube();
        cube.faces[0].swap(0, 1);
        let report = cube.validate();
        assert!(report.is_closed_manifold());
        assert!(!report.is_consistently_oriented());
        assert_eq!(report.misoriented_edges.len(), 3);
    }
}
