//! Planar slicing of closed meshes into layered multi-polygons, plus the
//! derived fabrication quantities: binary layer masks, infill toolpaths and
//! vertical support statistics.
//!
//! Slice planes sit at layer mid-heights z_min + (i + 1/2) d, which dodges
//! vertex-coincident planes for almost all inputs; the few remaining
//! coincidences are nudged by 1e-7 of the build height and reported as
//! warnings. Each plane cuts crossing triangles into segments oriented along
//! z cross n (solid region on the left), so chained loops come out
//! counterclockwise for outer boundaries and clockwise for holes, and the
//! signed shoelace sum over all loops is the net section area.

pub mod infill;
pub mod raster;

use crate::mesh::{Mesh, MeshError};
use nalgebra::{Point2, Point3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use infill::{infill, infill_pattern, infill_pattern_names, InfillParams, ToolpathMetrics};
pub use raster::{rasterize_lcm, standard_kernels, Lcm};

/// Loop-closure tolerance when chaining slice segments, in millimetres.
pub const CHAIN_TOLERANCE: f64 = 1e-6;

pub type SlicerResult<T> = Result<T, SlicerError>;

#[derive(Debug, Error)]
pub enum SlicerError {
    #[error("mesh is not sliceable: {0}")]
    Mesh(#[from] MeshError),

    #[error("layer thickness {thickness} must be positive and at most the build height {build_height}")]
    InvalidThickness { thickness: f64, build_height: f64 },

    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),

    #[error("polygon self-intersects: edge {first} crosses edge {second}")]
    SelfIntersecting { first: usize, second: usize },

    #[error("mask resolution {0} is below the minimum of 8")]
    TooCoarse(usize),

    #[error("unknown infill pattern {requested:?}; available: {available:?}")]
    UnknownPattern {
        requested: String,
        available: Vec<&'static str>,
    },

    #[error("spacing must be positive, got {0}")]
    BadSpacing(f64),
}

/// A closed polyline in the slice plane. Counterclockwise loops bound solid
/// regions, clockwise loops bound holes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<Point2<f64>>,
}

impl Polygon {
    pub fn new(points: Vec<Point2<f64>>) -> Self {
        Polygon { points }
    }

    /// Signed shoelace area: positive for counterclockwise loops, negative
    /// for clockwise ones. Validates simplicity and reports the first pair
    /// of crossing edges otherwise.
    pub fn signed_area(&self) -> SlicerResult<f64> {
        if self.points.len() < 3 {
            return Err(SlicerError::TooFewVertices(self.points.len()));
        }
        let n = self.points.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // Adjacent edges share a vertex and may not count as crossing.
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                if segments_cross(
                    &self.points[i],
                    &self.points[(i + 1) % n],
                    &self.points[j],
                    &self.points[(j + 1) % n],
                ) {
                    return Err(SlicerError::SelfIntersecting { first: i, second: j });
                }
            }
        }
        Ok(shoelace(&self.points))
    }

    pub fn is_counterclockwise(&self) -> bool {
        shoelace(&self.points) > 0.0
    }
}

/// Signed shoelace area without simplicity validation.
pub(crate) fn shoelace(points: &[Point2<f64>]) -> f64 {
    let n = points.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = &points[i];
        let b = &points[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    twice / 2.0
}

/// Proper intersection test for open segments (shared endpoints and
/// collinear touching do not count).
fn segments_cross(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>, d: &Point2<f64>) -> bool {
    let orient = |p: &Point2<f64>, q: &Point2<f64>, r: &Point2<f64>| {
        (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)
    };
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Even-odd membership of a point in a set of loops (holes toggle back out).
pub fn point_in_polygons(p: &Point2<f64>, polygons: &[Polygon]) -> bool {
    let mut inside = false;
    for poly in polygons {
        let pts = &poly.points;
        let n = pts.len();
        for i in 0..n {
            let a = &pts[i];
            let b = &pts[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// One slice: plane height, normalized height, loops and net section area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// Plane height in mm.
    pub z: f64,
    /// Height normalized by the build height, in (0, 1).
    pub normalized_height: f64,
    pub polygons: Vec<Polygon>,
    /// Net cross-section area: shoelace sum over all loops (holes negative).
    pub section_area: f64,
}

/// All layers of a mesh plus slicing diagnostics.
#[derive(Debug, Clone)]
pub struct Slicing {
    pub layers: Vec<Layer>,
    pub thickness: f64,
    /// Lowest and highest mesh z, defining the build height.
    pub z_min: f64,
    pub z_max: f64,
    pub warnings: Vec<String>,
}

impl Slicing {
    pub fn build_height(&self) -> f64 {
        self.z_max - self.z_min
    }

    /// Volume estimate Sum(section_area * thickness), for conservation checks.
    pub fn stacked_volume(&self) -> f64 {
        self.layers.iter().map(|l| l.section_area).sum::<f64>() * self.thickness
    }
}

/// Slices a closed manifold mesh into layers of the given thickness.
pub fn slice(mesh: &Mesh, thickness: f64) -> SlicerResult<Slicing> {
    mesh.require_closed_manifold()?;
    let aabb = mesh.aabb();
    let z_min = aabb.min.z;
    let z_max = aabb.max.z;
    let build_height = z_max - z_min;
    if !(thickness > 0.0 && thickness <= build_height) {
        return Err(SlicerError::InvalidThickness {
            thickness,
            build_height,
        });
    }

    let layer_count = (build_height / thickness - 0.5).ceil().max(1.0) as usize;
    let coincidence_eps = 1e-7 * build_height;
    let mut warnings = Vec::new();
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let mut z = z_min + (i as f64 + 0.5) * thickness;
        let mut nudges = 0;
        while mesh
            .vertices
            .iter()
            .any(|v| (v.z - z).abs() < coincidence_eps)
            && nudges < 16
        {
            z += 2.0 * coincidence_eps;
            nudges += 1;
        }
        if nudges > 0 {
            warnings.push(format!(
                "slice plane {i} coincided with mesh vertices; nudged up by {:.3e} mm",
                2.0 * coincidence_eps * nudges as f64
            ));
        }
        let (polygons, mut layer_warnings) = cross_section(mesh, z);
        warnings.append(&mut layer_warnings);
        let section_area = polygons.iter().map(|p| shoelace(&p.points)).sum();
        layers.push(Layer {
            z,
            normalized_height: (z - z_min) / build_height,
            polygons,
            section_area,
        });
    }
    Ok(Slicing {
        layers,
        thickness,
        z_min,
        z_max,
        warnings,
    })
}

/// Intersects every triangle with the plane and chains the resulting
/// segments into closed loops.
fn cross_section(mesh: &Mesh, z: f64) -> (Vec<Polygon>, Vec<String>) {
    let mut segments: Vec<(Point2<f64>, Point2<f64>)> = Vec::new();
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.triangle(f);
        if let Some((p0, p1)) = triangle_plane_segment(&a, &b, &c, z) {
            let n = mesh.face_normal_raw(f);
            // Walking direction z cross n keeps the solid on the left.
            let dir = Vector3::z().cross(&n);
            let d2 = Point2::new(dir.x, dir.y);
            if (p1 - p0).dot(&d2.coords) >= 0.0 {
                segments.push((p0, p1));
            } else {
                segments.push((p1, p0));
            }
        }
    }
    chain_segments(segments, z)
}

/// The segment where a triangle crosses the plane z = h, if any.
fn triangle_plane_segment(
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
    h: f64,
) -> Option<(Point2<f64>, Point2<f64>)> {
    let mut crossings: Vec<Point2<f64>> = Vec::with_capacity(2);
    for (u, v) in [(a, b), (b, c), (c, a)] {
        let du = u.z - h;
        let dv = v.z - h;
        if (du > 0.0) != (dv > 0.0) {
            let t = du / (du - dv);
            crossings.push(Point2::new(u.x + t * (v.x - u.x), u.y + t * (v.y - u.y)));
        }
    }
    if crossings.len() == 2 {
        Some((crossings[0], crossings[1]))
    } else {
        None
    }
}

/// Greedy endpoint chaining within [`CHAIN_TOLERANCE`]; open chains are
/// discarded with a warning.
fn chain_segments(
    segments: Vec<(Point2<f64>, Point2<f64>)>,
    z: f64,
) -> (Vec<Polygon>, Vec<String>) {
    let mut polygons = Vec::new();
    let mut warnings = Vec::new();
    let mut used = vec![false; segments.len()];
    // Drop degenerate slivers before chaining.
    for (i, (p0, p1)) in segments.iter().enumerate() {
        if (p1 - p0).norm() < CHAIN_TOLERANCE {
            used[i] = true;
        }
    }
    loop {
        let Some(start) = used.iter().position(|&u| !u) else {
            break;
        };
        used[start] = true;
        let mut loop_points = vec![segments[start].0, segments[start].1];
        loop {
            let tail = *loop_points.last().unwrap();
            if (tail - loop_points[0]).norm() < CHAIN_TOLERANCE && loop_points.len() > 2 {
                loop_points.pop();
                polygons.push(Polygon::new(loop_points));
                break;
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, (p0, _)) in segments.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d = (p0 - tail).norm();
                if d < CHAIN_TOLERANCE && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            match best {
                Some((i, _)) => {
                    used[i] = true;
                    loop_points.push(segments[i].1);
                }
                None => {
                    warnings.push(format!(
                        "discarded an open chain of {} points at z = {z:.6}",
                        loop_points.len()
                    ));
                    break;
                }
            }
        }
    }
    (polygons, warnings)
}

/// Support-generation knobs. Lengths are measured straight down from sampled
/// points on down-facing facets to the first surface below, or to the bed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportParams {
    /// Maximum angle between the facet normal and straight down (-z) for a
    /// facet to need support, in radians.
    pub overhang_threshold: f64,
    /// Sample points per square millimetre of down-facing area.
    pub sample_density: f64,
    /// Bed height; rays that miss the mesh terminate here.
    pub bed_z: f64,
    pub seed: u64,
}

impl Default for SupportParams {
    fn default() -> Self {
        SupportParams {
            overhang_threshold: 45f64.to_radians(),
            sample_density: 1.0,
            bed_z: 0.0,
            seed: 42,
        }
    }
}

/// Vertical support lengths and their summary statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportStats {
    pub lengths: Vec<f64>,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub sum: f64,
    /// Supports that reach the bed.
    pub bottom_count: usize,
    /// Supports that land on the mesh itself.
    pub mesh_count: usize,
}

/// Samples down-facing facets and drops one vertical ray per sample.
/// Drops shorter than 1e-9 mm (surface resting on something) are not
/// supports.
pub fn support_stats(mesh: &Mesh, params: &SupportParams) -> SupportStats {
    let cos_limit = params.overhang_threshold.cos();
    let down = -Vector3::z();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut lengths = Vec::new();
    let mut bottom_count = 0;
    let mut mesh_count = 0;
    for f in 0..mesh.face_count() {
        let normal = mesh.face_normal(f);
        if normal.dot(&down) <= cos_limit {
            continue;
        }
        let area = mesh.face_area(f);
        let samples = (area * params.sample_density).ceil() as usize;
        let [a, b, c] = mesh.triangle(f);
        for _ in 0..samples {
            // Uniform barycentric sample via the square-root trick.
            let r1: f64 = rng.gen::<f64>();
            let r2: f64 = rng.gen::<f64>();
            let s = r1.sqrt();
            let point = Point3::from(
                a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2),
            );
            // A first hit at (near) zero distance means the facet rests on
            // another surface; that cancels the support entirely rather than
            // letting the ray continue through the solid below.
            let drop = match first_hit_below(mesh, &point, f) {
                Some(distance) => {
                    if distance <= 1e-9 {
                        continue;
                    }
                    mesh_count += 1;
                    distance
                }
                None => {
                    let distance = point.z - params.bed_z;
                    if distance <= 1e-9 {
                        continue;
                    }
                    bottom_count += 1;
                    distance
                }
            };
            lengths.push(drop);
        }
    }
    summarize_supports(lengths, bottom_count, mesh_count)
}

fn summarize_supports(lengths: Vec<f64>, bottom_count: usize, mesh_count: usize) -> SupportStats {
    if lengths.is_empty() {
        return SupportStats {
            lengths,
            max: 0.0,
            min: 0.0,
            mean: 0.0,
            median: 0.0,
            sum: 0.0,
            bottom_count,
            mesh_count,
        };
    }
    let mut sorted = lengths.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sum: f64 = sorted.iter().sum();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    SupportStats {
        max: sorted[n - 1],
        min: sorted[0],
        mean: sum / n as f64,
        median,
        sum,
        bottom_count,
        mesh_count,
        lengths,
    }
}

/// Distance to the first triangle at or below the point along -z, skipping
/// the facet the ray starts on. Coincident surfaces report distance ~0.
fn first_hit_below(mesh: &Mesh, origin: &Point3<f64>, skip_face: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..mesh.face_count() {
        if f == skip_face {
            continue;
        }
        let [a, b, c] = mesh.triangle(f);
        // Moller-Trumbore specialised to the direction (0, 0, -1), for which
        // dir x e2 = (e2.y, -e2.x, 0).
        let e1 = b - a;
        let e2 = c - a;
        let h = Vector3::new(e2.y, -e2.x, 0.0);
        let det = e1.dot(&h);
        if det.abs() < 1e-12 {
            continue;
        }
        let s = origin - a;
        let u = s.dot(&h) / det;
        if !(-1e-12..=1.0 + 1e-12).contains(&u) {
            continue;
        }
        let q = s.cross(&e1);
        let v = -q.z / det;
        if v < -1e-12 || u + v > 1.0 + 1e-12 {
            continue;
        }
        let t = e2.dot(&q) / det;
        if t > -1e-12 && best.map_or(true, |b| t < b) {
            best = Some(t.max(0.0));
        }
    }
    best
}
