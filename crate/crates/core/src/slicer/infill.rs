//! Infill toolpaths: hatch families clipped to a layer's solid region.
//!
//! A pattern is a set of hatch families, each a direction plus a phase for
//! its parallel lines. Lines sit at offsets (i + 1/2) * spacing from the low
//! edge of the rotated bounding box, so a region of area A receives close to
//! A / spacing of path per family regardless of where it sits in the frame.
//!
//! Within each family, segments are linked into one serpentine path by
//! greedy nearest-endpoint selection; the turning-point count is the number
//! of direction changes along the concatenated path.

use super::{Layer, SlicerError, SlicerResult};
use nalgebra::Point2;
use serde::{Deserialize, Serialize};

/// One family of parallel hatch lines: direction `angle` (radians, 0 means
/// lines along +x) and an extra `phase` added to the line offsets.
#[derive(Debug, Clone, Copy)]
pub struct HatchFamily {
    pub angle: f64,
    pub phase: f64,
}

/// An infill pattern is the set of hatch families it draws.
pub trait InfillPattern {
    fn name(&self) -> &'static str;
    fn families(&self, spacing: f64) -> Vec<HatchFamily>;
}

/// Parallel lines in one direction.
pub struct Line;

/// Two orthogonal line passes.
pub struct Grid;

/// Three passes at 60 degree increments.
pub struct Triangle;

/// Triangle passes with the third family shifted by half a spacing, which
/// opens the triangular cells into hexagons.
pub struct TriHexagon;

impl InfillPattern for Line {
    fn name(&self) -> &'static str {
        "line"
    }
    fn families(&self, _spacing: f64) -> Vec<HatchFamily> {
        vec![HatchFamily { angle: 0.0, phase: 0.0 }]
    }
}

impl InfillPattern for Grid {
    fn name(&self) -> &'static str {
        "grid"
    }
    fn families(&self, _spacing: f64) -> Vec<HatchFamily> {
        vec![
            HatchFamily { angle: 0.0, phase: 0.0 },
            HatchFamily { angle: std::f64::consts::FRAC_PI_2, phase: 0.0 },
        ]
    }
}

impl InfillPattern for Triangle {
    fn name(&self) -> &'static str {
        "triangle"
    }
    fn families(&self, _spacing: f64) -> Vec<HatchFamily> {
        let step = std::f64::consts::FRAC_PI_3;
        (0..3)
            .map(|k| HatchFamily { angle: step * k as f64, phase: 0.0 })
            .collect()
    }
}

impl InfillPattern for TriHexagon {
    fn name(&self) -> &'static str {
        "tri-hexagon"
    }
    fn families(&self, spacing: f64) -> Vec<HatchFamily> {
        let step = std::f64::consts::FRAC_PI_3;
        (0..3)
            .map(|k| HatchFamily {
                angle: step * k as f64,
                phase: if k == 2 { spacing / 2.0 } else { 0.0 },
            })
            .collect()
    }
}

/// Looks a pattern up by name.
pub fn infill_pattern(name: &str) -> Option<Box<dyn InfillPattern>> {
    match name {
        "line" => Some(Box::new(Line)),
        "grid" => Some(Box::new(Grid)),
        "triangle" => Some(Box::new(Triangle)),
        "tri-hexagon" => Some(Box::new(TriHexagon)),
        _ => None,
    }
}

pub fn infill_pattern_names() -> Vec<&'static str> {
    vec!["line", "grid", "triangle", "tri-hexagon"]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfillParams {
    /// Hatch line spacing in mm.
    pub spacing: f64,
    /// Extrusion line width in mm; sets the infill rate.
    pub line_width: f64,
}

impl Default for InfillParams {
    fn default() -> Self {
        InfillParams {
            spacing: 2.0,
            line_width: 0.4,
        }
    }
}

/// Toolpath summary of one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolpathMetrics {
    pub pattern: String,
    /// Total extruded path length in mm (travel moves excluded).
    pub total_length: f64,
    /// Direction changes along the linked path.
    pub turning_points: usize,
    /// Extruded area over section area, clamped to at most 1.
    pub infill_rate: f64,
    /// Extrusion segments in layer coordinates.
    pub segments: Vec<[Point2<f64>; 2]>,
}

fn rotate(p: &Point2<f64>, angle: f64) -> Point2<f64> {
    let (s, c) = angle.sin_cos();
    Point2::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// Computes the hatch toolpath of one layer.
pub fn infill(
    layer: &Layer,
    pattern: &dyn InfillPattern,
    params: &InfillParams,
) -> SlicerResult<ToolpathMetrics> {
    if params.spacing <= 0.0 {
        return Err(SlicerError::BadSpacing(params.spacing));
    }
    let mut all_segments: Vec<[Point2<f64>; 2]> = Vec::new();
    let mut path: Vec<Point2<f64>> = Vec::new();
    let mut total_length = 0.0;
    for family in pattern.families(params.spacing) {
        let segments = hatch_family(layer, &family, params.spacing);
        total_length += segments.iter().map(|[a, b]| (b - a).norm()).sum::<f64>();
        link_family(&segments, &mut path);
        all_segments.extend(segments);
    }
    let turning_points = count_turns(&path);
    let solid = layer.section_area.abs();
    let infill_rate = if solid > 0.0 {
        (total_length * params.line_width / solid).min(1.0)
    } else {
        0.0
    };
    Ok(ToolpathMetrics {
        pattern: pattern.name().to_string(),
        total_length,
        turning_points,
        infill_rate,
        segments: all_segments,
    })
}

/// All clipped hatch segments of one family, in layer coordinates.
fn hatch_family(layer: &Layer, family: &HatchFamily, spacing: f64) -> Vec<[Point2<f64>; 2]> {
    let mut rotated: Vec<Vec<Point2<f64>>> = Vec::with_capacity(layer.polygons.len());
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for polygon in &layer.polygons {
        let pts: Vec<Point2<f64>> = polygon
            .points
            .iter()
            .map(|p| rotate(p, -family.angle))
            .collect();
        for p in &pts {
            y_min = y_min.min(p.y);
            y_max = y_max.max(p.y);
        }
        rotated.push(pts);
    }
    let mut segments = Vec::new();
    if rotated.is_empty() || y_max <= y_min {
        return segments;
    }
    let phase = family.phase.rem_euclid(spacing);
    let mut i = 0usize;
    loop {
        let y = y_min + phase + (i as f64 + 0.5) * spacing;
        if y >= y_max {
            break;
        }
        let mut xs: Vec<f64> = Vec::new();
        for pts in &rotated {
            let n = pts.len();
            for k in 0..n {
                let a = &pts[k];
                let b = &pts[(k + 1) % n];
                if (a.y > y) != (b.y > y) {
                    xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Watertight loops give an even count; drop the line defensively if
        // a crossing lands exactly on a vertex.
        if xs.len() % 2 == 0 {
            for pair in xs.chunks(2) {
                if pair[1] - pair[0] > 1e-12 {
                    let a = rotate(&Point2::new(pair[0], y), family.angle);
                    let b = rotate(&Point2::new(pair[1], y), family.angle);
                    segments.push([a, b]);
                }
            }
        }
        i += 1;
    }
    segments
}

/// Greedy nearest-endpoint linking of one family; appends the family's
/// serpentine point sequence to `path`.
fn link_family(segments: &[[Point2<f64>; 2]], path: &mut Vec<Point2<f64>>) {
    let mut used = vec![false; segments.len()];
    let mut remaining = segments.len();
    // Start each run at the first unused segment in scan order.
    while remaining > 0 {
        let start = used.iter().position(|&u| !u).unwrap();
        used[start] = true;
        remaining -= 1;
        path.push(segments[start][0]);
        path.push(segments[start][1]);
        loop {
            let tail = *path.last().unwrap();
            let mut best: Option<(usize, bool, f64)> = None;
            for (i, seg) in segments.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let d0 = (seg[0] - tail).norm();
                let d1 = (seg[1] - tail).norm();
                let (flip, d) = if d1 < d0 { (true, d1) } else { (false, d0) };
                if best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((i, flip, d));
                }
            }
            let Some((i, flip, _)) = best else {
                break;
            };
            used[i] = true;
            remaining -= 1;
            if flip {
                path.push(segments[i][1]);
                path.push(segments[i][0]);
            } else {
                path.push(segments[i][0]);
                path.push(segments[i][1]);
            }
        }
    }
}

/// Number of interior vertices where the path changes direction by more
/// than 1e-9 radians.
fn count_turns(path: &[Point2<f64>]) -> usize {
    let mut turns = 0;
    for w in path.windows(3) {
        let v1 = w[1] - w[0];
        let v2 = w[2] - w[1];
        if v1.norm() < 1e-12 || v2.norm() < 1e-12 {
            continue;
        }
        let cross = v1.x * v2.y - v1.y * v2.x;
        let angle = cross.atan2(v1.dot(&v2)).abs();
        if angle > 1e-9 {
            turns += 1;
        }
    }
    turns
}
