//! Flexible grasping spaces: a union of oblique ellipsoids covering a mesh.
//!
//! The build starts from a k-means partition of the vertices, fits a
//! minimum-volume ellipsoid per subset, then repeatedly folds faces whose
//! corners straddle subsets into the nearest ellipsoid (by form value at the
//! face centroid) and refits, until the envelope error drops below tolerance
//! or the round cap hits. Union volume, centroid and surface area come from
//! fixed-seed Monte-Carlo sampling.

use super::{mvee_ellipsoid, EllipsoidError, EllipsoidResult, MveeParams, ObliqueEllipsoid};
use crate::mesh::{BoundingBox, Mesh};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspSpaceParams {
    /// Number of ellipsoids; the k-means partition starts with exactly this
    /// many subsets.
    pub max_ellipsoids: usize,
    /// Envelope error tolerance: maximum allowed containment slack of any
    /// face under its best ellipsoid.
    pub envelope_eps: f64,
    /// Cap on cover-and-refit rounds after the initial fit.
    pub max_refit_rounds: usize,
    pub mvee: MveeParams,
    /// Monte-Carlo sample budget for union volume/centroid/area.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for GraspSpaceParams {
    fn default() -> Self {
        GraspSpaceParams {
            max_ellipsoids: 8,
            envelope_eps: 1e-6,
            max_refit_rounds: 32,
            mvee: MveeParams::default(),
            mc_samples: 200_000,
            seed: 42,
        }
    }
}

/// Union-of-ellipsoids grasp space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspSpace {
    pub ellipsoids: Vec<ObliqueEllipsoid>,
    /// For each mesh face, the ellipsoid whose worst corner sits deepest
    /// inside (the covering ellipsoid once the envelope error is ≤ eps).
    pub facet_cover: Vec<usize>,
    /// Max over faces of the best ellipsoid's containment slack, clamped
    /// at zero.
    pub envelope_error: f64,
    /// Monte-Carlo union centroid (mm).
    pub centroid: Point3<f64>,
    /// Monte-Carlo union volume (mm³).
    pub volume: f64,
    /// Monte-Carlo union surface area (mm²).
    pub surface_area: f64,
}

impl GraspSpace {
    /// Smallest form value over all member ellipsoids, minus 1; negative
    /// inside the union.
    pub fn best_slack(&self, p: &Point3<f64>) -> f64 {
        self.ellipsoids
            .iter()
            .map(|e| e.form_value(p) - 1.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: &Point3<f64>, slack: f64) -> bool {
        self.best_slack(p) <= slack
    }

    /// Index of the ellipsoid with the smallest form value at `p`, if that
    /// value is within `1 + slack`.
    pub fn covering_index(&self, p: &Point3<f64>, slack: f64) -> Option<usize> {
        let (idx, value) = self
            .ellipsoids
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.form_value(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (value <= 1.0 + slack).then_some(idx)
    }

    /// Box around the whole union.
    pub fn aabb(&self) -> BoundingBox {
        let mut boxes = self.ellipsoids.iter().map(|e| e.aabb());
        let first = boxes.next().expect("grasp space has at least one ellipsoid");
        boxes.fold(first, |acc, b| acc.union(&b))
    }
}

/// Builds the grasp space for a mesh. Fails when any subset stays too small
/// or degenerate for an ellipsoid fit even after reassignment.
pub fn build_grasp_space(mesh: &Mesh, params: &GraspSpaceParams) -> EllipsoidResult<GraspSpace> {
    if params.max_ellipsoids == 0 {
        return Err(EllipsoidError::SpaceBuild(
            "max_ellipsoids must be at least 1".into(),
        ));
    }
    // Member fits must be tighter than the envelope tolerance, otherwise the
    // fit slack alone keeps the envelope error above it.
    let mvee_params = MveeParams {
        eps: params.mvee.eps.min(0.1 * params.envelope_eps),
        max_iterations: params.mvee.max_iterations,
    };
    let k = params.max_ellipsoids.min(mesh.vertex_count() / 4).max(1);
    let assignment = kmeans(&mesh.vertices, k, params.seed);

    // Subsets as vertex index sets; they may grow and overlap during refit.
    let mut subsets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (v, &c) in assignment.iter().enumerate() {
        subsets[c].push(v);
    }
    rescue_small_subsets(&mut subsets, &mesh.vertices);
    subsets.retain(|s| !s.is_empty());

    let mut ellipsoids: Vec<ObliqueEllipsoid> = subsets
        .iter()
        .map(|s| fit_subset(mesh, s, &mvee_params))
        .collect::<EllipsoidResult<_>>()?;

    let mut facet_cover = vec![0usize; mesh.face_count()];
    for _ in 0..=params.max_refit_rounds {
        let envelope_error = cover_faces(mesh, &ellipsoids, &mut facet_cover);
        if envelope_error <= params.envelope_eps {
            break;
        }
        // Fold every uncovered face into the ellipsoid nearest its centroid
        // (form value as the distance proxy), then refit the ones that grew.
        let mut grew = vec![false; ellipsoids.len()];
        for f in 0..mesh.face_count() {
            let corners = mesh.faces[f];
            let worst = |e: &ObliqueEllipsoid| {
                corners
                    .iter()
                    .map(|&v| e.form_value(&mesh.vertices[v]))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            if worst(&ellipsoids[facet_cover[f]]) <= 1.0 + params.envelope_eps {
                continue;
            }
            let centroid = mesh.face_centroid(f);
            let target = ellipsoids
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.form_value(&centroid).total_cmp(&b.1.form_value(&centroid)))
                .map(|(i, _)| i)
                .expect("at least one ellipsoid");
            for &v in &corners {
                if !subsets[target].contains(&v) {
                    subsets[target].push(v);
                    grew[target] = true;
                }
            }
        }
        if !grew.iter().any(|&g| g) {
            break;
        }
        for (i, subset) in subsets.iter().enumerate() {
            if grew[i] {
                ellipsoids[i] = fit_subset(mesh, subset, &mvee_params)?;
            }
        }
    }
    let envelope_error = cover_faces(mesh, &ellipsoids, &mut facet_cover);

    let (volume, centroid) = union_volume_centroid(&ellipsoids, params.mc_samples, params.seed);
    let surface_area = union_surface_area(&ellipsoids, params.mc_samples, params.seed ^ 0x5eed);

    Ok(GraspSpace {
        ellipsoids,
        facet_cover,
        envelope_error,
        centroid,
        volume,
        surface_area,
    })
}

fn fit_subset(
    mesh: &Mesh,
    subset: &[usize],
    params: &MveeParams,
) -> EllipsoidResult<ObliqueEllipsoid> {
    let points: Vec<Point3<f64>> = subset.iter().map(|&v| mesh.vertices[v]).collect();
    mvee_ellipsoid(&points, params)
}

/// Updates `facet_cover` and returns the envelope error.
fn cover_faces(mesh: &Mesh, ellipsoids: &[ObliqueEllipsoid], facet_cover: &mut [usize]) -> f64 {
    let mut err: f64 = 0.0;
    for f in 0..mesh.face_count() {
        let corners = mesh.faces[f];
        let (best, slack) = ellipsoids
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let worst = corners
                    .iter()
                    .map(|&v| e.form_value(&mesh.vertices[v]))
                    .fold(f64::NEG_INFINITY, f64::max);
                (i, worst - 1.0)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one ellipsoid");
        facet_cover[f] = best;
        err = err.max(slack.max(0.0));
    }
    err
}

/// Moves points from the largest subsets into ones too small to fit an
/// ellipsoid (fewer than 4 vertices), preferring the nearest donors.
fn rescue_small_subsets(subsets: &mut [Vec<usize>], vertices: &[Point3<f64>]) {
    loop {
        let Some(small) = subsets.iter().position(|s| !s.is_empty() && s.len() < 4) else {
            return;
        };
        let centroid: Vector3<f64> = subsets[small]
            .iter()
            .map(|&v| vertices[v].coords)
            .sum::<Vector3<f64>>()
            / subsets[small].len() as f64;
        // Donate from the largest subset: its point closest to the small one.
        let Some(donor) = (0..subsets.len())
            .filter(|&i| i != small && subsets[i].len() > 4)
            .max_by_key(|&i| subsets[i].len())
        else {
            // Nothing can donate; collapse the small subset into the largest.
            let target = (0..subsets.len())
                .filter(|&i| i != small)
                .max_by_key(|&i| subsets[i].len())
                .expect("more than one subset");
            let moved = std::mem::take(&mut subsets[small]);
            subsets[target].extend(moved);
            continue;
        };
        let (pos, _) = subsets[donor]
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (vertices[*a.1].coords - centroid).norm_squared();
                let db = (vertices[*b.1].coords - centroid).norm_squared();
                da.total_cmp(&db)
            })
            .expect("donor is non-empty");
        let v = subsets[donor].swap_remove(pos);
        subsets[small].push(v);
    }
}

/// Plain k-means with k-means++ seeding; deterministic under the seed.
fn kmeans(points: &[Point3<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].coords);
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| (p.coords - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // All remaining points coincide with centers; spread arbitrarily.
            centers.push(points[centers.len() % points.len()].coords);
            continue;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = points.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(points[chosen].coords);
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = centers
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (p.coords - a.1).norm_squared().total_cmp(&(p.coords - b.1).norm_squared())
                })
                .map(|(c, _)| c)
                .unwrap();
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![Vector3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assignment[i]] += p.coords;
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            } else {
                // Revive an empty cluster at the point farthest from its center.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|a, b| {
                        let da = (a.1.coords - centers[assignment[a.0]]).norm_squared();
                        let db = (b.1.coords - centers[assignment[b.0]]).norm_squared();
                        da.total_cmp(&db)
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[c] = points[far].coords;
            }
        }
    }
    assignment
}

/// Rejection sampling in the union box.
fn union_volume_centroid(
    ellipsoids: &[ObliqueEllipsoid],
    samples: usize,
    seed: u64,
) -> (f64, Point3<f64>) {
    let bb = {
        let mut boxes = ellipsoids.iter().map(|e| e.aabb());
        let first = boxes.next().expect("non-empty union");
        boxes.fold(first, |acc, b| acc.union(&b))
    };
    let s = bb.strokes();
    let box_volume = s.x * s.y * s.z;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut sum = Vector3::zeros();
    for _ in 0..samples {
        let p = Point3::new(
            bb.min.x + rng.gen::<f64>() * s.x,
            bb.min.y + rng.gen::<f64>() * s.y,
            bb.min.z + rng.gen::<f64>() * s.z,
        );
        if ellipsoids.iter().any(|e| e.form_value(&p) <= 1.0) {
            hits += 1;
            sum += p.coords;
        }
    }
    let volume = box_volume * hits as f64 / samples as f64;
    let centroid = if hits > 0 {
        Point3::from(sum / hits as f64)
    } else {
        bb.center()
    };
    (volume, centroid)
}

/// Surface importance sampling: directions uniform on the unit sphere mapped
/// through each ellipsoid's affine map, weighted by the exact area element
/// abc·|S⁻¹u| and kept only where no other member covers the point.
fn union_surface_area(ellipsoids: &[ObliqueEllipsoid], samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = (samples / ellipsoids.len()).max(1);
    let mut area = 0.0;
    for (i, e) in ellipsoids.iter().enumerate() {
        let (a, b, c) = (e.semi_axes.x, e.semi_axes.y, e.semi_axes.z);
        let mut acc = 0.0;
        for _ in 0..per {
            let u = sample_unit_sphere(&mut rng);
            let p = e.surface_point(&u);
            let exposed = ellipsoids
                .iter()
                .enumerate()
                .all(|(j, other)| j == i || other.form_value(&p) >= 1.0);
            if exposed {
                let w = ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt();
                acc += a * b * c * w;
            }
        }
        area += 4.0 * std::f64::consts::PI * acc / per as f64;
    }
    area
}

fn sample_unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm_squared();
        if n > 1e-12 && n <= 1.0 {
            return v / n.sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, unit_cube};
    use std::f64::consts::PI;

    #[test]
    fn single_ellipsoid_space_covers_cube() {
        let cube = unit_cube();
        let params = GraspSpaceParams {
            max_ellipsoids: 1,
            ..Default::default()
        };
        let space = build_grasp_space(&cube, &params).unwrap();
        assert_eq!(space.ellipsoids.len(), 1);
        assert!(space.envelope_error <= params.envelope_eps);
        assert!(space.facet_cover.iter().all(|&c| c == 0));
        for v in &cube.vertices {
            assert!(space.contains(v, 1e-4));
        }
    }

    #[test]
    fn sphere_space_matches_analytic_measures() {
        let r = 2.0;
        let sphere = icosphere(r, 2, Point3::origin());
        let params = GraspSpaceParams {
            max_ellipsoids: 1,
            ..Default::default()
        };
        let space = build_grasp_space(&sphere, &params).unwrap();
        let e = &space.ellipsoids[0];
        for k in 0..3 {
            assert!((e.semi_axes[k] - r).abs() < 1e-3, "axis {}", e.semi_axes[k]);
        }
        let vol = 4.0 / 3.0 * PI * r.powi(3);
        let area = 4.0 * PI * r * r;
        assert!((space.volume - vol).abs() / vol < 0.03, "volume {}", space.volume);
        assert!(
            (space.surface_area - area).abs() / area < 0.01,
            "area {}",
            space.surface_area
        );
        assert!(space.centroid.coords.norm() < 0.05);
    }

    #[test]
    fn two_separated_spheres_get_one_ellipsoid_each() {
        let r = 1.0;
        let mut left = icosphere(r, 2, Point3::new(-4.0, 0.0, 0.0));
        let right = icosphere(r, 2, Point3::new(4.0, 0.0, 0.0));
        let offset = left.vertex_count();
        left.vertices.extend(right.vertices.iter().copied());
        let mut faces = left.faces.clone();
        faces.extend(right.faces.iter().map(|f| f.map(|v| v + offset)));
        let mesh = Mesh::from_vertices_faces(left.vertices.clone(), faces).unwrap();

        let params = GraspSpaceParams {
            max_ellipsoids: 2,
            ..Default::default()
        };
        let space = build_grasp_space(&mesh, &params).unwrap();
        assert_eq!(space.ellipsoids.len(), 2);
        assert!(space.envelope_error <= params.envelope_eps);
        // Every face covered by a single ellipsoid, split between the two.
        let covered_by_first = space.facet_cover.iter().filter(|&&c| c == 0).count();
        assert_eq!(covered_by_first * 2, space.facet_cover.len());
        // Union measures ≈ two disjoint balls.
        let vol = 2.0 * 4.0 / 3.0 * PI;
        let area = 2.0 * 4.0 * PI;
        assert!((space.volume - vol).abs() / vol < 0.05, "volume {}", space.volume);
        assert!((space.surface_area - area).abs() / area < 0.02, "area {}", space.surface_area);
        assert!(space.centroid.coords.norm() < 0.1);
        // Points: centers inside, midpoint outside.
        assert!(space.contains(&Point3::new(-4.0, 0.0, 0.0), 0.0));
        assert!(space.contains(&Point3::new(4.0, 0.0, 0.0), 0.0));
        assert!(!space.contains(&Point3::origin(), 0.5));
    }

    #[test]
    fn straddling_faces_trigger_refit_until_covered() {
        // A single elongated sphere split into 3 subsets has every
        // cross-subset face initially uncovered; refit must close them.
        let mesh = icosphere(1.0, 2, Point3::origin())
            .map_vertices(|p| Point3::new(p.x * 6.0, p.y, p.z));
        let params = GraspSpaceParams {
            max_ellipsoids: 3,
            envelope_eps: 1e-6,
            ..Default::default()
        };
        let space = build_grasp_space(&mesh, &params).unwrap();
        assert!(space.envelope_error <= 1e-6, "envelope {}", space.envelope_error);
        for f in 0..mesh.face_count() {
            let e = &space.ellipsoids[space.facet_cover[f]];
            for &v in &mesh.faces[f] {
                assert!(e.contains(&mesh.vertices[v], 2e-6));
            }
        }
    }

    #[test]
    fn zero_ellipsoids_is_an_error() {
        let cube = unit_cube();
        let params = GraspSpaceParams {
            max_ellipsoids: 0,
            ..Default::default()
        };
        assert!(build_grasp_space(&cube, &params).is_err());
    }
}
