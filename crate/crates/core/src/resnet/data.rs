//! Training data for the energy regressor: per-layer feature rows, pseudo
//! labels apportioned from the analytic melting energy, measured labels cut
//! out of a power log, and CSV round-tripping.
//!
//! Each sliced layer becomes one row with fifteen features: the nine mask
//! statistics of the rasterized cross section followed by normalized layer
//! height, section area, nozzle-to-melt temperature ratio, thermal gradient,
//! feed rate and layer thickness.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::Point3;

use crate::energy::{integrate_power, melting_energy, MaterialParams, PowerLog};
use crate::ellipsoid::GraspSpace;
use crate::mesh::Mesh;
use crate::morph::{morph_by_grasp, weight_scheme, GraspMorphOptions};
use crate::slicer::{rasterize_lcm, slice};

use super::{ResnetError, ResnetResult};

pub const FEATURE_COUNT: usize = 15;

pub fn feature_names() -> Vec<String> {
    [
        "mask_box_mean",
        "mask_box_rms",
        "mask_laplacian_mean",
        "mask_laplacian_rms",
        "mask_sobel_x_mean",
        "mask_sobel_x_rms",
        "mask_sobel_y_mean",
        "mask_sobel_y_rms",
        "mask_fill_fraction",
        "normalized_height",
        "section_area",
        "temperature_ratio",
        "thermal_gradient",
        "feed_rate",
        "layer_thickness",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// One training row; `is_pseudo` marks apportioned (unmeasured) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
    pub is_pseudo: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, feature_names: Vec<String>) -> Self {
        Dataset {
            samples,
            feature_names,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends another dataset with the same feature layout.
    pub fn extend(&mut self, other: Dataset) {
        self.samples.extend(other.samples);
    }

    /// Writes header plus one row per sample: features, label, is_pseudo.
    pub fn write_csv<W: Write>(&self, writer: W) -> ResnetResult<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.push("label".to_string());
        header.push("is_pseudo".to_string());
        out.write_record(&header)?;
        for sample in &self.samples {
            let mut record: Vec<String> =
                sample.features.iter().map(|v| format!("{v:.17e}")).collect();
            record.push(format!("{:.17e}", sample.label));
            record.push(if sample.is_pseudo { "1" } else { "0" }.to_string());
            out.write_record(&record)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> ResnetResult<Dataset> {
        let mut input = csv::Reader::from_reader(reader);
        let header = input.headers()?.clone();
        if header.len() < 3 {
            return Err(ResnetError::DatasetParse {
                row: 0,
                message: format!("expected at least 3 columns, got {}", header.len()),
            });
        }
        let feature_count = header.len() - 2;
        let feature_names: Vec<String> =
            header.iter().take(feature_count).map(|s| s.to_string()).collect();
        let mut samples = Vec::new();
        for (idx, record) in input.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            if record.len() != header.len() {
                return Err(ResnetError::DatasetParse {
                    row,
                    message: format!(
                        "expected {} columns, got {}",
                        header.len(),
                        record.len()
                    ),
                });
            }
            let parse = |field: &str| -> ResnetResult<f64> {
                field.trim().parse().map_err(|_| ResnetError::DatasetParse {
                    row,
                    message: format!("not a number: {field:?}"),
                })
            };
            let mut features = Vec::with_capacity(feature_count);
            for field in record.iter().take(feature_count) {
                features.push(parse(field)?);
            }
            let label = parse(&record[feature_count])?;
            let flag = record[feature_count + 1].trim();
            let is_pseudo = match flag {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(ResnetError::DatasetParse {
                        row,
                        message: format!("is_pseudo must be 0/1, got {other:?}"),
                    })
                }
            };
            samples.push(Sample {
                features,
                label,
                is_pseudo,
            });
        }
        Ok(Dataset {
            samples,
            feature_names,
        })
    }
}

/// Process settings shared by every augmented pose.
#[derive(Debug, Clone)]
pub struct AugmentParams {
    /// Layer thickness (mm).
    pub thickness: f64,
    /// Mask resolution per axis.
    pub resolution: usize,
    /// Feed rate (mm/s).
    pub feed_rate: f64,
    /// Nozzle temperature (K); featured as the ratio to the melt point.
    pub nozzle_temperature: f64,
    /// Thermal gradient magnitude (K/mm).
    pub thermal_gradient: f64,
    pub material: MaterialParams,
    /// Morph weighting scheme name, resolved through the registry.
    pub weight_scheme: String,
    pub membership_slack: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            thickness: 0.2,
            resolution: 32,
            feed_rate: 50.0,
            nozzle_temperature: 478.0,
            thermal_gradient: 1.0,
            material: MaterialParams::pla(),
            weight_scheme: "uniform".to_string(),
            membership_slack: 1e-6,
        }
    }
}

fn box_error<E: std::error::Error + Send + Sync + 'static>(
    schedule: usize,
) -> impl FnOnce(E) -> ResnetError {
    move |e| ResnetError::Augment {
        schedule,
        source: Box::new(e),
    }
}

/// Feature rows for one sliced mesh, without labels.
fn feature_rows(mesh: &Mesh, params: &AugmentParams) -> ResnetResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let sliced = slice(mesh, params.thickness).map_err(box_error(0))?;
    let frame = mesh.aabb();
    let t_ratio = params.nozzle_temperature / params.material.melt_temperature;
    let mut rows = Vec::with_capacity(sliced.layers.len());
    let mut areas = Vec::with_capacity(sliced.layers.len());
    for layer in &sliced.layers {
        let lcm = rasterize_lcm(layer, &frame, params.resolution).map_err(box_error(0))?;
        let summary = lcm.feature_summary();
        let mut row = Vec::with_capacity(FEATURE_COUNT);
        row.extend_from_slice(&summary);
        row.push(layer.normalized_height);
        row.push(layer.section_area);
        row.push(t_ratio);
        row.push(params.thermal_gradient);
        row.push(params.feed_rate);
        row.push(params.thickness);
        rows.push(row);
        areas.push(layer.section_area);
    }
    Ok((rows, areas))
}

/// Morphs the mesh through every grasp schedule, slices each pose and labels
/// the layers with the analytic melting energy apportioned by deposited
/// volume (section area times thickness). The labels of one pose sum to that
/// pose's melting energy exactly, so the pseudo set conserves the analytic
/// total.
pub fn augment_and_label(
    mesh: &Mesh,
    space: &GraspSpace,
    schedules: &[BTreeMap<usize, Point3<f64>>],
    params: &AugmentParams,
) -> ResnetResult<Dataset> {
    let mut samples = Vec::new();
    for (idx, targets) in schedules.iter().enumerate() {
        let scheme = weight_scheme(&params.weight_scheme).ok_or_else(|| {
            ResnetError::Augment {
                schedule: idx,
                source: format!("unknown weight scheme {:?}", params.weight_scheme).into(),
            }
        })?;
        let options = GraspMorphOptions {
            scheme,
            membership_slack: params.membership_slack,
            ..Default::default()
        };
        let (posed, _) =
            morph_by_grasp(mesh, space, targets, &options).map_err(box_error(idx))?;
        let (rows, areas) = feature_rows(&posed, params).map_err(|e| match e {
            ResnetError::Augment { source, .. } => ResnetError::Augment {
                schedule: idx,
                source,
            },
            other => other,
        })?;
        let report = posed.measure().map_err(box_error(idx))?;
        let total_melt =
            melting_energy(&params.material, report.volume).map_err(box_error(idx))?;
        let deposited: f64 = areas.iter().map(|a| a * params.thickness).sum();
        if deposited <= 0.0 {
            return Err(ResnetError::Augment {
                schedule: idx,
                source: "no printable cross sections".into(),
            });
        }
        for (row, area) in rows.into_iter().zip(&areas) {
            let label = total_melt * (area * params.thickness) / deposited;
            samples.push(Sample {
                features: row,
                label,
                is_pseudo: true,
            });
        }
    }
    Ok(Dataset::new(samples, feature_names()))
}

/// Feature rows plus pseudo labels for a single unmorphed mesh.
pub fn label_single_mesh(mesh: &Mesh, params: &AugmentParams) -> ResnetResult<Dataset> {
    let (rows, areas) = feature_rows(mesh, params)?;
    let report = mesh.measure().map_err(box_error(0))?;
    let total_melt = melting_energy(&params.material, report.volume).map_err(box_error(0))?;
    let deposited: f64 = areas.iter().map(|a| a * params.thickness).sum();
    if deposited <= 0.0 {
        return Err(ResnetError::Augment {
            schedule: 0,
            source: "no printable cross sections".into(),
        });
    }
    let samples = rows
        .into_iter()
        .zip(&areas)
        .map(|(row, area)| Sample {
            features: row,
            label: total_melt * (area * params.thickness) / deposited,
            is_pseudo: true,
        })
        .collect();
    Ok(Dataset::new(samples, feature_names()))
}

/// Integrates a power log over consecutive windows; `boundaries` holds n+1
/// increasing times and the result holds n energies in kJ. Windows must lie
/// inside the logged span. Replaces pseudo labels with measurements when a
/// log lines up with the print schedule.
pub fn measured_layer_energies(
    log: &PowerLog,
    boundaries: &[f64],
) -> ResnetResult<Vec<f64>> {
    if boundaries.len() < 2 {
        return Err(ResnetError::DatasetParse {
            row: 0,
            message: "need at least two window boundaries".to_string(),
        });
    }
    for pair in boundaries.windows(2) {
        if pair[1] <= pair[0] {
            return Err(ResnetError::DatasetParse {
                row: 0,
                message: format!("boundaries not increasing: {} then {}", pair[0], pair[1]),
            });
        }
    }
    let (t_first, t_last) = (log.times[0], *log.times.last().unwrap());
    if boundaries[0] < t_first - 1e-9 || *boundaries.last().unwrap() > t_last + 1e-9 {
        return Err(ResnetError::DatasetParse {
            row: 0,
            message: format!(
                "windows [{}, {}] leave the logged span [{t_first}, {t_last}]",
                boundaries[0],
                boundaries.last().unwrap()
            ),
        });
    }
    let power_at = |t: f64| -> f64 {
        // Piecewise-linear interpolation on the log samples.
        let idx = log.times.partition_point(|&x| x < t);
        if idx == 0 {
            return log.powers[0];
        }
        if idx >= log.times.len() {
            return *log.powers.last().unwrap();
        }
        let (t0, t1) = (log.times[idx - 1], log.times[idx]);
        let (p0, p1) = (log.powers[idx - 1], log.powers[idx]);
        if t1 == t0 {
            p1
        } else {
            p0 + (p1 - p0) * (t - t0) / (t1 - t0)
        }
    };
    let mut energies = Vec::with_capacity(boundaries.len() - 1);
    for pair in boundaries.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        // Knots: window edges plus interior log samples.
        let mut knots = vec![start];
        for &t in &log.times {
            if t > start && t < end {
                knots.push(t);
            }
        }
        knots.push(end);
        let mut joules = 0.0;
        for k in knots.windows(2) {
            joules += 0.5 * (power_at(k[0]) + power_at(k[1])) * (k[1] - k[0]);
        }
        energies.push(joules / 1000.0);
    }
    Ok(energies)
}

/// Convenience: total of a log via the window integral must match the plain
/// trapezoid integral.
pub fn log_total_kj(log: &PowerLog) -> f64 {
    integrate_power(log)
}
