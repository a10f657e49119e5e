//! Printing energy and deformation estimates.
//!
//! Three independent ingredients feed the optimizer and the learned
//! predictor:
//!
//! * an analytic melting-energy model (mass times heating plus latent heat),
//!   with print time from extruded volume, filament cross-section and feed
//!   rate;
//! * integration of measured power logs, so predictions can be compared
//!   against electric-analyzer recordings;
//! * a geometric-error aggregate: the largest planar deviation 2-norm over
//!   layer facets, with a pluggable thermal surrogate generating per-segment
//!   deviations.
//!
//! All energies are kilojoules, times seconds, lengths millimetres,
//! temperatures kelvin. Volumes enter in cubic millimetres and are converted
//! to cubic metres internally where densities apply.

use crate::slicer::Layer;
use serde::{Deserialize, Serialize};
use std::io;
use thiserror::Error;

pub type EnergyResult<T> = Result<T, EnergyError>;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("material parameter {name} must be positive, got {value}")]
    BadMaterial { name: &'static str, value: f64 },

    #[error("melt temperature {melt} K must exceed ambient {ambient} K")]
    MeltBelowAmbient { melt: f64, ambient: f64 },

    #[error("volume must be nonnegative, got {0}")]
    BadVolume(f64),

    #[error("infill rate must lie in (0, 1], got {0}")]
    BadInfillRate(f64),

    #[error("feed rate must be positive, got {0}")]
    BadFeedRate(f64),

    #[error("power log needs at least 2 samples, got {0}")]
    NotEnoughSamples(usize),

    #[error("power log timestamps must increase strictly; sample {index} breaks the order")]
    NonMonotonicTime { index: usize },

    #[error("power must be nonnegative; sample {index} is {value}")]
    NegativePower { index: usize, value: f64 },

    #[error("power log row {row}: {message}")]
    LogParse { row: usize, message: String },

    #[error("failed to read power log: {0}")]
    LogIo(#[from] csv::Error),

    #[error("geometric error needs at least one facet deviation")]
    NoDeviations,

    #[error("unknown thermal model {requested:?}; available: {available:?}")]
    UnknownThermalModel {
        requested: String,
        available: Vec<&'static str>,
    },
}

/// Thermophysical material constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Specific heat, kJ per kg per K.
    pub specific_heat: f64,
    /// Density, kg per cubic metre.
    pub density: f64,
    /// Melt temperature, K.
    pub melt_temperature: f64,
    /// Ambient temperature, K.
    pub ambient_temperature: f64,
    /// Latent heat of fusion, kJ per kg.
    pub latent_heat: f64,
    /// Filament cross-section area, square millimetres.
    pub filament_cross_section: f64,
}

impl MaterialParams {
    /// Representative PLA constants.
    pub fn pla() -> Self {
        MaterialParams {
            specific_heat: 1.8,
            density: 1240.0,
            melt_temperature: 478.0,
            ambient_temperature: 298.0,
            latent_heat: 60.0,
            filament_cross_section: 0.2,
        }
    }

    pub fn validate(&self) -> EnergyResult<()> {
        let checks = [
            ("specific_heat", self.specific_heat),
            ("density", self.density),
            ("melt_temperature", self.melt_temperature),
            ("ambient_temperature", self.ambient_temperature),
            ("latent_heat", self.latent_heat),
            ("filament_cross_section", self.filament_cross_section),
        ];
        for (name, value) in checks {
            if !(value > 0.0) {
                return Err(EnergyError::BadMaterial { name, value });
            }
        }
        if self.melt_temperature <= self.ambient_temperature {
            return Err(EnergyError::MeltBelowAmbient {
                melt: self.melt_temperature,
                ambient: self.ambient_temperature,
            });
        }
        Ok(())
    }
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams::pla()
    }
}

/// Energy to heat and melt the extruded volume (cubic millimetres): density
/// times volume times (heating plus latent heat), in kJ.
pub fn melting_energy(material: &MaterialParams, volume_mm3: f64) -> EnergyResult<f64> {
    material.validate()?;
    if volume_mm3 < 0.0 {
        return Err(EnergyError::BadVolume(volume_mm3));
    }
    let volume_m3 = volume_mm3 * 1e-9;
    let mass = material.density * volume_m3;
    let delta_t = material.melt_temperature - material.ambient_temperature;
    Ok(mass * (material.specific_heat * delta_t + material.latent_heat))
}

/// Print time in seconds from the deposited volume: the filament length
/// infill_rate * volume / cross_section traversed at the feed rate.
pub fn print_time(
    volume_mm3: f64,
    infill_rate: f64,
    cross_section_mm2: f64,
    feed_rate_mm_s: f64,
) -> EnergyResult<f64> {
    if volume_mm3 < 0.0 {
        return Err(EnergyError::BadVolume(volume_mm3));
    }
    if !(infill_rate > 0.0 && infill_rate <= 1.0) {
        return Err(EnergyError::BadInfillRate(infill_rate));
    }
    if !(cross_section_mm2 > 0.0) {
        return Err(EnergyError::BadMaterial {
            name: "filament_cross_section",
            value: cross_section_mm2,
        });
    }
    if !(feed_rate_mm_s > 0.0) {
        return Err(EnergyError::BadFeedRate(feed_rate_mm_s));
    }
    Ok(infill_rate * volume_mm3 / (cross_section_mm2 * feed_rate_mm_s))
}

/// Print time from a directly measured toolpath length.
pub fn print_time_from_length(path_length_mm: f64, feed_rate_mm_s: f64) -> EnergyResult<f64> {
    if !(feed_rate_mm_s > 0.0) {
        return Err(EnergyError::BadFeedRate(feed_rate_mm_s));
    }
    if path_length_mm < 0.0 {
        return Err(EnergyError::BadVolume(path_length_mm));
    }
    Ok(path_length_mm / feed_rate_mm_s)
}

/// A measured power trace: timestamps in seconds, power samples in watts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLog {
    pub times: Vec<f64>,
    pub powers: Vec<f64>,
}

impl PowerLog {
    pub fn new(times: Vec<f64>, powers: Vec<f64>) -> EnergyResult<Self> {
        if times.len() < 2 || times.len() != powers.len() {
            return Err(EnergyError::NotEnoughSamples(times.len().min(powers.len())));
        }
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                return Err(EnergyError::NonMonotonicTime { index: i });
            }
        }
        for (i, &p) in powers.iter().enumerate() {
            if p < 0.0 {
                return Err(EnergyError::NegativePower { index: i, value: p });
            }
        }
        Ok(PowerLog { times, powers })
    }

    /// Reads a two-column CSV (seconds, watts). A non-numeric first row is
    /// treated as a header.
    pub fn from_csv<R: io::Read>(reader: R) -> EnergyResult<Self> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut times = Vec::new();
        let mut powers = Vec::new();
        for (row, record) in csv_reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(EnergyError::LogParse {
                    row,
                    message: format!("expected 2 columns, got {}", record.len()),
                });
            }
            let parsed: Result<(f64, f64), _> = record[0]
                .parse()
                .and_then(|t| record[1].parse().map(|p| (t, p)));
            match parsed {
                Ok((t, p)) => {
                    times.push(t);
                    powers.push(p);
                }
                Err(e) => {
                    if row == 0 {
                        continue; // header row
                    }
                    return Err(EnergyError::LogParse {
                        row,
                        message: e.to_string(),
                    });
                }
            }
        }
        PowerLog::new(times, powers)
    }

    pub fn duration(&self) -> f64 {
        self.times.last().unwrap() - self.times[0]
    }
}

/// Trapezoidal integral of the power trace, returned in kJ.
pub fn integrate_power(log: &PowerLog) -> f64 {
    let mut joules = 0.0;
    for i in 1..log.times.len() {
        let dt = log.times[i] - log.times[i - 1];
        joules += dt * 0.5 * (log.powers[i] + log.powers[i - 1]);
    }
    joules / 1000.0
}

/// The largest per-facet deviation and which facet attains it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeometricErrorReport {
    /// max over facets of the deviation 2-norm, mm.
    pub value: f64,
    /// Index of the facet attaining the maximum.
    pub facet: usize,
}

/// Aggregates planar (x, y) facet deviations into the scalar objective:
/// the maximum euclidean norm, with its argmax facet.
pub fn geometric_error(deviations: &[(f64, f64)]) -> EnergyResult<GeometricErrorReport> {
    if deviations.is_empty() {
        return Err(EnergyError::NoDeviations);
    }
    let mut best = GeometricErrorReport { value: -1.0, facet: 0 };
    for (i, &(x, y)) in deviations.iter().enumerate() {
        let norm = x.hypot(y);
        if norm > best.value {
            best = GeometricErrorReport { value: norm, facet: i };
        }
    }
    Ok(best)
}

/// A surrogate mapping a layer and process state to per-segment planar
/// deviations. Implementations are intentionally simple; the trait exists so
/// a physical model can replace them without touching callers.
pub trait ThermalModel {
    fn name(&self) -> &'static str;

    /// One (x, y) deviation per boundary segment of the layer.
    fn deviations(
        &self,
        layer: &Layer,
        gradient_k_per_mm: f64,
        thickness_mm: f64,
    ) -> Vec<(f64, f64)>;
}

/// Deviation proportional to thermal gradient and layer thickness, pointing
/// along each segment's outward normal: magnitude coeff * gradient * d.
pub struct GradientShrink {
    /// mm^2 per K.
    pub coeff: f64,
}

impl ThermalModel for GradientShrink {
    fn name(&self) -> &'static str {
        "gradient"
    }

    fn deviations(&self, layer: &Layer, gradient: f64, thickness: f64) -> Vec<(f64, f64)> {
        let magnitude = self.coeff * gradient * thickness;
        per_segment_normals(layer)
            .into_iter()
            .map(|(nx, ny)| (magnitude.abs() * nx, magnitude.abs() * ny))
            .collect()
    }
}

/// Gradient-independent baseline: every segment deviates by coeff * d.
/// Useful as a control when isolating the gradient term.
pub struct UniformShrink {
    /// mm per mm of layer thickness.
    pub coeff: f64,
}

impl ThermalModel for UniformShrink {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn deviations(&self, layer: &Layer, _gradient: f64, thickness: f64) -> Vec<(f64, f64)> {
        let magnitude = (self.coeff * thickness).abs();
        per_segment_normals(layer)
            .into_iter()
            .map(|(nx, ny)| (magnitude * nx, magnitude * ny))
            .collect()
    }
}

/// Absolute components of the unit outward normal of every boundary segment.
fn per_segment_normals(layer: &Layer) -> Vec<(f64, f64)> {
    let mut normals = Vec::new();
    for polygon in &layer.polygons {
        let pts = &polygon.points;
        let n = pts.len();
        for i in 0..n {
            let a = &pts[i];
            let b = &pts[(i + 1) % n];
            let d = b - a;
            let len = d.norm();
            if len < 1e-12 {
                normals.push((0.0, 0.0));
                continue;
            }
            // For CCW loops (d.y, -d.x) points outward; holes flip twice
            // (CW winding and inward solid), so the same formula applies.
            normals.push(((d.y / len).abs(), (d.x / len).abs()));
        }
    }
    normals
}

/// Looks up a thermal surrogate by name.
pub fn thermal_model(name: &str, coeff: f64) -> Option<Box<dyn ThermalModel>> {
    match name {
        "gradient" => Some(Box::new(GradientShrink { coeff })),
        "uniform" => Some(Box::new(UniformShrink { coeff })),
        _ => None,
    }
}

pub fn thermal_model_names() -> Vec<&'static str> {
    vec!["gradient", "uniform"]
}

/// Coarse analytic energy split: melting plus gantry motion power over the
/// print time. Used when no measured log exists.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// kJ spent heating and melting material.
    pub melting_kj: f64,
    /// kJ spent moving the toolhead.
    pub motion_kj: f64,
    pub total_kj: f64,
    /// Print time driving the motion term, seconds.
    pub time_s: f64,
}

/// Analytic total energy for a print: melt the deposited volume, then move
/// the head along the toolpath at the feed rate drawing `move_power_w`.
pub fn analytic_total_energy(
    material: &MaterialParams,
    volume_mm3: f64,
    toolpath_length_mm: f64,
    feed_rate_mm_s: f64,
    move_power_w: f64,
) -> EnergyResult<EnergyBreakdown> {
    let melting_kj = melting_energy(material, volume_mm3)?;
    let time_s = print_time_from_length(toolpath_length_mm, feed_rate_mm_s)?;
    let motion_kj = move_power_w * time_s / 1000.0;
    Ok(EnergyBreakdown {
        melting_kj,
        motion_kj,
        total_kj: melting_kj + motion_kj,
        time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicer::Polygon;
    use nalgebra::Point2;

    fn reference_material() -> MaterialParams {
        MaterialParams {
            specific_heat: 2.0,
            density: 1200.0,
            melt_temperature: 500.0,
            ambient_temperature: 300.0,
            latent_heat: 100.0,
            filament_cross_section: 0.2,
        }
    }

    #[test]
    fn melting_energy_matches_direct_arithmetic() {
        let mat = reference_material();
        // 1e4 mm^3 = 1e-5 m^3: 1200 * 1e-5 * (2 * 200 + 100) = 6 kJ.
        let e = melting_energy(&mat, 1e4).unwrap();
        assert!((e - 6.0).abs() < 1e-12, "E = {e}");
        assert_eq!(melting_energy(&mat, 0.0).unwrap(), 0.0);
        // Degree-1 homogeneity in volume.
        let double = melting_energy(&mat, 2e4).unwrap();
        assert!((double - 2.0 * e).abs() < 1e-12);
    }

    #[test]
    fn material_validation_rejects_nonpositive_and_inverted_temperatures() {
        let mut mat = reference_material();
        mat.density = 0.0;
        assert!(matches!(
            melting_energy(&mat, 1.0),
            Err(EnergyError::BadMaterial { name: "density", .. })
        ));
        let mut inverted = reference_material();
        inverted.melt_temperature = 250.0;
        assert!(matches!(
            melting_energy(&inverted, 1.0),
            Err(EnergyError::MeltBelowAmbient { .. })
        ));
    }

    #[test]
    fn print_time_follows_the_volume_feed_relation() {
        // r = 1, V = 1000 mm^3, S = 0.2 mm^2, V_F = 50 mm/s -> 100 s.
        let t = print_time(1000.0, 1.0, 0.2, 50.0).unwrap();
        assert!((t - 100.0).abs() < 1e-12);
        // Halving the infill rate halves the time.
        let half = print_time(1000.0, 0.5, 0.2, 50.0).unwrap();
        assert!((half - 50.0).abs() < 1e-12);
        // Direct length variant.
        assert!((print_time_from_length(100.0, 50.0).unwrap() - 2.0).abs() < 1e-15);

        assert!(matches!(
            print_time(1000.0, 1.0, 0.2, 0.0),
            Err(EnergyError::BadFeedRate(_))
        ));
        assert!(matches!(
            print_time(1000.0, 0.0, 0.2, 50.0),
            Err(EnergyError::BadInfillRate(_))
        ));
        assert!(matches!(
            print_time(1000.0, 1.2, 0.2, 50.0),
            Err(EnergyError::BadInfillRate(_))
        ));
    }

    #[test]
    fn power_integration_reproduces_analytic_integrals() {
        let constant = PowerLog::new(vec![0.0, 60.0], vec![100.0, 100.0]).unwrap();
        assert!((integrate_power(&constant) - 6.0).abs() < 1e-12);

        let ramp = PowerLog::new(vec![0.0, 60.0], vec![0.0, 100.0]).unwrap();
        assert!((integrate_power(&ramp) - 3.0).abs() < 1e-12);

        // Splitting an interval may not change the trapezoid sum.
        let split = PowerLog::new(vec![0.0, 30.0, 60.0], vec![0.0, 50.0, 100.0]).unwrap();
        assert!((integrate_power(&split) - integrate_power(&ramp)).abs() < 1e-12);
    }

    #[test]
    fn power_log_validation() {
        assert!(matches!(
            PowerLog::new(vec![0.0], vec![1.0]),
            Err(EnergyError::NotEnoughSamples(1))
        ));
        assert!(matches!(
            PowerLog::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]),
            Err(EnergyError::NonMonotonicTime { index: 2 })
        ));
        assert!(matches!(
            PowerLog::new(vec![0.0, 1.0], vec![1.0, -3.0]),
            Err(EnergyError::NegativePower { index: 1, .. })
        ));
    }

    #[test]
    fn power_log_csv_accepts_headers_and_reports_bad_rows() {
        let with_header = "t_seconds,watts\n0.0,100\n60.0,100\n";
        let log = PowerLog::from_csv(with_header.as_bytes()).unwrap();
        assert!((integrate_power(&log) - 6.0).abs() < 1e-12);

        let bare = "0.0,100\n60.0,100\n";
        let log = PowerLog::from_csv(bare.as_bytes()).unwrap();
        assert_eq!(log.times.len(), 2);

        let bad = "0.0,100\noops,100\n";
        assert!(matches!(
            PowerLog::from_csv(bad.as_bytes()),
            Err(EnergyError::LogParse { row: 1, .. })
        ));
    }

    #[test]
    fn geometric_error_takes_the_worst_facet() {
        let zeros = geometric_error(&[(0.0, 0.0), (0.0, 0.0)]).unwrap();
        assert_eq!(zeros.value, 0.0);

        let single = geometric_error(&[(3.0, 4.0)]).unwrap();
        assert!((single.value - 5.0).abs() < 1e-15);
        assert_eq!(single.facet, 0);

        let pair = geometric_error(&[(1.0, 1.0), (0.0, 2.5)]).unwrap();
        assert!((pair.value - 2.5).abs() < 1e-15);
        assert_eq!(pair.facet, 1);

        // Reordering facets never changes the maximum.
        let reordered = geometric_error(&[(0.0, 2.5), (1.0, 1.0)]).unwrap();
        assert_eq!(reordered.value, pair.value);

        assert!(matches!(geometric_error(&[]), Err(EnergyError::NoDeviations)));
    }

    fn unit_square_layer() -> Layer {
        Layer {
            z: 0.1,
            normalized_height: 0.5,
            polygons: vec![Polygon::new(vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ])],
            section_area: 1.0,
        }
    }

    #[test]
    fn thermal_surrogate_scales_with_gradient_thickness_and_coeff() {
        let layer = unit_square_layer();
        let model = GradientShrink { coeff: 0.01 };
        let deviations = model.deviations(&layer, 5.0, 0.2);
        assert_eq!(deviations.len(), 4);
        for &(x, y) in &deviations {
            // Axis-aligned unit square: every segment normal is axis-aligned,
            // so each deviation has norm coeff * gradient * d = 0.01 mm.
            assert!((x.hypot(y) - 0.01).abs() < 1e-15, "({x}, {y})");
            assert!(x >= 0.0 && y >= 0.0);
        }

        let zero_gradient = model.deviations(&layer, 0.0, 0.2);
        assert!(zero_gradient.iter().all(|&(x, y)| x == 0.0 && y == 0.0));

        let doubled = GradientShrink { coeff: 0.02 }.deviations(&layer, 5.0, 0.2);
        for (d1, d2) in deviations.iter().zip(&doubled) {
            assert!((2.0 * d1.0 - d2.0).abs() < 1e-15);
            assert!((2.0 * d1.1 - d2.1).abs() < 1e-15);
        }
    }

    #[test]
    fn thermal_registry_resolves_names() {
        for name in thermal_model_names() {
            let model = thermal_model(name, 0.01).unwrap();
            assert_eq!(model.name(), name);
        }
        assert!(thermal_model("finite-element", 0.01).is_none());

        let layer = unit_square_layer();
        let uniform = thermal_model("uniform", 0.05).unwrap();
        let d = uniform.deviations(&layer, 123.0, 0.2);
        // Gradient-independent: magnitude 0.05 * 0.2 = 0.01 regardless.
        assert!((d[0].0.hypot(d[0].1) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn analytic_total_combines_melting_and_motion() {
        let mat = reference_material();
        let breakdown = analytic_total_energy(&mat, 1e4, 100.0, 50.0, 60.0).unwrap();
        assert!((breakdown.melting_kj - 6.0).abs() < 1e-12);
        assert!((breakdown.time_s - 2.0).abs() < 1e-12);
        // 60 W for 2 s = 120 J.
        assert!((breakdown.motion_kj - 0.12).abs() < 1e-12);
        assert!((breakdown.total_kj - 6.12).abs() < 1e-12);
    }
}
