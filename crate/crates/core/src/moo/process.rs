//! Process-parameter evaluation for the optimizer. A decision vector packs
//! the rig joint angles followed by nozzle temperature, thermal gradient,
//! feed rate and layer thickness:
//!
//! ```text
//! x = [theta_0 .. theta_{j-1}, T_n, grad_T, V_F, d]
//! ```
//!
//! Evaluation morphs the mesh toward the fingertip targets, slices the posed
//! mesh, and scores three objectives: total printing energy (kJ), morphing
//! energy, and the worst thermal-shrink deviation (mm). Fingertip targets
//! leaving the grasp space make the candidate infeasible with the summed
//! containment slack as its violation.

use serde::{Deserialize, Serialize};

use crate::energy::{
    geometric_error, melting_energy, print_time_from_length, thermal_model, MaterialParams,
};
use crate::ellipsoid::GraspSpace;
use crate::hand::GraspRig;
use crate::mesh::Mesh;
use crate::morph::{morph_by_grasp, weight_scheme, GraspMorphOptions};
use crate::resnet::ResidualNet;
use crate::slicer::{infill, infill_pattern, rasterize_lcm, slice, InfillParams};

use super::{Evaluation, MooError, MooResult};

/// Settings shared by every candidate evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessParams {
    pub material: MaterialParams,
    /// Infill pattern name from the registry.
    pub pattern: String,
    pub spacing: f64,
    pub line_width: f64,
    /// Gantry drive power (W) converted to motion energy over print time.
    pub move_power_w: f64,
    /// Thermal surrogate name from the registry.
    pub thermal_model: String,
    pub shrink_coefficient: f64,
    /// Morph weighting scheme name.
    pub weight_scheme: String,
    pub membership_slack: f64,
    /// Mask resolution when a network predictor is used.
    pub resolution: usize,
}

impl Default for ProcessParams {
    fn default() -> Self {
        ProcessParams {
            material: MaterialParams::pla(),
            pattern: "line".to_string(),
            spacing: 2.0,
            line_width: 0.4,
            move_power_w: 120.0,
            thermal_model: "gradient".to_string(),
            shrink_coefficient: 0.01,
            weight_scheme: "uniform".to_string(),
            membership_slack: 1e-6,
            resolution: 32,
        }
    }
}

/// Everything a candidate evaluation reads. The network is optional; without
/// it the analytic melting + motion model scores the energy objective.
pub struct ProcessContext<'a> {
    pub mesh: &'a Mesh,
    pub space: &'a GraspSpace,
    pub rig: &'a GraspRig,
    pub network: Option<&'a ResidualNet>,
    pub params: ProcessParams,
}

/// Per-candidate detail beyond the raw objective triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessObjectives {
    pub total_energy_kj: f64,
    pub morph_energy: f64,
    pub geometric_error_mm: f64,
    pub melting_kj: f64,
    pub motion_kj: f64,
    pub print_time_s: f64,
    pub toolpath_mm: f64,
    pub layer_count: usize,
}

/// Why a candidate cannot be scored, with its violation magnitude.
struct Infeasible {
    reason: String,
    violation: f64,
}

impl Infeasible {
    /// Stage failures rank equally; containment failures carry their slack.
    fn stage(reason: String) -> Self {
        Infeasible {
            reason,
            violation: 1.0,
        }
    }
}

impl<'a> ProcessContext<'a> {
    /// Joint angles plus the four process variables.
    pub fn decision_length(&self) -> usize {
        self.rig.joint_count() + 4
    }

    /// Objective triple [E_total, E_morph, geometric error].
    pub fn evaluate(&self, x: &[f64]) -> Evaluation {
        match self.run(x) {
            Ok(detail) => Evaluation::feasible(vec![
                detail.total_energy_kj,
                detail.morph_energy,
                detail.geometric_error_mm,
            ]),
            Err(infeasible) => {
                Evaluation::infeasible(vec![f64::MAX / 2.0; 3], infeasible.violation)
            }
        }
    }

    /// Full evaluation; errors describe the failing stage.
    pub fn detail(&self, x: &[f64]) -> MooResult<ProcessObjectives> {
        self.run(x).map_err(|i| MooError::Process(i.reason))
    }

    fn run(&self, x: &[f64]) -> Result<ProcessObjectives, Infeasible> {
        let joints = self.rig.joint_count();
        if x.len() != joints + 4 {
            return Err(Infeasible::stage(format!(
                "decision vector holds {} entries, expected {}",
                x.len(),
                joints + 4
            )));
        }
        let theta = &x[..joints];
        let nozzle_k = x[joints];
        let gradient = x[joints + 1];
        let feed = x[joints + 2];
        let thickness = x[joints + 3];

        let targets = self
            .rig
            .fingertip_targets(theta)
            .map_err(|e| Infeasible::stage(e.to_string()))?;

        // Grasp-space membership of every fingertip; violations accumulate
        // so the GA can rank infeasible candidates by how far they reach.
        let mut total_slack = 0.0;
        for target in targets.values() {
            let slack = self.space.best_slack(target);
            if slack > self.params.membership_slack {
                total_slack += slack;
            }
        }
        if total_slack > 0.0 {
            return Err(Infeasible {
                reason: format!(
                    "fingertip targets leave the grasp space, slack {total_slack}"
                ),
                violation: total_slack,
            });
        }

        let scheme = weight_scheme(&self.params.weight_scheme).ok_or_else(|| {
            Infeasible::stage(format!(
                "unknown weight scheme {:?}",
                self.params.weight_scheme
            ))
        })?;
        let options = GraspMorphOptions {
            scheme,
            membership_slack: self.params.membership_slack,
            ..Default::default()
        };
        let (posed, morph) = morph_by_grasp(self.mesh, self.space, &targets, &options)
            .map_err(|e| Infeasible::stage(format!("morph failed: {e}")))?;

        let sliced = slice(&posed, thickness)
            .map_err(|e| Infeasible::stage(format!("slicing failed: {e}")))?;
        let pattern = infill_pattern(&self.params.pattern).ok_or_else(|| {
            Infeasible::stage(format!("unknown infill pattern {:?}", self.params.pattern))
        })?;
        let infill_params = InfillParams {
            spacing: self.params.spacing,
            line_width: self.params.line_width,
        };
        let mut toolpath_mm = 0.0;
        for layer in &sliced.layers {
            let metrics = infill(layer, pattern.as_ref(), &infill_params)
                .map_err(|e| Infeasible::stage(format!("infill failed: {e}")))?;
            toolpath_mm += metrics.total_length;
        }

        let volume = posed.signed_volume();
        let melting_kj = melting_energy(&self.params.material, volume)
            .map_err(|e| Infeasible::stage(format!("melting model failed: {e}")))?;
        let print_time_s = print_time_from_length(toolpath_mm, feed)
            .map_err(|e| Infeasible::stage(format!("time model failed: {e}")))?;
        let motion_kj = self.params.move_power_w * print_time_s / 1000.0;

        let total_energy_kj = match self.network {
            None => melting_kj + motion_kj,
            Some(net) => {
                // Per-layer features exactly as the training pipeline
                // assembles them; the prediction sum is the energy score.
                let frame = posed.aabb();
                let t_ratio = nozzle_k / self.params.material.melt_temperature;
                let mut sum = 0.0;
                for layer in &sliced.layers {
                    let lcm = rasterize_lcm(layer, &frame, self.params.resolution)
                        .map_err(|e| Infeasible::stage(format!("mask failed: {e}")))?;
                    let mut features = Vec::with_capacity(15);
                    features.extend_from_slice(&lcm.feature_summary());
                    features.push(layer.normalized_height);
                    features.push(layer.section_area);
                    features.push(t_ratio);
                    features.push(gradient);
                    features.push(feed);
                    features.push(thickness);
                    sum += net
                        .forward(&features)
                        .map_err(|e| Infeasible::stage(format!("prediction failed: {e}")))?;
                }
                sum
            }
        };

        let surrogate = thermal_model(&self.params.thermal_model, self.params.shrink_coefficient)
            .ok_or_else(|| {
                Infeasible::stage(format!(
                    "unknown thermal model {:?}",
                    self.params.thermal_model
                ))
            })?;
        let mut deviations = Vec::new();
        for layer in &sliced.layers {
            deviations.extend(surrogate.deviations(layer, gradient, thickness));
        }
        let geometric_error_mm = if deviations.is_empty() {
            0.0
        } else {
            geometric_error(&deviations)
                .map_err(|e| Infeasible::stage(format!("deviation scan failed: {e}")))?
                .value
        };

        Ok(ProcessObjectives {
            total_energy_kj,
            morph_energy: morph.energy,
            geometric_error_mm,
            melting_kj,
            motion_kj,
            print_time_s,
            toolpath_mm,
            layer_count: sliced.layers.len(),
        })
    }
}
