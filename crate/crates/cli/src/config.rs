//! Run configuration: one JSON document covering every stage, merged with
//! command-line overrides. Validation collects every violation instead of
//! stopping at the first, and the SHA-256 of the effective document becomes
//! the manifest's config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use graspmorph_core::energy::{thermal_model_names, MaterialParams};
use graspmorph_core::morph::weight_scheme_names;
use graspmorph_core::slicer::infill_pattern_names;

pub const CONFIG_ENV_VAR: &str = "GRASPMORPH_CONFIG";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input mesh (.stl or .obj); the synthetic hand when absent.
    pub mesh: Option<PathBuf>,
    /// Grasp rig JSON; required for morph/train/optimize on a custom mesh.
    pub rig: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub material: MaterialParams,
    pub grasp_space: GraspSpaceSection,
    pub slicer: SlicerSection,
    pub morph: MorphSection,
    pub process: ProcessSection,
    pub training: TrainingSection,
    pub optimizer: OptimizerSection,
    /// Joint-angle vectors driving augmentation; the pipeline morphs the
    /// last one.
    pub schedules: Vec<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: None,
            rig: None,
            seed: 42,
            out_dir: PathBuf::from("runs/out"),
            material: MaterialParams::pla(),
            grasp_space: GraspSpaceSection::default(),
            slicer: SlicerSection::default(),
            morph: MorphSection::default(),
            process: ProcessSection::default(),
            training: TrainingSection::default(),
            optimizer: OptimizerSection::default(),
            schedules: vec![vec![0.0; 15], vec![0.04; 15]],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspSpaceSection {
    pub max_ellipsoids: usize,
    pub envelope_eps: f64,
    pub max_refit_rounds: usize,
    pub mc_samples: usize,
}

impl Default for GraspSpaceSection {
    fn default() -> Self {
        GraspSpaceSection {
            max_ellipsoids: 6,
            envelope_eps: 0.8,
            max_refit_rounds: 8,
            mc_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicerSection {
    pub thickness: f64,
    /// Mask resolution per axis.
    pub resolution: usize,
    pub pattern: String,
    pub spacing: f64,
    pub line_width: f64,
    pub support_overhang_deg: f64,
    pub support_density: f64,
    pub support_bed_z: f64,
}

impl Default for SlicerSection {
    fn default() -> Self {
        SlicerSection {
            thickness: 2.0,
            resolution: 32,
            pattern: "line".to_string(),
            spacing: 2.0,
            line_width: 0.4,
            support_overhang_deg: 45.0,
            support_density: 0.05,
            support_bed_z: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphSection {
    pub weight_scheme: String,
    pub constraint_weight: f64,
    pub membership_slack: f64,
}

impl Default for MorphSection {
    fn default() -> Self {
        MorphSection {
            weight_scheme: "uniform".to_string(),
            constraint_weight: 1.0,
            membership_slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessSection {
    pub move_power_w: f64,
    pub thermal_model: String,
    pub shrink_coefficient: f64,
    pub nozzle_temperature_k: f64,
    pub thermal_gradient_k_per_mm: f64,
    pub feed_rate_mm_per_s: f64,
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection {
            move_power_w: 120.0,
            thermal_model: "gradient".to_string(),
            shrink_coefficient: 0.01,
            nozzle_temperature_k: 478.0,
            thermal_gradient_k_per_mm: 1.0,
            feed_rate_mm_per_s: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden: usize,
    pub blocks: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pseudo_weight: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            hidden: 32,
            blocks: 2,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 80,
            pseudo_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub population: usize,
    pub generations: usize,
    pub crossover_eta: f64,
    pub crossover_probability: f64,
    pub mutation_eta: f64,
    pub mutation_probability: Option<f64>,
    /// Per-joint angle range (radians), replicated over every joint.
    pub joint_bounds: [f64; 2],
    pub nozzle_bounds_k: [f64; 2],
    pub gradient_bounds_k_per_mm: [f64; 2],
    pub feed_bounds_mm_per_s: [f64; 2],
    pub thickness_bounds_mm: [f64; 2],
    pub hypervolume_reference: Option<Vec<f64>>,
    /// Score energy with the trained network when a checkpoint is at hand.
    pub use_network: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            population: 16,
            generations: 6,
            crossover_eta: 15.0,
            crossover_probability: 0.9,
            mutation_eta: 20.0,
            mutation_probability: None,
            joint_bounds: [0.0, 0.05],
            nozzle_bounds_k: [460.0, 500.0],
            gradient_bounds_k_per_mm: [0.0, 2.0],
            feed_bounds_mm_per_s: [30.0, 80.0],
            thickness_bounds_mm: [1.5, 3.0],
            hypervolume_reference: None,
            use_network: true,
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the built-in defaults when `path` is None.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                let config: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| anyhow::anyhow!("config {} is invalid: {e}", p.display()))?;
                Ok(config)
            }
        }
    }

    /// SHA-256 of the effective settings. The output directory is excluded:
    /// it decides where artifacts land, never what they contain, and two
    /// runs into different directories must stay comparable.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// Every violation in one pass.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if let Some(mesh) = &self.mesh {
            if !mesh.exists() {
                problems.push(format!("mesh path {} does not exist", mesh.display()));
            }
        }
        if let Some(rig) = &self.rig {
            if !rig.exists() {
                problems.push(format!("rig path {} does not exist", rig.display()));
            }
        }
        if self.rig.is_some() && self.mesh.is_none() {
            problems.push("a rig file was given without a mesh file".to_string());
        }
        if let Err(e) = self.material.validate() {
            problems.push(format!("material: {e}"));
        }
        if self.grasp_space.max_ellipsoids == 0 {
            problems.push("grasp_space.max_ellipsoids must be at least 1".to_string());
        }
        if self.grasp_space.envelope_eps <= 0.0 {
            problems.push("grasp_space.envelope_eps must be positive".to_string());
        }
        if self.grasp_space.mc_samples < 100 {
            problems.push("grasp_space.mc_samples must be at least 100".to_string());
        }
        if self.slicer.thickness <= 0.0 {
            problems.push("slicer.thickness must be positive".to_string());
        }
        if self.slicer.resolution < 8 {
            problems.push("slicer.resolution must be at least 8".to_string());
        }
        if !infill_pattern_names().contains(&self.slicer.pattern.as_str()) {
            problems.push(format!(
                "slicer.pattern {:?} is unknown; choose one of {:?}",
                self.slicer.pattern,
                infill_pattern_names()
            ));
        }
        if self.slicer.spacing <= 0.0 {
            problems.push("slicer.spacing must be positive".to_string());
        }
        if self.slicer.line_width <= 0.0 {
            problems.push("slicer.line_width must be positive".to_string());
        }
        if !(0.0..90.0).contains(&self.slicer.support_overhang_deg) {
            problems.push("slicer.support_overhang_deg must lie in [0, 90)".to_string());
        }
        if self.slicer.support_density <= 0.0 {
            problems.push("slicer.support_density must be positive".to_string());
        }
        if !weight_scheme_names().contains(&self.morph.weight_scheme.as_str()) {
            problems.push(format!(
                "morph.weight_scheme {:?} is unknown; choose one of {:?}",
                self.morph.weight_scheme,
                weight_scheme_names()
            ));
        }
        if self.morph.constraint_weight <= 0.0 {
            problems.push("morph.constraint_weight must be positive".to_string());
        }
        if !thermal_model_names().contains(&self.process.thermal_model.as_str()) {
            problems.push(format!(
                "process.thermal_model {:?} is unknown; choose one of {:?}",
                self.process.thermal_model,
                thermal_model_names()
            ));
        }
        if self.process.feed_rate_mm_per_s <= 0.0 {
            problems.push("process.feed_rate_mm_per_s must be positive".to_string());
        }
        if self.process.move_power_w < 0.0 {
            problems.push("process.move_power_w cannot be negative".to_string());
        }
        if self.training.hidden == 0 || self.training.blocks == 0 {
            problems.push("training.hidden and training.blocks must be at least 1".to_string());
        }
        if self.training.epochs == 0 {
            problems.push("training.epochs must be at least 1".to_string());
        }
        if self.training.batch_size == 0 {
            problems.push("training.batch_size must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.training.pseudo_weight) {
            problems.push("training.pseudo_weight must lie in [0, 1]".to_string());
        }
        if self.optimizer.population < 4 || self.optimizer.population % 2 != 0 {
            problems.push("optimizer.population must be even and at least 4".to_string());
        }
        if self.optimizer.generations == 0 {
            problems.push("optimizer.generations must be at least 1".to_string());
        }
        for (name, pair) in [
            ("joint_bounds", self.optimizer.joint_bounds),
            ("nozzle_bounds_k", self.optimizer.nozzle_bounds_k),
            (
                "gradient_bounds_k_per_mm",
                self.optimizer.gradient_bounds_k_per_mm,
            ),
            ("feed_bounds_mm_per_s", self.optimizer.feed_bounds_mm_per_s),
            ("thickness_bounds_mm", self.optimizer.thickness_bounds_mm),
        ] {
            if pair[0] > pair[1] {
                problems.push(format!(
                    "optimizer.{name} lower bound {} exceeds upper bound {}",
                    pair[0], pair[1]
                ));
            }
        }
        if self.optimizer.feed_bounds_mm_per_s[0] <= 0.0 {
            problems.push("optimizer.feed_bounds_mm_per_s must stay positive".to_string());
        }
        if self.optimizer.thickness_bounds_mm[0] <= 0.0 {
            problems.push("optimizer.thickness_bounds_mm must stay positive".to_string());
        }
        if self.schedules.is_empty() {
            problems.push("schedules must hold at least one joint vector".to_string());
        }
        if let Some(first) = self.schedules.first() {
            for (i, s) in self.schedules.iter().enumerate() {
                if s.len() != first.len() {
                    problems.push(format!(
                        "schedule {i} holds {} angles but schedule 0 holds {}",
                        s.len(),
                        first.len()
                    ));
                }
            }
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_cleanly() {
        assert!(RunConfig::default().validate().is_empty());
    }

    #[test]
    fn validation_collects_every_violation() {
        let mut config = RunConfig::default();
        config.slicer.thickness = -1.0;
        config.slicer.pattern = "spiral".to_string();
        config.optimizer.population = 7;
        config.schedules = vec![vec![0.0; 15], vec![0.0; 3]];
        let problems = config.validate();
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn hash_changes_with_any_effective_setting() {
        let base = RunConfig::default();
        let mut tweaked = base.clone();
        tweaked.seed = 43;
        assert_ne!(base.hash(), tweaked.hash());
        let mut tweaked = base.clone();
        tweaked.slicer.thickness = 1.9;
        assert_ne!(base.hash(), tweaked.hash());
        assert_eq!(base.hash(), RunConfig::default().hash());
        let mut relocated = base.clone();
        relocated.out_dir = PathBuf::from("elsewhere");
        assert_eq!(base.hash(), relocated.hash());
    }

    #[test]
    fn round_trips_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config.hash(), back.hash());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let result: Result<RunConfig, _> =
            serde_json::from_str(r#"{"sliccer": {"thickness": 1.0}}"#);
        assert!(result.is_err());
    }
}
