//! Stage implementations shared by the subcommands and the pipeline. Each
//! stage works on in-memory values, writes its artifacts under the run
//! directory and records them (plus its timing) in the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use nalgebra::Point3;
use serde::Serialize;

use graspmorph_core::energy::{
    analytic_total_energy, geometric_error, thermal_model, EnergyBreakdown,
    GeometricErrorReport, PowerLog,
};
use graspmorph_core::ellipsoid::{build_grasp_space, GraspSpace, GraspSpaceParams};
use graspmorph_core::hand::{synthetic_hand, GraspRig};
use graspmorph_core::mesh::{load_mesh, save_mesh, Mesh, MeshFormat, MeshReport};
use graspmorph_core::moo::{nsga2, Bounds, NsgaParams, ParetoFront, ProcessContext, ProcessParams};
use graspmorph_core::morph::{morph_by_grasp, weight_scheme, GraspMorphOptions, Morph};
use graspmorph_core::resnet::{
    augment_and_label, dataset_loss, label_single_mesh, log_total_kj, measured_layer_energies,
    train, AugmentParams, Checkpoint, Dataset, ResidualNet, TrainParams, FEATURE_COUNT,
};
use graspmorph_core::slicer::{
    infill, infill_pattern, rasterize_lcm, slice, support_stats, InfillParams, Slicing,
    SupportParams, SupportStats, ToolpathMetrics,
};

use crate::config::RunConfig;
use crate::manifest::{write_json, Manifest};

/// Shared run state threaded through every stage.
pub struct Workspace<'a> {
    pub config: &'a RunConfig,
    pub out: &'a Path,
    pub manifest: &'a mut Manifest,
}

/// Where the working mesh came from, for reports and manifests.
pub enum MeshSource {
    File(PathBuf),
    Synthetic,
}

impl MeshSource {
    pub fn label(&self) -> String {
        match self {
            MeshSource::File(p) => p.display().to_string(),
            MeshSource::Synthetic => "synthetic:hand".to_string(),
        }
    }
}

/// Loads the configured mesh and rig, or falls back to the generated hand.
pub fn acquire(
    config: &RunConfig,
    manifest: &mut Manifest,
) -> anyhow::Result<(Mesh, Option<GraspRig>, MeshSource)> {
    match &config.mesh {
        Some(path) => {
            let mesh = load_mesh(path)
                .map_err(|e| anyhow!("loading mesh {}: {e}", path.display()))?;
            manifest.record_input(path.display().to_string());
            let rig = match &config.rig {
                Some(rig_path) => {
                    let text = std::fs::read_to_string(rig_path)
                        .with_context(|| format!("reading rig {}", rig_path.display()))?;
                    let rig: GraspRig = serde_json::from_str(&text)
                        .map_err(|e| anyhow!("rig {} is invalid: {e}", rig_path.display()))?;
                    rig.validate(&mesh, 1e-6)
                        .map_err(|e| anyhow!("rig does not match the mesh: {e}"))?;
                    manifest.record_input(rig_path.display().to_string());
                    Some(rig)
                }
                None => None,
            };
            Ok((mesh, rig, MeshSource::File(path.clone())))
        }
        None => {
            let (mesh, rig) = synthetic_hand();
            manifest.record_input("synthetic:hand");
            Ok((mesh, Some(rig), MeshSource::Synthetic))
        }
    }
}

pub fn require_rig(rig: Option<GraspRig>) -> anyhow::Result<GraspRig> {
    rig.ok_or_else(|| {
        anyhow!("this command needs joint chains: set \"rig\" in the config next to \"mesh\"")
    })
}

fn grasp_space_params(config: &RunConfig) -> GraspSpaceParams {
    GraspSpaceParams {
        max_ellipsoids: config.grasp_space.max_ellipsoids,
        envelope_eps: config.grasp_space.envelope_eps,
        max_refit_rounds: config.grasp_space.max_refit_rounds,
        mc_samples: config.grasp_space.mc_samples,
        seed: config.seed,
        ..Default::default()
    }
}

fn augment_params(config: &RunConfig) -> AugmentParams {
    AugmentParams {
        thickness: config.slicer.thickness,
        resolution: config.slicer.resolution,
        feed_rate: config.process.feed_rate_mm_per_s,
        nozzle_temperature: config.process.nozzle_temperature_k,
        thermal_gradient: config.process.thermal_gradient_k_per_mm,
        material: config.material.clone(),
        weight_scheme: config.morph.weight_scheme.clone(),
        membership_slack: config.morph.membership_slack,
    }
}

fn process_params(config: &RunConfig) -> ProcessParams {
    ProcessParams {
        material: config.material.clone(),
        pattern: config.slicer.pattern.clone(),
        spacing: config.slicer.spacing,
        line_width: config.slicer.line_width,
        move_power_w: config.process.move_power_w,
        thermal_model: config.process.thermal_model.clone(),
        shrink_coefficient: config.process.shrink_coefficient,
        weight_scheme: config.morph.weight_scheme.clone(),
        membership_slack: config.morph.membership_slack,
        resolution: config.slicer.resolution,
    }
}

fn schedule_targets(
    rig: &GraspRig,
    config: &RunConfig,
    index: usize,
) -> anyhow::Result<(Vec<f64>, BTreeMap<usize, Point3<f64>>)> {
    let schedule = config
        .schedules
        .get(index)
        .ok_or_else(|| {
            anyhow!(
                "schedule index {index} is out of range; the config holds {}",
                config.schedules.len()
            )
        })?
        .clone();
    if schedule.len() != rig.joint_count() {
        bail!(
            "schedule {index} holds {} angles but the rig has {} joints",
            schedule.len(),
            rig.joint_count()
        );
    }
    let targets = rig
        .fingertip_targets(&schedule)
        .map_err(|e| anyhow!("posing the rig with schedule {index}: {e}"))?;
    Ok((schedule, targets))
}

// ---------------------------------------------------------------------------
// gen-hand

pub fn stage_gen_hand(ws: &mut Workspace) -> anyhow::Result<(Mesh, GraspRig)> {
    let started = Instant::now();
    let (mesh, rig) = synthetic_hand();
    save_mesh(&mesh, ws.out.join("hand.obj"), MeshFormat::Obj)
        .map_err(|e| anyhow!("writing hand.obj: {e}"))?;
    save_mesh(&mesh, ws.out.join("hand.stl"), MeshFormat::StlBinary)
        .map_err(|e| anyhow!("writing hand.stl: {e}"))?;
    ws.manifest.record_output(ws.out, "hand.obj")?;
    ws.manifest.record_output(ws.out, "hand.stl")?;
    write_json(ws.manifest, ws.out, "rig.json", &rig)?;
    ws.manifest.record_timing("gen-hand", started);
    println!(
        "gen-hand: {} vertices, {} faces, {} joints",
        mesh.vertex_count(),
        mesh.face_count(),
        rig.joint_count()
    );
    Ok((mesh, rig))
}

// ---------------------------------------------------------------------------
// measure

#[derive(Serialize)]
struct MeasureReportJson {
    source: String,
    vertex_count: usize,
    face_count: usize,
    closed_manifold: bool,
    consistently_oriented: bool,
    #[serde(flatten)]
    report: MeshReport,
}

pub fn stage_measure(ws: &mut Workspace, mesh: &Mesh, source: &MeshSource) -> anyhow::Result<()> {
    let started = Instant::now();
    let validation = mesh.validate();
    let report = mesh
        .measure()
        .map_err(|e| anyhow!("measuring the mesh: {e}"))?;
    let json = MeasureReportJson {
        source: source.label(),
        vertex_count: mesh.vertex_count(),
        face_count: mesh.face_count(),
        closed_manifold: validation.is_closed_manifold(),
        consistently_oriented: validation.is_consistently_oriented(),
        report,
    };
    write_json(ws.manifest, ws.out, "measure.json", &json)?;
    ws.manifest.record_timing("measure", started);
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// fgs

#[derive(Serialize)]
struct EllipsoidJson {
    center: [f64; 3],
    semi_axes: [f64; 3],
    rotation_zyx_rad: [f64; 3],
    volume_mm3: f64,
}

#[derive(Serialize)]
struct GraspSpaceJson {
    source: String,
    ellipsoid_count: usize,
    envelope_eps: f64,
    envelope_error: f64,
    volume_mm3: f64,
    surface_area_mm2: f64,
    centroid: [f64; 3],
    mesh_volume_mm3: f64,
    ellipsoids: Vec<EllipsoidJson>,
}

pub fn stage_fgs(
    ws: &mut Workspace,
    mesh: &Mesh,
    source: &MeshSource,
) -> anyhow::Result<GraspSpace> {
    let started = Instant::now();
    let params = grasp_space_params(ws.config);
    let space = build_grasp_space(mesh, &params)
        .map_err(|e| anyhow!("building the grasp space: {e}"))?;
    let json = GraspSpaceJson {
        source: source.label(),
        ellipsoid_count: space.ellipsoids.len(),
        envelope_eps: params.envelope_eps,
        envelope_error: space.envelope_error,
        volume_mm3: space.volume,
        surface_area_mm2: space.surface_area,
        centroid: space.centroid.coords.into(),
        mesh_volume_mm3: mesh.signed_volume(),
        ellipsoids: space
            .ellipsoids
            .iter()
            .map(|e| EllipsoidJson {
                center: e.center.coords.into(),
                semi_axes: e.semi_axes.into(),
                rotation_zyx_rad: e.angles.into(),
                volume_mm3: e.volume(),
            })
            .collect(),
    };
    write_json(ws.manifest, ws.out, "fgs.json", &json)?;
    ws.manifest.record_timing("fgs", started);
    println!(
        "fgs: {} ellipsoids, envelope error {:.3e}, union volume {:.1} mm^3",
        space.ellipsoids.len(),
        space.envelope_error,
        space.volume
    );
    Ok(space)
}

// ---------------------------------------------------------------------------
// morph

#[derive(Serialize)]
struct MorphJson {
    schedule_index: usize,
    joint_angles: Vec<f64>,
    control_vertices: Vec<usize>,
    residual_norm: f64,
    deformation_energy: f64,
    max_displacement_mm: f64,
    mean_displacement_mm: f64,
}

pub fn stage_morph(
    ws: &mut Workspace,
    mesh: &Mesh,
    rig: &GraspRig,
    space: &GraspSpace,
    schedule_index: usize,
) -> anyhow::Result<(Mesh, Morph)> {
    let started = Instant::now();
    let (schedule, targets) = schedule_targets(rig, ws.config, schedule_index)?;
    let scheme = weight_scheme(&ws.config.morph.weight_scheme)
        .ok_or_else(|| anyhow!("unknown weight scheme {:?}", ws.config.morph.weight_scheme))?;
    let options = GraspMorphOptions {
        scheme,
        constraint_weight: ws.config.morph.constraint_weight,
        membership_slack: ws.config.morph.membership_slack,
    };
    let (posed, morph) = morph_by_grasp(mesh, space, &targets, &options)
        .map_err(|e| anyhow!("morphing toward schedule {schedule_index}: {e}"))?;
    let displacements: Vec<f64> = mesh
        .vertices
        .iter()
        .zip(&posed.vertices)
        .map(|(a, b)| (b - a).norm())
        .collect();
    let json = MorphJson {
        schedule_index,
        joint_angles: schedule,
        control_vertices: targets.keys().copied().collect(),
        residual_norm: morph.residual_norm,
        deformation_energy: morph.energy,
        max_displacement_mm: displacements.iter().cloned().fold(0.0, f64::max),
        mean_displacement_mm: displacements.iter().sum::<f64>()
            / displacements.len().max(1) as f64,
    };
    save_mesh(&posed, ws.out.join("morphed.obj"), MeshFormat::Obj)
        .map_err(|e| anyhow!("writing morphed.obj: {e}"))?;
    ws.manifest.record_output(ws.out, "morphed.obj")?;
    write_json(ws.manifest, ws.out, "morph.json", &json)?;
    ws.manifest.record_timing("morph", started);
    println!(
        "morph: schedule {schedule_index}, energy {:.6}, max displacement {:.3} mm",
        json.deformation_energy, json.max_displacement_mm
    );
    Ok((posed, morph))
}

// ---------------------------------------------------------------------------
// slice

#[derive(Serialize)]
struct SupportJson {
    ray_count: usize,
    bottom_count: usize,
    mesh_count: usize,
    total_length_mm: f64,
    max_mm: f64,
    min_mm: f64,
    mean_mm: f64,
    median_mm: f64,
}

impl From<&SupportStats> for SupportJson {
    fn from(s: &SupportStats) -> Self {
        SupportJson {
            ray_count: s.lengths.len(),
            bottom_count: s.bottom_count,
            mesh_count: s.mesh_count,
            total_length_mm: s.sum,
            max_mm: s.max,
            min_mm: s.min,
            mean_mm: s.mean,
            median_mm: s.median,
        }
    }
}

#[derive(Serialize)]
struct SliceJson {
    source: String,
    thickness_mm: f64,
    layer_count: usize,
    z_min: f64,
    z_max: f64,
    build_height_mm: f64,
    stacked_volume_mm3: f64,
    mesh_volume_mm3: f64,
    volume_relative_error: f64,
    toolpath_total_mm: f64,
    mask_resolution: usize,
    warnings: Vec<String>,
    supports: SupportJson,
}

/// Slices and hatches every layer with the configured pattern.
pub fn slice_with_toolpath(
    mesh: &Mesh,
    config: &RunConfig,
    thickness: f64,
) -> anyhow::Result<(Slicing, Vec<ToolpathMetrics>)> {
    let slicing = slice(mesh, thickness).map_err(|e| anyhow!("slicing the mesh: {e}"))?;
    let pattern = infill_pattern(&config.slicer.pattern)
        .ok_or_else(|| anyhow!("unknown infill pattern {:?}", config.slicer.pattern))?;
    let infill_params = InfillParams {
        spacing: config.slicer.spacing,
        line_width: config.slicer.line_width,
    };
    let mut toolpaths = Vec::with_capacity(slicing.layers.len());
    for (i, layer) in slicing.layers.iter().enumerate() {
        let metrics = infill(layer, pattern.as_ref(), &infill_params)
            .map_err(|e| anyhow!("hatching layer {i}: {e}"))?;
        toolpaths.push(metrics);
    }
    Ok((slicing, toolpaths))
}

fn write_pgm(path: &Path, resolution: usize, mask: &[u8]) -> anyhow::Result<()> {
    let mut file = File::create(path)
        .map_err(|e| anyhow!("cannot create {}: {e}", path.display()))?;
    write!(file, "P5\n{resolution} {resolution}\n255\n")?;
    let bytes: Vec<u8> = mask.iter().map(|&p| if p > 0 { 255 } else { 0 }).collect();
    file.write_all(&bytes)?;
    Ok(())
}

pub fn stage_slice(
    ws: &mut Workspace,
    mesh: &Mesh,
    source: &MeshSource,
    thickness: f64,
) -> anyhow::Result<(Slicing, Vec<ToolpathMetrics>)> {
    let started = Instant::now();
    let (slicing, toolpaths) = slice_with_toolpath(mesh, ws.config, thickness)?;

    let mut layers_csv = csv::Writer::from_writer(Vec::new());
    layers_csv.write_record([
        "layer",
        "z_mm",
        "normalized_height",
        "polygon_count",
        "section_area_mm2",
        "infill_length_mm",
        "turning_points",
        "infill_rate",
    ])?;
    for (i, (layer, path)) in slicing.layers.iter().zip(&toolpaths).enumerate() {
        layers_csv.write_record([
            i.to_string(),
            format!("{}", layer.z),
            format!("{}", layer.normalized_height),
            layer.polygons.len().to_string(),
            format!("{}", layer.section_area),
            format!("{}", path.total_length),
            path.turning_points.to_string(),
            format!("{}", path.infill_rate),
        ])?;
    }
    std::fs::write(
        ws.out.join("layers.csv"),
        layers_csv.into_inner().map_err(|e| anyhow!("{e}"))?,
    )?;
    ws.manifest.record_output(ws.out, "layers.csv")?;

    let frame = mesh.aabb();
    let resolution = ws.config.slicer.resolution;
    std::fs::create_dir_all(ws.out.join("masks"))?;
    for (i, layer) in slicing.layers.iter().enumerate() {
        let lcm = rasterize_lcm(layer, &frame, resolution)
            .map_err(|e| anyhow!("rasterizing layer {i}: {e}"))?;
        let relative = format!("masks/layer_{i:03}.pgm");
        write_pgm(&ws.out.join(&relative), resolution, &lcm.mask)?;
        ws.manifest.record_output(ws.out, &relative)?;
    }

    let supports = support_stats(
        mesh,
        &SupportParams {
            overhang_threshold: ws.config.slicer.support_overhang_deg.to_radians(),
            sample_density: ws.config.slicer.support_density,
            bed_z: ws.config.slicer.support_bed_z,
            seed: ws.config.seed,
        },
    );
    let mesh_volume = mesh.signed_volume();
    let stacked = slicing.stacked_volume();
    let json = SliceJson {
        source: source.label(),
        thickness_mm: thickness,
        layer_count: slicing.layers.len(),
        z_min: slicing.z_min,
        z_max: slicing.z_max,
        build_height_mm: slicing.build_height(),
        stacked_volume_mm3: stacked,
        mesh_volume_mm3: mesh_volume,
        volume_relative_error: (stacked - mesh_volume).abs() / mesh_volume.abs().max(1e-300),
        toolpath_total_mm: toolpaths.iter().map(|t| t.total_length).sum(),
        mask_resolution: resolution,
        warnings: slicing.warnings.clone(),
        supports: SupportJson::from(&supports),
    };
    write_json(ws.manifest, ws.out, "slice.json", &json)?;
    ws.manifest.record_timing("slice", started);
    println!(
        "slice: {} layers at {} mm, stacked volume within {:.2}% of the mesh",
        json.layer_count,
        thickness,
        100.0 * json.volume_relative_error
    );
    Ok((slicing, toolpaths))
}

// ---------------------------------------------------------------------------
// energy

#[derive(Serialize)]
struct PowerLogJson {
    path: String,
    duration_s: f64,
    total_kj: f64,
}

#[derive(Serialize)]
struct EnergyJson {
    source: String,
    volume_mm3: f64,
    toolpath_mm: f64,
    feed_rate_mm_per_s: f64,
    move_power_w: f64,
    breakdown: EnergyBreakdown,
    geometric_error: GeometricErrorReport,
    thermal_model: String,
    measured: Option<PowerLogJson>,
}

pub fn stage_energy(
    ws: &mut Workspace,
    mesh: &Mesh,
    source: &MeshSource,
    slicing: &Slicing,
    toolpaths: &[ToolpathMetrics],
    power_log: Option<&Path>,
) -> anyhow::Result<()> {
    let started = Instant::now();
    let report = mesh
        .measure()
        .map_err(|e| anyhow!("measuring the mesh: {e}"))?;
    let toolpath_mm: f64 = toolpaths.iter().map(|t| t.total_length).sum();
    let breakdown = analytic_total_energy(
        &ws.config.material,
        report.volume,
        toolpath_mm,
        ws.config.process.feed_rate_mm_per_s,
        ws.config.process.move_power_w,
    )
    .map_err(|e| anyhow!("analytic energy model: {e}"))?;

    let model = thermal_model(
        &ws.config.process.thermal_model,
        ws.config.process.shrink_coefficient,
    )
    .ok_or_else(|| anyhow!("unknown thermal model {:?}", ws.config.process.thermal_model))?;
    let mut deviations = Vec::new();
    for layer in &slicing.layers {
        deviations.extend(model.deviations(
            layer,
            ws.config.process.thermal_gradient_k_per_mm,
            slicing.thickness,
        ));
    }
    let error = geometric_error(&deviations).map_err(|e| anyhow!("geometric error: {e}"))?;

    let measured = match power_log {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| anyhow!("cannot open power log {}: {e}", path.display()))?;
            let log = PowerLog::from_csv(file)
                .map_err(|e| anyhow!("power log {}: {e}", path.display()))?;
            ws.manifest.record_input(path.display().to_string());
            Some(PowerLogJson {
                path: path.display().to_string(),
                duration_s: log.duration(),
                total_kj: log_total_kj(&log),
            })
        }
        None => None,
    };

    let json = EnergyJson {
        source: source.label(),
        volume_mm3: report.volume,
        toolpath_mm,
        feed_rate_mm_per_s: ws.config.process.feed_rate_mm_per_s,
        move_power_w: ws.config.process.move_power_w,
        breakdown,
        geometric_error: error,
        thermal_model: ws.config.process.thermal_model.clone(),
        measured,
    };
    write_json(ws.manifest, ws.out, "energy.json", &json)?;
    ws.manifest.record_timing("energy", started);
    println!(
        "energy: melting {:.4} kJ + motion {:.4} kJ = {:.4} kJ over {:.1} s",
        breakdown.melting_kj, breakdown.motion_kj, breakdown.total_kj, breakdown.time_s
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Serialize)]
struct TrainJson {
    rows: usize,
    pseudo_rows: usize,
    measured_rows: usize,
    train_rows: usize,
    validation_rows: usize,
    schedules: usize,
    epochs: usize,
    initial_loss_standardized: f64,
    final_loss_standardized: f64,
    validation_loss_kj2: f64,
    diverged_at: Option<usize>,
}

/// Per-column affine standardization of a dataset, rebuildable into raw
/// space by folding the transform into the network's edge layers.
struct Standardization {
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    label_mean: f64,
    label_std: f64,
}

impl Standardization {
    fn fit(dataset: &Dataset) -> Self {
        let n = dataset.samples.len().max(1) as f64;
        let width = dataset.feature_names.len();
        let mut feature_mean = vec![0.0; width];
        let mut label_mean = 0.0;
        for sample in &dataset.samples {
            for (m, v) in feature_mean.iter_mut().zip(&sample.features) {
                *m += v / n;
            }
            label_mean += sample.label / n;
        }
        let mut feature_std = vec![0.0; width];
        let mut label_var = 0.0;
        for sample in &dataset.samples {
            for (s, (v, m)) in feature_std
                .iter_mut()
                .zip(sample.features.iter().zip(&feature_mean))
            {
                *s += (v - m) * (v - m) / n;
            }
            label_var += (sample.label - label_mean) * (sample.label - label_mean) / n;
        }
        for s in &mut feature_std {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        let mut label_std = label_var.sqrt();
        if label_std < 1e-12 {
            label_std = 1.0;
        }
        Standardization {
            feature_mean,
            feature_std,
            label_mean,
            label_std,
        }
    }

    fn apply(&self, dataset: &Dataset) -> Dataset {
        let samples = dataset
            .samples
            .iter()
            .map(|sample| {
                let features = sample
                    .features
                    .iter()
                    .zip(self.feature_mean.iter().zip(&self.feature_std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect();
                graspmorph_core::resnet::Sample {
                    features,
                    label: (sample.label - self.label_mean) / self.label_std,
                    is_pseudo: sample.is_pseudo,
                }
            })
            .collect();
        Dataset::new(samples, dataset.feature_names.clone())
    }

    /// Rewrites the network to take raw features and emit raw labels: the
    /// input layer absorbs (x - mean) / std column by column and the output
    /// layer absorbs label_std * y + label_mean. The composed function is
    /// unchanged, so the checkpoint stays plain dense layers.
    fn fold_into(&self, net: &ResidualNet) -> anyhow::Result<ResidualNet> {
        let mut checkpoint = net.to_checkpoint();
        {
            let input = &mut checkpoint.input;
            let cols = input.cols;
            for r in 0..input.rows {
                let mut shift = 0.0;
                for c in 0..cols {
                    let w = input.weights[r * cols + c] / self.feature_std[c];
                    input.weights[r * cols + c] = w;
                    shift += w * self.feature_mean[c];
                }
                input.biases[r] -= shift;
            }
        }
        {
            let output = &mut checkpoint.output;
            for w in &mut output.weights {
                *w *= self.label_std;
            }
            for b in &mut output.biases {
                *b = self.label_std * *b + self.label_mean;
            }
        }
        ResidualNet::from_checkpoint(&checkpoint)
            .map_err(|e| anyhow!("folding the standardization: {e}"))
    }
}

/// Builds the per-layer dataset over every schedule, grafts measured labels
/// onto the first schedule when a power log lines up, trains the residual
/// network on standardized rows and writes dataset/loss/checkpoint artifacts
/// with the standardization folded back into the saved weights.
pub fn stage_train(
    ws: &mut Workspace,
    mesh: &Mesh,
    rig: &GraspRig,
    space: &GraspSpace,
    power_log: Option<&Path>,
) -> anyhow::Result<ResidualNet> {
    let started = Instant::now();
    let config = ws.config;
    let params = augment_params(config);

    let mut target_maps = Vec::with_capacity(config.schedules.len());
    for index in 0..config.schedules.len() {
        let (_, targets) = schedule_targets(rig, config, index)?;
        target_maps.push(targets);
    }
    let mut dataset = augment_and_label(mesh, space, &target_maps, &params)
        .map_err(|e| anyhow!("building the training set: {e}"))?;

    let mut measured_rows = 0;
    if let Some(path) = power_log {
        let file = File::open(path)
            .map_err(|e| anyhow!("cannot open power log {}: {e}", path.display()))?;
        let log =
            PowerLog::from_csv(file).map_err(|e| anyhow!("power log {}: {e}", path.display()))?;
        ws.manifest.record_input(path.display().to_string());

        // Reconstruct the print schedule of the first pose: per-layer hatch
        // time at the configured feed rate, starting at t = 0.
        let scheme = weight_scheme(&config.morph.weight_scheme)
            .ok_or_else(|| anyhow!("unknown weight scheme {:?}", config.morph.weight_scheme))?;
        let options = GraspMorphOptions {
            scheme,
            constraint_weight: config.morph.constraint_weight,
            membership_slack: config.morph.membership_slack,
        };
        let (posed, _) = morph_by_grasp(mesh, space, &target_maps[0], &options)
            .map_err(|e| anyhow!("morphing schedule 0 for the log alignment: {e}"))?;
        let (_, toolpaths) = slice_with_toolpath(&posed, config, config.slicer.thickness)?;
        let mut boundaries = vec![0.0];
        for metrics in &toolpaths {
            let dt = metrics.total_length / config.process.feed_rate_mm_per_s;
            boundaries.push(boundaries.last().unwrap() + dt);
        }
        let energies = measured_layer_energies(&log, &boundaries)
            .map_err(|e| anyhow!("aligning the power log with the layers: {e}"))?;
        for (sample, energy) in dataset.samples.iter_mut().zip(&energies) {
            sample.label = *energy;
            sample.is_pseudo = false;
            measured_rows += 1;
        }
    }

    let mut csv_bytes = Vec::new();
    dataset
        .write_csv(&mut csv_bytes)
        .map_err(|e| anyhow!("writing dataset.csv: {e}"))?;
    std::fs::write(ws.out.join("dataset.csv"), csv_bytes)?;
    ws.manifest.record_output(ws.out, "dataset.csv")?;

    // Deterministic 80/20 split: every fifth row validates.
    let mut train_samples = Vec::new();
    let mut validation_samples = Vec::new();
    for (i, sample) in dataset.samples.iter().cloned().enumerate() {
        if i % 5 == 4 {
            validation_samples.push(sample);
        } else {
            train_samples.push(sample);
        }
    }
    if train_samples.is_empty() {
        bail!("the dataset is too small to train on");
    }
    let train_set = Dataset::new(train_samples, dataset.feature_names.clone());
    let validation_set = Dataset::new(validation_samples, dataset.feature_names.clone());

    // Raw features span orders of magnitude (areas vs. ratios), so SGD runs
    // on standardized rows; the transform is folded into the saved weights.
    let standardization = Standardization::fit(&train_set);
    let standardized_train = standardization.apply(&train_set);

    let mut net = ResidualNet::new(
        FEATURE_COUNT,
        config.training.hidden,
        config.training.blocks,
        config.seed,
    );
    let train_params = TrainParams {
        learning_rate: config.training.learning_rate,
        batch_size: config.training.batch_size,
        epochs: config.training.epochs,
        pseudo_weight: config.training.pseudo_weight,
        seed: config.seed,
    };
    let report = train(&mut net, &standardized_train, &train_params)
        .map_err(|e| anyhow!("training: {e}"))?;
    let net = standardization.fold_into(&net)?;

    let mut loss_csv = csv::Writer::from_writer(Vec::new());
    loss_csv.write_record(["epoch", "loss"])?;
    for (epoch, loss) in report.loss_history.iter().enumerate() {
        loss_csv.write_record([epoch.to_string(), format!("{loss}")])?;
    }
    std::fs::write(
        ws.out.join("loss.csv"),
        loss_csv.into_inner().map_err(|e| anyhow!("{e}"))?,
    )?;
    ws.manifest.record_output(ws.out, "loss.csv")?;

    write_json(ws.manifest, ws.out, "checkpoint.json", &net.to_checkpoint())?;

    let validation_loss = if validation_set.samples.is_empty() {
        f64::NAN
    } else {
        dataset_loss(&net, &validation_set, train_params.pseudo_weight)
            .map_err(|e| anyhow!("validation loss: {e}"))?
    };
    let json = TrainJson {
        rows: dataset.samples.len(),
        pseudo_rows: dataset.samples.iter().filter(|s| s.is_pseudo).count(),
        measured_rows,
        train_rows: train_set.samples.len(),
        validation_rows: validation_set.samples.len(),
        schedules: config.schedules.len(),
        epochs: config.training.epochs,
        initial_loss_standardized: report.loss_history.first().copied().unwrap_or(f64::NAN),
        final_loss_standardized: report.loss_history.last().copied().unwrap_or(f64::NAN),
        validation_loss_kj2: validation_loss,
        diverged_at: report.diverged_at,
    };
    write_json(ws.manifest, ws.out, "train.json", &json)?;
    ws.manifest.record_timing("train", started);
    println!(
        "train: {} rows ({} measured), standardized loss {:.4e} -> {:.4e}",
        json.rows, json.measured_rows, json.initial_loss_standardized, json.final_loss_standardized
    );
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> anyhow::Result<ResidualNet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!("cannot read checkpoint {}: {e}", path.display()))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| anyhow!("checkpoint {} is invalid: {e}", path.display()))?;
    ResidualNet::from_checkpoint(&checkpoint)
        .map_err(|e| anyhow!("checkpoint {} is inconsistent: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// predict

#[derive(Serialize)]
struct PredictJson {
    source: String,
    layers: usize,
    analytic_total_kj: f64,
    predicted_total_kj: f64,
    mean_abs_error_kj: f64,
    max_abs_error_kj: f64,
}

pub fn stage_predict(
    ws: &mut Workspace,
    mesh: &Mesh,
    source: &MeshSource,
    net: &ResidualNet,
) -> anyhow::Result<()> {
    let started = Instant::now();
    let params = augment_params(ws.config);
    let dataset =
        label_single_mesh(mesh, &params).map_err(|e| anyhow!("featurizing the mesh: {e}"))?;

    let mut rows_csv = csv::Writer::from_writer(Vec::new());
    rows_csv.write_record(["layer", "analytic_kj", "predicted_kj"])?;
    let mut analytic_total = 0.0;
    let mut predicted_total = 0.0;
    let mut abs_errors = Vec::with_capacity(dataset.samples.len());
    for (i, sample) in dataset.samples.iter().enumerate() {
        let predicted = net
            .forward(&sample.features)
            .map_err(|e| anyhow!("scoring layer {i}: {e}"))?;
        analytic_total += sample.label;
        predicted_total += predicted;
        abs_errors.push((predicted - sample.label).abs());
        rows_csv.write_record([
            i.to_string(),
            format!("{}", sample.label),
            format!("{predicted}"),
        ])?;
    }
    std::fs::write(
        ws.out.join("predictions.csv"),
        rows_csv.into_inner().map_err(|e| anyhow!("{e}"))?,
    )?;
    ws.manifest.record_output(ws.out, "predictions.csv")?;

    let json = PredictJson {
        source: source.label(),
        layers: dataset.samples.len(),
        analytic_total_kj: analytic_total,
        predicted_total_kj: predicted_total,
        mean_abs_error_kj: abs_errors.iter().sum::<f64>() / abs_errors.len().max(1) as f64,
        max_abs_error_kj: abs_errors.iter().cloned().fold(0.0, f64::max),
    };
    write_json(ws.manifest, ws.out, "predict.json", &json)?;
    ws.manifest.record_timing("predict", started);
    println!(
        "predict: {} layers, analytic {:.4} kJ, network {:.4} kJ",
        json.layers, json.analytic_total_kj, json.predicted_total_kj
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Serialize)]
struct FrontMemberJson {
    joint_angles: Vec<f64>,
    nozzle_k: f64,
    gradient_k_per_mm: f64,
    feed_mm_per_s: f64,
    thickness_mm: f64,
    objectives: Vec<f64>,
    violation: f64,
    detail: graspmorph_core::moo::ProcessObjectives,
}

#[derive(Serialize)]
struct OptimizeJson {
    population: usize,
    generations: usize,
    evaluations: usize,
    cache_hits: usize,
    energy_model: String,
    front_size: usize,
    front: Vec<FrontMemberJson>,
}

fn decision_bounds(config: &RunConfig, joint_count: usize) -> anyhow::Result<Bounds> {
    let o = &config.optimizer;
    let mut lower = vec![o.joint_bounds[0]; joint_count];
    let mut upper = vec![o.joint_bounds[1]; joint_count];
    for pair in [
        o.nozzle_bounds_k,
        o.gradient_bounds_k_per_mm,
        o.feed_bounds_mm_per_s,
        o.thickness_bounds_mm,
    ] {
        lower.push(pair[0]);
        upper.push(pair[1]);
    }
    Bounds::new(lower, upper).map_err(|e| anyhow!("optimizer bounds: {e}"))
}

pub fn stage_optimize(
    ws: &mut Workspace,
    mesh: &Mesh,
    rig: &GraspRig,
    space: &GraspSpace,
    network: Option<&ResidualNet>,
) -> anyhow::Result<ParetoFront> {
    let started = Instant::now();
    let config = ws.config;
    let context = ProcessContext {
        mesh,
        space,
        rig,
        network,
        params: process_params(config),
    };
    let bounds = decision_bounds(config, rig.joint_count())?;
    let nsga = NsgaParams {
        population: config.optimizer.population,
        generations: config.optimizer.generations,
        crossover_eta: config.optimizer.crossover_eta,
        crossover_probability: config.optimizer.crossover_probability,
        mutation_eta: config.optimizer.mutation_eta,
        mutation_probability: config.optimizer.mutation_probability,
        seed: config.seed,
        hypervolume_reference: config.optimizer.hypervolume_reference.clone(),
    };
    let front = nsga2(|x| context.evaluate(x), &bounds, &nsga)
        .map_err(|e| anyhow!("optimization: {e}"))?;

    let joint_count = rig.joint_count();
    let mut front_csv = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..joint_count).map(|i| format!("theta_{i}")).collect();
    header.extend(
        [
            "nozzle_k",
            "gradient_k_per_mm",
            "feed_mm_per_s",
            "thickness_mm",
            "total_energy_kj",
            "morph_energy",
            "geometric_error_mm",
            "violation",
            "rank",
            "crowding",
        ]
        .map(String::from),
    );
    front_csv.write_record(&header)?;
    for member in &front.population {
        let mut record: Vec<String> = member.x.iter().map(|v| format!("{v}")).collect();
        record.extend(member.objectives.iter().map(|v| format!("{v}")));
        record.push(format!("{}", member.violation));
        record.push(member.rank.to_string());
        record.push(format!("{}", member.crowding));
        front_csv.write_record(&record)?;
    }
    std::fs::write(
        ws.out.join("front.csv"),
        front_csv.into_inner().map_err(|e| anyhow!("{e}"))?,
    )?;
    ws.manifest.record_output(ws.out, "front.csv")?;

    let mut generations_csv = csv::Writer::from_writer(Vec::new());
    generations_csv.write_record([
        "generation",
        "best_total_energy_kj",
        "best_morph_energy",
        "best_geometric_error_mm",
        "feasible_count",
        "hypervolume",
    ])?;
    for stats in &front.history {
        generations_csv.write_record([
            stats.generation.to_string(),
            format!("{}", stats.best[0]),
            format!("{}", stats.best[1]),
            format!("{}", stats.best[2]),
            stats.feasible_count.to_string(),
            stats
                .hypervolume
                .map(|h| format!("{h}"))
                .unwrap_or_default(),
        ])?;
    }
    std::fs::write(
        ws.out.join("generations.csv"),
        generations_csv.into_inner().map_err(|e| anyhow!("{e}"))?,
    )?;
    ws.manifest.record_output(ws.out, "generations.csv")?;

    let mut members = Vec::new();
    for individual in front.first_front() {
        let detail = context
            .detail(&individual.x)
            .map_err(|e| anyhow!("re-scoring a front member: {e}"))?;
        members.push(FrontMemberJson {
            joint_angles: individual.x[..joint_count].to_vec(),
            nozzle_k: individual.x[joint_count],
            gradient_k_per_mm: individual.x[joint_count + 1],
            feed_mm_per_s: individual.x[joint_count + 2],
            thickness_mm: individual.x[joint_count + 3],
            objectives: individual.objectives.clone(),
            violation: individual.violation,
            detail,
        });
    }
    let json = OptimizeJson {
        population: config.optimizer.population,
        generations: config.optimizer.generations,
        evaluations: front.evaluations,
        cache_hits: front.cache_hits,
        energy_model: if network.is_some() {
            "network".to_string()
        } else {
            "analytic".to_string()
        },
        front_size: members.len(),
        front: members,
    };
    write_json(ws.manifest, ws.out, "optimize.json", &json)?;
    ws.manifest.record_timing("optimize", started);
    println!(
        "optimize: {} evaluations ({} cached), {} non-dominated candidates",
        front.evaluations, front.cache_hits, json.front_size
    );
    Ok(front)
}

// ---------------------------------------------------------------------------
// pipeline

/// Runs every stage in order on one mesh and rig, reusing in-memory results:
/// generate or load, measure, cover with ellipsoids, morph the last schedule,
/// slice and hatch the posed mesh, score its analytic energy, train the
/// per-layer predictor, score the posed layers with it, then search process
/// parameters (with the trained network when configured).
pub fn stage_pipeline(ws: &mut Workspace, power_log: Option<&Path>) -> anyhow::Result<()> {
    let (mesh, rig, source) = match &ws.config.mesh {
        Some(_) => {
            let (mesh, rig, source) = acquire(ws.config, ws.manifest)?;
            (mesh, require_rig(rig)?, source)
        }
        None => {
            let (mesh, rig) = stage_gen_hand(ws)?;
            (mesh, rig, MeshSource::Synthetic)
        }
    };

    stage_measure(ws, &mesh, &source)?;
    let space = stage_fgs(ws, &mesh, &source)?;
    let last_schedule = ws.config.schedules.len() - 1;
    let (posed, _) = stage_morph(ws, &mesh, &rig, &space, last_schedule)?;
    let posed_source = MeshSource::File(PathBuf::from("morphed.obj"));
    let thickness = ws.config.slicer.thickness;
    let (slicing, toolpaths) = stage_slice(ws, &posed, &posed_source, thickness)?;
    stage_energy(ws, &posed, &posed_source, &slicing, &toolpaths, power_log)?;
    let net = stage_train(ws, &mesh, &rig, &space, power_log)?;
    stage_predict(ws, &posed, &posed_source, &net)?;
    let network = ws.config.optimizer.use_network.then_some(&net);
    stage_optimize(ws, &mesh, &rig, &space, network)?;
    Ok(())
}
