//! Command-line front end: morph a mesh inside its grasp space, slice and
//! featurize it, model printing energy, and search process parameters.
//! Every command writes its artifacts plus a manifest with content hashes
//! into the run directory; reruns with the same config are byte-identical
//! except for the manifest timings.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;

use anyhow::{anyhow, bail};
use clap::{Parser, Subcommand};

use graspmorph_core::ellipsoid::build_grasp_space;

use config::{RunConfig, CONFIG_ENV_VAR};
use manifest::Manifest;
use stages::Workspace;

#[derive(Parser)]
#[command(
    name = "graspmorph",
    version,
    about = "Grasp-space mesh morphing and 3D-print energy modelling",
    after_help = "Configuration comes from --config, the GRASPMORPH_CONFIG \
                  environment variable, or built-in defaults (the generated \
                  hand). Flags override the file; the manifest records the \
                  hash of the effective settings."
)]
struct Cli {
    /// JSON config file; defaults cover the generated hand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the articulated example hand: mesh (OBJ and STL) plus rig.
    GenHand,
    /// Validate a mesh and report area, volume, centroid and bounds.
    Measure {
        /// Mesh file (.stl or .obj); overrides the config.
        mesh: Option<PathBuf>,
    },
    /// Cover a mesh with oblique ellipsoids (the flexible grasping space).
    Fgs {
        /// Mesh file (.stl or .obj); overrides the config.
        mesh: Option<PathBuf>,
    },
    /// Morph the mesh toward the fingertip targets of one joint schedule.
    Morph {
        /// Index into the config schedules; defaults to the last one.
        #[arg(long)]
        schedule: Option<usize>,
    },
    /// Slice a mesh into layers, cross-section masks and hatch toolpaths.
    Slice {
        /// Mesh file (.stl or .obj); overrides the config.
        mesh: Option<PathBuf>,
        /// Layer thickness in mm; overrides the config.
        #[arg(long)]
        thickness: Option<f64>,
    },
    /// Score the analytic printing energy and thermal deviation of a mesh.
    Energy {
        /// Mesh file (.stl or .obj); overrides the config.
        mesh: Option<PathBuf>,
        /// Measured power log CSV (time_s,power_w rows) to integrate.
        #[arg(long)]
        power_log: Option<PathBuf>,
    },
    /// Train the per-layer energy network on morph-augmented slices.
    Train {
        /// Power log CSV; replaces the first schedule's pseudo labels.
        #[arg(long)]
        power_log: Option<PathBuf>,
    },
    /// Score a mesh's layers with a trained network checkpoint.
    Predict {
        /// Mesh file (.stl or .obj); overrides the config.
        mesh: Option<PathBuf>,
        /// Network checkpoint JSON written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Search joint angles and process parameters with NSGA-II.
    Optimize {
        /// Network checkpoint for the energy objective; the analytic model
        /// otherwise (or `checkpoint.json` in the run directory when the
        /// config asks for the network).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every stage in order, reusing results in memory.
    Pipeline,
    /// Print the effective configuration (defaults merged with overrides).
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenHand => "gen-hand",
            Command::Measure { .. } => "measure",
            Command::Fgs { .. } => "fgs",
            Command::Morph { .. } => "morph",
            Command::Slice { .. } => "slice",
            Command::Energy { .. } => "energy",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Optimize { .. } => "optimize",
            Command::Pipeline => "pipeline",
            Command::Config => "config",
        }
    }
}

fn main() {
    if let Err(error) = run(Cli::parse()) {
        let causes: Vec<String> = error.chain().skip(1).map(|c| c.to_string()).collect();
        let report = serde_json::json!({
            "error": error.to_string(),
            "causes": causes,
        });
        eprintln!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config_path = cli
        .config
        .or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from));
    let mut config = RunConfig::load(config_path.as_deref())?;

    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    // Positional and flag overrides join the effective config before it is
    // hashed, so the manifest hash tracks what actually ran.
    match &cli.command {
        Command::Measure { mesh: Some(m) }
        | Command::Fgs { mesh: Some(m) }
        | Command::Energy { mesh: Some(m), .. }
        | Command::Predict { mesh: Some(m), .. } => config.mesh = Some(m.clone()),
        Command::Slice { mesh, thickness } => {
            if let Some(m) = mesh {
                config.mesh = Some(m.clone());
            }
            if let Some(t) = thickness {
                config.slicer.thickness = *t;
            }
        }
        _ => {}
    }

    let violations = config.validate();
    if !violations.is_empty() {
        bail!(
            "configuration is invalid:\n- {}",
            violations.join("\n- ")
        );
    }

    if matches!(cli.command, Command::Config) {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }

    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| anyhow!("cannot create {}: {e}", config.out_dir.display()))?;
    let out_dir = config.out_dir.clone();
    let mut manifest = Manifest::new(cli.command.name(), config.hash(), config.seed);
    if let Some(path) = &config_path {
        manifest.record_input(path.display().to_string());
    }

    let mut ws = Workspace {
        config: &config,
        out: &out_dir,
        manifest: &mut manifest,
    };

    match &cli.command {
        Command::GenHand => {
            stages::stage_gen_hand(&mut ws)?;
        }
        Command::Measure { .. } => {
            let (mesh, _, source) = stages::acquire(ws.config, ws.manifest)?;
            stages::stage_measure(&mut ws, &mesh, &source)?;
        }
        Command::Fgs { .. } => {
            let (mesh, _, source) = stages::acquire(ws.config, ws.manifest)?;
            stages::stage_fgs(&mut ws, &mesh, &source)?;
        }
        Command::Morph { schedule } => {
            let (mesh, rig, _) = stages::acquire(ws.config, ws.manifest)?;
            let rig = stages::require_rig(rig)?;
            let space = build_space(&config, &mesh)?;
            let index = schedule.unwrap_or(config.schedules.len() - 1);
            stages::stage_morph(&mut ws, &mesh, &rig, &space, index)?;
        }
        Command::Slice { .. } => {
            let (mesh, _, source) = stages::acquire(ws.config, ws.manifest)?;
            stages::stage_slice(&mut ws, &mesh, &source, config.slicer.thickness)?;
        }
        Command::Energy { power_log, .. } => {
            let (mesh, _, source) = stages::acquire(ws.config, ws.manifest)?;
            let (slicing, toolpaths) =
                stages::slice_with_toolpath(&mesh, &config, config.slicer.thickness)?;
            stages::stage_energy(
                &mut ws,
                &mesh,
                &source,
                &slicing,
                &toolpaths,
                power_log.as_deref(),
            )?;
        }
        Command::Train { power_log } => {
            let (mesh, rig, _) = stages::acquire(ws.config, ws.manifest)?;
            let rig = stages::require_rig(rig)?;
            let space = build_space(&config, &mesh)?;
            stages::stage_train(&mut ws, &mesh, &rig, &space, power_log.as_deref())?;
        }
        Command::Predict { checkpoint, .. } => {
            let (mesh, _, source) = stages::acquire(ws.config, ws.manifest)?;
            let net = stages::load_checkpoint(checkpoint)?;
            ws.manifest.record_input(checkpoint.display().to_string());
            stages::stage_predict(&mut ws, &mesh, &source, &net)?;
        }
        Command::Optimize { checkpoint } => {
            let (mesh, rig, _) = stages::acquire(ws.config, ws.manifest)?;
            let rig = stages::require_rig(rig)?;
            let space = build_space(&config, &mesh)?;
            let run_checkpoint = out_dir.join("checkpoint.json");
            let explicit = checkpoint.clone().or_else(|| {
                (config.optimizer.use_network && run_checkpoint.is_file())
                    .then_some(run_checkpoint)
            });
            let net = match &explicit {
                Some(path) => {
                    let net = stages::load_checkpoint(path)?;
                    ws.manifest.record_input(path.display().to_string());
                    Some(net)
                }
                None => None,
            };
            stages::stage_optimize(&mut ws, &mesh, &rig, &space, net.as_ref())?;
        }
        Command::Pipeline => {
            stages::stage_pipeline(&mut ws, None)?;
        }
        Command::Config => unreachable!("handled before the run directory exists"),
    }

    manifest.write(&out_dir)?;
    Ok(())
}

/// Grasp space for commands that need it without reporting it.
fn build_space(
    config: &RunConfig,
    mesh: &graspmorph_core::mesh::Mesh,
) -> anyhow::Result<graspmorph_core::ellipsoid::GraspSpace> {
    let params = graspmorph_core::ellipsoid::GraspSpaceParams {
        max_ellipsoids: config.grasp_space.max_ellipsoids,
        envelope_eps: config.grasp_space.envelope_eps,
        max_refit_rounds: config.grasp_space.max_refit_rounds,
        mc_samples: config.grasp_space.mc_samples,
        seed: config.seed,
        ..Default::default()
    };
    build_grasp_space(mesh, &params).map_err(|e| anyhow!("building the grasp space: {e}"))
}
