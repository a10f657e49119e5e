//! End-to-end checks of the command-line surface: artifact layout, stdout
//! contracts, config plumbing and error reporting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graspmorph_core::hand::GraspRig;
use graspmorph_core::mesh::{load_mesh, save_mesh, MeshFormat};
use graspmorph_core::mesh::primitives::unit_cube;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graspmorph"))
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn run_ok(args: &[&str], extra: &[(&str, &str)]) -> Output {
    let mut command = binary();
    command.args(args);
    for (key, value) in extra {
        command.env(key, value);
    }
    let output = command.output().expect("binary starts");
    assert!(
        output.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn write_cube(dir: &Path) -> PathBuf {
    let path = dir.join("cube.stl");
    save_mesh(&unit_cube(), &path, MeshFormat::StlBinary).unwrap();
    path
}

#[test]
fn measure_reports_unit_cube_metrology() {
    let dir = tempfile::tempdir().unwrap();
    let cube = write_cube(dir.path());
    let out = dir.path().join("run");
    let output = run_ok(
        &["measure", cube.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );

    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!((report["surface_area"].as_f64().unwrap() - 6.0).abs() < 1e-9);
    assert!((report["volume"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(report["closed_manifold"], serde_json::json!(true));
    assert_eq!(report["face_count"], serde_json::json!(12));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], serde_json::json!("measure"));
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "measure.json"
        && o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn slice_quarter_thickness_cube_yields_four_layers_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cube = write_cube(dir.path());
    let out = dir.path().join("run");
    run_ok(
        &[
            "slice",
            cube.to_str().unwrap(),
            "--thickness",
            "0.25",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );

    let layers = std::fs::read_to_string(out.join("layers.csv")).unwrap();
    assert_eq!(layers.lines().count(), 5, "header plus four layers");

    for i in 0..4 {
        let mask = std::fs::read(out.join(format!("masks/layer_{i:03}.pgm"))).unwrap();
        let header = b"P5\n32 32\n255\n";
        assert!(mask.starts_with(header), "bad PGM header in mask {i}");
        assert_eq!(mask.len(), header.len() + 32 * 32);
        // A solid unit cube fills the whole frame.
        assert!(mask[header.len()..].iter().all(|&b| b == 255));
    }
    assert!(!out.join("masks/layer_004.pgm").exists());

    let slice_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("slice.json")).unwrap()).unwrap();
    assert_eq!(slice_report["layer_count"], serde_json::json!(4));
    assert!(slice_report["volume_relative_error"].as_f64().unwrap() < 1e-9);
}

#[test]
fn gen_hand_round_trips_through_the_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_ok(&["gen-hand", "--out", out.to_str().unwrap()], &[]);

    let mesh = load_mesh(out.join("hand.obj")).unwrap();
    let rig: GraspRig =
        serde_json::from_str(&std::fs::read_to_string(out.join("rig.json")).unwrap()).unwrap();
    assert_eq!(rig.joint_count(), 15);
    // OBJ stores full-precision coordinates, so the reloaded mesh still
    // matches the rig's rest fingertips exactly.
    rig.validate(&mesh, 1e-9).unwrap();
    assert!(out.join("hand.stl").exists());
}

#[test]
fn morphing_the_rest_schedule_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_ok(
        &["morph", "--schedule", "0", "--out", out.to_str().unwrap()],
        &[],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("morph.json")).unwrap()).unwrap();
    assert!(report["deformation_energy"].as_f64().unwrap() <= 1e-9);
    assert!(report["max_displacement_mm"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn train_predict_optimize_chain_reuses_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let log = assets().join("power_log.example.csv");
    let train_out = dir.path().join("train");
    run_ok(
        &[
            "train",
            "--power-log",
            log.to_str().unwrap(),
            "--out",
            train_out.to_str().unwrap(),
        ],
        &[],
    );
    let train_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(train_out.join("train.json")).unwrap())
            .unwrap();
    assert!(train_report["measured_rows"].as_u64().unwrap() > 0);
    assert!(train_report["diverged_at"].is_null());
    let final_loss = train_report["final_loss_standardized"].as_f64().unwrap();
    let initial_loss = train_report["initial_loss_standardized"].as_f64().unwrap();
    assert!(final_loss < initial_loss, "training did not reduce the loss");

    let checkpoint = train_out.join("checkpoint.json");
    let predict_out = dir.path().join("predict");
    run_ok(
        &[
            "predict",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--out",
            predict_out.to_str().unwrap(),
        ],
        &[],
    );
    let predictions = std::fs::read_to_string(predict_out.join("predictions.csv")).unwrap();
    assert!(predictions.lines().count() > 1);

    let optimize_out = dir.path().join("optimize");
    run_ok(
        &[
            "optimize",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--out",
            optimize_out.to_str().unwrap(),
        ],
        &[],
    );
    let optimize_report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(optimize_out.join("optimize.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(optimize_report["energy_model"], serde_json::json!("network"));
    assert!(optimize_report["front_size"].as_u64().unwrap() > 0);
}

#[test]
fn invalid_config_lists_every_violation_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        r#"{"slicer": {"thickness": -2.0, "pattern": "bogus"}}"#,
    )
    .unwrap();
    let output = binary()
        .args(["measure", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let report: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    let message = report["error"].as_str().unwrap();
    assert!(message.contains("slicer.thickness"));
    assert!(message.contains("slicer.pattern"));
}

#[test]
fn environment_variable_supplies_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"seed": 7}"#).unwrap();
    let out = dir.path().join("run");
    run_ok(
        &["measure", "--out", out.to_str().unwrap()],
        &[("GRASPMORPH_CONFIG", config.to_str().unwrap())],
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], serde_json::json!(7));
    assert!(manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|i| i.as_str().unwrap().ends_with("config.json")));
}

#[test]
fn config_subcommand_prints_the_shipped_example() {
    let output = run_ok(&["config"], &[]);
    let shipped = std::fs::read(assets().join("config.example.json")).unwrap();
    assert_eq!(
        output.stdout, shipped,
        "assets/config.example.json is stale; regenerate it with `graspmorph config`"
    );
}

#[test]
fn seed_flag_feeds_the_manifest_and_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cube = write_cube(dir.path());
    let hash_of = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        run_ok(
            &[
                "measure",
                cube.to_str().unwrap(),
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        manifest["config_hash"].as_str().unwrap().to_string()
    };
    let first = hash_of("1", "a");
    let second = hash_of("2", "b");
    let repeat = hash_of("1", "c");
    assert_ne!(first, second);
    assert_eq!(first, repeat);
}
