//! End-to-end tests that drive the compiled `gazeclip` binary: generate a
//! small on-disk dataset, then walk the full workflow (assign-prompts →
//! train → evaluate → predict → report) and probe the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gazeclip::checkpoint::save_weights;
use gazeclip_core::manifest::parse_manifest;
use gazeclip_core::train::ExperimentConfig;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gazeclip")
}

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

/// Run the binary with a scrubbed environment (no ambient weight archive).
fn run_in(dir: &Path, args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).current_dir(dir).env_remove("GAZECLIP_WEIGHTS");
    for (key, value) in env {
        cmd.env(key, value);
    }
    let out = cmd.output().expect("binary should spawn");
    Output {
        code: out.status.code().expect("no exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn run(dir: &Path, args: &[&str]) -> Output {
    run_in(dir, args, &[])
}

fn assert_ok(out: &Output) {
    assert_eq!(out.code, 0, "stdout:\n{}\nstderr:\n{}", out.stdout, out.stderr);
}

/// Deterministic little PNG whose pixels vary with subject and index.
fn write_png(path: &Path, w: u32, h: u32, subject: u32, index: u32) {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let mix = |k: u32| -> u8 {
            (x.wrapping_mul(7) ^ y.wrapping_mul(13) ^ subject.wrapping_mul(31) ^ index.wrapping_mul(17) ^ k.wrapping_mul(97))
                as u8
        };
        image::Rgb([mix(0), mix(1), mix(2)])
    });
    img.save(path).expect("png written");
}

/// Write `subjects × per_subject` images plus a radians manifest with no
/// direction column; returns the manifest path.
fn make_dataset(dir: &Path, subjects: u32, per_subject: u32) -> PathBuf {
    let angles = [
        (0.05, 0.02),
        (-0.40, 0.10),
        (0.10, -0.75),
        (0.08, 0.70),
        (-0.20, -0.30),
        (0.30, 0.45),
    ];
    let mut text = String::from("# units: radians\nimage_ref,subject_id,pitch,yaw\n");
    for s in 0..subjects {
        let sub_dir = dir.join(format!("s{s:02}"));
        fs::create_dir_all(&sub_dir).unwrap();
        for j in 0..per_subject {
            // One non-square source to exercise resizing in the pipeline.
            let (w, h) = if s == 0 && j == 0 { (48, 24) } else { (32, 32) };
            write_png(&sub_dir.join(format!("{j}.png")), w, h, s, j);
            let (pitch, yaw) = angles[((s * per_subject + j) as usize) % angles.len()];
            text.push_str(&format!("s{s:02}/{j}.png,s{s:02},{pitch},{yaw}\n"));
        }
    }
    let path = dir.join("faces.csv");
    fs::write(&path, text).unwrap();
    path
}

/// A cheap config: additive fusion, two epochs, one milestone. Overrides
/// replace the matching default keys.
fn write_config(dir: &Path, name: &str, overrides: &[(&str, &str)]) -> PathBuf {
    let mut keys = vec![
        ("manifest", "faces.csv"),
        ("fusion_mode", "sum"),
        ("protocol", "kfold3"),
        ("batch_size", "8"),
        ("epochs", "2"),
        ("initial_lr", "0.001"),
        ("lr_milestones", "1"),
        ("lr_gamma", "0.1"),
        ("seed", "7"),
    ];
    for (key, value) in overrides {
        match keys.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => keys.push((key, value)),
        }
    }
    let text: String = keys.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn line_containing<'a>(hay: &'a str, needle: &str) -> &'a str {
    hay.lines()
        .find(|l| l.contains(needle))
        .unwrap_or_else(|| panic!("no line containing {needle:?} in:\n{hay}"))
}

#[test]
fn full_pipeline_assign_train_evaluate_predict_report() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let manifest = make_dataset(dir, 4, 3);
    let config = write_config(dir, "exp.conf", &[]);

    // assign-prompts to a copy: gains a direction column covering all rows.
    let assigned = run(dir, &["assign-prompts", "--manifest", "faces.csv", "--out", "assigned.csv"]);
    assert_ok(&assigned);
    let rows = parse_manifest(&fs::read_to_string(dir.join("assigned.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.direction.is_some()));
    let histogram_total: usize = ["front:", "down:", "left:", "right:"]
        .iter()
        .map(|class| {
            line_containing(&assigned.stdout, class)
                .split(':')
                .nth(1)
                .unwrap()
                .trim()
                .parse::<usize>()
                .unwrap()
        })
        .sum();
    assert_eq!(histogram_total, 12);

    // train fold 0 into an explicit run directory.
    let train = run(dir, &["train", "--config", "exp.conf", "--fold", "0", "--out", "runs/run0"]);
    assert_ok(&train);
    for artifact in ["checkpoint.gzcp", "best.gzcp", "metrics.json", "losses.csv"] {
        assert!(dir.join("runs/run0").join(artifact).exists(), "missing {artifact}");
    }
    let trained_mean = line_containing(&train.stdout, "fold mean:").to_string();

    // evaluate the checkpoint on the same fold: identical metrics line.
    let eval = run(
        dir,
        &[
            "evaluate",
            "--checkpoint",
            "runs/run0/checkpoint.gzcp",
            "--manifest",
            "faces.csv",
            "--fold",
            "0",
            "--out",
            "runs/eval0",
        ],
    );
    assert_ok(&eval);
    assert_eq!(line_containing(&eval.stdout, "fold mean:"), trained_mean);
    assert!(dir.join("runs/eval0/metrics.json").exists());

    // predict one image with an overlay and ground truth.
    let predict = run(
        dir,
        &[
            "predict",
            "--checkpoint",
            "runs/run0/checkpoint.gzcp",
            "--image",
            "s01/0.png",
            "--overlay",
            "overlay.png",
            "--truth-pitch",
            "0.1",
            "--truth-yaw",
            "-0.2",
        ],
    );
    assert_ok(&predict);
    assert!(predict.stdout.contains("direction:"));
    assert!(predict.stdout.contains("pitch:"));
    assert!(predict.stdout.contains("yaw:"));
    let overlay = image::open(dir.join("overlay.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (32, 32), "overlay keeps source resolution");

    // report sees both records (train + evaluate) under runs/.
    let report = run(dir, &["report", "--runs", "runs"]);
    assert_ok(&report);
    assert!(report.stdout.contains("found 2 run record(s)"), "{}", report.stdout);
    assert!(report.stdout.contains("overall (sample-weighted):"), "{}", report.stdout);
    assert!(report.stdout.contains("2 fold(s)"), "{}", report.stdout);

    // config file from the manifest's directory resolves relative paths,
    // so the whole flow also works from a different working directory.
    let elsewhere = TempDir::new().unwrap();
    let out = run(
        elsewhere.path(),
        &[
            "ablate",
            "--suite",
            "fusion_modes",
            "--config",
            config.to_str().unwrap(),
            "--fold",
            "1",
        ],
    );
    // Only checks path resolution here; table content is covered below.
    assert_ok(&out);
    let _ = manifest;
}

#[test]
fn training_runs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    make_dataset(dir, 4, 3);
    write_config(dir, "exp.conf", &[]);

    for out in ["runs/a", "runs/b"] {
        assert_ok(&run(dir, &["train", "--config", "exp.conf", "--fold", "0", "--out", out]));
    }
    let a = fs::read(dir.join("runs/a/checkpoint.gzcp")).unwrap();
    let b = fs::read(dir.join("runs/b/checkpoint.gzcp")).unwrap();
    assert_eq!(a, b, "same config and fold must produce identical checkpoints");

    // metrics differ only in wall-clock time.
    let parse = |p: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(dir.join(p)).unwrap()).unwrap()
    };
    let (mut ma, mut mb) = (parse("runs/a/metrics.json"), parse("runs/b/metrics.json"));
    ma["metrics"]["wall_clock_secs"] = 0.into();
    mb["metrics"]["wall_clock_secs"] = 0.into();
    assert_eq!(ma, mb);
}

#[test]
fn weight_archives_seed_training_through_the_environment() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    make_dataset(dir, 4, 3);
    write_config(dir, "exp.conf", &[]);

    // An archive from a different seed stands in for pretrained towers.
    let donor = ExperimentConfig {
        fusion_mode: "sum".parse().unwrap(),
        seed: 99,
        manifest: "faces.csv".into(),
        ..Default::default()
    };
    let archive = dir.join("pretrained.gzwt");
    save_weights(&archive, &donor.build_model()).unwrap();

    let plain = run(dir, &["train", "--config", "exp.conf", "--fold", "0", "--out", "runs/plain"]);
    assert_ok(&plain);
    let seeded = run_in(
        dir,
        &["train", "--config", "exp.conf", "--fold", "0", "--out", "runs/seeded"],
        &[("GAZECLIP_WEIGHTS", &archive)],
    );
    assert_ok(&seeded);
    assert!(seeded.stdout.contains("loaded weights from"), "{}", seeded.stdout);
    assert!(!plain.stdout.contains("loaded weights from"));
    let plain_ckpt = fs::read(dir.join("runs/plain/checkpoint.gzcp")).unwrap();
    let seeded_ckpt = fs::read(dir.join("runs/seeded/checkpoint.gzcp")).unwrap();
    assert_ne!(plain_ckpt, seeded_ckpt, "external weights must change the run");

    // A dangling archive path is an I/O failure.
    let broken = run_in(
        dir,
        &["train", "--config", "exp.conf", "--fold", "0", "--out", "runs/broken"],
        &[("GAZECLIP_WEIGHTS", Path::new("no-such.gzwt"))],
    );
    assert_eq!(broken.code, 2, "{}", broken.stderr);
}

#[test]
fn ablate_prints_a_fusion_table() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    make_dataset(dir, 4, 3);
    write_config(dir, "exp.conf", &[("epochs", "1"), ("token_layout", "single_token")]);

    let out = run(dir, &["ablate", "--suite", "fusion_modes", "--config", "exp.conf", "--out", "tables"]);
    assert_ok(&out);
    assert!(out.stdout.contains("suite: fusion_modes"), "{}", out.stdout);
    for label in ["cross-attention", "concatenation", "element-wise sum"] {
        assert!(out.stdout.contains(label), "missing {label} in:\n{}", out.stdout);
    }
    // One error per row plus a signed delta on the two non-reference rows.
    assert_eq!(out.stdout.matches('\u{b0}').count(), 5, "{}", out.stdout);
    assert!(dir.join("tables/fusion_modes.txt").exists());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("tables/fusion_modes.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn contract_violations_exit_one() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    make_dataset(dir, 3, 2);
    write_config(dir, "exp.conf", &[]);

    // Unknown config key, reported with its line number.
    fs::write(dir.join("bad.conf"), "manifest = faces.csv\nbogus_key = 3\n").unwrap();
    let bad_key = run(dir, &["train", "--config", "bad.conf", "--fold", "0"]);
    assert_eq!(bad_key.code, 1, "{}", bad_key.stderr);
    assert!(bad_key.stderr.contains("bogus_key"), "{}", bad_key.stderr);
    assert!(bad_key.stderr.contains("line 2"), "{}", bad_key.stderr);

    // Fold index past the plan.
    let oob = run(dir, &["train", "--config", "exp.conf", "--fold", "40"]);
    assert_eq!(oob.code, 1);
    assert!(oob.stderr.contains("out of range"), "{}", oob.stderr);

    // Half a ground-truth pair is a usage error.
    let half_truth = run(
        dir,
        &["predict", "--checkpoint", "x.gzcp", "--image", "y.png", "--truth-pitch", "0.1"],
    );
    assert_eq!(half_truth.code, 1, "{}", half_truth.stderr);

    // Garbage bytes where a checkpoint should be.
    fs::write(dir.join("junk.gzcp"), b"not a checkpoint at all").unwrap();
    let junk = run(dir, &["evaluate", "--checkpoint", "junk.gzcp", "--manifest", "faces.csv", "--fold", "0"]);
    assert_eq!(junk.code, 1);
    assert!(junk.stderr.contains("not a valid"), "{}", junk.stderr);
}

#[test]
fn io_failures_exit_two() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "exp.conf", &[]);

    // Config exists but its manifest does not.
    let no_manifest = run(dir, &["train", "--config", "exp.conf", "--fold", "0"]);
    assert_eq!(no_manifest.code, 2, "{}", no_manifest.stderr);
    assert!(no_manifest.stderr.contains("faces.csv"), "{}", no_manifest.stderr);

    // Manifest row pointing at a missing image.
    fs::write(
        dir.join("faces.csv"),
        "# units: radians\nimage_ref,subject_id,pitch,yaw\ngone.png,s00,0.0,0.0\n",
    )
    .unwrap();
    let no_image = run(dir, &["train", "--config", "exp.conf", "--fold", "0"]);
    assert_eq!(no_image.code, 2, "{}", no_image.stderr);
    assert!(no_image.stderr.contains("gone.png"), "{}", no_image.stderr);

    // Checkpoint file that was never written.
    let no_ckpt = run(dir, &["predict", "--checkpoint", "gone.gzcp", "--image", "x.png"]);
    assert_eq!(no_ckpt.code, 2, "{}", no_ckpt.stderr);
}

#[test]
fn assign_prompts_rewrites_in_place() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    make_dataset(dir, 3, 2);

    let before = fs::read_to_string(dir.join("faces.csv")).unwrap();
    assert!(!before.contains("direction"));
    assert_ok(&run(dir, &["assign-prompts", "--manifest", "faces.csv"]));
    let after = fs::read_to_string(dir.join("faces.csv")).unwrap();
    assert!(after.contains("direction"));
    let rows = parse_manifest(&after).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.direction.is_some()));

    // A second pass keeps the cached assignments (idempotent).
    assert_ok(&run(dir, &["assign-prompts", "--manifest", "faces.csv"]));
    assert_eq!(fs::read_to_string(dir.join("faces.csv")).unwrap(), after);
}
