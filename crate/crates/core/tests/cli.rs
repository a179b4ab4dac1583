use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use hgs_core::io::ply::{encode_points, read_points};
use hgs_core::io::{export_3dgs, load_scene, property_names, save_scene};

fn hgs() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hgs"));
    c.env_remove("HGS_THREADS");
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().expect("hgs runs");
    (
        status.code().expect("exit code"),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Mean PSNR from the `mean` row of the given label in an eval CSV.
fn mean_psnr(csv: &str, label: &str) -> f64 {
    csv.lines()
        .find(|l| l.starts_with(&format!("{label},mean,")))
        .and_then(|l| l.split(',').nth(2))
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no mean row for {label} in\n{csv}"))
}

#[test]
fn help_and_usage_errors() {
    let (code, out, _) = run(hgs().args(["train", "--help"]));
    assert_eq!(code, 0);
    for flag in ["--iters", "--lambda-ssim", "--lr-normal", "--mode", "--seed", "--out", "--manifest"] {
        assert!(out.contains(flag), "{flag} missing from help");
    }
    for sub in ["render", "eval", "verify", "fixture"] {
        assert_eq!(run(hgs().args([sub, "--help"])).0, 0);
    }
    assert_eq!(run(hgs().args(["train", "--no-such-flag"])).0, 2);
    assert_eq!(run(hgs().arg("frobnicate")).0, 2);
    assert_eq!(run(hgs().args(["verify", "--trials", "0"])).0, 2);
    let (code, _, err) = run(hgs().args(["verify", "--trials", "5"]).env("HGS_THREADS", "lots"));
    assert_eq!(code, 2);
    assert!(err.contains("HGS_THREADS"));
}

#[test]
fn verify_passes_and_canary_fails() {
    let (code, out, _) = run(hgs().args(["verify", "--trials", "200", "--gradient-scenes", "2"]));
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}");
    let (code, out, _) = run(hgs().args(["verify", "--trials", "50", "--gradient-scenes", "0", "--canary-flip-erf"]));
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("FAIL  closed form"));
}

#[test]
fn missing_inputs_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/cameras.json");
    let (code, _, err) = run(hgs()
        .arg("train")
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(code, 2);
    assert!(err.contains(&missing.display().to_string()), "{err}");

    let scene = dir.path().join("missing.ply");
    let (code, _, err) = run(hgs().arg("render").arg(&scene).args(["--orbit", "0,0,0,3,2", "--out"]).arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("missing.ply"), "{err}");
}

#[test]
fn render_rejects_empty_scene_and_zero_frames() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.ply");
    std::fs::write(&empty, encode_points(&property_names(0, true), &[], &[])).unwrap();
    let (code, _, err) = run(hgs().arg("render").arg(&empty).args(["--orbit", "0,0,0,3,2", "--out"]).arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("no primitives"), "{err}");

    let golden = fixtures().join("golden/scene.ply");
    let (code, _, err) = run(hgs().arg("render").arg(&golden).args(["--orbit", "0,0,0,3,0", "--out"]).arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn golden_render_hash() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(hgs()
        .arg("render")
        .arg(fixtures().join("golden/scene.ply"))
        .arg("--cameras")
        .arg(fixtures().join("edge"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 0, "{err}");
    let bytes = std::fs::read(dir.path().join("test_0.png")).unwrap();
    let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    let want = std::fs::read_to_string(fixtures().join("golden/test_0.png.sha256")).unwrap();
    assert_eq!(hash, want.trim());
}

#[test]
fn render_writes_depth_and_normal_maps() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(hgs()
        .arg("render")
        .arg(fixtures().join("golden/scene.ply"))
        .args(["--orbit", "0,0,0,3.5,3", "--size", "32", "--depth", "--normal-map", "--out"])
        .arg(dir.path()));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("3 frame(s)"));
    for i in 0..3 {
        for suffix in ["", "_depth", "_normal"] {
            assert!(dir.path().join(format!("frame_{i:04}{suffix}.png")).is_file());
        }
    }
}

#[test]
fn train_reaches_target_and_compare_favors_half_gaussians() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, _, err) = run(hgs()
        .arg("train")
        .arg(fixtures().join("edge"))
        .args(["--iters", "2000", "--sh-degree", "1", "--log-every", "0", "--out"])
        .arg(&out));
    assert_eq!(code, 0, "{err}");
    for f in ["scene.ply", "metrics.csv", "manifest.json", "checkpoints"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 2001);

    let csv = dir.path().join("train.csv");
    let (code, _, err) = run(hgs()
        .arg("eval")
        .arg(out.join("scene.ply"))
        .arg("--data")
        .arg(fixtures().join("edge"))
        .args(["--train-split", "--compare", "--out"])
        .arg(&csv));
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(csv).unwrap();
    let half = mean_psnr(&csv, "half-gaussian");
    let collapsed = mean_psnr(&csv, "equal-opacity");
    assert!(half >= 30.0, "train PSNR {half}");
    assert!(collapsed <= half, "{collapsed} > {half}");
}

#[test]
fn manifest_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(hgs().args(["fixture", "corner", "--size", "24", "--points", "150", "--out"]).arg(&data)).0, 0);
    let first = dir.path().join("a");
    let (code, _, err) = run(hgs()
        .arg("train")
        .arg(&data)
        .args(["--iters", "250", "--sh-degree", "1", "--seed", "4", "--checkpoint-every", "100", "--out"])
        .arg(&first));
    assert_eq!(code, 0, "{err}");
    assert!(first.join("checkpoints/iter_000200.ply").is_file());
    let second = dir.path().join("b");
    let (code, _, err) = run(hgs().arg("train").arg("--manifest").arg(first.join("manifest.json")).arg("--out").arg(&second));
    assert_eq!(code, 0, "{err}");
    let a = std::fs::read(first.join("scene.ply")).unwrap();
    let b = std::fs::read(second.join("scene.ply")).unwrap();
    assert!(a == b, "replayed scene differs");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(second.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 4);
    assert!(manifest["finished_unix_ms"].as_u64().unwrap() >= manifest["started_unix_ms"].as_u64().unwrap());
}

#[test]
fn selective_finetune_touches_only_normals_and_opacities() {
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("gaussians.ply");
    export_3dgs(&load_scene(&fixtures().join("golden/scene.ply")).unwrap(), &source).unwrap();
    let out = dir.path().join("ft");
    let (code, _, err) = run(hgs()
        .arg("train")
        .arg(fixtures().join("edge"))
        .arg("--init")
        .arg(&source)
        .args(["--mode", "finetune-selective", "--iters", "60", "--out"])
        .arg(&out));
    assert_eq!(code, 0, "{err}");
    let before = read_points(&source).unwrap();
    let after = read_points(&out.join("scene.ply")).unwrap();
    assert_eq!(before.rows.len(), after.rows.len());
    let changed = ["nx", "ny", "nz", "opacity", "opacity_2"];
    let mut differs = std::collections::BTreeSet::new();
    for (name, _) in &after.header.properties {
        let j = after.header.index_of(name).unwrap();
        let Some(i) = before.header.index_of(name) else {
            assert_eq!(name, "opacity_2");
            continue;
        };
        if before.rows.iter().zip(&after.rows).any(|(b, a)| b[i].to_bits() != a[j].to_bits()) {
            differs.insert(name.clone());
        }
    }
    assert!(differs.iter().all(|n| changed.contains(&n.as_str())), "{differs:?}");
    assert!(differs.contains("opacity") && differs.contains("nx"), "{differs:?}");
}

#[test]
fn eval_means_and_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    // equal opacities: the collapsed variant is the same scene
    let mut scene = load_scene(&fixtures().join("golden/scene.ply")).unwrap();
    for p in &mut scene.primitives {
        p.raw_opacity_b = p.raw_opacity_a;
    }
    let path = dir.path().join("equal.ply");
    save_scene(&scene, &path).unwrap();
    let csv_path = dir.path().join("eval.csv");
    let (code, out, err) = run(hgs()
        .arg("eval")
        .arg(&path)
        .arg("--data")
        .arg(fixtures().join("edge"))
        .args(["--train-split", "--compare", "--out"])
        .arg(&csv_path));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("delta PSNR (half - equal-opacity): +0.000 dB"), "{out}");

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("half-gaussian,"))
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let per_image: Vec<f64> = rows[..3].iter().map(|r| r[2].parse().unwrap()).collect();
    let mean: f64 = rows[3][2].parse().unwrap();
    assert!((per_image.iter().sum::<f64>() / 3.0 - mean).abs() < 1e-3);
    let ssim: Vec<f64> = rows[..3].iter().map(|r| r[3].parse().unwrap()).collect();
    let ssim_mean: f64 = rows[3][3].parse().unwrap();
    assert!((ssim.iter().sum::<f64>() / 3.0 - ssim_mean).abs() < 2e-6);
}

#[test]
fn threads_override_gives_identical_renders() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let (code, _, err) = run(hgs()
            .env("HGS_THREADS", threads)
            .arg("render")
            .arg(fixtures().join("golden/scene.ply"))
            .args(["--orbit", "0,0,0,3.5,1", "--size", "48", "--out"])
            .arg(&out));
        assert_eq!(code, 0, "{err}");
        outputs.push(std::fs::read(out.join("frame_0000.png")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
