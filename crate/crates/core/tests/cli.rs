mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use morphfield::io::read_point_cloud;
use morphfield::pipeline::Model;

fn morphfield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphfield"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = morphfield(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CLOUD: [&str; 4] = ["--leaf", "0.4", "--surface-samples", "4000"];
const CAMERA: [&str; 8] = ["--render-res", "96x72", "--res", "48x36", "--density", "6", "--views", "3"];

fn with<'a>(base: &[&'a str], groups: &[&[&'a str]]) -> Vec<&'a str> {
    let mut v = base.to_vec();
    for g in groups {
        v.extend_from_slice(g);
    }
    v
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    common::write_category(dir, &common::category(4));

    let out = ok(
        dir,
        &with(&["build-space", "--canonical", "canonical.ply", "--instances", "instances", "--latent", "3", "--out", "space.mfss"], &[&CLOUD]),
    );
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["instances"], 4);
    // same command and seed, same bytes
    ok(
        dir,
        &with(&["build-space", "--canonical", "canonical.ply", "--instances", "instances", "--latent", "3", "--out", "again.mfss"], &[&CLOUD]),
    );
    assert_eq!(fs::read(dir.join("space.mfss")).unwrap(), fs::read(dir.join("again.mfss")).unwrap());

    let out = ok(
        dir,
        &with(
            &["gen-dataset", "--space", "space.mfss", "--canonical", "canonical.ply", "--models", "instances", "--rhos", "0,0.5", "--out", "data"],
            &[&CLOUD, &CAMERA],
        ),
    );
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["samples"], 4 * 2 * 3);
    let manifest = fs::read_to_string(dir.join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 24);

    fs::write(dir.join("pose.json"), r#"{"rotation": [1, 0, 0, 0], "translation": [0, 0, 0]}"#).unwrap();
    let register = |observed: &str, out: &str, latent: &str| {
        ok(
            dir,
            &with(
                &[
                    "register", "--space", "space.mfss", "--canonical-mesh", "canonical.ply", "--observed", observed, "--pose", "pose.json", "--view", "1",
                    "--out", out, "--latent-out", latent,
                ],
                &[&CLOUD, &CAMERA],
            ),
        )
    };
    let out = register("held_out.ply", "recon_a.ply", "a.json");
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let error = report["error"].as_f64().unwrap();
    assert!(error < report["canonical_baseline_error"].as_f64().unwrap(), "{report}");
    assert!(report["visible_points"].as_u64().unwrap() > 0);
    let Model::Mesh(recon) = Model::load(&dir.join("recon_a.ply")).unwrap() else {
        panic!("reconstruction should be a mesh")
    };
    let Model::Mesh(canonical) = Model::load(&dir.join("canonical.ply")).unwrap() else {
        panic!()
    };
    assert_eq!(recon.vertices().len(), canonical.vertices().len());
    assert_eq!(recon.faces(), canonical.faces());
    register("instances/inst_0.ply", "recon_b.ply", "b.json");

    let out = ok(
        dir,
        &["cross-register", "--space", "space.mfss", "--latent-a", "a.json", "--latent-b", "b.json", "--out-a", "ca.ply", "--out-b", "cb.ply"],
    );
    let cross: serde_json::Value = serde_json::from_str(&out).unwrap();
    let a = read_point_cloud(&dir.join("ca.ply")).unwrap();
    let b = read_point_cloud(&dir.join("cb.ply")).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(cross["points"], a.len());

    let eval = &["--space", "space.mfss", "--canonical-mesh", "canonical.ply", "--instance", "held_out.ply", "--no-cpd-baseline"];
    let csv = ok(dir, &with(&["evaluate"], &[eval, &CLOUD, &CAMERA, &["--out", "eval"]]));
    assert!(dir.join("eval.csv").is_file() && dir.join("eval.json").is_file());
    assert_eq!(fs::read_to_string(dir.join("eval.csv")).unwrap(), csv);
    assert!(csv.contains("oracle-pipeline") && csv.contains("canonical-baseline"));

    ok(dir, &with(&["pose-noise-eval", "--draws", "2", "--noise-range", "0.05"], &[eval, &CLOUD, &CAMERA, &["--out", "noise"]]));
    let rows: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("noise.json")).unwrap()).unwrap();
    let pipeline = rows["rows"].as_array().unwrap().iter().find(|r| r["condition"] == "oracle-pipeline").unwrap();
    assert_eq!(pipeline["n_views"], 6);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    common::write_category(dir, &common::category(3));

    assert_eq!(morphfield(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(morphfield(dir, &["register", "--bogus"]).status.code(), Some(2));

    // latent dimension above #instances - 1
    let out = morphfield(dir, &["build-space", "--canonical", "canonical.ply", "--instances", "instances", "--latent", "3", "--out", "s.mfss"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latent dimension"));

    // every violation is reported, not just the first
    let out = morphfield(dir, &["build-space", "--canonical", "missing.ply", "--instances", "instances", "--latent", "0", "--beta", "-1", "--out", "s.mfss"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).lines().count() >= 3);

    // well-formed invocation, unreadable space file: runtime failure
    fs::write(dir.join("broken.mfss"), b"not a shape space").unwrap();
    fs::write(dir.join("pose.json"), r#"{"rotation": [1, 0, 0, 0], "translation": [0, 0, 0]}"#).unwrap();
    let out = morphfield(dir, &["register", "--space", "broken.mfss", "--observed", "held_out.ply", "--pose", "pose.json", "--out", "r.ply"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.join("r.ply").exists());
}
