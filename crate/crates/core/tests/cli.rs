mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use gsrecolor::image::Image;
use gsrecolor::render::{Renderer, Shading};
use gsrecolor::scene::Scene;
use gsrecolor::training::Checkpoint;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsrecolor"))
        .args(args)
        .args(["--threads", "1"])
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn pipeline_is_deterministic_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.json"), serde_json::to_string(&common::small_spec(60, 4, 32, 5)).unwrap()).unwrap();
    let (spec, scene) = (p(d, "spec.json"), p(d, "scene.vgsc"));
    ok(&["synth", "--spec", &spec, "--seed", "5", "--out", &scene]);
    ok(&["synth", "--spec", &spec, "--seed", "5", "--out", &p(d, "again.vgsc")]);
    assert_eq!(std::fs::read(&scene).unwrap(), std::fs::read(d.join("again.vgsc")).unwrap());

    let ckpt = p(d, "model.vgck");
    let train = |out: &str| ok(&["train", "--scene", &scene, "--steps", "20", "--seed", "2", "--holdout", "3", "--out", out]);
    train(&ckpt);
    train(&p(d, "model2.vgck"));
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(d.join("model2.vgck")).unwrap());

    let png = p(d, "view1.png");
    ok(&["render", "--scene", &scene, "--checkpoint", &ckpt, "--view", "1", "--out", &png]);
    let loaded = Scene::load(&scene).unwrap();
    let cam = loaded.views[1].camera.clone();
    let model = Checkpoint::load(&ckpt).unwrap().model;
    let renderer = Renderer::new(Arc::new(loaded), Arc::new(model));
    let direct = renderer.render(&cam, Shading::Base { s: 1.0 }).unwrap().encode_png().unwrap();
    assert_eq!(std::fs::read(&png).unwrap(), direct);

    let gt = p(d, "gt0.png");
    ok(&["render", "--scene", &scene, "--checkpoint", &ckpt, "--view", "0", "--ground-truth", "--out", &gt]);
    let session = p(d, "edit.vgss");
    ok(&["edit", "--scene", &scene, "--checkpoint", &ckpt, "--edit", &format!("0={gt}"), "--steps", "5", "--out", &session]);
    ok(&["render", "--scene", &scene, "--checkpoint", &ckpt, "--session", &session, "--view", "2", "--mask", "--out", &p(d, "mask.png")]);
    let mask = Image::decode_png(&std::fs::read(d.join("mask.png")).unwrap()).unwrap();
    assert_eq!((mask.width, mask.height), (32, 32));

    let json = p(d, "eval.json");
    ok(&["eval", "--scene", &scene, "--checkpoint", &ckpt, "--session", &session, "--holdout", "3", "--json", &json]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert!(report.to_string().contains("psnr"), "{report}");
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = run(&["train", "--scene", &p(d, "nope.vgsc"), "--out", &p(d, "x.vgck")]);
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(d.join("bad.json"), r#"{"shapes": [], "n_views": 4}"#).unwrap();
    let bad = run(&["synth", "--spec", &p(d, "bad.json"), "--out", &p(d, "s.vgsc")]);
    assert_eq!(bad.status.code(), Some(1), "{}", String::from_utf8_lossy(&bad.stderr));

    std::fs::write(d.join("junk.vgsc"), b"definitely not a scene").unwrap();
    let junk = run(&["train", "--scene", &p(d, "junk.vgsc"), "--out", &p(d, "x.vgck")]);
    assert_eq!(junk.status.code(), Some(3));

    assert!(!run(&["render"]).status.success());
}
