mod common;

use std::sync::Arc;

use gsrecolor::editing::{create_session, EditConfig, EditSession, SessionStatus};
use gsrecolor::render::{Renderer, Shading};
use gsrecolor::scene::Scene;
use gsrecolor::training::{train, Checkpoint, TrainConfig, Trainer};
use gsrecolor::Error;

fn trained() -> (Arc<Scene>, Checkpoint) {
    let scene = common::small_scene(120, 6, 32, 3);
    let config = TrainConfig {
        steps: 60,
        minibatches_per_batch: 8,
        ..TrainConfig::default()
    };
    let ckpt = train(&scene, &config).unwrap();
    (Arc::new(scene), ckpt)
}

fn greener(scene: &Scene, view: u32) -> gsrecolor::image::Image {
    let mut img = scene.view(view).unwrap().pixels.clone();
    for px in img.data.chunks_mut(3) {
        if px[0] > 0.3 && px[0] > px[2] {
            px.swap(0, 1);
        }
    }
    img
}

#[test]
fn sessions_never_touch_the_base_checkpoint() {
    let (scene, ckpt) = trained();
    let before = ckpt.hash().unwrap();
    let renderer = Renderer::new(scene.clone(), Arc::new(ckpt.model.clone()));
    for (i, wide) in [false, true, false].into_iter().enumerate() {
        let config = EditConfig {
            steps: 15,
            wide_finetune: wide,
            ..EditConfig::default()
        };
        let mut s = create_session(&renderer, before, format!("s{i}"), i as u32, &greener(&scene, i as u32), config).unwrap();
        s.finetune(&renderer, None).unwrap();
        assert_eq!(s.status, SessionStatus::Done);
    }
    assert_eq!(*renderer.model, ckpt.model);
    assert_eq!(ckpt.hash().unwrap(), before);
}

#[test]
fn session_round_trip_renders_identically() {
    let (scene, ckpt) = trained();
    let hash = ckpt.hash().unwrap();
    let renderer = Renderer::new(scene.clone(), Arc::new(ckpt.model.clone()));
    let config = EditConfig {
        steps: 10,
        ..EditConfig::default()
    };
    let mut s = create_session(&renderer, hash, "s1", 0, &greener(&scene, 0), config).unwrap();
    s.add_edit_view(&renderer, 2, &greener(&scene, 2)).unwrap();
    s.finetune(&renderer, None).unwrap();
    let back = EditSession::from_bytes(&s.to_bytes().unwrap(), &renderer, hash).unwrap();
    assert_eq!(back.params, s.params);
    assert_eq!(back.edit_views, s.edit_views);
    let cam = &scene.view(4).unwrap().camera;
    assert_eq!(s.render_edited(&renderer, cam, 1.0).unwrap(), back.render_edited(&renderer, cam, 1.0).unwrap());

    let other = EditSession::from_bytes(&s.to_bytes().unwrap(), &renderer, [9; 32]);
    assert!(matches!(other, Err(Error::Contract(_)) | Err(Error::Format(_))), "{other:?}");
}

#[test]
fn wide_finetune_may_move_specular_but_narrow_never_does() {
    let (scene, ckpt) = trained();
    let renderer = Renderer::new(scene.clone(), Arc::new(ckpt.model.clone()));
    let run = |wide| {
        let config = EditConfig {
            steps: 20,
            plateau_window: 0,
            wide_finetune: wide,
            ..EditConfig::default()
        };
        let mut s = create_session(&renderer, [0; 32], "s", 1, &greener(&scene, 1), config).unwrap();
        s.finetune(&renderer, None).unwrap();
        s
    };
    let narrow = run(false);
    assert!(narrow.params.specular.is_none() && narrow.params.trunk.is_none());
    let wide = run(true);
    assert_ne!(wide.params.specular.as_ref().unwrap(), &ckpt.model.specular);
}

#[test]
fn edit_views_are_validated() {
    let (scene, ckpt) = trained();
    let renderer = Renderer::new(scene.clone(), Arc::new(ckpt.model.clone()));
    let img = greener(&scene, 0);
    let small = gsrecolor::image::Image::new(16, 16);
    assert!(matches!(
        create_session(&renderer, [0; 32], "a", 0, &small, EditConfig::default()),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        create_session(&renderer, [0; 32], "b", 99, &img, EditConfig::default()),
        Err(Error::NotFound(_))
    ));
}

/// Penalizing `‖Cspec‖²` throughout ends with a smaller mean specular magnitude than no penalty.
#[test]
fn specular_penalty_suppresses_specular_magnitude() {
    let scene = common::small_scene(120, 6, 32, 4);
    let mean_sq = |lambda: f64| {
        let config = TrainConfig {
            steps: 80,
            minibatches_per_batch: 8,
            lambda_start: lambda,
            lambda_end: lambda,
            rng_seed: 1,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&scene, config).unwrap();
        t.run(|_, _| {}).unwrap();
        let renderer = Renderer::new(Arc::new(scene.clone()), Arc::new(t.model.clone()));
        let cam = &scene.views[0].camera;
        let (blend, _) = renderer.blends.get(&scene, cam).unwrap();
        let ev = renderer.eval(cam, &blend).unwrap();
        ev.cspec.iter().map(|v| v * v).sum::<f64>() / ev.len() as f64
    };
    let (on, off) = (mean_sq(0.25), mean_sq(0.0));
    println!("mean |Cspec|^2: lambda 0.25 -> {on:.3e}, lambda 0 -> {off:.3e}");
    assert!(on < off);
}

#[test]
fn diffuse_only_is_zero_specular_scale() {
    let (scene, ckpt) = trained();
    let renderer = Renderer::new(scene.clone(), Arc::new(ckpt.model.clone()));
    for v in &scene.views {
        let a = renderer.render(&v.camera, Shading::DiffuseOnly).unwrap();
        let b = renderer.render(&v.camera, Shading::Base { s: 0.0 }).unwrap();
        assert_eq!(a, b);
    }
}
