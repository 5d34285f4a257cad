//! Central finite differences against the analytic gradients of the training
//! loss (tables, diffuse, specular, baseline MLP) and the edit loss (edit
//! head, segmentation, wide-mode copies), at 64-bit.
//!
//! The specular MLP reads the diffuse hidden layers through stop-gradient
//! residuals, so the training loss is differenced through an independent
//! re-assembly that holds those residual inputs at their unperturbed values.

use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use std::collections::HashMap;

use gsrecolor::appearance::{combine, AppearanceModel, ColorMode, ModelConfig};
use gsrecolor::encoding::{encode_direction, view_direction, Footprint};
use gsrecolor::editing::{create_session, EditConfig, EditSession};
use gsrecolor::image::Image;
use gsrecolor::nn::Params;
use gsrecolor::rasterizer::{composite_forward, precompute_blend, BlendRecord};
use gsrecolor::render::{scatter, Renderer};
use gsrecolor::scene::Scene;
use gsrecolor::training::{batch_loss_and_grad, scene_footprints, TileRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONFIGS: u64 = 10;
const COORDS_PER_CLASS: usize = 6;
pub const TOL: f64 = 1e-5;

fn ranges(lens: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    lens.iter()
        .map(|&l| {
            let r = start..start + l;
            start += l;
            r
        })
        .collect()
}

fn tensor_len(p: &impl Params) -> usize {
    p.param_len()
}

/// Worst relative error over a few coordinates of `range` whose analytic
/// gradient is not negligible; coordinates above [`TOL`] are reported on stderr. The relative floor is 1e-4 of the largest
/// gradient in the class, so near-zero entries are compared absolutely.
fn check_class(
    name: &str,
    theta: &[f64],
    analytic: &[f64],
    range: Range<usize>,
    rng: &mut ChaCha8Rng,
    mut loss: impl FnMut(&[f64]) -> Vec<f64>,
) -> f64 {
    let g_max = analytic[range.clone()].iter().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(g_max > 0.0, "{name}: gradient is identically zero");
    let candidates: Vec<usize> = range.filter(|&i| analytic[i].abs() > 1e-3 * g_max).collect();
    let mut worst: f64 = 0.0;
    let mut buf = theta.to_vec();
    for _ in 0..COORDS_PER_CLASS {
        let i = candidates[rng.random_range(0..candidates.len())];
        let h = 1e-5 * theta[i].abs().max(1.0);
        buf[i] = theta[i] + h;
        let up = loss(&buf);
        buf[i] = theta[i] - h;
        let down = loss(&buf);
        buf[i] = theta[i];
        // Term-wise differences: terms untouched by the perturbation cancel exactly.
        let numeric = up.iter().zip(&down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * h);
        let e = super::rel_err(analytic[i], numeric, 1e-4 * g_max);
        if e > TOL {
            eprintln!("{name}[{i}]: analytic {:e} numeric {numeric:e} rel {e:e}", analytic[i]);
        }
        worst = worst.max(e);
    }
    worst
}

fn randomize(model: &mut AppearanceModel, rng: &mut ChaCha8Rng) {
    for v in model.grid.tables.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
}

/// Terms of the training loss: per-channel L1 over `n` batch values (each
/// divided by `n`), then `lambda · ‖Cspec‖² / samples` per distinct
/// `(gaussian, view)` sample, with the specular residual inputs taken from `frozen`.
#[allow(clippy::too_many_arguments)]
fn reference_loss(
    model: &AppearanceModel,
    frozen: &AppearanceModel,
    scene: &Scene,
    blends: &[BlendRecord],
    footprints: &[Footprint],
    tiles: &[TileRef],
    lambda: f64,
) -> Vec<f64> {
    let mut samples: HashMap<(u32, usize), ([f64; 3], [f64; 3])> = HashMap::new();
    let mut color = |g: u32, view: usize| {
        *samples.entry((g, view)).or_insert_with(|| {
            let fp = &footprints[g as usize];
            let f = model.encode(&[fp]);
            let center = scene.views[view].camera.center();
            let dir = encode_direction(view_direction(center, scene.gaussians[g as usize].mean)).unwrap();
            match model.config.mode {
                ColorMode::Decoupled => {
                    let d = model.diffuse.forward(&f, 1).unwrap();
                    let fd = frozen.diffuse.forward(&frozen.encode(&[fp]), 1).unwrap();
                    let sp = model.specular.forward(&f, &dir, &fd.h1, &fd.h2, 1).unwrap();
                    let cd = [d.cdiff[0], d.cdiff[1], d.cdiff[2]];
                    let cs = [sp.cspec[0], sp.cspec[1], sp.cspec[2]];
                    (combine(cd, cs, 1.0), cs)
                }
                ColorMode::Vanilla => {
                    let v = model.vanilla.forward(&f, &dir, 1).unwrap();
                    ([v.cgs[0], v.cgs[1], v.cgs[2]], [0.0; 3])
                }
            }
        })
    };
    let mut l1 = Vec::new();
    for t in tiles {
        let tile = &blends[t.view].tiles[t.tile];
        let gt = &scene.views[t.view].pixels;
        for p in 0..tile.pixel_count() {
            let mut rgb = scene.background.map(|b| b * tile.t_bg[p]);
            for (g, w) in tile.pixel_entries(p) {
                let (c, _) = color(g, t.view);
                for k in 0..3 {
                    rgb[k] += w * c[k];
                }
            }
            let want = gt.pixel(tile.x0 + p % tile.width, tile.y0 + p / tile.width);
            l1.extend((0..3).map(|k| (rgb[k] - want[k]).abs()));
        }
    }
    let n = l1.len() as f64;
    let mut terms: Vec<f64> = l1.into_iter().map(|v| v / n).collect();
    if model.config.mode == ColorMode::Decoupled {
        let mut keys: Vec<_> = samples.keys().copied().collect();
        keys.sort_unstable();
        let ns = keys.len() as f64;
        terms.extend(keys.iter().map(|k| lambda * samples[k].1.iter().map(|v| v * v).sum::<f64>() / ns));
    }
    terms
}

/// Per-channel L1 terms of the edit loss over every edit view, each divided
/// by the total value count.
fn edit_terms(session: &EditSession, renderer: &Renderer) -> Vec<f64> {
    let mut terms = Vec::new();
    for view in &session.edit_views {
        let camera = &renderer.scene.view(view.view_id).unwrap().camera;
        let (blend, _) = renderer.blends.get(&renderer.scene, camera).unwrap();
        let ev = renderer.eval(camera, &blend).unwrap();
        let (colors, _) = session.params.colors(&ev, 1.0, None).unwrap();
        let img = composite_forward(&blend, &scatter(&ev.ids, &colors, renderer.scene.gaussians.len()), renderer.scene.background).unwrap();
        terms.extend(img.data.iter().zip(&view.image.data).map(|(o, t)| (o - t).abs()));
    }
    let n = terms.len() as f64;
    terms.into_iter().map(|v| v / n).collect()
}

fn all_tiles(scene: &Scene) -> (Vec<BlendRecord>, Vec<TileRef>) {
    let blends: Vec<_> = (0..scene.views.len()).map(|v| precompute_blend(scene, v as u32).unwrap()).collect();
    let tiles = blends
        .iter()
        .enumerate()
        .flat_map(|(view, b)| (0..b.tiles.len()).map(move |tile| TileRef { view, tile }))
        .collect();
    (blends, tiles)
}

fn training_gradients(seed: u64, mode: ColorMode) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = super::small_scene(20, 3, 32, 100 + seed);
    let config = ModelConfig {
        mode,
        ..ModelConfig::default()
    };
    let mut model = AppearanceModel::new(config, seed).unwrap();
    randomize(&mut model, &mut rng);
    let footprints = scene_footprints(&model, &scene);
    let (blends, tiles) = all_tiles(&scene);
    let lambda = rng.random_range(0.05..0.25);
    let result = batch_loss_and_grad(&model, &scene, &blends, &footprints, &tiles, lambda).unwrap();
    let theta = model.flatten();
    let analytic = result.grads.flatten();
    let r = ranges(&[
        model.grid.tables.len(),
        tensor_len(&model.diffuse),
        tensor_len(&model.specular),
        tensor_len(&model.seg),
        tensor_len(&model.vanilla),
    ]);
    let reassembled: f64 = reference_loss(&model, &model, &scene, &blends, &footprints, &tiles, lambda).iter().sum();
    assert!(
        (reassembled - result.loss).abs() <= 1e-12 * result.loss.max(1.0),
        "loss {} vs re-assembled {reassembled}",
        result.loss
    );
    let mut probe = model.clone();
    let mut loss = |p: &[f64]| {
        probe.assign(p).unwrap();
        reference_loss(&probe, &model, &scene, &blends, &footprints, &tiles, lambda)
    };
    let classes: Vec<(&str, usize)> = match mode {
        ColorMode::Decoupled => vec![("tables", 0), ("diffuse", 1), ("specular", 2)],
        ColorMode::Vanilla => vec![("tables/baseline", 0), ("baseline", 4)],
    };
    classes
        .into_iter()
        .map(|(name, k)| {
            let e = check_class(name, &theta, &analytic, r[k].clone(), &mut rng, &mut loss);
            (name.to_string(), e)
        })
        .collect()
}

fn edit_gradients(seed: u64, wide: bool, mode: ColorMode) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let scene = Arc::new(super::small_scene(20, 2, 32, 200 + seed));
    let config = ModelConfig {
        mode,
        ..ModelConfig::default()
    };
    let mut model = AppearanceModel::new(config, seed).unwrap();
    randomize(&mut model, &mut rng);
    let renderer = Renderer::new(scene.clone(), Arc::new(model));
    let mut target = Image::new(32, 32);
    target.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let ec = EditConfig {
        wide_finetune: wide,
        seg_uses_diffuse: seed.is_multiple_of(2),
        seed,
        ..EditConfig::default()
    };
    let mut session = create_session(&renderer, [0; 32], "fd", 0, &target, ec).unwrap();
    // Move the edit head off the base copy so the mask receives gradient.
    for v in session.params.head.weight.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let (loss0, grads) = session.loss_and_grad(&renderer).unwrap();
    let reassembled: f64 = edit_terms(&session, &renderer).iter().sum();
    assert!((reassembled - loss0).abs() <= 1e-12, "edit loss {loss0} vs re-assembled {reassembled}");
    let theta = session.params.flatten();
    let analytic = grads.flatten();
    let p = &session.params;
    let mut lens = vec![tensor_len(&p.head), tensor_len(&p.seg)];
    if let Some([a, b]) = &p.trunk {
        lens.push(tensor_len(a) + tensor_len(b));
    }
    if let Some(s) = &p.specular {
        lens.push(tensor_len(s));
    }
    let r = ranges(&lens);
    let mut names = vec!["edit head", "segmentation"];
    if p.trunk.is_some() {
        names.push("edit trunk");
    }
    if p.specular.is_some() {
        names.push("edit specular");
    }
    let mut loss = |flat: &[f64]| {
        session.params.assign(flat).unwrap();
        edit_terms(&session, &renderer)
    };
    let mut out = Vec::new();
    for (name, range) in names.into_iter().zip(r) {
        let e = check_class(name, &theta, &analytic, range, &mut rng, &mut loss);
        out.push((name.to_string(), e));
    }
    out
}

pub struct GradientOutcome {
    /// Worst relative error per parameter class.
    pub worst: Vec<(String, f64)>,
    pub elapsed: Duration,
}

impl GradientOutcome {
    pub fn passed(&self) -> bool {
        self.worst.len() >= 7 && self.worst.iter().all(|w| w.1 <= TOL) && self.elapsed.as_secs_f64() <= 60.0
    }
}

/// Every parameter class on [`CONFIGS`] random configurations.
pub fn run_suite() -> GradientOutcome {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |rows: Vec<(String, f64)>| {
        for (name, e) in rows {
            match worst.iter_mut().find(|w| w.0 == name) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((name, e)),
            }
        }
    };
    for seed in 0..CONFIGS {
        record(training_gradients(seed, ColorMode::Decoupled));
        record(training_gradients(seed, ColorMode::Vanilla));
        record(edit_gradients(seed, seed % 3 == 0, ColorMode::Decoupled));
        if seed < 3 {
            record(edit_gradients(seed, seed == 0, ColorMode::Vanilla));
        }
    }
    GradientOutcome {
        worst,
        elapsed: start.elapsed(),
    }
}
