//! Image quality metrics and the recolor evaluation harness.

use serde::{Deserialize, Serialize};

use crate::editing::EditSession;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::appearance::ColorMode;
use crate::rasterizer::{composite_backward, render_alpha};
use crate::render::{diffuse_colors, eval_view, Renderer, Shading};
use crate::scene::{oracle_diffuse, Scene};

/// Reported for identical inputs in place of infinity.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::contract(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` over the masked pixels (all channels), capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    same_dims(a, b)?;
    let n_px = a.width * a.height;
    if let Some(m) = mask {
        if m.len() != n_px {
            return Err(Error::contract("mask size does not match the image"));
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for p in 0..n_px {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..3 {
            let d = a.data[p * 3 + c] - b.data[p * 3 + c];
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::contract("mask selects no pixels"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-region filter of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM, 11×11 Gaussian window (σ = 1.5), dynamic range 1,
/// mean over the valid region and then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::contract(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(c).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(c).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view_id: u32,
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_masked_psnr: Option<f64>,
    /// Not computed; kept so reports have the usual PSNR/SSIM/LPIPS shape.
    pub lpips: Option<f64>,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        let masked: Vec<f64> = views.iter().filter_map(|v| v.masked_psnr).collect();
        let mean_masked_psnr = (!masked.is_empty()).then(|| masked.iter().sum::<f64>() / masked.len() as f64);
        Self {
            views,
            mean_psnr,
            mean_ssim,
            mean_masked_psnr,
            lpips: None,
        }
    }

    /// Text table: one row per view plus the mean.
    pub fn to_table(&self, label: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let mut s = format!("{:<12} {:>8} {:>8} {:>8} {:>10}\n", label, "PSNR", "SSIM", "LPIPS", "masked");
        for v in &self.views {
            s += &format!(
                "{:<12} {:>8.2} {:>8.4} {:>8} {:>10}\n",
                format!("view {}", v.view_id),
                v.psnr,
                v.ssim,
                "-",
                fmt(v.masked_psnr)
            );
        }
        s += &format!(
            "{:<12} {:>8.2} {:>8.4} {:>8} {:>10}\n",
            "mean",
            self.mean_psnr,
            self.mean_ssim,
            "-",
            fmt(self.mean_masked_psnr)
        );
        s
    }
}

/// Render the base model (or `session`) at the holdout views of `gt_scene` and
/// compare with its images. With `mask_object`, also report PSNR over pixels
/// where that object's composited membership exceeds 0.5.
pub fn evaluate_recolor(
    renderer: &Renderer,
    session: Option<&EditSession>,
    gt_scene: &Scene,
    holdout_views: &[u32],
    mask_object: Option<u32>,
) -> Result<EvalReport> {
    if holdout_views.is_empty() {
        return Err(Error::contract("no holdout views to evaluate"));
    }
    if let Some(s) = session {
        if let Some(v) = s.edit_views.iter().find(|v| holdout_views.contains(&v.view_id)) {
            return Err(Error::contract(format!("view {} is both an edit view and a holdout view", v.view_id)));
        }
    }
    let membership = mask_object.map(|id| gt_scene.object_membership(id)).transpose()?;
    let mut views = Vec::with_capacity(holdout_views.len());
    for &id in holdout_views {
        let gt = gt_scene.view(id)?;
        let img = match session {
            Some(s) => s.render_edited(renderer, &gt.camera, 1.0)?,
            None => renderer.render(&gt.camera, Shading::Base { s: 1.0 })?,
        };
        let masked_psnr = match &membership {
            Some(m) => {
                let (blend, _) = renderer.blends.get(&renderer.scene, &gt.camera)?;
                let alpha = render_alpha(&blend, m)?;
                let mask: Vec<bool> = alpha.data.iter().map(|&a| a > 0.5).collect();
                Some(psnr(&img, &gt.pixels, Some(&mask))?)
            }
            None => None,
        };
        views.push(ViewMetrics {
            view_id: id,
            psnr: psnr(&img, &gt.pixels, None)?,
            ssim: ssim(&img, &gt.pixels)?,
            masked_psnr,
        });
    }
    Ok(EvalReport::from_views(views))
}

/// Mean absolute error between `sigmoid(Cdiff)` and the oracle diffuse
/// shading, per gaussian and channel, weighted by each gaussian's total blend
/// weight over `view_ids`.
pub fn diffuse_albedo_error(renderer: &Renderer, view_ids: &[u32]) -> Result<f64> {
    if renderer.model.config.mode != ColorMode::Decoupled {
        return Err(Error::contract("the single-MLP baseline has no diffuse output"));
    }
    let scene = &renderer.scene;
    let oracle = scene.oracle()?;
    let n = scene.gaussians.len();
    let mut weight = vec![0.0; n];
    for &id in view_ids {
        let view = scene.view(id)?;
        let (blend, _) = renderer.blends.get(scene, &view.camera)?;
        let ones = vec![1.0; view.camera.width * view.camera.height * 3];
        for (w, g) in weight.iter_mut().zip(composite_backward(&blend, &ones)?) {
            *w += g[0];
        }
    }
    let ids: Vec<u32> = (0..n as u32).collect();
    let ev = eval_view(&renderer.model, &renderer.footprints, scene, [0.0; 3], &ids)?;
    let (mut err, mut total) = (0.0, 0.0);
    for ((pred, o), &w) in diffuse_colors(&ev).iter().zip(oracle).zip(&weight) {
        let truth = oracle_diffuse(&o.material, o.normal);
        err += w * (0..3).map(|c| (pred[c] - truth[c]).abs()).sum::<f64>() / 3.0;
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::contract("no gaussian is visible in the given views"));
    }
    Ok(err / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
        img
    }

    /// Independent SSIM: direct 2-D window sums, no separable filtering.
    fn reference_ssim(a: &Image, b: &Image) -> f64 {
        let r = 5i64;
        let mut k = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut per_channel = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut n = 0;
            for cy in r..a.height as i64 - r {
                for cx in r..a.width as i64 - r {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let (x, y) = ((cx - r + j) as usize, (cy - r + i) as usize);
                            let wgt = k[i as usize][j as usize] / s;
                            let p = a.pixel(x, y)[c];
                            let q = b.pixel(x, y)[c];
                            mx += wgt * p;
                            my += wgt * q;
                            xx += wgt * p * p;
                            yy += wgt * q * q;
                            xy += wgt * p * q;
                        }
                    }
                    let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    n += 1;
                }
            }
            per_channel += acc / n as f64;
        }
        per_channel / 3.0
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(1, 8, 8);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
        let gray = Image::filled(4, 4, [0.5; 3]);
        let black = Image::new(4, 4);
        assert!((psnr(&gray, &black, None).unwrap() - 6.020_599_913_279_624).abs() < 1e-9);
        let b = Image::filled(4, 4, [0.6; 3]);
        let c = Image::filled(4, 4, [0.5; 3]);
        assert!((psnr(&b, &c, None).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_masks() {
        let a = random_image(2, 4, 4);
        let mut b = a.clone();
        b.set_pixel(0, 0, [0.0; 3]);
        let mut mask = vec![true; 16];
        mask[0] = false;
        assert_eq!(psnr(&a, &b, Some(&mask)).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &b, Some(&[false; 16])).is_err());
        assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = random_image(3, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mut bin = Image::new(16, 16);
        for (i, v) in bin.data.iter_mut().enumerate() {
            *v = ((i / 3 + i / 48) % 2) as f64;
        }
        let mut inv = bin.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
        assert!(ssim(&Image::new(10, 10), &Image::new(10, 10)).is_err());
    }

    #[test]
    fn ssim_matches_direct_window_reference() {
        for seed in 0..3 {
            let a = random_image(10 + seed, 24, 19);
            let b = random_image(20 + seed, 24, 19);
            let fast = ssim(&a, &b).unwrap();
            let slow = reference_ssim(&a, &b);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
            assert_eq!(fast, ssim(&b, &a).unwrap());
        }
    }

    #[test]
    fn albedo_error_needs_a_diffuse_output() {
        use crate::appearance::{AppearanceModel, ModelConfig};
        use crate::scene::{reference_spec, synth_scene};
        use std::sync::Arc;
        let mut spec = reference_spec();
        spec.n_views = 2;
        spec.image_size = [32, 32];
        for s in spec.shapes.iter_mut() {
            let (crate::scene::ShapeSpec::Sphere { count, .. } | crate::scene::ShapeSpec::Box { count, .. }) = s;
            *count = 40;
        }
        let scene = Arc::new(synth_scene(&spec).unwrap());
        let decoupled = Renderer::new(scene.clone(), Arc::new(AppearanceModel::new(ModelConfig::default(), 1).unwrap()));
        let e = diffuse_albedo_error(&decoupled, &[0, 1]).unwrap();
        assert!(e.is_finite() && e > 0.0 && e < 1.0);
        let vanilla_cfg = ModelConfig {
            mode: ColorMode::Vanilla,
            ..ModelConfig::default()
        };
        let vanilla = Renderer::new(scene, Arc::new(AppearanceModel::new(vanilla_cfg, 1).unwrap()));
        assert!(matches!(diffuse_albedo_error(&vanilla, &[0]), Err(Error::Contract(_))));
    }
}
