//! Per-gaussian color evaluation for a camera and the composite it feeds.
//! The command line tool, the service and the edit sessions all render
//! through [`eval_view`] and [`EditParams::colors`], so identical inputs give
//! identical pixels everywhere.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::appearance::{blend_diffuse, combine, AppearanceModel, ColorMode, SpecularMlp};
use crate::encoding::{sh_basis, view_direction, Footprint, DIR_DIM};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};
use crate::math::{sigmoid, Vec3};
use crate::nn::{relu_inplace, Dense};
use crate::rasterizer::{composite_forward, precompute_blend_camera, render_alpha, BlendRecord, TILE_SIZE};
use crate::scene::{Camera, Scene};

/// Frozen-model activations for the gaussians seen by one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEval {
    pub ids: Vec<u32>,
    pub f: Vec<f64>,
    pub dirs: Vec<f64>,
    /// Base hidden activations: diffuse trunk, or the baseline MLP's per-view trunk.
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// `Cdiff` (decoupled) or the baseline's pre-sigmoid output.
    pub base: Vec<f64>,
    /// `Cspec`; zeros for the baseline.
    pub cspec: Vec<f64>,
}

impl ViewEval {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn base_of(&self, i: usize) -> Vec3 {
        [self.base[i * 3], self.base[i * 3 + 1], self.base[i * 3 + 2]]
    }

    #[inline]
    pub fn cspec_of(&self, i: usize) -> Vec3 {
        [self.cspec[i * 3], self.cspec[i * 3 + 1], self.cspec[i * 3 + 2]]
    }
}

/// Evaluate the frozen model for `ids` as seen from `camera_center`.
pub fn eval_view(model: &AppearanceModel, footprints: &[Footprint], scene: &Scene, camera_center: Vec3, ids: &[u32]) -> Result<ViewEval> {
    let n = ids.len();
    let fps: Vec<&Footprint> = ids.iter().map(|&g| &footprints[g as usize]).collect();
    let f = model.encode(&fps);
    let mut dirs = Vec::with_capacity(n * DIR_DIM);
    for &g in ids {
        dirs.extend_from_slice(&sh_basis(view_direction(camera_center, scene.gaussians[g as usize].mean)));
    }
    let (h1, h2, base, cspec) = match model.config.mode {
        ColorMode::Decoupled => {
            let d = model.diffuse.forward(&f, n)?;
            let sp = model.specular.forward(&f, &dirs, &d.h1, &d.h2, n)?;
            (d.h1, d.h2, d.cdiff, sp.cspec)
        }
        ColorMode::Vanilla => {
            let (_, h1, h2) = model.vanilla.trunk(&f, &dirs, n)?;
            let z = model.vanilla.head.forward(&h2, n);
            (h1, h2, z, vec![0.0; n * 3])
        }
    };
    Ok(ViewEval {
        ids: ids.to_vec(),
        f,
        dirs,
        h1,
        h2,
        base,
        cspec,
    })
}

/// Trainable parameters of an edit session.
#[derive(Clone, Debug, PartialEq)]
pub struct EditParams {
    pub mode: ColorMode,
    /// Edit head: a copy of the base output layer.
    pub head: Dense,
    pub seg: crate::appearance::SegMlp,
    /// Wide fine-tune only: copies of the two hidden layers feeding `head`.
    pub trunk: Option<[Dense; 2]>,
    /// Wide fine-tune only (decoupled): a copy of the specular MLP.
    pub specular: Option<SpecularMlp>,
}

/// Intermediates of [`EditParams::forward`] needed by its backward pass.
#[derive(Clone, Debug)]
pub struct EditActs {
    /// Wide fine-tune only: trunk input rows.
    pub x0: Option<Vec<f64>>,
    pub h1: Option<Vec<f64>>,
    pub h2: Option<Vec<f64>>,
    /// Edited pre-sigmoid head output `C′`.
    pub edit: Vec<f64>,
    pub seg: crate::appearance::SegActs,
    pub specular: Option<crate::appearance::SpecularActs>,
    /// `Cspec` used for the combine (base or wide copy).
    pub cspec: Vec<f64>,
}

impl EditParams {
    /// Fresh parameters: head and optional trunk/specular cloned from `base`, new seg MLP.
    pub fn from_base(base: &AppearanceModel, wide: bool, seg_uses_diffuse: bool, seed: u64) -> Self {
        let (head, trunk) = match base.config.mode {
            ColorMode::Decoupled => (
                base.diffuse.head.clone(),
                wide.then(|| [base.diffuse.l1.clone(), base.diffuse.l2.clone()]),
            ),
            ColorMode::Vanilla => (
                base.vanilla.head.clone(),
                wide.then(|| [base.vanilla.l1.clone(), base.vanilla.l2.clone()]),
            ),
        };
        let specular = (wide && base.config.mode == ColorMode::Decoupled).then(|| base.specular.clone());
        Self {
            mode: base.config.mode,
            head,
            seg: base.fresh_seg(seg_uses_diffuse, seed),
            trunk,
            specular,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mode: self.mode,
            head: self.head.zeros_like(),
            seg: self.seg.zeros_like(),
            trunk: self.trunk.as_ref().map(|[a, b]| [a.zeros_like(), b.zeros_like()]),
            specular: self.specular.as_ref().map(|s| s.zeros_like()),
        }
    }

    pub fn forward(&self, ev: &ViewEval) -> Result<EditActs> {
        let n = ev.len();
        let hidden = self.head.in_dim;
        let (x0, h1, h2, edit) = match &self.trunk {
            None => (None, None, None, self.head.forward(&ev.h2, n)),
            Some([l1, l2]) => {
                let x0 = match self.mode {
                    ColorMode::Decoupled => ev.f.clone(),
                    ColorMode::Vanilla => crate::nn::concat_rows(&ev.f, ev.f.len() / n.max(1), &ev.dirs, DIR_DIM, n),
                };
                let mut a = l1.forward(&x0, n);
                relu_inplace(&mut a);
                let mut b = l2.forward(&a, n);
                relu_inplace(&mut b);
                let e = self.head.forward(&b, n);
                (Some(x0), Some(a), Some(b), e)
            }
        };
        let feat = ev.f.len().checked_div(n).unwrap_or(0);
        let seg_f = &ev.f;
        if self.seg.l1.in_dim != feat + if self.seg.uses_hidden { hidden } else { 0 } && n > 0 {
            return Err(Error::contract("segmentation MLP does not match the feature width"));
        }
        let seg = self.seg.forward(seg_f, &ev.h2, hidden, n)?;
        let (specular, cspec) = match &self.specular {
            Some(sp) => {
                let acts = sp.forward(&ev.f, &ev.dirs, &ev.h1, &ev.h2, n)?;
                let c = acts.cspec.clone();
                (Some(acts), c)
            }
            None => (None, ev.cspec.clone()),
        };
        Ok(EditActs {
            x0,
            h1,
            h2,
            edit,
            seg,
            specular,
            cspec,
        })
    }

    /// Final rgb per row of `ev` at specular scale `s`; `alpha_override`
    /// replaces the learned α when given.
    pub fn colors_from(&self, ev: &ViewEval, acts: &EditActs, s: f64, alpha_override: Option<f64>) -> Vec<Vec3> {
        (0..ev.len())
            .map(|i| {
                let a = alpha_override.unwrap_or(acts.seg.alpha[i]);
                let b = ev.base_of(i);
                let e = [acts.edit[i * 3], acts.edit[i * 3 + 1], acts.edit[i * 3 + 2]];
                let blended = blend_diffuse(b, e, a);
                match self.mode {
                    ColorMode::Decoupled => {
                        let cs = [acts.cspec[i * 3], acts.cspec[i * 3 + 1], acts.cspec[i * 3 + 2]];
                        combine(blended, cs, s)
                    }
                    ColorMode::Vanilla => blended.map(sigmoid),
                }
            })
            .collect()
    }

    /// Final rgb and α per row of `ev`.
    pub fn colors(&self, ev: &ViewEval, s: f64, alpha_override: Option<f64>) -> Result<(Vec<Vec3>, Vec<f64>)> {
        let acts = self.forward(ev)?;
        let colors = self.colors_from(ev, &acts, s, alpha_override);
        Ok((colors, acts.seg.alpha))
    }
}

/// Unedited colors at specular scale `s` (the baseline ignores `s`).
pub fn base_colors(ev: &ViewEval, mode: ColorMode, s: f64) -> Vec<Vec3> {
    (0..ev.len())
        .map(|i| match mode {
            ColorMode::Decoupled => combine(ev.base_of(i), ev.cspec_of(i), s),
            ColorMode::Vanilla => ev.base_of(i).map(sigmoid),
        })
        .collect()
}

/// `sigmoid(Cdiff)` per row: the diffuse-only colors.
pub fn diffuse_colors(ev: &ViewEval) -> Vec<Vec3> {
    (0..ev.len()).map(|i| ev.base_of(i).map(sigmoid)).collect()
}

/// Scatter per-row values into a table indexed by gaussian.
pub fn scatter<T: Copy + Default>(ids: &[u32], rows: &[T], n_gaussians: usize) -> Vec<T> {
    let mut table = vec![T::default(); n_gaussians];
    for (&g, &v) in ids.iter().zip(rows) {
        table[g as usize] = v;
    }
    table
}

/// What to draw for the gaussians of one camera.
pub enum Shading<'a> {
    Base { s: f64 },
    DiffuseOnly,
    Edited { params: &'a EditParams, s: f64 },
}

/// Frozen model, scene and per-gaussian footprints, ready to render any camera.
pub struct Renderer {
    pub scene: Arc<Scene>,
    pub model: Arc<AppearanceModel>,
    pub footprints: Arc<Vec<Footprint>>,
    pub blends: PoseCache,
}

impl Renderer {
    pub fn new(scene: Arc<Scene>, model: Arc<AppearanceModel>) -> Self {
        let footprints = Arc::new(crate::training::scene_footprints(&model, &scene));
        Self {
            scene,
            model,
            footprints,
            blends: PoseCache::default(),
        }
    }

    pub fn eval(&self, camera: &Camera, blend: &BlendRecord) -> Result<ViewEval> {
        eval_view(&self.model, &self.footprints, &self.scene, camera.center(), &blend.referenced_gaussians())
    }

    pub fn render(&self, camera: &Camera, shading: Shading) -> Result<Image> {
        let (blend, _) = self.blends.get(&self.scene, camera)?;
        let ev = self.eval(camera, &blend)?;
        let rows = match shading {
            Shading::Base { s } => base_colors(&ev, self.model.config.mode, s),
            Shading::DiffuseOnly => diffuse_colors(&ev),
            Shading::Edited { params, s } => params.colors(&ev, s, None)?.0,
        };
        composite_forward(&blend, &scatter(&ev.ids, &rows, self.scene.gaussians.len()), self.scene.background)
    }

    /// Soft segmentation of `params` composited with the frozen blend weights.
    pub fn render_mask(&self, camera: &Camera, params: &EditParams) -> Result<GrayImage> {
        let (blend, _) = self.blends.get(&self.scene, camera)?;
        let ev = self.eval(camera, &blend)?;
        let alpha = params.forward(&ev)?.seg.alpha;
        render_alpha(&blend, &scatter(&ev.ids, &alpha, self.scene.gaussians.len()))
    }

    /// Camera with a training view's intrinsics rescaled to `w×h` and the given pose.
    pub fn camera_for_pose(&self, pose: &[f64; 12], width: usize, height: usize) -> Result<Camera> {
        let reference = &self
            .scene
            .views
            .first()
            .ok_or_else(|| Error::NotFound("scene has no views to take intrinsics from".into()))?
            .camera;
        let r = reference.resized(width, height);
        let cam = Camera::from_pose(pose, r.fx, r.fy, r.cx, r.cy, width, height);
        cam.validate()?;
        Ok(cam)
    }
}

/// Quantized pose plus intrinsics.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PoseKey {
    pub rotation: [i64; 9],
    pub translation: [i64; 3],
    pub intrinsics: [u64; 4],
    pub size: [usize; 2],
}

impl PoseKey {
    pub fn of(camera: &Camera) -> Self {
        let p = camera.pose();
        let rot = [p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]];
        Self {
            rotation: rot.map(|v| (v / 1e-5).round() as i64),
            translation: [p[3], p[7], p[11]].map(|v| (v / 1e-4).round() as i64),
            intrinsics: [camera.fx, camera.fy, camera.cx, camera.cy].map(f64::to_bits),
            size: [camera.width, camera.height],
        }
    }

    pub fn digest(&self) -> String {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

/// Blend records keyed by quantized pose.
#[derive(Default)]
pub struct PoseCache {
    entries: Mutex<HashMap<PoseKey, Arc<BlendRecord>>>,
}

impl PoseCache {
    /// Cached record and whether it was a hit.
    pub fn get(&self, scene: &Scene, camera: &Camera) -> Result<(Arc<BlendRecord>, bool)> {
        let key = PoseKey::of(camera);
        if let Some(b) = self.entries.lock().unwrap().get(&key) {
            return Ok((b.clone(), true));
        }
        let rec = Arc::new(precompute_blend_camera(&scene.gaussians, camera, TILE_SIZE)?);
        self.entries.lock().unwrap().entry(key).or_insert_with(|| rec.clone());
        Ok((rec, false))
    }

    pub fn insert(&self, camera: &Camera, blend: Arc<BlendRecord>) {
        self.entries.lock().unwrap().insert(PoseKey::of(camera), blend);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_key_quantizes_small_jitter() {
        let c = Camera::look_at([0.0, 0.5, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 32, 32);
        let mut d = c.clone();
        d.translation[0] += 1e-6;
        assert_eq!(PoseKey::of(&c), PoseKey::of(&d));
        d.translation[0] += 1e-3;
        assert_ne!(PoseKey::of(&c), PoseKey::of(&d));
    }

    #[test]
    fn scatter_places_rows() {
        let t = scatter(&[2, 0], &[1.5, 2.5], 4);
        assert_eq!(t, vec![2.5, 0.0, 1.5, 0.0]);
    }
}
