//! Recoloring sessions: a cloned output head and a fresh soft-segmentation
//! MLP fine-tuned against one or more user-edited views, blended with the
//! frozen base colors.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};
use crate::math::Vec3;
use crate::nn::{relu_backward, Params};
use crate::optim::AdamState;
use crate::rasterizer::{composite_backward, composite_forward, BlendRecord};
use crate::render::{scatter, EditActs, EditParams, Renderer, Shading, ViewEval};
use crate::scene::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub steps: usize,
    pub lr: f64,
    /// Also train copies of the hidden diffuse layers and the specular MLP.
    pub wide_finetune: bool,
    pub seg_uses_diffuse: bool,
    pub seed: u64,
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// Wall-clock budget; the best parameters so far are kept when exceeded.
    pub max_seconds: Option<f64>,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 5e-3,
            wide_finetune: false,
            seg_uses_diffuse: true,
            seed: 0,
            plateau_window: 25,
            plateau_tolerance: 1e-4,
            max_seconds: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Created,
    Running,
    Done,
    Failed,
}

impl SessionStatus {
    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => Self::Created,
            1 => Self::Running,
            2 => Self::Done,
            3 => Self::Failed,
            _ => return Err(Error::Format(format!("unknown session status {c}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditView {
    pub view_id: u32,
    /// Quantized to 8 bits on ingestion.
    pub image: Image,
}

/// Frozen per-view data for one edit view.
#[derive(Clone, Debug)]
struct EditTarget {
    blend: Arc<BlendRecord>,
    eval: ViewEval,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneReport {
    pub steps_run: usize,
    pub final_loss: f64,
    pub best_loss: f64,
    pub initial_loss: f64,
    pub stopped_early: bool,
    pub timed_out: bool,
}

/// Progress passed to [`EditSession::finetune_with`] observers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EditProgress {
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct EditSession {
    pub id: String,
    /// Hash of the base checkpoint; never changes.
    pub base_hash: [u8; 32],
    pub config: EditConfig,
    pub edit_views: Vec<EditView>,
    pub params: EditParams,
    pub adam: AdamState,
    pub status: SessionStatus,
    pub steps_done: usize,
    pub loss: Option<f64>,
    targets: Vec<EditTarget>,
}

impl Params for EditParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.head.tensors();
        t.extend(self.seg.tensors());
        if let Some([a, b]) = &self.trunk {
            t.extend(a.tensors());
            t.extend(b.tensors());
        }
        if let Some(s) = &self.specular {
            t.extend(s.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.head.tensors_mut();
        t.extend(self.seg.tensors_mut());
        if let Some([a, b]) = &mut self.trunk {
            t.extend(a.tensors_mut());
            t.extend(b.tensors_mut());
        }
        if let Some(s) = &mut self.specular {
            t.extend(s.tensors_mut());
        }
        t
    }
}

fn load_target(renderer: &Renderer, view_id: u32) -> Result<EditTarget> {
    let view = renderer.scene.view(view_id)?;
    let (blend, _) = renderer.blends.get(&renderer.scene, &view.camera)?;
    let eval = renderer.eval(&view.camera, &blend)?;
    Ok(EditTarget { blend, eval })
}

fn check_image(renderer: &Renderer, view_id: u32, image: &Image) -> Result<Image> {
    let view = renderer.scene.view(view_id)?;
    if image.width != view.camera.width || image.height != view.camera.height {
        return Err(Error::contract(format!(
            "edit image is {}x{} but view {view_id} is {}x{}",
            image.width, image.height, view.camera.width, view.camera.height
        )));
    }
    if !image.in_unit_range() {
        return Err(Error::contract("edit image values must lie in [0, 1]"));
    }
    let mut img = image.clone();
    img.quantize_u8();
    Ok(img)
}

/// Start a session on `view_id` with the user's edited image.
pub fn create_session(
    renderer: &Renderer,
    base_hash: [u8; 32],
    id: impl Into<String>,
    view_id: u32,
    image: &Image,
    config: EditConfig,
) -> Result<EditSession> {
    let image = check_image(renderer, view_id, image)?;
    let wide = config.wide_finetune;
    let params = EditParams::from_base(&renderer.model, wide, config.seg_uses_diffuse, config.seed);
    let adam = AdamState::new(&params);
    Ok(EditSession {
        id: id.into(),
        base_hash,
        config,
        edit_views: vec![EditView { view_id, image }],
        params,
        adam,
        status: SessionStatus::Created,
        steps_done: 0,
        loss: None,
        targets: vec![load_target(renderer, view_id)?],
    })
}

/// Gradients and loss of one full-frame evaluation over all edit views.
struct StepEval {
    loss: f64,
    grads: EditParams,
}

impl EditSession {
    /// Add another edited view; the optimizer state is kept.
    pub fn add_edit_view(&mut self, renderer: &Renderer, view_id: u32, image: &Image) -> Result<()> {
        if self.status == SessionStatus::Running {
            return Err(Error::Conflict("a fine-tune is running".into()));
        }
        if self.edit_views.iter().any(|v| v.view_id == view_id) {
            return Err(Error::Conflict(format!("view {view_id} is already an edit view")));
        }
        let image = check_image(renderer, view_id, image)?;
        self.ensure_targets(renderer)?;
        self.targets.push(load_target(renderer, view_id)?);
        self.edit_views.push(EditView { view_id, image });
        Ok(())
    }

    fn ensure_targets(&mut self, renderer: &Renderer) -> Result<()> {
        if self.targets.len() != self.edit_views.len() {
            self.targets = self
                .edit_views
                .iter()
                .map(|v| load_target(renderer, v.view_id))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn evaluate(&self, renderer: &Renderer, want_grads: bool) -> Result<StepEval> {
        let n_g = renderer.scene.gaussians.len();
        let bg = renderer.scene.background;
        let total: usize = self.edit_views.iter().map(|v| v.image.data.len()).sum();
        let inv = 1.0 / total as f64;
        let mut loss = 0.0;
        let mut grads = self.params.zeros_like();
        for (target, view) in self.targets.iter().zip(&self.edit_views) {
            let acts = self.params.forward(&target.eval)?;
            let colors = self.params.colors_from(&target.eval, &acts, 1.0, None);
            let img = composite_forward(&target.blend, &scatter(&target.eval.ids, &colors, n_g), bg)?;
            let mut d_image = vec![0.0; img.data.len()];
            for ((d, o), t) in d_image.iter_mut().zip(&img.data).zip(&view.image.data) {
                let r = o - t;
                loss += r.abs();
                *d = if r > 0.0 {
                    inv
                } else if r < 0.0 {
                    -inv
                } else {
                    0.0
                };
            }
            if want_grads {
                let d_colors = composite_backward(&target.blend, &d_image)?;
                let rows: Vec<Vec3> = target.eval.ids.iter().map(|&g| d_colors[g as usize]).collect();
                self.backward(&target.eval, &acts, &colors, &rows, &mut grads);
            }
        }
        Ok(StepEval { loss: loss * inv, grads })
    }

    fn backward(&self, ev: &ViewEval, acts: &EditActs, colors: &[Vec3], d_colors: &[Vec3], grads: &mut EditParams) {
        let n = ev.len();
        let p = &self.params;
        let hidden = p.head.in_dim;
        let mut d_edit = vec![0.0; n * 3];
        let mut d_alpha = vec![0.0; n];
        let mut d_cspec = vec![0.0; n * 3];
        for i in 0..n {
            let a = acts.seg.alpha[i];
            for c in 0..3 {
                let cg = colors[i][c];
                let dz = d_colors[i][c] * cg * (1.0 - cg);
                let k = i * 3 + c;
                d_edit[k] = a * dz;
                d_alpha[i] += dz * (acts.edit[k] - ev.base[k]);
                d_cspec[k] = dz;
            }
        }
        let head_in = acts.h2.as_ref().unwrap_or(&ev.h2);
        let dh2 = p.head.backward(head_in, &d_edit, n, &mut grads.head, p.trunk.is_some());
        if let (Some([l1, l2]), Some(g), Some(mut dh2)) = (&p.trunk, grads.trunk.as_mut(), dh2) {
            let (x0, h1, h2) = (acts.x0.as_ref().unwrap(), acts.h1.as_ref().unwrap(), acts.h2.as_ref().unwrap());
            relu_backward(h2, &mut dh2);
            let mut dh1 = l2.backward(h1, &dh2, n, &mut g[1], true).unwrap();
            relu_backward(h1, &mut dh1);
            l1.backward(x0, &dh1, n, &mut g[0], false);
        }
        p.seg.backward(&acts.seg, &d_alpha, hidden, &mut grads.seg, false);
        if let (Some(sp), Some(g), Some(sa)) = (&p.specular, grads.specular.as_mut(), acts.specular.as_ref()) {
            sp.backward(sa, &d_cspec, g, false);
        }
    }

    /// Mean L1 over all edit-view pixels for the current parameters.
    pub fn current_loss(&mut self, renderer: &Renderer) -> Result<f64> {
        self.ensure_targets(renderer)?;
        Ok(self.evaluate(renderer, false)?.loss)
    }

    /// Loss and exact gradient with respect to the session parameters, without a step.
    pub fn loss_and_grad(&mut self, renderer: &Renderer) -> Result<(f64, EditParams)> {
        self.ensure_targets(renderer)?;
        let ev = self.evaluate(renderer, true)?;
        Ok((ev.loss, ev.grads))
    }

    pub fn finetune(&mut self, renderer: &Renderer, steps: Option<usize>) -> Result<FinetuneReport> {
        self.finetune_with(renderer, steps, |_, _| {})
    }

    /// Run up to `steps` (default from config) Adam steps with plateau early
    /// stopping; ends with the best parameters seen. `observe` runs after each step.
    pub fn finetune_with(
        &mut self,
        renderer: &Renderer,
        steps: Option<usize>,
        mut observe: impl FnMut(EditProgress, &EditParams),
    ) -> Result<FinetuneReport> {
        if self.status == SessionStatus::Running {
            return Err(Error::Conflict("a fine-tune is already running".into()));
        }
        self.ensure_targets(renderer)?;
        let steps = steps.unwrap_or(self.config.steps);
        let lrs = vec![self.config.lr; self.params.tensors().len()];
        let start = Instant::now();
        self.status = SessionStatus::Running;
        let mut history: Vec<f64> = Vec::with_capacity(steps);
        let mut best: Option<(f64, EditParams, AdamState)> = None;
        let (mut stopped_early, mut timed_out) = (false, false);
        let mut run = || -> Result<()> {
            for _ in 0..steps {
                let ev = self.evaluate(renderer, true)?;
                if !ev.loss.is_finite() || !ev.grads.all_finite() {
                    return Err(Error::numeric(format!("edit fine-tune diverged at step {}", self.steps_done)));
                }
                if best.as_ref().is_none_or(|b| ev.loss < b.0) {
                    best = Some((ev.loss, self.params.clone(), self.adam.clone()));
                }
                history.push(ev.loss);
                self.adam.update(&mut self.params, &ev.grads, &lrs)?;
                self.steps_done += 1;
                self.loss = Some(ev.loss);
                observe(
                    EditProgress {
                        step: self.steps_done,
                        loss: ev.loss,
                    },
                    &self.params,
                );
                let w = self.config.plateau_window;
                if w > 0 && history.len() > w {
                    let old = history[history.len() - 1 - w];
                    if old > 0.0 && (old - ev.loss) / old < self.config.plateau_tolerance {
                        stopped_early = true;
                        break;
                    }
                }
                if self.config.max_seconds.is_some_and(|m| start.elapsed().as_secs_f64() > m) {
                    timed_out = true;
                    break;
                }
            }
            Ok(())
        };
        let outcome = run();
        let initial_loss = history.first().copied().unwrap_or(f64::NAN);
        if let Err(e) = outcome {
            self.status = SessionStatus::Failed;
            if let Some((l, p, a)) = best {
                self.params = p;
                self.adam = a;
                self.loss = Some(l);
            }
            return Err(e);
        }
        // The parameters after the last update have not been scored yet.
        let last = self.evaluate(renderer, false)?.loss;
        let mut best_loss = last;
        if let Some((l, p, a)) = best {
            if l < last {
                self.params = p;
                self.adam = a;
                best_loss = l;
            }
        }
        self.loss = Some(best_loss);
        self.status = SessionStatus::Done;
        Ok(FinetuneReport {
            steps_run: history.len(),
            final_loss: last,
            best_loss,
            initial_loss,
            stopped_early,
            timed_out,
        })
    }

    pub fn render_edited(&self, renderer: &Renderer, camera: &Camera, s: f64) -> Result<Image> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::contract("specular scale must be a finite value >= 0"));
        }
        renderer.render(
            camera,
            Shading::Edited {
                params: &self.params,
                s,
            },
        )
    }

    pub fn render_mask(&self, renderer: &Renderer, camera: &Camera) -> Result<GrayImage> {
        renderer.render_mask(camera, &self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(SESSION_MAGIC);
        w.u32(SESSION_VERSION);
        w.bytes(&self.base_hash);
        w.blob(self.id.as_bytes());
        w.blob(&serde_json::to_vec(&self.config).map_err(|e| Error::Format(e.to_string()))?);
        w.u32(self.status.code());
        w.u64(self.steps_done as u64);
        w.f64(self.loss.unwrap_or(f64::NAN));
        let flat = self.params.flatten();
        w.u64(flat.len() as u64);
        w.f64s(&flat);
        w.u64(self.adam.t);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.f64s(m);
            w.f64s(v);
        }
        w.u32(self.edit_views.len() as u32);
        for v in &self.edit_views {
            w.u32(v.view_id);
            w.blob(&v.image.encode_png()?);
        }
        Ok(w.into_inner())
    }

    /// Restore a session against the renderer holding its base checkpoint.
    pub fn from_bytes(bytes: &[u8], renderer: &Renderer, base_hash: [u8; 32]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(SESSION_MAGIC)?;
        let version = r.u32()?;
        if version != SESSION_VERSION {
            return Err(Error::Format(format!("unsupported session version {version}")));
        }
        let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
        if stored != base_hash {
            return Err(Error::contract("session was created against a different checkpoint"));
        }
        let id = String::from_utf8(r.blob()?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let config: EditConfig = serde_json::from_slice(r.blob()?).map_err(|e| Error::Format(e.to_string()))?;
        let mut status = SessionStatus::from_code(r.u32()?)?;
        if status == SessionStatus::Running {
            status = SessionStatus::Done;
        }
        let steps_done = r.u64()? as usize;
        let loss = Some(r.f64()?).filter(|l| !l.is_nan());
        let mut params = EditParams::from_base(&renderer.model, config.wide_finetune, config.seg_uses_diffuse, config.seed);
        let n = r.u64()? as usize;
        params.assign(&r.f64s(n)?)?;
        let mut adam = AdamState::new(&params);
        adam.t = r.u64()?;
        for (m, v) in adam.m.iter_mut().zip(adam.v.iter_mut()) {
            *m = r.f64s(m.len())?;
            *v = r.f64s(v.len())?;
        }
        let nv = r.u32()? as usize;
        let mut edit_views = Vec::with_capacity(nv);
        for _ in 0..nv {
            let view_id = r.u32()?;
            let image = Image::decode_png(r.blob()?)?;
            edit_views.push(EditView { view_id, image });
        }
        let mut s = Self {
            id,
            base_hash,
            config,
            edit_views,
            params,
            adam,
            status,
            steps_done,
            loss,
            targets: Vec::new(),
        };
        s.ensure_targets(renderer)?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, renderer: &Renderer, base_hash: [u8; 32]) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, renderer, base_hash)
    }
}

const SESSION_MAGIC: &[u8; 4] = b"VGSS";
const SESSION_VERSION: u32 = 1;

/// `sigmoid(C″diff + Cspec)` for given per-gaussian values:
/// `C″diff = Cdiff + α (C′diff − Cdiff)`.
pub fn edit_color(cdiff: Vec3, cdiff_edit: Vec3, cspec: Vec3, alpha: f64, s: f64) -> Vec3 {
    crate::appearance::combine(crate::appearance::blend_diffuse(cdiff, cdiff_edit, alpha), cspec, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_color_arithmetic() {
        let c = edit_color([0.0; 3], [2.0; 3], [0.0; 3], 0.5, 1.0);
        assert!((c[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        let cd = [0.2, -0.4, 1.0];
        let cs = [0.1, 0.0, -0.3];
        assert_eq!(edit_color(cd, [9.0; 3], cs, 0.0, 1.0), crate::appearance::combine(cd, cs, 1.0));
        let full = edit_color(cd, [9.0, 8.0, 7.0], cs, 1.0, 1.0);
        let want = crate::appearance::combine([9.0, 8.0, 7.0], cs, 1.0);
        assert!((0..3).all(|c| (full[c] - want[c]).abs() < 1e-15));
    }

    #[test]
    fn status_codes_round_trip() {
        for s in [SessionStatus::Created, SessionStatus::Running, SessionStatus::Done, SessionStatus::Failed] {
            assert_eq!(SessionStatus::from_code(s.code()).unwrap(), s);
        }
        assert!(SessionStatus::from_code(9).is_err());
    }
}
