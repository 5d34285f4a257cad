//! Per-gaussian color model: a view-independent diffuse MLP, a specular MLP
//! that reads the diffuse hidden layers through one-way residual connections,
//! a sigmoid combine with a render-time specular scale, a soft-segmentation
//! head, and the single-network baseline.
//!
//! All backward passes are hand written. Residual inputs (`h1`, `h2` into the
//! specular MLP and `h2` into the segmentation MLP) are treated as constants
//! during backpropagation, so neither branch ever trains the diffuse weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Footprint, HashGrid, HashGridConfig, DIR_DIM};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::nn::{concat_rows, relu_backward, relu_inplace, slice_cols, Dense, Params};

/// Initial bias of the segmentation output; `sigmoid(-2) ≈ 0.12`.
pub const SEG_INIT_BIAS: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Separate diffuse and specular branches.
    Decoupled,
    /// One MLP over features and direction.
    Vanilla,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grid: HashGridConfig,
    pub hidden: usize,
    pub seg_hidden: usize,
    pub mode: ColorMode,
    /// Feed the diffuse hidden activations into the segmentation MLP.
    pub seg_uses_diffuse: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden: 64,
            seg_hidden: 32,
            mode: ColorMode::Decoupled,
            seg_uses_diffuse: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffuseMlp {
    pub l1: Dense,
    pub l2: Dense,
    pub head: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffuseActs {
    pub n: usize,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub cdiff: Vec<f64>,
}

impl DiffuseMlp {
    pub fn new(feat: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Dense::kaiming(feat, hidden, rng),
            l2: Dense::kaiming(hidden, hidden, rng),
            head: Dense::kaiming(hidden, 3, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Hidden activations `h1`, `h2` only.
    pub fn trunk(&self, f: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut h1 = self.l1.forward(f, n);
        relu_inplace(&mut h1);
        let mut h2 = self.l2.forward(&h1, n);
        relu_inplace(&mut h2);
        (h1, h2)
    }

    pub fn forward(&self, f: &[f64], n: usize) -> Result<DiffuseActs> {
        if f.len() != n * self.l1.in_dim {
            return Err(Error::contract("diffuse input has the wrong dimension"));
        }
        let (h1, h2) = self.trunk(f, n);
        let cdiff = self.head.forward(&h2, n);
        Ok(DiffuseActs { n, h1, h2, cdiff })
    }

    /// Backpropagate `d_cdiff`; returns `dL/df` when `want_df`.
    pub fn backward(&self, f: &[f64], acts: &DiffuseActs, d_cdiff: &[f64], grad: &mut DiffuseMlp, want_df: bool) -> Option<Vec<f64>> {
        let n = acts.n;
        let mut dh2 = self.head.backward(&acts.h2, d_cdiff, n, &mut grad.head, true).unwrap();
        relu_backward(&acts.h2, &mut dh2);
        let mut dh1 = self.l2.backward(&acts.h1, &dh2, n, &mut grad.l2, true).unwrap();
        relu_backward(&acts.h1, &mut dh1);
        self.l1.backward(f, &dh1, n, &mut grad.l1, want_df)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecularMlp {
    pub l1: Dense,
    pub l2: Dense,
    pub l3: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecularActs {
    pub n: usize,
    pub x0: Vec<f64>,
    pub s1: Vec<f64>,
    pub cat2: Vec<f64>,
    pub s2: Vec<f64>,
    pub cat3: Vec<f64>,
    pub cspec: Vec<f64>,
}

impl SpecularMlp {
    pub fn new(feat: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Dense::kaiming(feat + DIR_DIM, hidden, rng),
            l2: Dense::kaiming(2 * hidden, hidden, rng),
            l3: Dense::kaiming(2 * hidden, 3, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
            l3: self.l3.zeros_like(),
        }
    }

    fn hidden(&self) -> usize {
        self.l1.out_dim
    }

    /// `f`, `dirs`, `h1`, `h2` are per-sample rows.
    pub fn forward(&self, f: &[f64], dirs: &[f64], h1: &[f64], h2: &[f64], n: usize) -> Result<SpecularActs> {
        let h = self.hidden();
        let feat = self.l1.in_dim - DIR_DIM;
        if f.len() != n * feat || dirs.len() != n * DIR_DIM || h1.len() != n * h || h2.len() != n * h {
            return Err(Error::contract("specular inputs have the wrong dimension"));
        }
        let x0 = concat_rows(f, feat, dirs, DIR_DIM, n);
        let mut s1 = self.l1.forward(&x0, n);
        relu_inplace(&mut s1);
        let cat2 = concat_rows(&s1, h, h1, h, n);
        let mut s2 = self.l2.forward(&cat2, n);
        relu_inplace(&mut s2);
        let cat3 = concat_rows(&s2, h, h2, h, n);
        let cspec = self.l3.forward(&cat3, n);
        Ok(SpecularActs {
            n,
            x0,
            s1,
            cat2,
            s2,
            cat3,
            cspec,
        })
    }

    /// Backpropagate `d_cspec`. Gradients reaching the residual inputs are
    /// dropped; the returned `dL/df` covers only the feature input.
    pub fn backward(&self, acts: &SpecularActs, d_cspec: &[f64], grad: &mut SpecularMlp, want_df: bool) -> Option<Vec<f64>> {
        let n = acts.n;
        let h = self.hidden();
        let feat = self.l1.in_dim - DIR_DIM;
        let dcat3 = self.l3.backward(&acts.cat3, d_cspec, n, &mut grad.l3, true).unwrap();
        let mut ds2 = slice_cols(&dcat3, 2 * h, 0, h);
        relu_backward(&acts.s2, &mut ds2);
        let dcat2 = self.l2.backward(&acts.cat2, &ds2, n, &mut grad.l2, true).unwrap();
        let mut ds1 = slice_cols(&dcat2, 2 * h, 0, h);
        relu_backward(&acts.s1, &mut ds1);
        let dx0 = self.l1.backward(&acts.x0, &ds1, n, &mut grad.l1, want_df)?;
        Some(slice_cols(&dx0, feat + DIR_DIM, 0, feat))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegMlp {
    pub l1: Dense,
    pub l2: Dense,
    pub uses_hidden: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegActs {
    pub n: usize,
    pub x0: Vec<f64>,
    pub s1: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl SegMlp {
    pub fn new(feat: usize, hidden: usize, seg_hidden: usize, uses_hidden: bool, rng: &mut ChaCha8Rng) -> Self {
        let in_dim = feat + if uses_hidden { hidden } else { 0 };
        let mut l2 = Dense::kaiming(seg_hidden, 1, rng);
        l2.bias[0] = SEG_INIT_BIAS;
        Self {
            l1: Dense::kaiming(in_dim, seg_hidden, rng),
            l2,
            uses_hidden,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
            uses_hidden: self.uses_hidden,
        }
    }

    fn feature_dim(&self, hidden: usize) -> usize {
        self.l1.in_dim - if self.uses_hidden { hidden } else { 0 }
    }

    /// `α = sigmoid(MLP(f ⊕ h_diff))`; `h_diff` is ignored unless `uses_hidden`.
    pub fn forward(&self, f: &[f64], h_diff: &[f64], hidden: usize, n: usize) -> Result<SegActs> {
        let feat = self.feature_dim(hidden);
        if f.len() != n * feat || (self.uses_hidden && h_diff.len() != n * hidden) {
            return Err(Error::contract("segmentation inputs have the wrong dimension"));
        }
        let x0 = if self.uses_hidden {
            concat_rows(f, feat, h_diff, hidden, n)
        } else {
            f.to_vec()
        };
        let mut s1 = self.l1.forward(&x0, n);
        relu_inplace(&mut s1);
        let alpha = self.l2.forward(&s1, n).into_iter().map(sigmoid).collect();
        Ok(SegActs { n, x0, s1, alpha })
    }

    /// Backpropagate `d_alpha`; `dL/df` excludes the detached `h_diff` input.
    pub fn backward(&self, acts: &SegActs, d_alpha: &[f64], hidden: usize, grad: &mut SegMlp, want_df: bool) -> Option<Vec<f64>> {
        let n = acts.n;
        let d_logit: Vec<f64> = d_alpha.iter().zip(&acts.alpha).map(|(d, a)| d * a * (1.0 - a)).collect();
        let mut ds1 = self.l2.backward(&acts.s1, &d_logit, n, &mut grad.l2, true).unwrap();
        relu_backward(&acts.s1, &mut ds1);
        let dx0 = self.l1.backward(&acts.x0, &ds1, n, &mut grad.l1, want_df)?;
        let feat = self.feature_dim(hidden);
        Some(slice_cols(&dx0, self.l1.in_dim, 0, feat))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VanillaMlp {
    pub l1: Dense,
    pub l2: Dense,
    pub head: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VanillaActs {
    pub n: usize,
    pub x0: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub cgs: Vec<f64>,
}

impl VanillaMlp {
    pub fn new(feat: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Dense::kaiming(feat + DIR_DIM, hidden, rng),
            l2: Dense::kaiming(hidden, hidden, rng),
            head: Dense::kaiming(hidden, 3, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Hidden activations for per-sample `f ⊕ dir` rows.
    pub fn trunk(&self, f: &[f64], dirs: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let feat = self.l1.in_dim - DIR_DIM;
        if f.len() != n * feat || dirs.len() != n * DIR_DIM {
            return Err(Error::contract("vanilla inputs have the wrong dimension"));
        }
        let x0 = concat_rows(f, feat, dirs, DIR_DIM, n);
        let mut h1 = self.l1.forward(&x0, n);
        relu_inplace(&mut h1);
        let mut h2 = self.l2.forward(&h1, n);
        relu_inplace(&mut h2);
        Ok((x0, h1, h2))
    }

    pub fn forward(&self, f: &[f64], dirs: &[f64], n: usize) -> Result<VanillaActs> {
        let (x0, h1, h2) = self.trunk(f, dirs, n)?;
        let cgs = self.head.forward(&h2, n).into_iter().map(sigmoid).collect();
        Ok(VanillaActs { n, x0, h1, h2, cgs })
    }

    /// Backpropagate `d_cgs` (post-sigmoid); returns `dL/df`.
    pub fn backward(&self, acts: &VanillaActs, d_cgs: &[f64], grad: &mut VanillaMlp, want_df: bool) -> Option<Vec<f64>> {
        let n = acts.n;
        let d_logit: Vec<f64> = d_cgs.iter().zip(&acts.cgs).map(|(d, c)| d * c * (1.0 - c)).collect();
        let mut dh2 = self.head.backward(&acts.h2, &d_logit, n, &mut grad.head, true).unwrap();
        relu_backward(&acts.h2, &mut dh2);
        let mut dh1 = self.l2.backward(&acts.h1, &dh2, n, &mut grad.l2, true).unwrap();
        relu_backward(&acts.h1, &mut dh1);
        let dx0 = self.l1.backward(&acts.x0, &dh1, n, &mut grad.l1, want_df)?;
        let feat = self.l1.in_dim - DIR_DIM;
        Some(slice_cols(&dx0, feat + DIR_DIM, 0, feat))
    }
}

/// `sigmoid(Cdiff + s·Cspec)`, elementwise.
#[inline]
pub fn combine(cdiff: [f64; 3], cspec: [f64; 3], s: f64) -> [f64; 3] {
    std::array::from_fn(|c| sigmoid(cdiff[c] + s * cspec[c]))
}

/// `Cdiff + α (C′diff − Cdiff)`; exactly `Cdiff` when `α = 0` or `C′diff = Cdiff`.
#[inline]
pub fn blend_diffuse(cdiff: [f64; 3], cdiff_edit: [f64; 3], alpha: f64) -> [f64; 3] {
    std::array::from_fn(|c| cdiff[c] + alpha * (cdiff_edit[c] - cdiff[c]))
}

/// Which gaussians are evaluated and which `(gaussian, direction)` samples are colored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleLayout {
    /// Unique scene gaussian indices.
    pub gaussians: Vec<u32>,
    /// Per sample: slot into `gaussians`.
    pub sample_slot: Vec<u32>,
    /// Per sample: `DIR_DIM` direction-basis values.
    pub dirs: Vec<f64>,
}

impl SampleLayout {
    pub fn sample_count(&self) -> usize {
        self.sample_slot.len()
    }

    fn gather<const W: usize>(&self, per_gaussian: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sample_count() * W);
        for &s in &self.sample_slot {
            out.extend_from_slice(&per_gaussian[s as usize * W..(s as usize + 1) * W]);
        }
        out
    }

    fn gather_dyn(&self, per_gaussian: &[f64], width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sample_count() * width);
        for &s in &self.sample_slot {
            out.extend_from_slice(&per_gaussian[s as usize * width..(s as usize + 1) * width]);
        }
        out
    }

    fn scatter_add(&self, per_sample: &[f64], width: usize, per_gaussian: &mut [f64]) {
        for (i, &s) in self.sample_slot.iter().enumerate() {
            let dst = &mut per_gaussian[s as usize * width..(s as usize + 1) * width];
            for (d, v) in dst.iter_mut().zip(&per_sample[i * width..(i + 1) * width]) {
                *d += v;
            }
        }
    }
}

/// Forward intermediates of one [`AppearanceModel::forward`] call.
#[derive(Clone, Debug)]
pub struct AppearanceCache {
    pub generation: u64,
    pub spec_scale: f64,
    /// Per gaussian slot, `feat` values.
    pub f: Vec<f64>,
    pub diffuse: Option<DiffuseActs>,
    pub specular: Option<SpecularActs>,
    pub vanilla: Option<VanillaActs>,
    pub seg: Option<SegActs>,
    /// Per sample rgb in (0, 1).
    pub cgs: Vec<f64>,
    /// Per sample pre-sigmoid specular (zeros in vanilla mode).
    pub cspec: Vec<f64>,
    /// Per sample α when segmentation was evaluated.
    pub alpha: Option<Vec<f64>>,
}

impl AppearanceCache {
    pub fn cgs_of(&self, sample: usize) -> [f64; 3] {
        [self.cgs[sample * 3], self.cgs[sample * 3 + 1], self.cgs[sample * 3 + 2]]
    }

    /// Per gaussian slot `Cdiff` (decoupled mode).
    pub fn cdiff_of(&self, slot: usize) -> Option<[f64; 3]> {
        self.diffuse
            .as_ref()
            .map(|d| [d.cdiff[slot * 3], d.cdiff[slot * 3 + 1], d.cdiff[slot * 3 + 2]])
    }
}

/// All trainable appearance symbols: hash tables, diffuse, specular,
/// segmentation and baseline weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceModel {
    pub config: ModelConfig,
    pub grid: HashGrid,
    pub diffuse: DiffuseMlp,
    pub specular: SpecularMlp,
    pub seg: SegMlp,
    pub vanilla: VanillaMlp,
    /// Bumped on every parameter update; caches from older generations are stale.
    pub generation: u64,
}

impl AppearanceModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let grid = HashGrid::new(config.grid.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let feat = grid.output_dim();
        let h = config.hidden;
        let diffuse = DiffuseMlp::new(feat, h, &mut rng);
        let specular = SpecularMlp::new(feat, h, &mut rng);
        let seg = SegMlp::new(feat, h, config.seg_hidden, config.seg_uses_diffuse, &mut rng);
        let vanilla = VanillaMlp::new(feat, h, &mut rng);
        Ok(Self {
            config,
            grid,
            diffuse,
            specular,
            seg,
            vanilla,
            generation: 0,
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            grid: HashGrid {
                config: self.grid.config.clone(),
                tables: self.grid.zeros_like(),
            },
            diffuse: self.diffuse.zeros_like(),
            specular: self.specular.zeros_like(),
            seg: self.seg.zeros_like(),
            vanilla: self.vanilla.zeros_like(),
            generation: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.grid.output_dim()
    }

    pub fn fresh_seg(&self, uses_hidden: bool, seed: u64) -> SegMlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SegMlp::new(self.feature_dim(), self.config.hidden, self.config.seg_hidden, uses_hidden, &mut rng)
    }

    /// Hash features for each footprint, row per entry.
    pub fn encode(&self, footprints: &[&Footprint]) -> Vec<f64> {
        let d = self.feature_dim();
        let mut f = vec![0.0; footprints.len() * d];
        for (row, fp) in f.chunks_exact_mut(d).zip(footprints) {
            self.grid.encode(fp, row);
        }
        f
    }

    /// Evaluate colors (and α when `with_seg`) for every sample of `layout`.
    /// `footprints` is indexed by scene gaussian index.
    pub fn forward(&self, layout: &SampleLayout, footprints: &[Footprint], spec_scale: f64, with_seg: bool) -> Result<AppearanceCache> {
        let fps: Vec<&Footprint> = layout.gaussians.iter().map(|&g| &footprints[g as usize]).collect();
        let f = self.encode(&fps);
        let ng = layout.gaussians.len();
        let ns = layout.sample_count();
        let feat = self.feature_dim();
        let hidden = self.config.hidden;
        let f_s = layout.gather_dyn(&f, feat);
        let mut cache = AppearanceCache {
            generation: self.generation,
            spec_scale,
            f,
            diffuse: None,
            specular: None,
            vanilla: None,
            seg: None,
            cgs: vec![0.0; ns * 3],
            cspec: vec![0.0; ns * 3],
            alpha: None,
        };
        match self.config.mode {
            ColorMode::Decoupled => {
                let d = self.diffuse.forward(&cache.f, ng)?;
                let h1_s = layout.gather_dyn(&d.h1, hidden);
                let h2_s = layout.gather_dyn(&d.h2, hidden);
                let sp = self.specular.forward(&f_s, &layout.dirs, &h1_s, &h2_s, ns)?;
                let cdiff_s = layout.gather::<3>(&d.cdiff);
                for i in 0..ns {
                    let cd = [cdiff_s[i * 3], cdiff_s[i * 3 + 1], cdiff_s[i * 3 + 2]];
                    let cs = [sp.cspec[i * 3], sp.cspec[i * 3 + 1], sp.cspec[i * 3 + 2]];
                    cache.cgs[i * 3..i * 3 + 3].copy_from_slice(&combine(cd, cs, spec_scale));
                }
                cache.cspec.copy_from_slice(&sp.cspec);
                if with_seg {
                    let seg = self.seg.forward(&cache.f, &d.h2, hidden, ng)?;
                    cache.alpha = Some(layout.gather::<1>(&seg.alpha));
                    cache.seg = Some(seg);
                }
                cache.diffuse = Some(d);
                cache.specular = Some(sp);
            }
            ColorMode::Vanilla => {
                let v = self.vanilla.forward(&f_s, &layout.dirs, ns)?;
                cache.cgs.copy_from_slice(&v.cgs);
                if with_seg {
                    let seg = self.seg.forward(&f_s, &v.h2, hidden, ns)?;
                    cache.alpha = Some(seg.alpha.clone());
                    cache.seg = Some(seg);
                }
                cache.vanilla = Some(v);
            }
        }
        Ok(cache)
    }

    /// Reverse pass for `dL/dCgs` per sample, optional extra `dL/dCspec` per
    /// sample (the specular penalty) and optional `dL/dα` per sample.
    /// Accumulates into `grads`, including the hash tables.
    pub fn backward(
        &self,
        layout: &SampleLayout,
        footprints: &[Footprint],
        cache: &AppearanceCache,
        d_cgs: &[f64],
        d_cspec_extra: Option<&[f64]>,
        d_alpha: Option<&[f64]>,
        grads: &mut AppearanceModel,
    ) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::contract("stale appearance cache"));
        }
        let ng = layout.gaussians.len();
        let ns = layout.sample_count();
        let feat = self.feature_dim();
        let hidden = self.config.hidden;
        if d_cgs.len() != ns * 3 {
            return Err(Error::contract("color gradient has the wrong length"));
        }
        let mut d_f = vec![0.0; ng * feat];
        match self.config.mode {
            ColorMode::Decoupled => {
                let d = cache.diffuse.as_ref().ok_or_else(|| Error::contract("cache lacks diffuse activations"))?;
                let sp = cache.specular.as_ref().ok_or_else(|| Error::contract("cache lacks specular activations"))?;
                let s = cache.spec_scale;
                let mut dz = vec![0.0; ns * 3];
                for i in 0..ns * 3 {
                    let c = cache.cgs[i];
                    dz[i] = d_cgs[i] * c * (1.0 - c);
                }
                let mut d_cspec: Vec<f64> = dz.iter().map(|v| s * v).collect();
                if let Some(extra) = d_cspec_extra {
                    for (a, b) in d_cspec.iter_mut().zip(extra) {
                        *a += b;
                    }
                }
                let mut d_cdiff = vec![0.0; ng * 3];
                layout.scatter_add(&dz, 3, &mut d_cdiff);
                if let Some(df_s) = self.specular.backward(sp, &d_cspec, &mut grads.specular, true) {
                    layout.scatter_add(&df_s, feat, &mut d_f);
                }
                if let (Some(da), Some(seg)) = (d_alpha, cache.seg.as_ref()) {
                    let mut da_g = vec![0.0; ng];
                    layout.scatter_add(da, 1, &mut da_g);
                    let df = self.seg.backward(seg, &da_g, hidden, &mut grads.seg, true).unwrap();
                    add_into(&mut d_f, &df);
                }
                let df = self.diffuse.backward(&cache.f, d, &d_cdiff, &mut grads.diffuse, true).unwrap();
                add_into(&mut d_f, &df);
            }
            ColorMode::Vanilla => {
                let v = cache.vanilla.as_ref().ok_or_else(|| Error::contract("cache lacks vanilla activations"))?;
                let df_s = self.vanilla.backward(v, d_cgs, &mut grads.vanilla, true).unwrap();
                layout.scatter_add(&df_s, feat, &mut d_f);
                if let (Some(da), Some(seg)) = (d_alpha, cache.seg.as_ref()) {
                    let df_s = self.seg.backward(seg, da, hidden, &mut grads.seg, true).unwrap();
                    layout.scatter_add(&df_s, feat, &mut d_f);
                }
            }
        }
        for (slot, &g) in layout.gaussians.iter().enumerate() {
            self.grid
                .backward(&footprints[g as usize], &d_f[slot * feat..(slot + 1) * feat], &mut grads.grid.tables);
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl Params for DiffuseMlp {
    fn tensors(&self) -> Vec<&[f64]> {
        [&self.l1, &self.l2, &self.head].into_iter().flat_map(|l| l.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.l1, &mut self.l2, &mut self.head].into_iter().flat_map(|l| l.tensors_mut()).collect()
    }
}

impl Params for SpecularMlp {
    fn tensors(&self) -> Vec<&[f64]> {
        [&self.l1, &self.l2, &self.l3].into_iter().flat_map(|l| l.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.l1, &mut self.l2, &mut self.l3].into_iter().flat_map(|l| l.tensors_mut()).collect()
    }
}

impl Params for SegMlp {
    fn tensors(&self) -> Vec<&[f64]> {
        [&self.l1, &self.l2].into_iter().flat_map(|l| l.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.l1, &mut self.l2].into_iter().flat_map(|l| l.tensors_mut()).collect()
    }
}

impl Params for VanillaMlp {
    fn tensors(&self) -> Vec<&[f64]> {
        [&self.l1, &self.l2, &self.head].into_iter().flat_map(|l| l.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.l1, &mut self.l2, &mut self.head].into_iter().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Parameter groups of the full model; the hash tables come first.
impl Params for AppearanceModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = vec![&self.grid.tables];
        t.extend(self.diffuse.tensors());
        t.extend(self.specular.tensors());
        t.extend(self.seg.tensors());
        t.extend(self.vanilla.tensors());
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = vec![&mut self.grid.tables];
        t.extend(self.diffuse.tensors_mut());
        t.extend(self.specular.tensors_mut());
        t.extend(self.seg.tensors_mut());
        t.extend(self.vanilla.tensors_mut());
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn zero_diffuse_gives_zero_color_and_hidden() {
        let d = DiffuseMlp::new(16, 64, &mut rng()).zeros_like();
        let a = d.forward(&[0.3; 16], 1).unwrap();
        assert!(a.cdiff.iter().all(|&v| v == 0.0));
        assert!(a.h1.iter().chain(&a.h2).all(|&v| v == 0.0));
        assert!(d.forward(&[0.0; 15], 1).is_err());
    }

    #[test]
    fn hand_built_single_path_diffuse() {
        let mut d = DiffuseMlp::new(2, 2, &mut rng()).zeros_like();
        // h1 = relu(2 f0), h2 = relu(3 h1 - 1), Cdiff_r = 0.5 h2 + 0.25.
        d.l1.weight[0] = 2.0;
        d.l2.weight[0] = 3.0;
        d.l2.bias[0] = -1.0;
        d.head.weight[0] = 0.5;
        d.head.bias[0] = 0.25;
        let a = d.forward(&[0.5, 9.0], 1).unwrap();
        assert_eq!(a.h1[0], 1.0);
        assert_eq!(a.h2[0], 2.0);
        assert_eq!(a.cdiff, vec![1.25, 0.0, 0.0]);
    }

    #[test]
    fn zero_specular_ignores_direction() {
        let s = SpecularMlp::new(16, 64, &mut rng()).zeros_like();
        let h = vec![0.5; 64];
        let a = s.forward(&[0.1; 16], &[0.3; 16], &h, &h, 1).unwrap();
        assert!(a.cspec.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn specular_depends_on_direction() {
        let s = SpecularMlp::new(16, 64, &mut rng());
        let h = vec![0.5; 64];
        let f = [0.1; 16];
        let d1 = crate::encoding::sh_basis([0.0, 0.0, 1.0]);
        let d2 = crate::encoding::sh_basis([1.0, 0.0, 0.0]);
        let a = s.forward(&f, &d1, &h, &h, 1).unwrap();
        let b = s.forward(&f, &d2, &h, &h, 1).unwrap();
        assert_ne!(a.cspec, b.cspec);
    }

    #[test]
    fn combine_values() {
        assert_eq!(combine([0.0; 3], [0.0; 3], 1.0), [0.5; 3]);
        let cd = [0.3, -1.0, 2.0];
        let cs = [1.0, 2.0, 3.0];
        assert_eq!(combine(cd, cs, 0.0), cd.map(sigmoid));
        let a = combine(cd, cs, 1.0);
        let b = combine(cd, cs, 1.5);
        assert!((0..3).all(|c| b[c] > a[c]));
    }

    #[test]
    fn seg_zero_weights_and_negative_bias() {
        let mut s = SegMlp::new(16, 64, 32, true, &mut rng()).zeros_like();
        let a = s.forward(&[0.2; 16], &[0.1; 64], 64, 1).unwrap();
        assert_eq!(a.alpha, vec![0.5]);
        s.l2.bias[0] = -10.0;
        let a = s.forward(&[0.2; 16], &[0.1; 64], 64, 1).unwrap();
        assert!((a.alpha[0] - 4.54e-5).abs() < 1e-7);
        let fresh = SegMlp::new(16, 64, 32, false, &mut rng());
        assert_eq!(fresh.l1.in_dim, 16);
        assert_eq!(fresh.l2.bias[0], SEG_INIT_BIAS);
    }

    #[test]
    fn vanilla_zero_weights_is_gray() {
        let v = VanillaMlp::new(16, 64, &mut rng()).zeros_like();
        let a = v.forward(&[0.2; 16], &[0.1; 16], 1).unwrap();
        assert_eq!(a.cgs, vec![0.5; 3]);
    }

    #[test]
    fn vanilla_output_depends_on_direction() {
        let v = VanillaMlp::new(16, 64, &mut rng());
        let f = [0.2; 16];
        let a = v.forward(&f, &crate::encoding::sh_basis([0.0, 1.0, 0.0]), 1).unwrap();
        let b = v.forward(&f, &crate::encoding::sh_basis([0.0, 0.0, 1.0]), 1).unwrap();
        assert_ne!(a.cgs, b.cgs);
    }

    #[test]
    fn blend_diffuse_identities() {
        let cd = [0.1, -0.7, 3.3];
        assert_eq!(blend_diffuse(cd, [5.0, 5.0, 5.0], 0.0), cd);
        assert_eq!(blend_diffuse(cd, cd, 0.37), cd);
        let out = blend_diffuse([0.0; 3], [2.0; 3], 0.5);
        assert!((sigmoid(out[0]) - 0.7311).abs() < 1e-4);
    }

    fn layout_for(model: &AppearanceModel) -> (SampleLayout, Vec<Footprint>) {
        let fps: Vec<Footprint> = (0..3).map(|i| model.grid.footprint([0.2 * i as f64, -0.1, 0.3])).collect();
        let dirs: Vec<f64> = [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 1.0, 0.0], [0.0, 0.6, -0.8]]
            .iter()
            .flat_map(|d| crate::encoding::sh_basis(*d))
            .collect();
        (
            SampleLayout {
                gaussians: vec![0, 2, 1],
                sample_slot: vec![0, 0, 1, 2],
                dirs,
            },
            fps,
        )
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let model = AppearanceModel::new(ModelConfig::default(), 5).unwrap();
        let (layout, fps) = layout_for(&model);
        let cache = model.forward(&layout, &fps, 1.0, true).unwrap();
        let mut g = model.zeros_like();
        model
            .backward(&layout, &fps, &cache, &[0.0; 12], None, Some(&[0.0; 4]), &mut g)
            .unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut model = AppearanceModel::new(ModelConfig::default(), 5).unwrap();
        let (layout, fps) = layout_for(&model);
        let cache = model.forward(&layout, &fps, 1.0, false).unwrap();
        model.generation += 1;
        let mut g = model.zeros_like();
        assert!(model.backward(&layout, &fps, &cache, &[0.0; 12], None, None, &mut g).is_err());
    }

    #[test]
    fn diffuse_output_does_not_depend_on_direction() {
        let model = AppearanceModel::new(ModelConfig::default(), 5).unwrap();
        let (mut layout, fps) = layout_for(&model);
        let a = model.forward(&layout, &fps, 1.0, false).unwrap();
        layout.dirs.iter_mut().for_each(|v| *v = -*v);
        let b = model.forward(&layout, &fps, 1.0, false).unwrap();
        assert_eq!(a.diffuse.unwrap().cdiff, b.diffuse.unwrap().cdiff);
        assert_ne!(a.cspec, b.cspec);
    }

    #[test]
    fn specular_only_loss_leaves_diffuse_gradient_zero() {
        let model = AppearanceModel::new(ModelConfig::default(), 9).unwrap();
        let (layout, fps) = layout_for(&model);
        let cache = model.forward(&layout, &fps, 1.0, false).unwrap();
        let mut g = model.zeros_like();
        let d_cspec: Vec<f64> = cache.cspec.iter().map(|c| 2.0 * c).collect();
        model
            .backward(&layout, &fps, &cache, &[0.0; 12], Some(&d_cspec), None, &mut g)
            .unwrap();
        assert!(g.diffuse.flatten().iter().all(|&v| v == 0.0));
        assert!(g.specular.flatten().iter().any(|&v| v != 0.0));
    }
}
