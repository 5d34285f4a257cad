//! Stage-1 appearance training over frozen blend records.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceModel, ColorMode, ModelConfig, SampleLayout};
use crate::encoding::{sh_basis, view_direction, Footprint};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::nn::Params;
use crate::optim::AdamState;
use crate::rasterizer::{precompute_blend, BlendRecord};
use crate::scene::Scene;

pub use crate::checkpoint::Checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub minibatch_tiles: usize,
    pub minibatches_per_batch: usize,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub lr_tables: f64,
    pub lr_mlp: f64,
    pub rng_seed: u64,
    pub multiview: bool,
    /// Minimum blend weight for a gaussian to count as visible in a tile.
    pub visibility_threshold: f64,
    /// Views never used for training.
    pub holdout_views: Vec<u32>,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            minibatch_tiles: 5,
            minibatches_per_batch: 64,
            lambda_start: 0.25,
            lambda_end: 0.05,
            lr_tables: 1e-2,
            lr_mlp: 2e-3,
            rng_seed: 0,
            multiview: true,
            visibility_threshold: 1.0 / 255.0,
            holdout_views: Vec::new(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.minibatch_tiles == 0 || self.minibatches_per_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if !(self.lambda_start >= self.lambda_end && self.lambda_end >= 0.0) {
            return Err(Error::config("require lambda_start >= lambda_end >= 0"));
        }
        if !(self.lr_tables >= 0.0 && self.lr_mlp >= 0.0) {
            return Err(Error::config("learning rates must be non-negative"));
        }
        if !(self.visibility_threshold > 0.0) {
            return Err(Error::config("visibility threshold must be positive"));
        }
        self.model.grid.validate()
    }
}

/// Linear from `lambda_start` at step 0 to `lambda_end` at the final step `steps − 1`.
pub fn lambda_schedule(step: usize, config: &TrainConfig) -> f64 {
    let last = config.steps.saturating_sub(1);
    if last == 0 {
        return config.lambda_start;
    }
    if step >= last {
        return config.lambda_end;
    }
    let t = step as f64 / last as f64;
    config.lambda_start + (config.lambda_end - config.lambda_start) * t
}

/// A tile of one training view; `view` indexes `scene.views`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileRef {
    pub view: usize,
    pub tile: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub anchor_gaussian: u32,
    pub tiles: Vec<TileRef>,
}

/// Where each gaussian is visible: per view, the tile with its largest weight.
#[derive(Clone, Debug, Default)]
pub struct VisibilityIndex {
    /// Per gaussian: `(view, tile, max weight)` with weight ≥ threshold, one per view.
    pub entries: Vec<Vec<(usize, usize, f64)>>,
    /// Gaussians visible in at least two views.
    pub anchors: Vec<u32>,
}

impl VisibilityIndex {
    pub fn build(blends: &[BlendRecord], views: &[usize], n_gaussians: usize, threshold: f64) -> Self {
        let mut entries: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_gaussians];
        let mut best: Vec<(usize, f64)> = vec![(0, 0.0); n_gaussians];
        for &v in views {
            let mut touched = Vec::new();
            for (tile_idx, tile) in blends[v].tiles.iter().enumerate() {
                for (l, w) in tile.max_weights().into_iter().enumerate() {
                    let g = tile.gaussians[l] as usize;
                    if w >= threshold {
                        if best[g].1 == 0.0 {
                            touched.push(g);
                        }
                        if w > best[g].1 {
                            best[g] = (tile_idx, w);
                        }
                    }
                }
            }
            touched.sort_unstable();
            for g in touched {
                entries[g].push((v, best[g].0, best[g].1));
                best[g] = (0, 0.0);
            }
        }
        let anchors = (0..n_gaussians as u32).filter(|&g| entries[g as usize].len() >= 2).collect();
        Self { entries, anchors }
    }
}

/// One anchor visible in ≥ 2 views and up to `k` tiles from distinct views
/// where it has its peak weight.
pub fn build_minibatch(index: &VisibilityIndex, k: usize, rng: &mut impl Rng) -> Result<MiniBatch> {
    if index.anchors.is_empty() {
        return Err(Error::config("scene is degenerate: no gaussian is visible in two views"));
    }
    let anchor = index.anchors[rng.random_range(0..index.anchors.len())];
    let vis = &index.entries[anchor as usize];
    let picks = index::sample(rng, vis.len(), k.min(vis.len()));
    let tiles = picks
        .into_iter()
        .map(|i| TileRef {
            view: vis[i].0,
            tile: vis[i].1,
        })
        .collect();
    Ok(MiniBatch {
        anchor_gaussian: anchor,
        tiles,
    })
}

/// Loss terms and gradients of one batch.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: f64,
    pub l1: f64,
    pub penalty: f64,
    pub grads: AppearanceModel,
    pub samples: usize,
}

/// Per-gaussian hash footprints for a scene; geometry is frozen, so these are reused.
pub fn scene_footprints(model: &AppearanceModel, scene: &Scene) -> Vec<Footprint> {
    scene.gaussians.par_iter().map(|g| model.grid.footprint(g.mean)).collect()
}

/// A training run in progress.
pub struct Trainer<'a> {
    pub scene: &'a Scene,
    pub config: TrainConfig,
    /// Aligned with `scene.views`.
    pub blends: Vec<BlendRecord>,
    pub footprints: Vec<Footprint>,
    pub visibility: VisibilityIndex,
    pub train_views: Vec<usize>,
    pub model: AppearanceModel,
    pub adam: AdamState,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: &'a Scene, config: TrainConfig) -> Result<Self> {
        let blends = scene
            .views
            .par_iter()
            .map(|v| precompute_blend(scene, v.view_id))
            .collect::<Result<Vec<_>>>()?;
        Self::with_blends(scene, config, blends)
    }

    pub fn with_blends(scene: &'a Scene, config: TrainConfig, blends: Vec<BlendRecord>) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        if blends.len() != scene.views.len() {
            return Err(Error::contract("one blend record per view is required"));
        }
        for id in &config.holdout_views {
            scene.view(*id)?;
        }
        let train_views: Vec<usize> = (0..scene.views.len())
            .filter(|&i| !config.holdout_views.contains(&scene.views[i].view_id))
            .collect();
        if train_views.is_empty() {
            return Err(Error::config("no training views left after the holdout split"));
        }
        let model = AppearanceModel::new(config.model.clone(), config.rng_seed)?;
        let footprints = scene_footprints(&model, scene);
        let visibility =
            VisibilityIndex::build(&blends, &train_views, scene.gaussians.len(), config.visibility_threshold);
        if config.multiview && visibility.anchors.is_empty() {
            return Err(Error::config(
                "scene is degenerate: no gaussian is visible in two views; use mono-view training",
            ));
        }
        let adam = AdamState::new(&model);
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(0x5eed));
        Ok(Self {
            scene,
            config,
            blends,
            footprints,
            visibility,
            train_views,
            model,
            adam,
            step: 0,
            rng,
        })
    }

    /// Tiles for the next step: multi-view mini-batches, or tiles of one random view.
    pub fn sample_batch(&mut self) -> Result<Vec<TileRef>> {
        let budget = self.config.minibatches_per_batch * self.config.minibatch_tiles;
        if self.config.multiview {
            let mut tiles = Vec::with_capacity(budget);
            for _ in 0..self.config.minibatches_per_batch {
                tiles.extend(build_minibatch(&self.visibility, self.config.minibatch_tiles, &mut self.rng)?.tiles);
            }
            Ok(tiles)
        } else {
            let view = self.train_views[self.rng.random_range(0..self.train_views.len())];
            let n = self.blends[view].tiles.len();
            Ok(index::sample(&mut self.rng, n, budget.min(n))
                .into_iter()
                .map(|tile| TileRef { view, tile })
                .collect())
        }
    }

    /// Loss and gradients of `tiles` under `lambda`, without updating anything.
    pub fn loss_and_grad(&self, tiles: &[TileRef], lambda: f64) -> Result<StepResult> {
        batch_loss_and_grad(&self.model, self.scene, &self.blends, &self.footprints, tiles, lambda)
    }

    fn learning_rates(&self) -> Vec<f64> {
        let mut lrs = vec![self.config.lr_tables];
        let (lr, d, s, g, v) = (
            self.config.lr_mlp,
            self.model.diffuse.tensors().len(),
            self.model.specular.tensors().len(),
            self.model.seg.tensors().len(),
            self.model.vanilla.tensors().len(),
        );
        let decoupled = self.model.config.mode == ColorMode::Decoupled;
        let on = |b: bool| if b { lr } else { 0.0 };
        lrs.extend(std::iter::repeat_n(on(decoupled), d + s));
        lrs.extend(std::iter::repeat_n(0.0, g));
        lrs.extend(std::iter::repeat_n(on(!decoupled), v));
        lrs
    }

    /// Sample a batch, compute gradients and apply one optimizer step.
    pub fn step(&mut self) -> Result<StepResult> {
        let tiles = self.sample_batch()?;
        let lambda = lambda_schedule(self.step, &self.config);
        let result = self.loss_and_grad(&tiles, lambda)?;
        if !result.loss.is_finite() || !result.grads.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {} at step {} (l1 {}, penalty {}, lambda {lambda})",
                result.loss, self.step, result.l1, result.penalty
            )));
        }
        let lrs = self.learning_rates();
        self.adam.update(&mut self.model, &result.grads, &lrs)?;
        self.model.generation += 1;
        self.step += 1;
        Ok(result)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, &self.config, self.step, &self.adam, self.scene.geometry_hash())
    }

    /// Run the remaining steps; `on_step` sees every completed step.
    pub fn run(&mut self, mut on_step: impl FnMut(usize, &StepResult)) -> Result<Checkpoint> {
        let mut last_good = self.checkpoint();
        while self.step < self.config.steps {
            match self.step() {
                Ok(r) => {
                    on_step(self.step, &r);
                    if !self.model.all_finite() {
                        return Err(diverged(self.step, "parameters became non-finite", last_good));
                    }
                }
                Err(Error::Numeric(detail)) => return Err(diverged(self.step, &detail, last_good)),
                Err(e) => return Err(e),
            }
            if self.step.is_multiple_of(50) || self.step == self.config.steps {
                last_good = self.checkpoint();
            }
        }
        Ok(self.checkpoint())
    }
}

fn diverged(step: usize, detail: &str, last_good: Checkpoint) -> Error {
    Error::Diverged {
        step,
        detail: detail.to_string(),
        last_good: Box::new(last_good),
    }
}

/// Train from scratch and return the final checkpoint.
pub fn train(scene: &Scene, config: &TrainConfig) -> Result<Checkpoint> {
    Trainer::new(scene, config.clone())?.run(|_, _| {})
}

/// Batch layout shared by the appearance evaluation and the per-tile composite.
struct BatchLayout {
    layout: SampleLayout,
    /// Per tile instance: sample index of each local gaussian.
    local_samples: Vec<Vec<u32>>,
}

fn build_layout(scene: &Scene, blends: &[BlendRecord], tiles: &[TileRef]) -> BatchLayout {
    let mut slot_of: HashMap<u32, u32> = HashMap::new();
    let mut sample_of: HashMap<(u32, usize), u32> = HashMap::new();
    let mut layout = SampleLayout::default();
    let mut local_samples = Vec::with_capacity(tiles.len());
    for t in tiles {
        let tile = &blends[t.view].tiles[t.tile];
        let center = scene.views[t.view].camera.center();
        let mut locals = Vec::with_capacity(tile.gaussians.len());
        for &g in &tile.gaussians {
            let next = sample_of.len() as u32;
            let s = *sample_of.entry((g, t.view)).or_insert_with(|| {
                let next_slot = slot_of.len() as u32;
                let slot = *slot_of.entry(g).or_insert_with(|| {
                    layout.gaussians.push(g);
                    next_slot
                });
                layout.sample_slot.push(slot);
                let dir = view_direction(center, scene.gaussians[g as usize].mean);
                layout.dirs.extend_from_slice(&sh_basis(dir));
                next
            });
            locals.push(s);
        }
        local_samples.push(locals);
    }
    BatchLayout { layout, local_samples }
}

/// Mean L1 over all batch pixels and channels plus `lambda` times the mean
/// squared specular magnitude over evaluated samples, with exact gradients.
pub fn batch_loss_and_grad(
    model: &AppearanceModel,
    scene: &Scene,
    blends: &[BlendRecord],
    footprints: &[Footprint],
    tiles: &[TileRef],
    lambda: f64,
) -> Result<StepResult> {
    if tiles.is_empty() {
        return Err(Error::contract("batch is empty"));
    }
    let bl = build_layout(scene, blends, tiles);
    let cache = model.forward(&bl.layout, footprints, 1.0, false)?;
    let n_values: usize = tiles.iter().map(|t| blends[t.view].tiles[t.tile].pixel_count() * 3).sum();
    let inv = 1.0 / n_values as f64;
    let bg = scene.background;

    let per_tile: Vec<(f64, Vec<Vec3>)> = tiles
        .par_iter()
        .zip(&bl.local_samples)
        .map(|(t, locals)| {
            let blend = &blends[t.view];
            let tile = &blend.tiles[t.tile];
            let colors: Vec<Vec3> = locals.iter().map(|&s| cache.cgs_of(s as usize)).collect();
            let mut out = vec![0.0; tile.pixel_count() * 3];
            tile.composite_local(&colors, bg, &mut out);
            let target = blend.gather_tile(tile, &scene.views[t.view].pixels.data, 3);
            let mut l1 = 0.0;
            let d: Vec<f64> = out
                .iter()
                .zip(&target)
                .map(|(o, g)| {
                    let r = o - g;
                    l1 += r.abs();
                    if r > 0.0 {
                        inv
                    } else if r < 0.0 {
                        -inv
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut grads = vec![[0.0; 3]; colors.len()];
            tile.backward_local(&d, &mut grads);
            (l1, grads)
        })
        .collect();

    let ns = bl.layout.sample_count();
    let mut d_cgs = vec![0.0; ns * 3];
    let mut l1 = 0.0;
    for ((tile_l1, grads), locals) in per_tile.into_iter().zip(&bl.local_samples) {
        l1 += tile_l1;
        for (g, &s) in grads.iter().zip(locals) {
            for c in 0..3 {
                d_cgs[s as usize * 3 + c] += g[c];
            }
        }
    }
    l1 *= inv;

    let (penalty, d_cspec) = if model.config.mode == ColorMode::Decoupled && lambda > 0.0 && ns > 0 {
        let sq: f64 = cache.cspec.iter().map(|v| v * v).sum();
        let scale = 2.0 * lambda / ns as f64;
        (lambda * sq / ns as f64, Some(cache.cspec.iter().map(|v| scale * v).collect::<Vec<_>>()))
    } else {
        (0.0, None)
    };

    let mut grads = model.zeros_like();
    model.backward(&bl.layout, footprints, &cache, &d_cgs, d_cspec.as_deref(), None, &mut grads)?;
    Ok(StepResult {
        loss: l1 + penalty,
        l1,
        penalty,
        grads,
        samples: ns,
    })
}
