//! The DC / MV / DS toggle grid: decoupled color output, multi-view
//! mini-batches, and diffuse activations fed to the segmentation MLP.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::appearance::ColorMode;
use crate::editing::{create_session, EditConfig};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::metrics::evaluate_recolor;
use crate::render::Renderer;
use crate::scene::{recolor_oracle, synth_scene, Scene, SceneSpec};
use crate::training::{train, Checkpoint, TrainConfig};

/// Row order of the grid as `(dc, mv, ds)`.
pub const ROWS: [(bool, bool, bool); 6] = [
    (false, false, false),
    (false, true, false),
    (false, true, true),
    (true, false, false),
    (true, true, false),
    (true, true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub scenes: Vec<SceneSpec>,
    pub train: TrainConfig,
    pub edit: EditConfig,
    pub edit_view: u32,
    pub object_id: u32,
    pub new_albedo: Vec3,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            scenes: Vec::new(),
            train: TrainConfig::default(),
            edit: EditConfig::default(),
            edit_view: 0,
            object_id: 1,
            new_albedo: [0.1, 0.8, 0.15],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dc: bool,
    pub mv: bool,
    pub ds: bool,
    /// Recolor PSNR on the holdout views, averaged over scenes.
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: Option<f64>,
    /// Per-scene recolor PSNR.
    pub per_scene: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// 1-based PSNR rank of each row (1 = best).
    pub fn ranks(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| 1 + self.rows.iter().filter(|o| o.psnr > r.psnr).count())
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mark = |b: bool| if b { "x" } else { "-" };
        let ranks = self.ranks();
        let mut s = format!("{:>3} {:>3} {:>3}  {:>8} {:>8} {:>8}  rank\n", "DC", "MV", "DS", "PSNR", "SSIM", "masked");
        for (r, rank) in self.rows.iter().zip(ranks) {
            s += &format!(
                "{:>3} {:>3} {:>3}  {:>8.2} {:>8.4} {:>8}  {rank}\n",
                mark(r.dc),
                mark(r.mv),
                mark(r.ds),
                r.psnr,
                r.ssim,
                r.masked_psnr.map_or("-".into(), |m| format!("{m:.2}"))
            );
        }
        s
    }
}

/// Run the grid on scenes synthesized from `config.scenes`.
pub fn run_ablation(config: &AblationConfig) -> Result<AblationReport> {
    let scenes = config.scenes.iter().map(synth_scene).collect::<Result<Vec<_>>>()?;
    run_ablation_on(&scenes, config)
}

/// One trained model of the grid, handed to the observer of [`run_ablation_observed`].
pub struct TrainedVariant<'a> {
    pub scene_index: usize,
    pub dc: bool,
    pub mv: bool,
    pub renderer: &'a Renderer,
    pub checkpoint: &'a Checkpoint,
}

/// Run the grid on prepared scenes; each needs oracle materials for the recolor ground truth.
pub fn run_ablation_on(scenes: &[Scene], config: &AblationConfig) -> Result<AblationReport> {
    run_ablation_observed(scenes, config, |_| Ok(()))
}

/// [`run_ablation_on`], calling `observe` after each of the four trainings per scene.
pub fn run_ablation_observed(
    scenes: &[Scene],
    config: &AblationConfig,
    mut observe: impl FnMut(TrainedVariant) -> Result<()>,
) -> Result<AblationReport> {
    if scenes.is_empty() {
        return Err(Error::config("ablation needs at least one scene"));
    }
    let holdout = &config.train.holdout_views;
    if holdout.is_empty() || holdout.contains(&config.edit_view) {
        return Err(Error::config("ablation needs holdout views disjoint from the edit view"));
    }
    let mut per_row: Vec<Vec<(f64, f64, Option<f64>)>> = vec![Vec::new(); ROWS.len()];
    for (scene_index, scene) in scenes.iter().enumerate() {
        let gt = recolor_oracle(scene, config.object_id, config.new_albedo)?;
        let edit_image = &gt.view(config.edit_view)?.pixels;
        let scene_arc = Arc::new(scene.clone());
        for (dc, mv) in [(false, false), (false, true), (true, false), (true, true)] {
            let mut tc = config.train.clone();
            tc.multiview = mv;
            tc.model.mode = if dc { ColorMode::Decoupled } else { ColorMode::Vanilla };
            let ckpt = train(scene, &tc)?;
            let renderer = Renderer::new(scene_arc.clone(), Arc::new(ckpt.model.clone()));
            let hash = ckpt.hash()?;
            observe(TrainedVariant {
                scene_index,
                dc,
                mv,
                renderer: &renderer,
                checkpoint: &ckpt,
            })?;
            for (row, &(rdc, rmv, ds)) in ROWS.iter().enumerate() {
                if rdc != dc || rmv != mv {
                    continue;
                }
                let ec = EditConfig {
                    seg_uses_diffuse: ds,
                    ..config.edit.clone()
                };
                let mut session = create_session(&renderer, hash, "ablation", config.edit_view, edit_image, ec)?;
                session.finetune(&renderer, None)?;
                let rep = evaluate_recolor(&renderer, Some(&session), &gt, holdout, Some(config.object_id))?;
                per_row[row].push((rep.mean_psnr, rep.mean_ssim, rep.mean_masked_psnr));
            }
        }
    }
    let n = scenes.len() as f64;
    let rows = ROWS
        .iter()
        .zip(per_row)
        .map(|(&(dc, mv, ds), vals)| {
            let masked: Vec<f64> = vals.iter().filter_map(|v| v.2).collect();
            AblationRow {
                dc,
                mv,
                ds,
                psnr: vals.iter().map(|v| v.0).sum::<f64>() / n,
                ssim: vals.iter().map(|v| v.1).sum::<f64>() / n,
                masked_psnr: (!masked.is_empty()).then(|| masked.iter().sum::<f64>() / masked.len() as f64),
                per_scene: vals.iter().map(|v| v.0).collect(),
            }
        })
        .collect();
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_six_distinct_rows_in_order() {
        let mut sorted = ROWS.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
        assert_eq!(ROWS[5], (true, true, true));
        assert!(ROWS.iter().all(|&(_, mv, ds)| mv || !ds));
    }

    #[test]
    fn ranks_order_by_psnr() {
        let row = |psnr| AblationRow {
            dc: true,
            mv: true,
            ds: true,
            psnr,
            ssim: 0.9,
            masked_psnr: None,
            per_scene: vec![],
        };
        let r = AblationReport {
            rows: vec![row(20.0), row(25.0), row(22.0)],
        };
        assert_eq!(r.ranks(), vec![3, 1, 2]);
    }
}
