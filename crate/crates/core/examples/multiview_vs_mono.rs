//! Multi-view mini-batches against single-view batches on the three
//! synthetic Phong scenes: held-out PSNR and diffuse albedo error.
//!
//! cargo run --release --example multiview_vs_mono [steps]

use std::sync::Arc;

use gsrecolor::metrics::{diffuse_albedo_error, evaluate_recolor};
use gsrecolor::render::Renderer;
use gsrecolor::scene::{phong_suite, synth_scene};
use gsrecolor::training::{train, TrainConfig};

fn main() -> gsrecolor::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    println!("{:<7} {:>10} {:>10} {:>12} {:>12}", "scene", "PSNR mv", "PSNR mono", "albedo mv", "albedo mono");
    for (i, spec) in phong_suite().iter().enumerate() {
        let scene = Arc::new(synth_scene(spec)?);
        let n = scene.views.len() as u32;
        let holdout: Vec<u32> = (0..n).filter(|v| v % 4 == 3).collect();
        let seen: Vec<u32> = (0..n).filter(|v| v % 4 != 3).collect();
        let mut row = Vec::new();
        for multiview in [true, false] {
            let config = TrainConfig {
                steps,
                minibatches_per_batch: 16,
                multiview,
                holdout_views: holdout.clone(),
                ..TrainConfig::default()
            };
            let renderer = Renderer::new(scene.clone(), Arc::new(train(&scene, &config)?.model));
            row.push((
                evaluate_recolor(&renderer, None, &scene, &holdout, None)?.mean_psnr,
                diffuse_albedo_error(&renderer, &seen)?,
            ));
        }
        println!(
            "{:<7} {:>10.2} {:>10.2} {:>12.4} {:>12.4}",
            i, row[0].0, row[1].0, row[0].1, row[1].1
        );
    }
    Ok(())
}
