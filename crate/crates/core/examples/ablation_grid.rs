//! The six-row toggle grid over decoupled color (DC), multi-view batches
//! (MV) and diffuse features in the segmentation MLP (DS), scored by
//! recolor PSNR on held-out views.
//!
//! cargo run --release --example ablation_grid [steps] [n_scenes]

use gsrecolor::ablation::{run_ablation, AblationConfig};
use gsrecolor::scene::phong_suite;
use gsrecolor::training::TrainConfig;

fn main() -> gsrecolor::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(150);
    let n_scenes = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let config = AblationConfig {
        scenes: phong_suite().into_iter().take(n_scenes).collect(),
        train: TrainConfig {
            steps,
            minibatches_per_batch: 16,
            holdout_views: vec![3, 7, 11, 15],
            ..TrainConfig::default()
        },
        ..AblationConfig::default()
    };
    let report = run_ablation(&config)?;
    print!("{}", report.to_table());
    Ok(())
}
