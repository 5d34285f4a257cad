//! Score a recolor against oracle ground truth: PSNR/SSIM per held-out
//! view, with PSNR restricted to the recolored object.
//!
//! cargo run --release --example eval_recolor

use std::sync::Arc;

use gsrecolor::editing::{create_session, EditConfig};
use gsrecolor::metrics::evaluate_recolor;
use gsrecolor::render::Renderer;
use gsrecolor::scene::{recolor_oracle, reference_spec, synth_scene};
use gsrecolor::training::{train, TrainConfig};

fn main() -> gsrecolor::Result<()> {
    let scene = Arc::new(synth_scene(&reference_spec())?);
    let holdout = vec![3, 7, 11, 15];
    let config = TrainConfig {
        steps: 300,
        minibatches_per_batch: 16,
        holdout_views: holdout.clone(),
        ..TrainConfig::default()
    };
    let checkpoint = train(&scene, &config)?;
    let renderer = Renderer::new(scene.clone(), Arc::new(checkpoint.model.clone()));
    let purple_box = recolor_oracle(&scene, 2, [0.6, 0.2, 0.7])?;

    let mut session = create_session(
        &renderer,
        checkpoint.hash()?,
        "purple",
        4,
        &purple_box.view(4)?.pixels,
        EditConfig::default(),
    )?;
    session.finetune(&renderer, None)?;

    print!("{}", evaluate_recolor(&renderer, None, &purple_box, &holdout, Some(2))?.to_table("base"));
    let edited = evaluate_recolor(&renderer, Some(&session), &purple_box, &holdout, Some(2))?;
    print!("{}", edited.to_table("edited"));
    println!("{}", serde_json::to_string(&edited).expect("report serializes"));
    Ok(())
}
