//! Train the diffuse/specular appearance model on the reference scene with
//! multi-view mini-batches, then report held-out PSNR.
//!
//! cargo run --release --example train_appearance [steps]

use std::sync::Arc;

use gsrecolor::metrics::evaluate_recolor;
use gsrecolor::render::Renderer;
use gsrecolor::scene::{reference_spec, synth_scene};
use gsrecolor::training::{lambda_schedule, TrainConfig, Trainer};

fn main() -> gsrecolor::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let scene = synth_scene(&reference_spec())?;
    let holdout: Vec<u32> = (0..scene.views.len() as u32).filter(|v| v % 4 == 3).collect();
    let config = TrainConfig {
        steps,
        minibatches_per_batch: 16,
        holdout_views: holdout.clone(),
        ..TrainConfig::default()
    };

    let mut trainer = Trainer::new(&scene, config.clone())?;
    println!(
        "{} anchors visible in two or more training views",
        trainer.visibility.anchors.len()
    );
    let checkpoint = trainer.run(|step, r| {
        if step % 50 == 0 {
            println!(
                "step {step:5}  loss {:.5}  l1 {:.5}  spec {:.5}  lambda {:.3}",
                r.loss,
                r.l1,
                r.penalty,
                lambda_schedule(step - 1, &config)
            );
        }
    })?;

    let out = std::path::Path::new("target/examples/reference.vgck");
    std::fs::create_dir_all(out.parent().unwrap()).map_err(|e| gsrecolor::Error::io(out, e))?;
    checkpoint.save(out)?;

    let renderer = Renderer::new(Arc::new(scene.clone()), Arc::new(checkpoint.model.clone()));
    let report = evaluate_recolor(&renderer, None, &scene, &holdout, None)?;
    print!("{}", report.to_table("held-out"));
    println!("checkpoint {}", out.display());
    Ok(())
}
