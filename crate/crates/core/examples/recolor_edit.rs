//! Recolor the red sphere green from a single edited view, then add a
//! second edited view and keep fine-tuning the same session.
//!
//! cargo run --release --example recolor_edit

use std::sync::Arc;

use gsrecolor::editing::{create_session, EditConfig, EditSession};
use gsrecolor::metrics::evaluate_recolor;
use gsrecolor::render::Renderer;
use gsrecolor::scene::{recolor_oracle, reference_spec, synth_scene};
use gsrecolor::training::{train, TrainConfig};

const SPHERE: u32 = 1;

fn main() -> gsrecolor::Result<()> {
    let scene = Arc::new(synth_scene(&reference_spec())?);
    let holdout = vec![3, 7, 11, 15];
    let config = TrainConfig {
        steps: 400,
        minibatches_per_batch: 16,
        holdout_views: holdout.clone(),
        ..TrainConfig::default()
    };
    let checkpoint = train(&scene, &config)?;
    let renderer = Renderer::new(scene.clone(), Arc::new(checkpoint.model.clone()));

    // The "painted" views come from the oracle with a green sphere.
    let target = recolor_oracle(&scene, SPHERE, [0.1, 0.8, 0.15])?;
    let masked = |s: Option<&EditSession>| -> gsrecolor::Result<f64> {
        Ok(evaluate_recolor(&renderer, s, &target, &holdout, Some(SPHERE))?
            .mean_masked_psnr
            .unwrap_or(f64::NAN))
    };
    println!("unedited   masked PSNR {:.2} dB", masked(None)?);

    let mut session = create_session(
        &renderer,
        checkpoint.hash()?,
        "green",
        0,
        &target.view(0)?.pixels,
        EditConfig::default(),
    )?;
    let report = session.finetune(&renderer, None)?;
    println!(
        "one view   masked PSNR {:.2} dB  ({} steps, loss {:.5} -> {:.5})",
        masked(Some(&session))?,
        report.steps_run,
        report.initial_loss,
        report.best_loss
    );

    session.add_edit_view(&renderer, 8, &target.view(8)?.pixels)?;
    let report = session.finetune(&renderer, None)?;
    println!(
        "two views  masked PSNR {:.2} dB  ({} more steps)",
        masked(Some(&session))?,
        report.steps_run
    );

    let out = std::path::Path::new("target/examples/green.vgss");
    std::fs::create_dir_all(out.parent().unwrap()).map_err(|e| gsrecolor::Error::io(out, e))?;
    session.save(out)?;
    let cam = &scene.view(5)?.camera;
    let png = out.with_extension("png");
    std::fs::write(&png, session.render_edited(&renderer, cam, 1.0)?.encode_png()?).map_err(|e| gsrecolor::Error::io(&png, e))?;
    println!("session {}, novel view {}", out.display(), png.display());
    Ok(())
}
