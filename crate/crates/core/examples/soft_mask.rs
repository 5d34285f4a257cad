//! Inspect the soft segmentation learned by a recolor session: mean mask
//! value on the edited object versus everywhere else.
//!
//! cargo run --release --example soft_mask

use std::sync::Arc;

use gsrecolor::editing::{create_session, EditConfig};
use gsrecolor::rasterizer::render_alpha;
use gsrecolor::render::Renderer;
use gsrecolor::scene::{recolor_oracle, reference_spec, synth_scene};
use gsrecolor::training::{train, TrainConfig};

fn main() -> gsrecolor::Result<()> {
    let scene = Arc::new(synth_scene(&reference_spec())?);
    let config = TrainConfig {
        steps: 300,
        minibatches_per_batch: 16,
        ..TrainConfig::default()
    };
    let checkpoint = train(&scene, &config)?;
    let renderer = Renderer::new(scene.clone(), Arc::new(checkpoint.model.clone()));
    let target = recolor_oracle(&scene, 1, [0.95, 0.85, 0.2])?;

    for ds in [false, true] {
        let ec = EditConfig {
            seg_uses_diffuse: ds,
            ..EditConfig::default()
        };
        let mut session = create_session(&renderer, checkpoint.hash()?, "mask", 0, &target.view(0)?.pixels, ec)?;
        let before = session.render_mask(&renderer, &scene.view(6)?.camera)?;
        session.finetune(&renderer, None)?;
        let cam = &scene.view(6)?.camera;
        let mask = session.render_mask(&renderer, cam)?;
        let (blend, _) = renderer.blends.get(&scene, cam)?;
        let on_sphere = render_alpha(&blend, &scene.object_membership(1)?)?;
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for (m, o) in mask.data.iter().zip(&on_sphere.data) {
            if *o > 0.5 {
                inside += m;
                n_in += 1;
            } else {
                outside += m;
                n_out += 1;
            }
        }
        println!(
            "diffuse features in seg MLP: {ds:5}  mean mask on sphere {:.3}, elsewhere {:.3} (initially {:.3})",
            inside / n_in.max(1) as f64,
            outside / n_out.max(1) as f64,
            before.data.iter().sum::<f64>() / before.data.len() as f64
        );
        let path = std::path::PathBuf::from(format!("target/examples/mask_ds_{ds}.png"));
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| gsrecolor::Error::io(&path, e))?;
        std::fs::write(&path, mask.encode_png()?).map_err(|e| gsrecolor::Error::io(&path, e))?;
    }
    Ok(())
}
