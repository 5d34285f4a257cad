//! Scale the learned specular component at render time: s = 0 is the
//! diffuse-only image, s > 1 exaggerates highlights.
//!
//! cargo run --release --example specular_scale

use std::sync::Arc;

use gsrecolor::render::{Renderer, Shading};
use gsrecolor::scene::{reference_spec, synth_scene};
use gsrecolor::training::{train, TrainConfig};

fn main() -> gsrecolor::Result<()> {
    let scene = Arc::new(synth_scene(&reference_spec())?);
    let config = TrainConfig {
        steps: 400,
        minibatches_per_batch: 16,
        ..TrainConfig::default()
    };
    let model = Arc::new(train(&scene, &config)?.model);
    let renderer = Renderer::new(scene.clone(), model);

    let out = std::path::Path::new("target/examples/specular");
    std::fs::create_dir_all(out).map_err(|e| gsrecolor::Error::io(out, e))?;
    let cam = &scene.view(2)?.camera;
    let reference = renderer.render(cam, Shading::Base { s: 1.0 })?;
    for s in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let img = renderer.render(cam, Shading::Base { s })?;
        let mean_abs = img.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / img.data.len() as f64;
        let peak = img.data.iter().cloned().fold(0.0, f64::max);
        let path = out.join(format!("s_{s:.1}.png"));
        std::fs::write(&path, img.encode_png()?).map_err(|e| gsrecolor::Error::io(&path, e))?;
        println!("s = {s:.1}: mean |I_s - I_1| {mean_abs:.5}, brightest channel {peak:.3}");
    }
    assert_eq!(
        renderer.render(cam, Shading::Base { s: 0.0 })?,
        renderer.render(cam, Shading::DiffuseOnly)?
    );
    println!("images in {}", out.display());
    Ok(())
}
