use gsrecolor::appearance::{AppearanceModel, ModelConfig};
use gsrecolor::nn::Params;
use gsrecolor::rasterizer::precompute_blend;
use gsrecolor::training::{batch_loss_and_grad, scene_footprints, TileRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(max |batch − mean of single tiles|, max |batch|)` over every gradient
/// entry at λ = 0, with equal-sized tiles and random continuous targets so
/// no residual sits on the L1 kink.
pub fn tile_mean_deviation(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = super::small_scene(40, 3, 48, 300 + seed);
    for v in scene.views.iter_mut() {
        v.pixels.data.iter_mut().for_each(|p| *p = rng.random_range(0.0..1.0));
    }
    let mut model = AppearanceModel::new(ModelConfig::default(), seed).unwrap();
    model.grid.tables.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    let footprints = scene_footprints(&model, &scene);
    let blends: Vec<_> = (0..scene.views.len()).map(|v| precompute_blend(&scene, v as u32).unwrap()).collect();
    let tiles: Vec<TileRef> = blends
        .iter()
        .enumerate()
        .flat_map(|(view, b)| (0..b.tiles.len()).map(move |tile| TileRef { view, tile }))
        .collect();
    assert!(tiles.iter().all(|t| blends[t.view].tiles[t.tile].pixel_count() == 256));

    let batch = batch_loss_and_grad(&model, &scene, &blends, &footprints, &tiles, 0.0).unwrap();
    let batch_g = batch.grads.flatten();
    let mut mean = vec![0.0; batch_g.len()];
    for t in &tiles {
        let single = batch_loss_and_grad(&model, &scene, &blends, &footprints, &[*t], 0.0).unwrap();
        for (m, g) in mean.iter_mut().zip(single.grads.flatten()) {
            *m += g / tiles.len() as f64;
        }
    }
    let worst = batch_g.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = batch_g.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    (worst, scale)
}
