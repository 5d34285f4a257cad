mod common;

use common::linearity::tile_mean_deviation;

#[test]
fn batch_gradient_is_mean_of_tile_gradients() {
    for seed in 0..3u64 {
        let (worst, scale) = tile_mean_deviation(seed);
        println!("seed {seed}: max |batch - mean| = {worst:.3e} (max |g| {scale:.3e})");
        assert!(scale > 0.0);
        assert!(worst <= 1e-10, "seed {seed}: deviation {worst:e}");
    }
}
