mod common;

use common::raster_oracle::{random_scene, run_oracle, H, W};
use gsrecolor::rasterizer::{precompute_blend_camera, TILE_SIZE};

#[test]
fn tiled_weights_and_composite_match_exhaustive_oracle() {
    let outcome = run_oracle();
    println!("{outcome:?}");
    assert_eq!(outcome.id_mismatches, 0);
    assert!(outcome.max_err <= 1e-6, "max deviation from oracle {:e}", outcome.max_err);
    assert!(outcome.max_partition_err <= 1e-6, "weights sum off by {:e}", outcome.max_partition_err);
}

#[test]
fn scenes_are_not_trivially_empty() {
    let (gaussians, cam, _) = random_scene(3);
    let blend = precompute_blend_camera(&gaussians, &cam, TILE_SIZE).unwrap();
    let covered = (0..H * W).filter(|&p| blend.pixel(p % W, p / W).1 < 0.5).count();
    assert!(covered > 20, "only {covered} pixels covered");
}
