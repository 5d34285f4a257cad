#![allow(dead_code)]

pub mod gradcheck;
pub mod linearity;
pub mod raster_oracle;

use gsrecolor::scene::{reference_spec, synth_scene, Scene, SceneSpec, ShapeSpec};

/// The reference layout shrunk to `count` gaussians per shape, `n_views` views of `size`².
pub fn small_spec(count: usize, n_views: usize, size: usize, seed: u64) -> SceneSpec {
    let mut spec = reference_spec();
    for shape in spec.shapes.iter_mut() {
        match shape {
            ShapeSpec::Sphere { count: c, .. } | ShapeSpec::Box { count: c, .. } => *c = count,
        }
    }
    spec.n_views = n_views;
    spec.image_size = [size, size];
    spec.rng_seed = seed;
    spec
}

pub fn small_scene(count: usize, n_views: usize, size: usize, seed: u64) -> Scene {
    synth_scene(&small_spec(count, n_views, size, seed)).unwrap()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
