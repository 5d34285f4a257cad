//! EWA projection of 3D gaussians to screen space, culling, and depth-keyed
//! tile binning.

use crate::error::{Error, Result};
use crate::math::{self, Mat3};
use crate::scene::{Camera, Gaussian3D};

/// Camera-space depth at or below which a gaussian is culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass dilation added to the screen-space covariance diagonal (px²).
pub const LOW_PASS: f64 = 0.3;
/// Smallest per-pixel alpha that contributes to a blend.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    /// Pixel-space center; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub center: [f64; 2],
    /// Symmetric covariance `[a, b, c]` for `[[a, b], [b, c]]`, px².
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d` in the same packing.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Screen-space footprint radius in pixels.
    pub radius: f64,
    pub opacity: f64,
    pub gaussian_index: u32,
}

impl Splat2D {
    /// Unclamped `o·exp(-½ dᵀ Σ⁻¹ d)` at a continuous pixel position.
    #[inline]
    pub fn alpha_at(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.center[0];
        let dy = py - self.center[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        self.opacity * power.exp()
    }
}

/// World-space 3D covariance `R S Sᵀ Rᵀ`.
pub fn covariance_3d(g: &Gaussian3D) -> Mat3 {
    let r = math::quat_to_mat(g.rotation);
    let mut rs = r;
    for row in rs.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= g.scale[j];
        }
    }
    math::mat_mul(&rs, &math::transpose(&rs))
}

/// Radius multiplier (in std-devs) beyond which `o·exp(-½m²)` drops below 1/255.
/// `None` when the gaussian can never reach the threshold.
pub fn footprint_sigmas(opacity: f64) -> Option<f64> {
    let ratio = opacity / MIN_ALPHA;
    (ratio > 1.0).then(|| (2.0 * ratio.ln()).sqrt())
}

/// Project one gaussian; `Ok(None)` when it is culled.
pub fn project_gaussian(g: &Gaussian3D, index: u32, cam: &Camera) -> Result<Option<Splat2D>> {
    let p = cam.to_camera(g.mean);
    let [x, y, z] = p;
    if !(z > NEAR_PLANE) {
        if z.is_nan() {
            return Err(Error::numeric(format!("gaussian {index}: non-finite depth")));
        }
        return Ok(None);
    }
    let sigma = covariance_3d(g);
    // Perspective Jacobian rows, then T = J W.
    let j0 = [cam.fx / z, 0.0, -cam.fx * x / (z * z)];
    let j1 = [0.0, cam.fy / z, -cam.fy * y / (z * z)];
    let wt = math::transpose(&cam.rotation);
    let t0 = math::mat_vec(&wt, j0);
    let t1 = math::mat_vec(&wt, j1);
    let s0 = math::mat_vec(&sigma, t0);
    let s1 = math::mat_vec(&sigma, t1);
    let a = math::dot(t0, s0) + LOW_PASS;
    let b = math::dot(t0, s1);
    let c = math::dot(t1, s1) + LOW_PASS;
    let det = a * c - b * b;
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || !(det > 0.0) {
        return Err(Error::numeric(format!("gaussian {index}: degenerate screen covariance")));
    }
    let Some(k) = footprint_sigmas(g.opacity) else {
        return Ok(None);
    };
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = k * lambda_max.sqrt();
    let u = cam.fx * x / z + cam.cx;
    let v = cam.fy * y / z + cam.cy;
    if u + radius < 0.0 || v + radius < 0.0 || u - radius > cam.width as f64 || v - radius > cam.height as f64 {
        return Ok(None);
    }
    Ok(Some(Splat2D {
        center: [u, v],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: z,
        radius,
        opacity: g.opacity,
        gaussian_index: index,
    }))
}

pub fn project_all(gaussians: &[Gaussian3D], cam: &Camera) -> Result<Vec<Splat2D>> {
    let mut out = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        if let Some(s) = project_gaussian(g, i as u32, cam)? {
            out.push(s);
        }
    }
    Ok(out)
}

/// Tile layout of one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile_size: usize) -> Self {
        Self {
            width,
            height,
            tile_size,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel rectangle `(x0, y0, w, h)` of a tile, clipped to the image.
    pub fn tile_rect(&self, tile_id: usize) -> (usize, usize, usize, usize) {
        let tx = tile_id % self.tiles_x;
        let ty = tile_id / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, y0, self.tile_size.min(self.width - x0), self.tile_size.min(self.height - y0))
    }

    /// Inclusive tile range touched by a splat's footprint box, or `None`.
    pub fn tile_range(&self, s: &Splat2D) -> Option<(usize, usize, usize, usize)> {
        // Pixel centers sit at integer + 0.5.
        let lo = |c: f64| (c - s.radius - 0.5).ceil();
        let hi = |c: f64| (c + s.radius - 0.5).floor();
        let (x_lo, x_hi) = (lo(s.center[0]).max(0.0), hi(s.center[0]).min(self.width as f64 - 1.0));
        let (y_lo, y_hi) = (lo(s.center[1]).max(0.0), hi(s.center[1]).min(self.height as f64 - 1.0));
        if x_lo > x_hi || y_lo > y_hi {
            return None;
        }
        let ts = self.tile_size;
        Some((x_lo as usize / ts, x_hi as usize / ts, y_lo as usize / ts, y_hi as usize / ts))
    }
}

/// Order-preserving 32-bit key of a positive depth.
#[inline]
pub fn depth_key(depth: f64) -> u32 {
    (depth as f32).to_bits()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileBin {
    pub tile_coord: (usize, usize),
    /// `(depth_key, gaussian_index)`, ascending by depth then index.
    pub entries: Vec<(u32, u32)>,
}

/// Bin splats into every tile their footprint touches, depth sorted per tile.
/// Returns one bin per tile in row-major tile order (empty bins included).
pub fn bin_tiles(splats: &[Splat2D], grid: &TileGrid) -> Vec<TileBin> {
    let mut keys: Vec<(u64, u32)> = Vec::new();
    for s in splats {
        let Some((tx0, tx1, ty0, ty1)) = grid.tile_range(s) else {
            continue;
        };
        let dk = depth_key(s.depth) as u64;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let tile_id = (ty * grid.tiles_x + tx) as u64;
                keys.push(((tile_id << 32) | dk, s.gaussian_index));
            }
        }
    }
    keys.sort_unstable();
    let mut bins: Vec<TileBin> = (0..grid.tile_count())
        .map(|t| TileBin {
            tile_coord: (t % grid.tiles_x, t / grid.tiles_x),
            entries: Vec::new(),
        })
        .collect();
    for (key, idx) in keys {
        bins[(key >> 32) as usize].entries.push((key as u32, idx));
    }
    bins
}
