//! Frozen per-pixel blend records and the linear compositing they enable.
//!
//! Geometry never changes after [`precompute_blend`], so each pixel's color is
//! `Σ wᵢ cᵢ + T_bg · background` with fixed weights. Records are stored per
//! tile as flat entry arrays with pixel offsets so forward and backward passes
//! walk contiguous memory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::codec::{hex, Reader, Writer};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Image};
use crate::math::Vec3;
use crate::projection::{self, Splat2D, TileBin, TileGrid, MIN_ALPHA};
use crate::scene::{Camera, Gaussian3D, Scene};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_CLAMP: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TileBlend {
    pub tile_id: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// Local slot → scene gaussian index, front-to-back by first use.
    pub gaussians: Vec<u32>,
    /// `width * height + 1` offsets into the entry arrays.
    pub pixel_offsets: Vec<u32>,
    pub entry_local: Vec<u32>,
    pub entry_weight: Vec<f64>,
    pub t_bg: Vec<f64>,
}

impl TileBlend {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    fn span(&self, p: usize) -> std::ops::Range<usize> {
        self.pixel_offsets[p] as usize..self.pixel_offsets[p + 1] as usize
    }

    /// Composite into `out` (`pixel_count * 3`, tile-local row major).
    pub fn composite_local(&self, colors: &[Vec3], background: Vec3, out: &mut [f64]) {
        for p in 0..self.pixel_count() {
            let mut acc = [0.0; 3];
            for e in self.span(p) {
                let w = self.entry_weight[e];
                let c = &colors[self.entry_local[e] as usize];
                acc[0] += w * c[0];
                acc[1] += w * c[1];
                acc[2] += w * c[2];
            }
            let t = self.t_bg[p];
            for ch in 0..3 {
                out[p * 3 + ch] = acc[ch] + t * background[ch];
            }
        }
    }

    /// Adjoint of [`Self::composite_local`]: accumulates `Σ_p w · dL/dpixel` per local slot.
    pub fn backward_local(&self, d_pixels: &[f64], grads: &mut [Vec3]) {
        for p in 0..self.pixel_count() {
            let d = &d_pixels[p * 3..p * 3 + 3];
            for e in self.span(p) {
                let w = self.entry_weight[e];
                let g = &mut grads[self.entry_local[e] as usize];
                g[0] += w * d[0];
                g[1] += w * d[1];
                g[2] += w * d[2];
            }
        }
    }

    pub fn alpha_local(&self, alphas: &[f64], out: &mut [f64]) {
        for (p, o) in out.iter_mut().enumerate().take(self.pixel_count()) {
            *o = self.span(p).map(|e| self.entry_weight[e] * alphas[self.entry_local[e] as usize]).sum();
        }
    }

    /// `(gaussian_index, weight)` entries of a tile-local pixel, front to back.
    pub fn pixel_entries(&self, p: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.span(p)
            .map(move |e| (self.gaussians[self.entry_local[e] as usize], self.entry_weight[e]))
    }

    /// Largest weight each local slot receives on any pixel of the tile.
    pub fn max_weights(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.gaussians.len()];
        for (l, &w) in self.entry_local.iter().zip(&self.entry_weight) {
            let slot = &mut m[*l as usize];
            *slot = slot.max(w);
        }
        m
    }

    fn gather<T: Copy>(&self, global: &[T]) -> Vec<T> {
        self.gaussians.iter().map(|&g| global[g as usize]).collect()
    }
}

/// Blend weights for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendRecord {
    pub grid: TileGrid,
    /// Size of the gaussian table the record indexes into.
    pub n_gaussians: usize,
    pub tiles: Vec<TileBlend>,
}

fn blend_tile(bin: &TileBin, tile_id: usize, grid: &TileGrid, splats: &[Splat2D], slot_of: &[u32]) -> TileBlend {
    let (x0, y0, w, h) = grid.tile_rect(tile_id);
    let mut local_by_pos = vec![u32::MAX; bin.entries.len()];
    let mut gaussians = Vec::new();
    let mut pixel_offsets = Vec::with_capacity(w * h + 1);
    let mut entry_local = Vec::new();
    let mut entry_weight = Vec::new();
    let mut t_bg = Vec::with_capacity(w * h);
    pixel_offsets.push(0);
    for py in 0..h {
        for px in 0..w {
            let fx = (x0 + px) as f64 + 0.5;
            let fy = (y0 + py) as f64 + 0.5;
            let mut t = 1.0f64;
            for (pos, &(_, gi)) in bin.entries.iter().enumerate() {
                let s = &splats[slot_of[gi as usize] as usize];
                let alpha = s.alpha_at(fx, fy).min(ALPHA_CLAMP);
                if alpha < MIN_ALPHA {
                    continue;
                }
                if local_by_pos[pos] == u32::MAX {
                    local_by_pos[pos] = gaussians.len() as u32;
                    gaussians.push(gi);
                }
                let local = local_by_pos[pos];
                entry_local.push(local);
                entry_weight.push(alpha * t);
                t *= 1.0 - alpha;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            t_bg.push(t);
            pixel_offsets.push(entry_local.len() as u32);
        }
    }
    TileBlend {
        tile_id,
        x0,
        y0,
        width: w,
        height: h,
        gaussians,
        pixel_offsets,
        entry_local,
        entry_weight,
        t_bg,
    }
}

/// Project, bin and composite-weight every pixel for `cam`.
pub fn precompute_blend_camera(gaussians: &[Gaussian3D], cam: &Camera, tile_size: usize) -> Result<BlendRecord> {
    cam.validate()?;
    if tile_size == 0 {
        return Err(Error::config("tile size must be positive"));
    }
    let splats = projection::project_all(gaussians, cam)?;
    let mut slot_of = vec![u32::MAX; gaussians.len()];
    for (i, s) in splats.iter().enumerate() {
        slot_of[s.gaussian_index as usize] = i as u32;
    }
    let grid = TileGrid::new(cam.width, cam.height, tile_size);
    let bins = projection::bin_tiles(&splats, &grid);
    let tiles = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| blend_tile(bin, t, &grid, &splats, &slot_of))
        .collect();
    Ok(BlendRecord {
        grid,
        n_gaussians: gaussians.len(),
        tiles,
    })
}

pub fn precompute_blend(scene: &Scene, view_id: u32) -> Result<BlendRecord> {
    precompute_blend_camera(&scene.gaussians, &scene.view(view_id)?.camera, TILE_SIZE)
}

impl BlendRecord {
    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    /// `(gaussian_index, weight)` entries and background transmittance of a pixel.
    pub fn pixel(&self, x: usize, y: usize) -> (Vec<(u32, f64)>, f64) {
        let ts = self.grid.tile_size;
        let tile = &self.tiles[(y / ts) * self.grid.tiles_x + x / ts];
        let p = (y - tile.y0) * tile.width + (x - tile.x0);
        (tile.pixel_entries(p).collect(), tile.t_bg[p])
    }

    /// Whether any pixel references `gaussian` with weight at least `min_weight`.
    pub fn max_weight_per_gaussian(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.n_gaussians];
        for tile in &self.tiles {
            for (l, w) in tile.max_weights().into_iter().enumerate() {
                let slot = &mut m[tile.gaussians[l] as usize];
                *slot = slot.max(w);
            }
        }
        m
    }

    /// Sorted, de-duplicated gaussians referenced anywhere in the record.
    pub fn referenced_gaussians(&self) -> Vec<u32> {
        let mut seen = vec![false; self.n_gaussians];
        for t in &self.tiles {
            for &g in &t.gaussians {
                seen[g as usize] = true;
            }
        }
        (0..self.n_gaussians as u32).filter(|&g| seen[g as usize]).collect()
    }

    fn scatter_tile(&self, tile: &TileBlend, local: &[f64], channels: usize, out: &mut [f64]) {
        for py in 0..tile.height {
            let row = (tile.y0 + py) * self.grid.width + tile.x0;
            let src = &local[py * tile.width * channels..(py + 1) * tile.width * channels];
            out[row * channels..(row + tile.width) * channels].copy_from_slice(src);
        }
    }

    /// Tile-local slice of a full image buffer.
    pub fn gather_tile(&self, tile: &TileBlend, image: &[f64], channels: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(tile.pixel_count() * channels);
        for py in 0..tile.height {
            let row = (tile.y0 + py) * self.grid.width + tile.x0;
            out.extend_from_slice(&image[row * channels..(row + tile.width) * channels]);
        }
        out
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len < self.n_gaussians {
            return Err(Error::contract(format!(
                "{what} has {len} entries but the record indexes {} gaussians",
                self.n_gaussians
            )));
        }
        Ok(())
    }
}

/// `pixel = Σ wᵢ cᵢ + T_bg · background`.
pub fn composite_forward(blend: &BlendRecord, colors: &[Vec3], background: Vec3) -> Result<Image> {
    blend.check_len(colors.len(), "color table")?;
    let tiles: Vec<Vec<f64>> = blend
        .tiles
        .par_iter()
        .map(|tile| {
            let mut out = vec![0.0; tile.pixel_count() * 3];
            tile.composite_local(&tile.gather(colors), background, &mut out);
            out
        })
        .collect();
    let mut img = Image::new(blend.width(), blend.height());
    for (tile, local) in blend.tiles.iter().zip(&tiles) {
        blend.scatter_tile(tile, local, 3, &mut img.data);
    }
    Ok(img)
}

/// Exact adjoint of [`composite_forward`] with respect to the per-gaussian colors.
/// Per-tile partial sums are merged in tile order, so the result does not
/// depend on the thread count.
pub fn composite_backward(blend: &BlendRecord, d_image: &[f64]) -> Result<Vec<Vec3>> {
    if d_image.len() != blend.width() * blend.height() * 3 {
        return Err(Error::contract("gradient image has the wrong size"));
    }
    if d_image.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite image gradient"));
    }
    let partial: Vec<Vec<Vec3>> = blend
        .tiles
        .par_iter()
        .map(|tile| {
            let d_local = blend.gather_tile(tile, d_image, 3);
            let mut g = vec![[0.0; 3]; tile.gaussians.len()];
            tile.backward_local(&d_local, &mut g);
            g
        })
        .collect();
    let mut grads = vec![[0.0; 3]; blend.n_gaussians];
    for (tile, g) in blend.tiles.iter().zip(partial) {
        for (l, v) in g.into_iter().enumerate() {
            let slot = &mut grads[tile.gaussians[l] as usize];
            slot[0] += v[0];
            slot[1] += v[1];
            slot[2] += v[2];
        }
    }
    Ok(grads)
}

/// `pixel = Σ wᵢ αᵢ`; background contributes nothing.
pub fn render_alpha(blend: &BlendRecord, alphas: &[f64]) -> Result<GrayImage> {
    blend.check_len(alphas.len(), "alpha table")?;
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::contract("alpha values must lie in [0, 1]"));
    }
    let mut img = GrayImage::new(blend.width(), blend.height());
    for tile in &blend.tiles {
        let mut out = vec![0.0; tile.pixel_count()];
        tile.alpha_local(&tile.gather(alphas), &mut out);
        blend.scatter_tile(tile, &out, 1, &mut img.data);
    }
    Ok(img)
}

const BLEND_MAGIC: &[u8; 4] = b"VGBR";
const BLEND_VERSION: u32 = 1;

/// Identity of a cached blend record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlendKey {
    pub scene_hash: [u8; 32],
    pub view_id: u32,
    pub tile_size: u32,
}

impl BlendKey {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.vgbr", &hex(&self.scene_hash)[..16], self.view_id, self.tile_size)
    }
}

impl BlendRecord {
    pub fn to_bytes(&self, key: &BlendKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(BLEND_MAGIC);
        w.u32(BLEND_VERSION);
        w.bytes(&key.scene_hash);
        w.u32(key.view_id);
        w.u32(key.tile_size);
        w.u32(self.grid.width as u32);
        w.u32(self.grid.height as u32);
        w.u32(self.n_gaussians as u32);
        w.u32(self.tiles.len() as u32);
        for t in &self.tiles {
            w.u32(t.gaussians.len() as u32);
            w.u32(t.entry_local.len() as u32);
            for &g in &t.gaussians {
                w.u32(g);
            }
            for &o in &t.pixel_offsets {
                w.u32(o);
            }
            for &l in &t.entry_local {
                w.u32(l);
            }
            w.f64s(&t.entry_weight);
            w.f64s(&t.t_bg);
        }
        w.into_inner()
    }

    /// Decode a record, rejecting it unless it was written for `key`.
    pub fn from_bytes(bytes: &[u8], key: &BlendKey) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(BLEND_MAGIC)?;
        if r.u32()? != BLEND_VERSION {
            return Err(Error::Format("unsupported blend cache version".into()));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let view_id = r.u32()?;
        let tile_size = r.u32()?;
        if hash != key.scene_hash || view_id != key.view_id || tile_size != key.tile_size {
            return Err(Error::Format("blend cache key mismatch".into()));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let n_gaussians = r.u32()? as usize;
        let n_tiles = r.u32()? as usize;
        let grid = TileGrid::new(width, height, tile_size as usize);
        if grid.tile_count() != n_tiles {
            return Err(Error::Format("blend cache tile count mismatch".into()));
        }
        let mut tiles = Vec::with_capacity(n_tiles);
        for tile_id in 0..n_tiles {
            let (x0, y0, tw, th) = grid.tile_rect(tile_id);
            let ng = r.u32()? as usize;
            let ne = r.u32()? as usize;
            let mut read_u32s = |n: usize| -> Result<Vec<u32>> { (0..n).map(|_| r.u32()).collect() };
            let gaussians = read_u32s(ng)?;
            let pixel_offsets = read_u32s(tw * th + 1)?;
            let entry_local = read_u32s(ne)?;
            let entry_weight = r.f64s(ne)?;
            let t_bg = r.f64s(tw * th)?;
            tiles.push(TileBlend {
                tile_id,
                x0,
                y0,
                width: tw,
                height: th,
                gaussians,
                pixel_offsets,
                entry_local,
                entry_weight,
                t_bg,
            });
        }
        Ok(Self {
            grid,
            n_gaussians,
            tiles,
        })
    }
}

/// Directory of per-view blend records. Entries are disposable: a missing or
/// stale file is simply recomputed.
#[derive(Clone, Debug)]
pub struct BlendCache {
    pub dir: PathBuf,
}

impl BlendCache {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    pub fn load_or_compute(&self, scene: &Scene, view_id: u32) -> Result<BlendRecord> {
        let key = BlendKey {
            scene_hash: scene.geometry_hash(),
            view_id,
            tile_size: TILE_SIZE as u32,
        };
        let path = self.dir.join(key.file_name());
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(rec) = BlendRecord::from_bytes(&bytes, &key) {
                return Ok(rec);
            }
        }
        let rec = precompute_blend(scene, view_id)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        std::fs::write(&path, rec.to_bytes(&key)).map_err(|e| Error::io(&path, e))?;
        Ok(rec)
    }
}
