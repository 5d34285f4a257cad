//! Multiresolution hash-grid features at gaussian centers and a real
//! spherical-harmonic basis for view directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];
pub const DIR_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub table_size: usize,
    pub features_per_level: usize,
    pub base_resolution: usize,
    pub growth: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            table_size: 1 << 14,
            features_per_level: 2,
            base_resolution: 16,
            growth: 1.5,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.table_size.is_power_of_two() {
            return Err(Error::config("hash table size must be a power of two"));
        }
        if self.levels == 0 || self.features_per_level == 0 || self.base_resolution == 0 {
            return Err(Error::config("hash grid dimensions must be positive"));
        }
        if !(self.growth > 1.0) {
            return Err(Error::config("hash grid growth factor must exceed 1"));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.growth.powi(level as i32)).floor() as usize
    }

    /// Levels whose full vertex lattice fits in the table are indexed densely.
    pub fn is_dense(&self, level: usize) -> bool {
        let n = self.resolution(level) + 1;
        n.saturating_mul(n).saturating_mul(n) <= self.table_size
    }
}

/// Radial contraction into the ball of radius 2.
pub fn contract(p: Vec3) -> Vec3 {
    let n = math::norm(p);
    if n <= 1.0 {
        p
    } else {
        math::scale(p, (2.0 - 1.0 / n) / n)
    }
}

/// Contract, then map `[-2, 2]³` onto `[0, 1]³`.
pub fn unit_position(p: Vec3) -> Vec3 {
    contract(p).map(|c| ((c + 2.0) / 4.0).clamp(0.0, 1.0))
}

/// Table rows and trilinear weights touched by one lookup: 8 corners per level.
#[derive(Clone, Debug, PartialEq)]
pub struct Footprint {
    /// Absolute row index `level * table_size + row` and weight.
    pub corners: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid {
    pub config: HashGridConfig,
    /// `levels × table_size × features_per_level`.
    pub tables: Vec<f64>,
}

impl HashGrid {
    pub fn new(config: HashGridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.levels * config.table_size * config.features_per_level;
        let tables = (0..n).map(|_| rng.random_range(-1e-4..=1e-4)).collect();
        Ok(Self { config, tables })
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.tables.len()]
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn row_index(&self, level: usize, v: [u32; 3]) -> u32 {
        let t = self.config.table_size as u32;
        let row = if self.config.is_dense(level) {
            let n = self.config.resolution(level) as u32 + 1;
            v[0] + n * (v[1] + n * v[2])
        } else {
            (v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2])) & (t - 1)
        };
        level as u32 * t + row
    }

    /// Footprint of a point already mapped into `[0, 1]³`.
    pub fn footprint_unit(&self, u: Vec3) -> Footprint {
        let mut corners = Vec::with_capacity(self.config.levels * 8);
        for level in 0..self.config.levels {
            let res = self.config.resolution(level);
            let mut cell = [0u32; 3];
            let mut frac = [0.0; 3];
            for k in 0..3 {
                let pos = u[k] * res as f64;
                let c = (pos.floor() as i64).clamp(0, res as i64 - 1);
                cell[k] = c as u32;
                frac[k] = pos - c as f64;
            }
            for corner in 0..8u32 {
                let mut w = 1.0;
                let mut v = cell;
                for k in 0..3 {
                    if corner >> k & 1 == 1 {
                        v[k] += 1;
                        w *= frac[k];
                    } else {
                        w *= 1.0 - frac[k];
                    }
                }
                corners.push((self.row_index(level, v), w));
            }
        }
        Footprint { corners }
    }

    pub fn footprint(&self, p: Vec3) -> Footprint {
        self.footprint_unit(unit_position(p))
    }

    /// Interpolated features, `levels * features_per_level` values into `out`.
    pub fn encode(&self, fp: &Footprint, out: &mut [f64]) {
        let nf = self.config.features_per_level;
        out[..self.output_dim()].fill(0.0);
        for (level, corners) in fp.corners.chunks_exact(8).enumerate() {
            let dst = &mut out[level * nf..(level + 1) * nf];
            for &(row, w) in corners {
                let src = &self.tables[row as usize * nf..(row as usize + 1) * nf];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    pub fn encode_point(&self, p: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode(&self.footprint(p), &mut out);
        out
    }

    /// Scatter `d_f` through the trilinear weights into `grad` (table-shaped).
    pub fn backward(&self, fp: &Footprint, d_f: &[f64], grad: &mut [f64]) {
        let nf = self.config.features_per_level;
        for (level, corners) in fp.corners.chunks_exact(8).enumerate() {
            let src = &d_f[level * nf..(level + 1) * nf];
            for &(row, w) in corners {
                let dst = &mut grad[row as usize * nf..(row as usize + 1) * nf];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real spherical harmonics through degree 3 of a unit direction.
pub fn encode_direction(dir: Vec3) -> Result<[f64; DIR_DIM]> {
    if (math::norm(dir) - 1.0).abs() > 1e-6 {
        return Err(Error::contract("view direction must be unit length"));
    }
    Ok(sh_basis(dir))
}

pub(crate) fn sh_basis([x, y, z]: Vec3) -> [f64; DIR_DIM] {
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Unit direction from the camera center toward a gaussian mean.
pub fn view_direction(camera_center: Vec3, mean: Vec3) -> Vec3 {
    math::normalize(math::sub(mean, camera_center))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid() -> HashGrid {
        HashGrid::new(HashGridConfig::default(), 1).unwrap()
    }

    #[test]
    fn contract_identity_inside_unit_ball() {
        assert_eq!(contract([0.5, 0.0, 0.0]), [0.5, 0.0, 0.0]);
    }

    #[test]
    fn contract_outside_follows_formula() {
        let c = contract([3.0, 0.0, 0.0]);
        assert!((c[0] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn contract_is_monotone_and_bounded() {
        let mut prev = 0.0;
        for k in 0..60 {
            let r = 1.0 + 1.3f64.powi(k);
            let n = math::norm(contract([r, 0.0, 0.0]));
            assert!(n > prev && n < 2.0);
            prev = n;
        }
        assert!(2.0 - prev < 1e-6);
    }

    #[test]
    fn contract_is_continuous_at_unit_norm() {
        let d = math::normalize([1.0, 2.0, -0.5]);
        let inside = contract(math::scale(d, 1.0 - 1e-12));
        let outside = contract(math::scale(d, 1.0 + 1e-12));
        assert!(math::norm(math::sub(inside, outside)) < 1e-9);
    }

    #[test]
    fn default_grid_dense_and_hashed_levels() {
        let c = HashGridConfig::default();
        assert_eq!(c.output_dim(), 16);
        assert!(c.is_dense(0) && c.is_dense(1));
        assert!(!c.is_dense(2));
        assert!(HashGridConfig { table_size: 1000, ..c }.validate().is_err());
    }

    #[test]
    fn vertex_lookup_returns_the_vertex_row() {
        let g = grid();
        let nf = g.config.features_per_level;
        for level in 0..g.config.levels {
            let res = g.config.resolution(level) as f64;
            let u = [3.0 / res, 5.0 / res, 7.0 / res];
            let fp = g.footprint_unit(u);
            let corners = &fp.corners[level * 8..level * 8 + 8];
            let hit: Vec<_> = corners.iter().filter(|c| c.1 > 1e-9).collect();
            assert_eq!(hit.len(), 1, "level {level}");
            assert!((hit[0].1 - 1.0).abs() < 1e-12);
            let mut f = vec![0.0; g.output_dim()];
            g.encode(&fp, &mut f);
            let row = hit[0].0 as usize;
            for k in 0..nf {
                assert!((f[level * nf + k] - g.tables[row * nf + k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cell_center_lookup_is_corner_mean() {
        let g = grid();
        let res = g.config.resolution(0) as f64;
        let u = [3.5 / res, 5.5 / res, 7.5 / res];
        let fp = g.footprint_unit(u);
        let mut f = vec![0.0; g.output_dim()];
        g.encode(&fp, &mut f);
        for ch in 0..2 {
            let mean: f64 = fp.corners[..8].iter().map(|c| g.tables[c.0 as usize * 2 + ch]).sum::<f64>() / 8.0;
            assert!((f[ch] - mean).abs() < 1e-18);
        }
    }

    #[test]
    fn backward_zero_and_unit_vertex_gradient() {
        let g = grid();
        let res = g.config.resolution(0) as f64;
        let fp = g.footprint_unit([2.0 / res, 2.0 / res, 2.0 / res]);
        let mut grad = g.zeros_like();
        g.backward(&fp, &[0.0; 16], &mut grad);
        assert!(grad.iter().all(|&v| v == 0.0));
        let mut d = vec![0.0; 16];
        d[0] = 1.0;
        g.backward(&fp, &d, &mut grad);
        let row = fp.corners.iter().find(|c| c.1 == 1.0).unwrap().0 as usize;
        assert_eq!(grad[row * 2], 1.0);
        assert_eq!(grad.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        let mut g = grid();
        let p = [0.31, -0.42, 0.77];
        let fp = g.footprint(p);
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |g: &HashGrid| {
            let f = g.encode_point(p);
            f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grad = g.zeros_like();
        g.backward(&fp, &w, &mut grad);
        let h = 1e-6;
        let mut rows: Vec<u32> = fp.corners.iter().map(|c| c.0).collect();
        rows.sort_unstable();
        rows.dedup();
        for row in rows {
            for ch in 0..2 {
                let i = row as usize * 2 + ch;
                let orig = g.tables[i];
                g.tables[i] = orig + h;
                let lp = loss(&g);
                g.tables[i] = orig - h;
                let lm = loss(&g);
                g.tables[i] = orig;
                let num = (lp - lm) / (2.0 * h);
                assert!((num - grad[i]).abs() <= 1e-6 * num.abs().max(1e-3), "{num} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn lookups_are_deterministic() {
        let g = grid();
        assert_eq!(g.footprint([0.1, 0.2, 0.3]), grid().footprint([0.1, 0.2, 0.3]));
    }

    #[test]
    fn sh_constant_and_degree_one_on_z() {
        let b = encode_direction([0.0, 0.0, 1.0]).unwrap();
        assert!((b[0] - 0.282095).abs() < 1e-6);
        assert!(b[1].abs() < 1e-15 && (b[2] - 0.488603).abs() < 1e-6 && b[3].abs() < 1e-15);
        assert!(encode_direction([0.0, 0.0, 1.1]).is_err());
    }

    #[test]
    fn sh_basis_is_orthonormal_by_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut gram = [[0.0f64; DIR_DIM]; DIR_DIM];
        for _ in 0..n {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let b = sh_basis([r * phi.cos(), r * phi.sin(), z]);
            for i in 0..DIR_DIM {
                for j in 0..DIR_DIM {
                    gram[i][j] += b[i] * b[j];
                }
            }
        }
        let inv4pi = 1.0 / (4.0 * std::f64::consts::PI);
        for i in 0..DIR_DIM {
            for j in 0..DIR_DIM {
                let expect = if i == j { inv4pi } else { 0.0 };
                assert!((gram[i][j] / n as f64 - expect).abs() < 1e-2, "({i},{j})");
            }
        }
    }

    proptest! {
        #[test]
        fn trilinear_weights_sum_to_one(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let g = grid();
            let fp = g.footprint([x, y, z]);
            for level in fp.corners.chunks_exact(8) {
                let s: f64 = level.iter().map(|c| c.1).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
}
