//! Tiled blend records against a per-pixel exhaustive sort-and-composite
//! that never looks at tiles or footprint radii.

use gsrecolor::math::Vec3;
use gsrecolor::rasterizer::{composite_forward, precompute_blend_camera, TILE_SIZE};
use gsrecolor::scene::{Camera, Gaussian3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const W: usize = 16;
pub const H: usize = 16;
const N: usize = 50;

fn rotation(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[j][i];
        }
    }
    m
}

/// Screen-space mean, inverse covariance and depth, from `J W Σ Wᵀ Jᵀ + 0.3 I`.
fn project(g: &Gaussian3D, cam: &Camera) -> Option<([f64; 2], [[f64; 2]; 2], f64)> {
    let r = cam.rotation;
    let p: Vec3 = std::array::from_fn(|i| (0..3).map(|k| r[i][k] * g.mean[k]).sum::<f64>() + cam.translation[i]);
    if p[2] <= 0.01 {
        return None;
    }
    let rot = rotation(g.rotation);
    let s = [[g.scale[0].powi(2), 0.0, 0.0], [0.0, g.scale[1].powi(2), 0.0], [0.0, 0.0, g.scale[2].powi(2)]];
    let sigma = matmul(&matmul(&rot, &s), &transpose(&rot));
    let cam_sigma = matmul(&matmul(&r, &sigma), &transpose(&r));
    let z = p[2];
    let j = [[cam.fx / z, 0.0, -cam.fx * p[0] / (z * z)], [0.0, cam.fy / z, -cam.fy * p[1] / (z * z)]];
    let mut cov = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            cov[a][b] = (0..3)
                .flat_map(|k| (0..3).map(move |l| (k, l)))
                .map(|(k, l)| j[a][k] * cam_sigma[k][l] * j[b][l])
                .sum();
        }
        cov[a][a] += 0.3;
    }
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let center = [cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy];
    Some((center, inv, z))
}

/// Per pixel: `(gaussian, weight)` front to back, and the background transmittance.
fn oracle_pixel(gaussians: &[Gaussian3D], cam: &Camera, x: usize, y: usize) -> (Vec<(u32, f64)>, f64) {
    let mut hits: Vec<(f64, u32, f64)> = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        let Some((c, inv, z)) = project(g, cam) else { continue };
        let d = [x as f64 + 0.5 - c[0], y as f64 + 0.5 - c[1]];
        let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        let alpha = (g.opacity * (-0.5 * q).exp()).min(0.99);
        if alpha >= 1.0 / 255.0 {
            hits.push((z, i as u32, alpha));
        }
    }
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut t = 1.0;
    let mut out = Vec::new();
    for (_, i, alpha) in hits {
        out.push((i, alpha * t));
        t *= 1.0 - alpha;
        if t < 1e-4 {
            break;
        }
    }
    (out, t)
}

pub fn random_scene(seed: u64) -> (Vec<Gaussian3D>, Camera, Vec<Vec3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 18.0, W, H);
    let gaussians = (0..N)
        .map(|_| Gaussian3D {
            mean: [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.0..1.0)],
            rotation: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            scale: std::array::from_fn(|_| rng.random_range(0.03..0.3)),
            opacity: rng.random_range(0.05..1.0),
        })
        .map(|mut g| {
            let n = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.rotation = g.rotation.map(|v| v / n);
            g
        })
        .collect();
    let colors = (0..N).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    (gaussians, cam, colors)
}

#[derive(Debug, Default)]
pub struct OracleOutcome {
    /// Largest deviation of a weight, `T_bg` or composited value.
    pub max_err: f64,
    /// Largest `|Σw + T_bg − 1|`.
    pub max_partition_err: f64,
    /// Pixels whose contributing gaussians differ from the oracle's.
    pub id_mismatches: usize,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.id_mismatches == 0 && self.max_err <= 1e-6 && self.max_partition_err <= 1e-6
    }
}

/// 20 random 50-gaussian 16×16 scenes against the exhaustive oracle.
pub fn run_oracle() -> OracleOutcome {
    let bg = [0.2, 0.1, 0.3];
    let mut out = OracleOutcome::default();
    for seed in 0..20 {
        let (gaussians, cam, colors) = random_scene(seed);
        let blend = precompute_blend_camera(&gaussians, &cam, TILE_SIZE).unwrap();
        let image = composite_forward(&blend, &colors, bg).unwrap();
        for y in 0..H {
            for x in 0..W {
                let (mut got, t_got) = blend.pixel(x, y);
                let (mut want, t_want) = oracle_pixel(&gaussians, &cam, x, y);
                got.sort_by_key(|e| e.0);
                want.sort_by_key(|e| e.0);
                let ids_got: Vec<u32> = got.iter().map(|e| e.0).collect();
                let ids_want: Vec<u32> = want.iter().map(|e| e.0).collect();
                if ids_got != ids_want {
                    out.id_mismatches += 1;
                    continue;
                }
                for (a, b) in got.iter().zip(&want) {
                    out.max_err = out.max_err.max((a.1 - b.1).abs());
                }
                out.max_err = out.max_err.max((t_got - t_want).abs());
                let sum: f64 = got.iter().map(|e| e.1).sum::<f64>() + t_got;
                out.max_partition_err = out.max_partition_err.max((sum - 1.0).abs());
                for c in 0..3 {
                    let expect = want.iter().map(|&(g, w)| w * colors[g as usize][c]).sum::<f64>() + t_want * bg[c];
                    out.max_err = out.max_err.max((image.data[(y * W + x) * 3 + c] - expect).abs());
                }
            }
        }
    }
    out
}

