//! Frozen splat scenes, posed views, and the synthetic Lambert + Phong oracle
//! that produces ground truth for every end-to-end check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{self, f32_round, Mat3, Vec3};
use crate::rasterizer::{self, BlendRecord, TILE_SIZE};

const UNIT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// Per-axis standard deviation.
    pub scale: Vec3,
    pub opacity: f64,
}

impl Gaussian3D {
    pub fn isotropic(mean: Vec3, sigma: f64, opacity: f64) -> Self {
        Self {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [sigma; 3],
            opacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > UNIT_TOL {
            return Err(Error::contract(format!("quaternion norm {qn} is not 1")));
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::contract("gaussian scale must be positive"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::contract("opacity must lie in (0, 1]"));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite gaussian mean"));
        }
        Ok(())
    }

    /// Snap every field to `f32` so the in-memory scene equals its serialized form.
    fn round_to_f32(&mut self) {
        self.mean = self.mean.map(f32_round);
        self.rotation = self.rotation.map(f32_round);
        self.scale = self.scale.map(f32_round);
        self.opacity = f32_round(self.opacity);
    }
}

/// Pinhole camera with an OpenCV-style frame (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row major.
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        let forward = math::normalize(math::sub(target, eye));
        // Image y grows downward, so the camera's y axis points along -up.
        let right = math::normalize(math::cross(forward, up));
        let down = math::cross(forward, right);
        let rotation = [right, down, forward];
        let translation = math::scale(math::mat_vec(&rotation, eye), -1.0);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    /// Build a camera from a row-major 3×4 world-to-camera pose and intrinsics.
    pub fn from_pose(pose: &[f64; 12], fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        let rotation = [
            [pose[0], pose[1], pose[2]],
            [pose[4], pose[5], pose[6]],
            [pose[8], pose[9], pose[10]],
        ];
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation: [pose[3], pose[7], pose[11]],
        }
    }

    pub fn pose(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    /// The same pose with intrinsics rescaled to a new resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    #[inline]
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        math::add(math::mat_vec(&self.rotation, p), self.translation)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        math::scale(math::mat_vec(&math::transpose(&self.rotation), self.translation), -1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config("focal lengths must be positive"));
        }
        if math::orthonormality_error(&self.rotation) > UNIT_TOL {
            return Err(Error::config("camera rotation is not orthonormal"));
        }
        if self.width < TILE_SIZE || self.height < TILE_SIZE {
            return Err(Error::config(format!(
                "image {}x{} is smaller than the {TILE_SIZE}px tile",
                self.width, self.height
            )));
        }
        if self.translation.iter().chain([self.cx, self.cy].iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("non-finite camera parameters"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewImage {
    pub camera: Camera,
    pub pixels: Image,
    pub view_id: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMaterial {
    pub albedo: Vec3,
    pub specular_strength: f64,
    pub shininess: f64,
    /// Direction toward the light, shared across the scene.
    pub light_dir: Vec3,
    pub object_id: u32,
}

/// Oracle material plus the analytic surface normal at placement time.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleGaussian {
    pub material: OracleMaterial,
    pub normal: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub views: Vec<ViewImage>,
    pub oracle: Option<Vec<OracleGaussian>>,
    pub background: Vec3,
}

/// `clamp(albedo·max(0, n·l) + k_s·max(0, r·v)^shininess, 0, 1)` with `r = reflect(l, n)`.
pub fn oracle_color(material: &OracleMaterial, normal: Vec3, view_dir: Vec3) -> Result<Vec3> {
    for (name, v) in [("normal", normal), ("view_dir", view_dir), ("light_dir", material.light_dir)] {
        if (math::norm(v) - 1.0).abs() > UNIT_TOL {
            return Err(Error::contract(format!("{name} is not unit length")));
        }
    }
    let l = material.light_dir;
    let n_dot_l = math::dot(normal, l);
    let reflected = math::sub(math::scale(normal, 2.0 * n_dot_l), l);
    let diffuse = n_dot_l.max(0.0);
    let lobe = material.specular_strength * math::dot(reflected, view_dir).max(0.0).powf(material.shininess);
    Ok(std::array::from_fn(|c| (material.albedo[c] * diffuse + lobe).clamp(0.0, 1.0)))
}

/// Diffuse-only oracle shading, `albedo·max(0, n·l)`.
pub fn oracle_diffuse(material: &OracleMaterial, normal: Vec3) -> Vec3 {
    let d = math::dot(normal, material.light_dir).max(0.0);
    material.albedo.map(|a| (a * d).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere {
        center: Vec3,
        radius: f64,
        count: usize,
        material: MaterialSpec,
        object_id: u32,
    },
    Box {
        center: Vec3,
        half_extent: Vec3,
        count: usize,
        material: MaterialSpec,
        object_id: u32,
    },
}

impl ShapeSpec {
    fn count(&self) -> usize {
        match self {
            ShapeSpec::Sphere { count, .. } | ShapeSpec::Box { count, .. } => *count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub albedo: Vec3,
    #[serde(default)]
    pub specular_strength: f64,
    #[serde(default = "default_shininess")]
    pub shininess: f64,
}

fn default_shininess() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shapes: Vec<ShapeSpec>,
    pub n_views: usize,
    pub image_size: [usize; 2],
    /// Focal length as a multiple of the image width.
    #[serde(default = "default_focal")]
    pub focal_factor: f64,
    #[serde(default = "default_orbit_radius")]
    pub orbit_radius: f64,
    /// Orbit elevations in degrees; views cycle through them.
    #[serde(default = "default_elevations")]
    pub elevations_deg: Vec<f64>,
    #[serde(default = "default_light")]
    pub light_dir: Vec3,
    #[serde(default)]
    pub background: Vec3,
    #[serde(default = "default_opacity")]
    pub opacity: f64,
    /// Gaussian std-dev as a fraction of the mean inter-sample spacing.
    #[serde(default = "default_scale_factor")]
    pub scale_factor: f64,
    pub rng_seed: u64,
}

fn default_focal() -> f64 {
    1.1
}
fn default_orbit_radius() -> f64 {
    3.2
}
fn default_elevations() -> Vec<f64> {
    vec![15.0, 35.0, 5.0, 25.0]
}
fn default_light() -> Vec3 {
    math::normalize([0.4, 0.8, 0.45])
}
fn default_opacity() -> f64 {
    0.9
}
fn default_scale_factor() -> f64 {
    0.6
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::config("scene spec has no shapes"));
        }
        if self.shapes.iter().any(|s| s.count() == 0) {
            return Err(Error::config("every shape needs at least one gaussian"));
        }
        if self.n_views == 0 {
            return Err(Error::config("scene spec needs at least one view"));
        }
        if self.image_size[0] < TILE_SIZE || self.image_size[1] < TILE_SIZE {
            return Err(Error::config(format!(
                "image size {:?} is smaller than the {TILE_SIZE}px tile",
                self.image_size
            )));
        }
        if (math::norm(self.light_dir) - 1.0).abs() > UNIT_TOL {
            return Err(Error::config("light_dir must be unit length"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::config("opacity must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Points on a sphere from a golden-angle spiral with a seeded rotation.
fn sphere_samples(center: Vec3, radius: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec3, Vec3)> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let offset: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64 + offset;
            let n = [r * phi.cos(), y, r * phi.sin()];
            (math::add(center, math::scale(n, radius)), n)
        })
        .collect()
}

/// Jittered-grid samples on the six faces of an axis-aligned box, proportional to face area.
fn box_samples(center: Vec3, half: Vec3, count: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec3, Vec3)> {
    let faces: Vec<(usize, f64)> = (0..3)
        .flat_map(|axis| [(axis, 1.0), (axis, -1.0)])
        .collect();
    let area = |axis: usize| {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        4.0 * half[u] * half[v]
    };
    let total: f64 = faces.iter().map(|&(a, _)| area(a)).sum();
    let mut out = Vec::with_capacity(count);
    let mut remaining = count;
    for (fi, &(axis, sign)) in faces.iter().enumerate() {
        let n_face = if fi + 1 == faces.len() {
            remaining
        } else {
            ((count as f64 * area(axis) / total).round() as usize).min(remaining)
        };
        remaining -= n_face;
        if n_face == 0 {
            continue;
        }
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let aspect = half[u] / half[v];
        let nu = ((n_face as f64 * aspect).sqrt().ceil() as usize).max(1);
        let nv = n_face.div_ceil(nu);
        let mut cells: Vec<(usize, usize)> = (0..nu).flat_map(|i| (0..nv).map(move |j| (i, j))).collect();
        // Drop surplus cells deterministically so exactly n_face samples remain.
        while cells.len() > n_face {
            let k = rng.random_range(0..cells.len());
            cells.swap_remove(k);
        }
        cells.sort_unstable();
        for (i, j) in cells {
            let su = (i as f64 + 0.25 + 0.5 * rng.random::<f64>()) / nu as f64;
            let sv = (j as f64 + 0.25 + 0.5 * rng.random::<f64>()) / nv as f64;
            let mut p = center;
            p[axis] += sign * half[axis];
            p[u] += (2.0 * su - 1.0) * half[u];
            p[v] += (2.0 * sv - 1.0) * half[v];
            let mut n = [0.0; 3];
            n[axis] = sign;
            out.push((p, n));
        }
    }
    out
}

/// Orbit cameras looking at the origin.
pub fn orbit_cameras(spec: &SceneSpec) -> Vec<Camera> {
    let [w, h] = spec.image_size;
    (0..spec.n_views)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / spec.n_views as f64;
            let el = spec.elevations_deg[i % spec.elevations_deg.len().max(1)].to_radians();
            let eye = [
                spec.orbit_radius * el.cos() * az.sin(),
                spec.orbit_radius * el.sin(),
                spec.orbit_radius * el.cos() * az.cos(),
            ];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], spec.focal_factor * w as f64, w, h)
        })
        .collect()
}

/// Generate a scene whose view images are the rasterized oracle colors.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut gaussians = Vec::new();
    let mut oracle = Vec::new();
    for shape in &spec.shapes {
        let (samples, area, material, object_id) = match shape {
            ShapeSpec::Sphere {
                center,
                radius,
                count,
                material,
                object_id,
            } => (
                sphere_samples(*center, *radius, *count, &mut rng),
                4.0 * std::f64::consts::PI * radius * radius,
                material,
                *object_id,
            ),
            ShapeSpec::Box {
                center,
                half_extent,
                count,
                material,
                object_id,
            } => {
                let [a, b, c] = *half_extent;
                (
                    box_samples(*center, *half_extent, *count, &mut rng),
                    8.0 * (a * b + b * c + a * c),
                    material,
                    *object_id,
                )
            }
        };
        let spacing = (area / samples.len() as f64).sqrt();
        let sigma = spec.scale_factor * spacing;
        for (p, n) in samples {
            let mut g = Gaussian3D::isotropic(p, sigma, spec.opacity);
            g.round_to_f32();
            gaussians.push(g);
            oracle.push(OracleGaussian {
                material: OracleMaterial {
                    albedo: material.albedo,
                    specular_strength: material.specular_strength,
                    shininess: material.shininess,
                    light_dir: spec.light_dir,
                    object_id,
                },
                normal: n,
            });
        }
    }
    let mut scene = Scene {
        gaussians,
        views: Vec::new(),
        oracle: Some(oracle),
        background: spec.background,
    };
    for (i, camera) in orbit_cameras(spec).into_iter().enumerate() {
        let pixels = scene.render_oracle(&camera)?;
        scene.views.push(ViewImage {
            camera,
            pixels,
            view_id: i as u32,
        });
    }
    Ok(scene)
}

impl Scene {
    pub fn oracle(&self) -> Result<&[OracleGaussian]> {
        self.oracle
            .as_deref()
            .ok_or_else(|| Error::config("scene carries no oracle materials"))
    }

    pub fn view(&self, view_id: u32) -> Result<&ViewImage> {
        self.views
            .iter()
            .find(|v| v.view_id == view_id)
            .ok_or_else(|| Error::NotFound(format!("view {view_id}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::config("scene has no gaussians"));
        }
        for g in &self.gaussians {
            g.validate()?;
        }
        for v in &self.views {
            v.camera.validate()?;
            if v.pixels.width != v.camera.width || v.pixels.height != v.camera.height {
                return Err(Error::config(format!("view {} size does not match camera", v.view_id)));
            }
            if !v.pixels.in_unit_range() {
                return Err(Error::config(format!("view {} has pixels outside [0,1]", v.view_id)));
            }
        }
        if let Some(o) = &self.oracle {
            if o.len() != self.gaussians.len() {
                return Err(Error::config("oracle table length does not match gaussians"));
            }
        }
        Ok(())
    }

    /// Per-gaussian oracle colors as seen from `camera`.
    pub fn oracle_colors(&self, camera: &Camera) -> Result<Vec<Vec3>> {
        let oracle = self.oracle()?;
        let eye = camera.center();
        self.gaussians
            .iter()
            .zip(oracle)
            .map(|(g, o)| {
                let v = math::normalize(math::sub(eye, g.mean));
                oracle_color(&o.material, o.normal, v)
            })
            .collect()
    }

    /// Rasterize the oracle colors from `camera` and snap to 8-bit.
    pub fn render_oracle(&self, camera: &Camera) -> Result<Image> {
        let blend = rasterizer::precompute_blend_camera(&self.gaussians, camera, TILE_SIZE)?;
        self.render_oracle_with(&blend, camera)
    }

    pub fn render_oracle_with(&self, blend: &BlendRecord, camera: &Camera) -> Result<Image> {
        let colors = self.oracle_colors(camera)?;
        let mut img = rasterizer::composite_forward(blend, &colors, self.background)?;
        img.quantize_u8();
        Ok(img)
    }

    pub fn object_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .oracle
            .iter()
            .flatten()
            .map(|o| o.material.object_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// 1.0 for gaussians belonging to `object_id`, else 0.0.
    pub fn object_membership(&self, object_id: u32) -> Result<Vec<f64>> {
        Ok(self
            .oracle()?
            .iter()
            .map(|o| if o.material.object_id == object_id { 1.0 } else { 0.0 })
            .collect())
    }

    /// Hash of the frozen geometry and cameras; keys blend caches and checkpoints.
    pub fn geometry_hash(&self) -> [u8; 32] {
        let mut w = Writer::new();
        write_gaussians(&mut w, &self.gaussians);
        write_cameras(&mut w, &self.views);
        sha256(&w.buf)
    }
}

/// Copy of `scene` with `object_id` repainted to `new_albedo` and every view re-rendered.
pub fn recolor_oracle(scene: &Scene, object_id: u32, new_albedo: Vec3) -> Result<Scene> {
    if !scene.object_ids().contains(&object_id) {
        return Err(Error::NotFound(format!("object {object_id}")));
    }
    let mut out = scene.clone();
    for o in out.oracle.iter_mut().flatten() {
        if o.material.object_id == object_id {
            o.material.albedo = new_albedo;
        }
    }
    for i in 0..out.views.len() {
        let camera = out.views[i].camera.clone();
        out.views[i].pixels = out.render_oracle(&camera)?;
    }
    Ok(out)
}

const SCENE_MAGIC: &[u8; 4] = b"VGSC";
const SCENE_VERSION: u32 = 1;

fn write_gaussians(w: &mut Writer, gaussians: &[Gaussian3D]) {
    w.u32(gaussians.len() as u32);
    for g in gaussians {
        w.f32s(&g.mean);
        w.f32s(&g.rotation);
        w.f32s(&g.scale);
        w.f32(g.opacity);
    }
}

fn write_cameras(w: &mut Writer, views: &[ViewImage]) {
    w.u32(views.len() as u32);
    for v in views {
        let c = &v.camera;
        w.u32(v.view_id);
        w.u32(c.width as u32);
        w.u32(c.height as u32);
        w.f64s(&[c.fx, c.fy, c.cx, c.cy]);
        w.f64s(&c.pose());
    }
}

impl Scene {
    /// Serialize to the `VGSC` container: header, gaussian table (f32),
    /// camera table (f64), background, optional oracle table, PNG views.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(SCENE_MAGIC);
        w.u32(SCENE_VERSION);
        write_gaussians(&mut w, &self.gaussians);
        write_cameras(&mut w, &self.views);
        w.f64s(&self.background);
        match &self.oracle {
            None => w.u32(0),
            Some(o) => {
                w.u32(1);
                for og in o {
                    let m = &og.material;
                    w.f64s(&m.albedo);
                    w.f64(m.specular_strength);
                    w.f64(m.shininess);
                    w.f64s(&m.light_dir);
                    w.u32(m.object_id);
                    w.f64s(&og.normal);
                }
            }
        }
        for v in &self.views {
            w.blob(&v.pixels.encode_png()?);
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(SCENE_MAGIC)?;
        let version = r.u32()?;
        if version != SCENE_VERSION {
            return Err(Error::Format(format!("unsupported scene version {version}")));
        }
        let n = r.u32()? as usize;
        let mut gaussians = Vec::with_capacity(n);
        for _ in 0..n {
            let v = r.f32s(11)?;
            gaussians.push(Gaussian3D {
                mean: [v[0], v[1], v[2]],
                rotation: [v[3], v[4], v[5], v[6]],
                scale: [v[7], v[8], v[9]],
                opacity: v[10],
            });
        }
        let n_views = r.u32()? as usize;
        let mut cams = Vec::with_capacity(n_views);
        for _ in 0..n_views {
            let view_id = r.u32()?;
            let width = r.u32()? as usize;
            let height = r.u32()? as usize;
            let k = r.f64s(4)?;
            let pose: [f64; 12] = r.f64s(12)?.try_into().unwrap();
            cams.push((view_id, Camera::from_pose(&pose, k[0], k[1], k[2], k[3], width, height)));
        }
        let bg = r.f64s(3)?;
        let oracle = if r.u32()? == 1 {
            let mut o = Vec::with_capacity(n);
            for _ in 0..n {
                let albedo: Vec3 = r.f64s(3)?.try_into().unwrap();
                let specular_strength = r.f64()?;
                let shininess = r.f64()?;
                let light_dir: Vec3 = r.f64s(3)?.try_into().unwrap();
                let object_id = r.u32()?;
                let normal: Vec3 = r.f64s(3)?.try_into().unwrap();
                o.push(OracleGaussian {
                    material: OracleMaterial {
                        albedo,
                        specular_strength,
                        shininess,
                        light_dir,
                        object_id,
                    },
                    normal,
                });
            }
            Some(o)
        } else {
            None
        };
        let mut views = Vec::with_capacity(n_views);
        for (view_id, camera) in cams {
            let pixels = Image::decode_png(r.blob()?)?;
            views.push(ViewImage {
                camera,
                pixels,
                view_id,
            });
        }
        let scene = Scene {
            gaussians,
            views,
            oracle,
            background: [bg[0], bg[1], bg[2]],
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn sphere(center: Vec3, radius: f64, count: usize, albedo: Vec3, specular: f64, shininess: f64, object_id: u32) -> ShapeSpec {
    ShapeSpec::Sphere {
        center,
        radius,
        count,
        material: MaterialSpec {
            albedo,
            specular_strength: specular,
            shininess,
        },
        object_id,
    }
}

fn cube(center: Vec3, half: f64, count: usize, albedo: Vec3, specular: f64, shininess: f64, object_id: u32) -> ShapeSpec {
    ShapeSpec::Box {
        center,
        half_extent: [half; 3],
        count,
        material: MaterialSpec {
            albedo,
            specular_strength: specular,
            shininess,
        },
        object_id,
    }
}

fn preset(shapes: Vec<ShapeSpec>, rng_seed: u64) -> SceneSpec {
    SceneSpec {
        shapes,
        n_views: 16,
        image_size: [64, 64],
        focal_factor: default_focal(),
        orbit_radius: default_orbit_radius(),
        elevations_deg: default_elevations(),
        light_dir: default_light(),
        background: [0.0; 3],
        opacity: default_opacity(),
        scale_factor: default_scale_factor(),
        rng_seed,
    }
}

/// Glossy red sphere (object 1) beside a matte blue box (object 2); 16 orbit views at 64×64.
pub fn reference_spec() -> SceneSpec {
    preset(
        vec![
            sphere([-0.55, 0.0, 0.0], 0.5, 600, [0.85, 0.15, 0.1], 0.5, 24.0, 1),
            cube([0.6, 0.0, 0.0], 0.35, 600, [0.2, 0.3, 0.8], 0.0, 1.0, 2),
        ],
        7,
    )
}

/// Three seeded Phong scenes with different layouts and glossiness. Object 1
/// is glossy in each, which makes it the recolor target.
pub fn phong_suite() -> Vec<SceneSpec> {
    vec![
        reference_spec(),
        preset(
            vec![
                sphere([0.5, 0.05, 0.1], 0.45, 600, [0.9, 0.75, 0.2], 0.6, 32.0, 1),
                sphere([-0.55, -0.05, -0.1], 0.4, 600, [0.25, 0.6, 0.3], 0.0, 1.0, 2),
            ],
            11,
        ),
        preset(
            vec![
                cube([-0.45, 0.0, 0.0], 0.4, 600, [0.7, 0.2, 0.6], 0.45, 16.0, 1),
                sphere([0.6, 0.1, 0.0], 0.38, 600, [0.8, 0.8, 0.75], 0.0, 1.0, 2),
            ],
            23,
        ),
    ]
}
