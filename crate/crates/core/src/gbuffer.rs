//! Alpha-blended G-buffers, unbiased depth and depth-derived geometry.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use glam::{DMat3, DQuat, DVec2, DVec3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Ray, SurfelScene, TRANSMITTANCE_STOP};
use crate::raster::Image;
use crate::shading::BrdfParams;
use crate::{seed, Error, Result};

/// Pixels with accumulated weight below this have no valid unbiased depth.
pub const W_MIN: f64 = 0.05;

/// Pinhole camera looking down its local `-Z` axis with `+Y` up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub orientation: DQuat,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(position: DVec3, orientation: DQuat, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Camera {
            position,
            orientation: orientation.normalize(),
            fov_y,
            width,
            height,
            near: 1e-4,
            far: 1e6,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn look_at(position: DVec3, target: DVec3, up: DVec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - position).normalize_or_zero();
        let right = forward.cross(up).normalize_or_zero();
        if forward == DVec3::ZERO || right == DVec3::ZERO {
            return Err(Error::invalid("look_at needs distinct target and a non-parallel up vector"));
        }
        let cam_up = right.cross(forward);
        let rot = DMat3::from_cols(right, cam_up, -forward);
        Camera::new(position, DQuat::from_mat3(&rot), fov_y, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid("camera needs 0 < near < far"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::invalid("camera fov_y must be in (0, pi)"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        if !self.position.is_finite() || !self.orientation.is_finite() {
            return Err(Error::invalid("camera pose must be finite"));
        }
        Ok(())
    }

    pub fn forward(&self) -> DVec3 {
        self.orientation * DVec3::NEG_Z
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn tan_half(&self) -> DVec2 {
        let ty = (0.5 * self.fov_y).tan();
        DVec2::new(ty * self.width as f64 / self.height as f64, ty)
    }

    /// World-space unit direction through image position `p`, where pixel
    /// `(x, y)` spans `[x, x+1] × [y, y+1]` and row 0 is the top.
    pub fn ray_direction(&self, p: DVec2) -> DVec3 {
        let th = self.tan_half();
        let ndc = DVec2::new(2.0 * p.x / self.width as f64 - 1.0, 1.0 - 2.0 * p.y / self.height as f64);
        (self.orientation * DVec3::new(ndc.x * th.x, ndc.y * th.y, -1.0)).normalize()
    }

    pub fn pixel_center_direction(&self, x: usize, y: usize) -> DVec3 {
        self.ray_direction(DVec2::new(x as f64 + 0.5, y as f64 + 0.5))
    }

    pub fn pixel_ray(&self, x: usize, y: usize) -> Ray {
        Ray::new(self.position, self.pixel_center_direction(x, y)).with_range(self.near, self.far)
    }

    /// Image position and ray distance of a world point in front of the
    /// camera.
    pub fn project(&self, point: DVec3) -> Option<(DVec2, f64)> {
        let rel = point - self.position;
        let local = self.orientation.inverse() * rel;
        if local.z >= 0.0 {
            return None;
        }
        let th = self.tan_half();
        let ndc = DVec2::new(local.x / (-local.z * th.x), local.y / (-local.z * th.y));
        let p = DVec2::new(
            (ndc.x + 1.0) * 0.5 * self.width as f64,
            (1.0 - ndc.y) * 0.5 * self.height as f64,
        );
        Some((p, rel.length()))
    }
}

/// Eq. 1 targets accumulated along one ray.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlendSample {
    pub color: DVec3,
    pub weight: f64,
    pub depth: f64,
    /// Blended normal, each term flipped to face the ray origin; not
    /// normalized.
    pub normal: DVec3,
    pub albedo: DVec3,
    pub roughness: f64,
    pub metallic: f64,
}

/// Front-to-back blend `Σ T_i α_i b_i` of every target along `ray`.
pub fn blend_ray(scene: &SurfelScene, ray: &Ray) -> BlendSample {
    let mut out = BlendSample::default();
    if scene.is_empty() {
        return out;
    }
    let surfels = scene.surfels();
    let mut transmittance = 1.0;
    scene.visit_ordered(ray, |hit| {
        let s = &surfels[hit.surfel_index];
        let w = transmittance * hit.alpha;
        let mut n = s.normal();
        if n.dot(ray.direction) > 0.0 {
            n = -n;
        }
        out.color += w * s.color;
        out.weight += w;
        out.depth += w * hit.t;
        out.normal += w * n;
        out.albedo += w * s.albedo;
        out.roughness += w * s.roughness;
        out.metallic += w * s.metallic;
        transmittance *= 1.0 - hit.alpha;
        if transmittance < TRANSMITTANCE_STOP {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    out
}

/// Per-pixel planes of Eq. 1. `normal` holds unit vectors (or zero where
/// nothing was hit); every other plane is the raw blended sum.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub color: Vec<DVec3>,
    pub weight: Vec<f64>,
    pub depth: Vec<f64>,
    pub normal: Vec<DVec3>,
    pub albedo: Vec<DVec3>,
    pub roughness: Vec<f64>,
    pub metallic: Vec<f64>,
}

impl GBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        GBuffer {
            width,
            height,
            color: vec![DVec3::ZERO; n],
            weight: vec![0.0; n],
            depth: vec![0.0; n],
            normal: vec![DVec3::ZERO; n],
            albedo: vec![DVec3::ZERO; n],
            roughness: vec![0.0; n],
            metallic: vec![0.0; n],
        }
    }

    fn from_samples(width: usize, height: usize, samples: Vec<BlendSample>) -> Self {
        let mut g = GBuffer::new(width, height);
        for (k, s) in samples.into_iter().enumerate() {
            g.color[k] = s.color;
            g.weight[k] = s.weight;
            g.depth[k] = s.depth;
            g.normal[k] = s.normal.normalize_or_zero();
            g.albedo[k] = s.albedo;
            g.roughness[k] = s.roughness;
            g.metallic[k] = s.metallic;
        }
        g
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Material at pixel `k`, normalized by the blend weight.
    pub fn material(&self, k: usize) -> BrdfParams {
        let w = self.weight[k];
        if w <= 0.0 {
            return BrdfParams::default();
        }
        BrdfParams {
            albedo: (self.albedo[k] / w).clamp(DVec3::ZERO, DVec3::ONE),
            roughness: (self.roughness[k] / w).clamp(0.0, 1.0),
            metallic: (self.metallic[k] / w).clamp(0.0, 1.0),
        }
    }

    pub fn color_image(&self) -> Image {
        let mut img = Image::new(self.width, self.height, 3);
        for (k, c) in self.color.iter().enumerate() {
            img.set_rgb(k % self.width, k / self.width, *c);
        }
        img
    }

    pub fn weight_image(&self) -> Image {
        Image::from_data(self.width, self.height, 1, self.weight.clone()).expect("plane size")
    }

    /// Writes `<stem>.bin` (little-endian f32 planes) and `<stem>.json`
    /// describing the plane order; returns both paths.
    pub fn save_planes(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let bin_path = dir.as_ref().join(format!("{stem}.bin"));
        let json_path = dir.as_ref().join(format!("{stem}.json"));
        let mut out = BufWriter::new(File::create(&bin_path)?);
        let mut planes = Vec::new();
        let mut offset = 0usize;
        let mut put3 = |name: &str, v: &[DVec3], out: &mut BufWriter<File>, planes: &mut Vec<PlaneInfo>| -> Result<()> {
            for c in 0..3 {
                for p in v {
                    out.write_all(&(p[c] as f32).to_le_bytes())?;
                }
            }
            planes.push(PlaneInfo { name: name.into(), channels: 3, offset });
            offset += 3 * v.len() * 4;
            Ok(())
        };
        put3("color", &self.color, &mut out, &mut planes)?;
        put3("normal", &self.normal, &mut out, &mut planes)?;
        put3("albedo", &self.albedo, &mut out, &mut planes)?;
        for (name, v) in [("weight", &self.weight), ("depth", &self.depth), ("roughness", &self.roughness), ("metallic", &self.metallic)] {
            for p in v {
                out.write_all(&(*p as f32).to_le_bytes())?;
            }
            planes.push(PlaneInfo { name: name.into(), channels: 1, offset });
            offset += v.len() * 4;
        }
        out.flush()?;
        let sidecar = PlaneSidecar {
            width: self.width,
            height: self.height,
            dtype: "f32le".into(),
            layout: "planar, row-major, channel-major within a plane".into(),
            planes,
        };
        std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar).map_err(|e| Error::invalid(e.to_string()))?)?;
        Ok((bin_path, json_path))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlaneInfo {
    pub name: String,
    pub channels: usize,
    /// Byte offset of the plane within the binary file.
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlaneSidecar {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub layout: String,
    pub planes: Vec<PlaneInfo>,
}

/// One pixel-center ray per pixel.
pub fn render_gbuffers(scene: &SurfelScene, cam: &Camera) -> GBuffer {
    scene.accel();
    let samples: Vec<BlendSample> = (0..cam.pixel_count())
        .into_par_iter()
        .map(|k| blend_ray(scene, &cam.pixel_ray(k % cam.width, k / cam.width)))
        .collect();
    GBuffer::from_samples(cam.width, cam.height, samples)
}

/// Jittered supersampling: `spp` rays per pixel averaged. `spp = 1` is the
/// deterministic pixel-center render.
pub fn render_gbuffers_supersampled(scene: &SurfelScene, cam: &Camera, spp: usize, seed_value: u64) -> GBuffer {
    if spp <= 1 {
        return render_gbuffers(scene, cam);
    }
    scene.accel();
    let samples: Vec<BlendSample> = (0..cam.pixel_count())
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(seed::item_seed(seed_value, k as u64));
            let (x, y) = ((k % cam.width) as f64, (k / cam.width) as f64);
            let mut acc = BlendSample::default();
            for _ in 0..spp {
                let p = DVec2::new(x + rng.gen::<f64>(), y + rng.gen::<f64>());
                let ray = Ray::new(cam.position, cam.ray_direction(p)).with_range(cam.near, cam.far);
                let s = blend_ray(scene, &ray);
                acc.color += s.color;
                acc.weight += s.weight;
                acc.depth += s.depth;
                acc.normal += s.normal;
                acc.albedo += s.albedo;
                acc.roughness += s.roughness;
                acc.metallic += s.metallic;
            }
            let inv = 1.0 / spp as f64;
            BlendSample {
                color: acc.color * inv,
                weight: acc.weight * inv,
                depth: acc.depth * inv,
                normal: acc.normal * inv,
                albedo: acc.albedo * inv,
                roughness: acc.roughness * inv,
                metallic: acc.metallic * inv,
            }
        })
        .collect();
    GBuffer::from_samples(cam.width, cam.height, samples)
}

/// Per-pixel depth with an explicit validity flag (`None` = invalid).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Option<f64>>,
}

impl DepthMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.values[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// `D / W` where `W >= W_MIN`.
pub fn unbiased_depth(g: &GBuffer) -> DepthMap {
    let values = g
        .depth
        .iter()
        .zip(&g.weight)
        .map(|(&d, &w)| (w >= W_MIN).then(|| d / w))
        .collect();
    DepthMap {
        width: g.width,
        height: g.height,
        values,
    }
}

/// Back-projects every valid depth along its pixel-center ray.
pub fn depth_to_points(depth: &DepthMap, cam: &Camera) -> Vec<Option<DVec3>> {
    (0..depth.values.len())
        .map(|k| {
            depth.values[k].map(|d| cam.position + d * cam.pixel_center_direction(k % depth.width, k / depth.width))
        })
        .collect()
}

/// Normals from central differences of the back-projected point grid,
/// oriented toward the camera. Border pixels and pixels with an invalid
/// neighbour are `None`.
pub fn normal_from_depth(depth: &DepthMap, cam: &Camera) -> Vec<Option<DVec3>> {
    let points = depth_to_points(depth, cam);
    let (w, h) = (depth.width, depth.height);
    (0..w * h)
        .map(|k| {
            let (x, y) = (k % w, k / w);
            if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
                return None;
            }
            let p = points[k]?;
            let dx = points[k + 1]? - points[k - 1]?;
            let dy = points[k + w]? - points[k - w]?;
            let n = dx.cross(dy).normalize_or_zero();
            if n == DVec3::ZERO {
                return None;
            }
            Some(if n.dot(cam.position - p) < 0.0 { -n } else { n })
        })
        .collect()
}

/// Everything the shading estimators need at one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingPoint {
    pub position: DVec3,
    pub normal: DVec3,
    /// Unit direction toward the camera.
    pub view: DVec3,
    pub material: BrdfParams,
}

#[derive(Clone, Debug)]
pub struct ShadingPointSet {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Option<ShadingPoint>>,
}

impl ShadingPointSet {
    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

/// Shading points from the unbiased depth and the blended normal plane.
pub fn shading_points(g: &GBuffer, cam: &Camera) -> ShadingPointSet {
    let depth = unbiased_depth(g);
    let positions = depth_to_points(&depth, cam);
    let points = positions
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let position = (*p)?;
            let normal = g.normal[k];
            if normal == DVec3::ZERO {
                return None;
            }
            let view = -cam.pixel_center_direction(k % g.width, k / g.width);
            Some(ShadingPoint {
                position,
                normal,
                view,
                material: g.material(k),
            })
        })
        .collect();
    ShadingPointSet {
        width: g.width,
        height: g.height,
        points,
    }
}
