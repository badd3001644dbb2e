//! Surfel primitives, rays, ray–surfel intersection and the acceleration
//! structure used for ordered alpha traversal.

mod bvh;
pub(crate) mod io;
mod scene;

use glam::{DQuat, DVec2, DVec3};
use serde::{Deserialize, Serialize};

pub use bvh::Bvh;
pub use io::{load_surfels, read_surfels, save_surfels, write_surfels, SURFEL_MAGIC};
pub use scene::{SurfelScene, TRANSMITTANCE_STOP};

/// Hits whose alpha does not exceed this value are dropped.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;

/// The Gaussian kernel is truncated at this many standard deviations. The
/// same radius bounds the disc in the BVH, so traversal and exhaustive
/// intersection agree.
pub const KERNEL_EXTENT_SIGMA: f64 = 3.0;

/// Rays closer to parallel with a surfel plane than this are rejected.
pub const PARALLEL_EPS: f64 = 1e-8;

/// An oriented 2D Gaussian disc carrying radiance and PBR material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surfel {
    pub center: DVec3,
    pub rotation: DQuat,
    /// Half-extents (standard deviations) along the two tangent axes.
    pub scale: DVec2,
    pub opacity: f64,
    /// Linear RGB radiance.
    pub color: DVec3,
    pub albedo: DVec3,
    pub roughness: f64,
    pub metallic: f64,
}

impl Default for Surfel {
    fn default() -> Self {
        Surfel {
            center: DVec3::ZERO,
            rotation: DQuat::IDENTITY,
            scale: DVec2::ONE,
            opacity: 1.0,
            color: DVec3::ONE,
            albedo: DVec3::splat(0.5),
            roughness: 1.0,
            metallic: 0.0,
        }
    }
}

impl Surfel {
    /// Surfel oriented so that its normal is `normal`.
    pub fn facing(center: DVec3, normal: DVec3, scale: DVec2) -> Self {
        Surfel {
            center,
            rotation: DQuat::from_rotation_arc(DVec3::Z, normal.normalize()),
            scale,
            ..Default::default()
        }
    }

    /// Third column of the rotation matrix.
    #[inline]
    pub fn normal(&self) -> DVec3 {
        self.rotation * DVec3::Z
    }

    #[inline]
    pub fn tangents(&self) -> (DVec3, DVec3) {
        (self.rotation * DVec3::X, self.rotation * DVec3::Y)
    }

    /// Axis-aligned box around the disc truncated at [`KERNEL_EXTENT_SIGMA`].
    pub fn bounds(&self) -> Aabb {
        let (tu, tv) = self.tangents();
        let a = tu * (self.scale.x * KERNEL_EXTENT_SIGMA);
        let b = tv * (self.scale.y * KERNEL_EXTENT_SIGMA);
        let half = (a * a + b * b).map(f64::sqrt);
        Aabb::new(self.center - half, self.center + half)
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = self.center.is_finite()
            && self.rotation.is_finite()
            && self.scale.is_finite()
            && self.opacity.is_finite()
            && self.color.is_finite()
            && self.albedo.is_finite()
            && self.roughness.is_finite()
            && self.metallic.is_finite();
        if !finite {
            return Err("non-finite field".into());
        }
        if (self.rotation.length() - 1.0).abs() > 1e-5 {
            return Err(format!("quaternion not normalized (|q| = {})", self.rotation.length()));
        }
        if self.scale.x <= 0.0 || self.scale.y <= 0.0 {
            return Err("scale components must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err("opacity outside [0, 1]".into());
        }
        if self.color.min_element() < 0.0 {
            return Err("negative radiance".into());
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.albedo.min_element() >= 0.0 && self.albedo.max_element() <= 1.0)
            || !unit(self.roughness)
            || !unit(self.metallic)
        {
            return Err("material channel outside [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub direction: DVec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    /// Unbounded ray; `direction` is normalized.
    pub fn new(origin: DVec3, direction: DVec3) -> Self {
        Ray {
            origin,
            direction: direction.normalize(),
            t_min: 0.0,
            t_max: f64::INFINITY,
        }
    }

    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Self {
        debug_assert!(0.0 <= t_min && t_min < t_max);
        self.t_min = t_min;
        self.t_max = t_max;
        self
    }

    #[inline]
    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfelHit {
    pub surfel_index: usize,
    pub t: f64,
    pub local_uv: DVec2,
    pub alpha: f64,
}

/// Gaussian kernel alpha for a tangent-plane offset.
#[inline]
pub fn kernel_alpha(opacity: f64, local_uv: DVec2, scale: DVec2) -> f64 {
    let q = local_uv / scale;
    (opacity * (-0.5 * q.length_squared()).exp()).clamp(0.0, 1.0)
}

/// Intersects `ray` with the tangent plane of `surfel`. Surfels are two-sided.
#[inline]
pub fn intersect_surfel(ray: &Ray, surfel: &Surfel, surfel_index: usize) -> Option<SurfelHit> {
    let n = surfel.normal();
    let denom = ray.direction.dot(n);
    if denom.abs() <= PARALLEL_EPS {
        return None;
    }
    let t = (surfel.center - ray.origin).dot(n) / denom;
    if !(t > ray.t_min && t < ray.t_max) {
        return None;
    }
    let offset = ray.at(t) - surfel.center;
    let (tu, tv) = surfel.tangents();
    let local_uv = DVec2::new(offset.dot(tu), offset.dot(tv));
    let q = local_uv / surfel.scale;
    if q.length_squared() > KERNEL_EXTENT_SIGMA * KERNEL_EXTENT_SIGMA {
        return None;
    }
    let alpha = kernel_alpha(surfel.opacity, local_uv, surfel.scale);
    (alpha > ALPHA_CUTOFF).then_some(SurfelHit {
        surfel_index,
        t,
        local_uv,
        alpha,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Default for Aabb {
    fn default() -> Self {
        Aabb::EMPTY
    }
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: DVec3::splat(f64::INFINITY),
        max: DVec3::splat(f64::NEG_INFINITY),
    };

    pub fn new(min: DVec3, max: DVec3) -> Self {
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a DVec3>) -> Self {
        points.into_iter().fold(Aabb::EMPTY, |b, p| b.grow(*p))
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn grow(self, p: DVec3) -> Self {
        Aabb::new(self.min.min(p), self.max.max(p))
    }

    pub fn union(self, other: Aabb) -> Self {
        Aabb::new(self.min.min(other.min), self.max.max(other.max))
    }

    pub fn size(&self) -> DVec3 {
        if self.is_empty() {
            DVec3::ZERO
        } else {
            self.max - self.min
        }
    }

    pub fn center(&self) -> DVec3 {
        0.5 * (self.min + self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.size().length()
    }

    pub fn surface_area(&self) -> f64 {
        let d = self.size();
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    pub fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min).all() && p.cmple(self.max).all()
    }

    /// Slab test clipped to `[t_min, t_max]`; returns the entry distance.
    #[inline]
    pub fn ray_entry(&self, origin: DVec3, inv_dir: DVec3, t_min: f64, t_max: f64) -> Option<f64> {
        let mut enter = t_min;
        let mut exit = t_max;
        for axis in 0..3 {
            let inv = inv_dir[axis];
            let lo = self.min[axis] - origin[axis];
            let hi = self.max[axis] - origin[axis];
            if inv.is_infinite() {
                // parallel to this slab
                if lo > 0.0 || hi < 0.0 {
                    return None;
                }
                continue;
            }
            let (a, b) = (lo * inv, hi * inv);
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            enter = enter.max(near);
            exit = exit.min(far);
        }
        (enter <= exit).then_some(enter)
    }
}

/// Similarity transform used to place an object in a scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    pub translation: DVec3,
    pub rotation: DQuat,
    pub uniform_scale: f64,
}

impl Default for PlacementTransform {
    fn default() -> Self {
        PlacementTransform::IDENTITY
    }
}

impl PlacementTransform {
    pub const IDENTITY: PlacementTransform = PlacementTransform {
        translation: DVec3::ZERO,
        rotation: DQuat::IDENTITY,
        uniform_scale: 1.0,
    };

    pub fn new(translation: DVec3, rotation: DQuat, uniform_scale: f64) -> Self {
        PlacementTransform {
            translation,
            rotation,
            uniform_scale,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.uniform_scale > 0.0 && self.uniform_scale.is_finite()) {
            return Err(crate::Error::invalid("uniform_scale must be positive"));
        }
        if !self.translation.is_finite() || (self.rotation.length() - 1.0).abs() > 1e-6 {
            return Err(crate::Error::invalid("placement rotation must be a unit quaternion"));
        }
        Ok(())
    }

    #[inline]
    pub fn apply_point(&self, p: DVec3) -> DVec3 {
        self.translation + self.rotation * (p * self.uniform_scale)
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        let uniform_scale = 1.0 / self.uniform_scale;
        PlacementTransform {
            translation: -(rotation * self.translation) * uniform_scale,
            rotation,
            uniform_scale,
        }
    }

    pub fn apply_surfel(&self, s: &Surfel) -> Surfel {
        let mut rotation = self.rotation * s.rotation;
        if (rotation.length_squared() - 1.0).abs() > 1e-12 {
            rotation = rotation.normalize();
        }
        Surfel {
            center: self.apply_point(s.center),
            rotation,
            scale: s.scale * self.uniform_scale,
            ..*s
        }
    }
}
