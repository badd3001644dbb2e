//! Object insertion: the shadow region, object-only occlusion probes, the
//! shadow ratio applied to the scene, object relighting and depth
//! compositing.

use std::time::Instant;

use glam::DVec3;
use rayon::prelude::*;

use crate::gbuffer::{render_gbuffers, shading_points, unbiased_depth, Camera, GBuffer};
use crate::geometry::{Aabb, PlacementTransform, SurfelScene};
use crate::probes::{
    bake_probes, default_offset, farthest_point_sample, fuse_surface_points_where, place_probes, ProbeSet,
    DEFAULT_TEX_SIZE,
};
use crate::raster::Image;
use crate::seed::{derive_seed, item_seed};
use crate::shading::{deferred_pbr, shifted_hammersley, EstimatorMode, Environment, IlluminationContext};
use crate::{Error, Result};

pub const DEFAULT_REGION_MULTIPLIER: f64 = 6.0;
pub const SHADOW_PROBE_COUNT: usize = 10_000;
pub const OBJECT_PROBE_COUNT: usize = 5_000;
/// Shadow ratios with a smaller denominator are left at 1.
pub const RATIO_EPS: f64 = 1e-6;
/// Object pixels need at least this coverage to replace the scene.
pub const OBJECT_ALPHA: f64 = 0.5;
/// Object dimensions below this fraction of the largest one are raised to
/// it, so flat objects still get a region with volume.
const MIN_DIMENSION_FRACTION: f64 = 0.01;

/// Axis-aligned box around the placement where shadows are computed.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShadowRegion {
    pub center: DVec3,
    pub half_extent: DVec3,
}

impl ShadowRegion {
    pub fn new(center: DVec3, half_extent: DVec3) -> Result<Self> {
        if !center.is_finite() || !half_extent.is_finite() || half_extent.min_element() <= 0.0 {
            return Err(Error::invalid("shadow region needs a finite, positive half extent"));
        }
        Ok(ShadowRegion { center, half_extent })
    }

    pub fn contains(&self, p: DVec3) -> bool {
        ((p - self.center).abs() - self.half_extent).max_element() <= 0.0
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(self.center - self.half_extent, self.center + self.half_extent)
    }
}

/// Extent of the surfel centers, with degenerate axes raised to a small
/// fraction of the largest one.
pub fn object_dimensions(object: &SurfelScene) -> DVec3 {
    let size = object.center_bounds().size();
    let floor = size.max_element() * MIN_DIMENSION_FRACTION;
    size.max(DVec3::splat(floor))
}

/// Box centered on the placed object, `multiplier / 2` times its dimensions
/// on each side.
pub fn define_shadow_region(object: &SurfelScene, xf: &PlacementTransform, multiplier: f64) -> Result<ShadowRegion> {
    if !(multiplier >= 1.0) || !multiplier.is_finite() {
        return Err(Error::invalid(format!("region multiplier must be at least 1, got {multiplier}")));
    }
    if object.is_empty() {
        return Err(Error::invalid("cannot define a shadow region around an empty object"));
    }
    xf.validate()?;
    let placed = object.transformed(xf);
    let dims = object_dimensions(&placed);
    ShadowRegion::new(placed.center_bounds().center(), 0.5 * multiplier * dims)
}

/// Views covering the region from above and from four oblique directions,
/// used to find scene surface inside it.
pub fn region_cameras(region: &ShadowRegion, width: usize, height: usize) -> Vec<Camera> {
    let fov = 60f64.to_radians();
    let reach = region.half_extent.length();
    let dist = 1.2 * reach / (0.5 * fov).tan() + reach;
    let c = region.center;
    let mut cams = vec![Camera::look_at(c + DVec3::Z * dist, c, DVec3::Y, fov, width, height).expect("top view")];
    for k in 0..4 {
        let a = std::f64::consts::FRAC_PI_2 * k as f64 + std::f64::consts::FRAC_PI_4;
        let dir = DVec3::new(a.cos(), a.sin(), 1.0).normalize();
        cams.push(Camera::look_at(c + dir * dist, c, DVec3::Z, fov, width, height).expect("oblique view"));
    }
    cams
}

/// Probes on the scene surface inside the region whose occlusion textures
/// hold the occlusion caused by the object alone.
#[derive(Clone, Debug)]
pub struct ShadowField {
    pub probes: ProbeSet,
    pub region: ShadowRegion,
}

#[derive(Clone, Debug)]
pub struct ShadowFieldOptions {
    pub probe_count: usize,
    pub tex_size: usize,
    pub camera_resolution: (usize, usize),
    /// Fusion cameras; the default region views when empty.
    pub cameras: Vec<Camera>,
}

impl Default for ShadowFieldOptions {
    fn default() -> Self {
        ShadowFieldOptions {
            probe_count: SHADOW_PROBE_COUNT,
            tex_size: DEFAULT_TEX_SIZE,
            camera_resolution: (256, 256),
            cameras: Vec::new(),
        }
    }
}

pub fn cache_occlusion(
    scene: &SurfelScene,
    object_placed: &SurfelScene,
    region: &ShadowRegion,
    opts: &ShadowFieldOptions,
) -> Result<ShadowField> {
    if opts.probe_count == 0 || opts.tex_size < 2 {
        return Err(Error::invalid("shadow field needs probes and a texture size of at least 2"));
    }
    let cams = if opts.cameras.is_empty() {
        region_cameras(region, opts.camera_resolution.0, opts.camera_resolution.1)
    } else {
        opts.cameras.clone()
    };
    let surface = match fuse_surface_points_where(scene, &cams, |p| region.contains(p)) {
        Ok(s) => s,
        Err(Error::NoSurfaceCoverage) => return Err(Error::NothingToShadow),
        Err(e) => return Err(e),
    };
    let picked = farthest_point_sample(&surface.points, opts.probe_count.min(surface.len()), 0)?;
    let surface = surface.select(&picked);
    let offset = if object_placed.is_empty() {
        0.01 * region.half_extent.length()
    } else {
        default_offset(object_placed)
    };
    let placements: Vec<_> = place_probes(&surface.points, &surface.normals, offset)?
        .into_iter()
        .filter(|(p, _)| region.contains(*p))
        .collect();
    if placements.is_empty() {
        return Err(Error::NothingToShadow);
    }
    let probes = bake_probes(object_placed, &placements, opts.tex_size);
    log::info!("shadow field: {} probes from {} surface points", probes.len(), surface.len());
    Ok(ShadowField {
        probes: ProbeSet::with_default_radius(probes)?,
        region: *region,
    })
}

/// `S = L'_o / L_o` at `x`: both integrals use the same environment
/// samples, the numerator weighted by `1 - O'`, so each channel is in
/// [0, 1]. Points outside the region, black environments and vanishing
/// denominators give 1.
pub fn shadow_ratio(x: DVec3, n: DVec3, env: &Environment, field: &ShadowField, samples: usize, seed_value: u64) -> DVec3 {
    if !field.region.contains(x) {
        return DVec3::ONE;
    }
    let Some(table) = env.table() else {
        return DVec3::ONE;
    };
    let nb = field.probes.neighborhood(x);
    let (mut num, mut den) = (DVec3::ZERO, DVec3::ZERO);
    for u in shifted_hammersley(samples.max(1), seed_value) {
        let (wi, pdf) = table.sample(u.x, u.y);
        let cos = wi.dot(n);
        if cos <= 0.0 || pdf <= 0.0 {
            continue;
        }
        let w = env.radiance(wi) * (cos / pdf);
        let visible = if nb.is_empty() { 1.0 } else { 1.0 - snap_unit(nb.occlusion(wi)) };
        den += w;
        num += w * visible;
    }
    DVec3::from_array(std::array::from_fn(|c| {
        if den[c] < RATIO_EPS {
            1.0
        } else {
            (num[c] / den[c]).clamp(0.0, 1.0)
        }
    }))
}

/// Clamps to [0, 1] and removes the rounding left by normalized weights, so
/// uniform fields of 0 or 1 stay exact.
fn snap_unit(v: f64) -> f64 {
    const TOL: f64 = 1e-12;
    if v < TOL {
        0.0
    } else if v > 1.0 - TOL {
        1.0
    } else {
        v
    }
}

/// Shadow ratio at every scene pixel of `g` (1 where nothing was hit).
pub fn scene_shadow_ratios(
    g: &GBuffer,
    cam: &Camera,
    env: &Environment,
    field: &ShadowField,
    samples: usize,
    seed_value: u64,
) -> Vec<DVec3> {
    let points = shading_points(g, cam);
    points
        .points
        .par_iter()
        .enumerate()
        .map(|(k, sp)| match sp {
            Some(sp) => shadow_ratio(sp.position, sp.normal, env, field, samples, item_seed(seed_value, k as u64)),
            None => DVec3::ONE,
        })
        .collect()
}

/// The relit object as seen from one camera.
#[derive(Clone, Debug)]
pub struct ObjectRender {
    /// Linear radiance.
    pub image: Image,
    /// Ray distance, `+inf` where the object was not hit.
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub probe_fallbacks: usize,
}

pub fn relight_object(
    object_placed: &SurfelScene,
    env: &Environment,
    object_probes: &ProbeSet,
    cam: &Camera,
    samples: usize,
    seed_value: u64,
) -> ObjectRender {
    let g = render_gbuffers(object_placed, cam);
    let ctx = IlluminationContext::with_probes(env, object_probes);
    let pbr = deferred_pbr(&g, cam, &ctx, samples, EstimatorMode::Importance, seed_value);
    let depth = unbiased_depth(&g).values.iter().map(|d| d.unwrap_or(f64::INFINITY)).collect();
    ObjectRender {
        image: pbr.image,
        depth,
        alpha: pbr.alpha,
        probe_fallbacks: pbr.probe_fallbacks,
    }
}

/// Scene color times the shadow ratio, with object pixels drawn where the
/// object is covered and in front of the scene. Returns linear radiance.
pub fn compose_frame(scene_g: &GBuffer, shadow: Option<&[DVec3]>, object: Option<&ObjectRender>) -> Result<Image> {
    let (w, h) = (scene_g.width, scene_g.height);
    if let Some(s) = shadow {
        if s.len() != w * h {
            return Err(Error::DimensionMismatch(format!("{} shadow ratios for a {w}x{h} frame", s.len())));
        }
    }
    if let Some(o) = object {
        if o.image.width() != w || o.image.height() != h || o.depth.len() != w * h || o.alpha.len() != w * h {
            return Err(Error::DimensionMismatch(format!(
                "object render is {}x{}, scene is {w}x{h}",
                o.image.width(),
                o.image.height()
            )));
        }
    }
    let scene_depth = object.map(|_| unbiased_depth(scene_g));
    let mut out = Image::new(w, h, 3);
    for k in 0..w * h {
        let (x, y) = (k % w, k / w);
        let mut c = scene_g.color[k];
        if let Some(s) = shadow {
            c *= s[k];
        }
        if let (Some(o), Some(sd)) = (object, scene_depth.as_ref()) {
            let behind = sd.values[k].unwrap_or(f64::INFINITY);
            if o.alpha[k] > OBJECT_ALPHA && o.depth[k] < behind {
                c = o.image.rgb(x, y);
            }
        }
        out.set_rgb(x, y, c);
    }
    Ok(out)
}

/// Everything needed to insert an object into a scene.
#[derive(Clone, Copy, Debug)]
pub struct Insertion<'a> {
    pub object_placed: &'a SurfelScene,
    pub object_probes: &'a ProbeSet,
    pub field: Option<&'a ShadowField>,
}

#[derive(Clone, Debug)]
pub struct ComposedFrame {
    /// Linear radiance.
    pub image: Image,
    pub probe_fallbacks: usize,
    /// Seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
}

/// Scene G-buffer, shadow ratios, object relighting and compositing for
/// one view.
pub fn compose_view(
    scene: &SurfelScene,
    cam: &Camera,
    env: &Environment,
    insertion: Option<Insertion>,
    samples: usize,
    seed_value: u64,
) -> Result<ComposedFrame> {
    let mut timings = Vec::new();
    let mut lap = |name: &str, t: Instant| timings.push((name.to_string(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let g = render_gbuffers(scene, cam);
    lap("scene_gbuffer", t);

    let insertion = insertion.filter(|ins| !ins.object_placed.is_empty());
    let t = Instant::now();
    let shadow = insertion
        .and_then(|ins| ins.field)
        .map(|field| scene_shadow_ratios(&g, cam, env, field, samples, derive_seed(seed_value, "shadow")));
    lap("shadow_ratio", t);

    let t = Instant::now();
    let object = insertion.map(|ins| {
        relight_object(ins.object_placed, env, ins.object_probes, cam, samples, derive_seed(seed_value, "relight"))
    });
    lap("relight", t);

    let t = Instant::now();
    let image = compose_frame(&g, shadow.as_deref(), object.as_ref())?;
    lap("compose", t);

    if !image.all_finite() {
        return Err(Error::Domain("composed frame contains non-finite values".into()));
    }
    Ok(ComposedFrame {
        image,
        probe_fallbacks: object.map_or(0, |o| o.probe_fallbacks),
        timings,
    })
}
