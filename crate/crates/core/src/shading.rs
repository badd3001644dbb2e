//! BRDF evaluation, the direct/indirect illumination split and the two
//! Monte Carlo shading estimators.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use glam::{DVec2, DVec3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gbuffer::{shading_points, Camera, GBuffer, ShadingPoint};
use crate::octmap::{hammersley, uniform_hemisphere_dir, OctTexture, SamplingTable};
use crate::probes::{Neighborhood, ProbeSet};
use crate::raster::Image;
use crate::{seed, Error, Result};

/// Lower bound on the GGX alpha so the distribution stays finite.
pub const MIN_GGX_ALPHA: f64 = 1e-3;

/// Sample counts used for reconstruction and rendering.
pub const RECONSTRUCTION_SAMPLES: usize = 128;
pub const RENDER_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrdfParams {
    pub albedo: DVec3,
    pub roughness: f64,
    pub metallic: f64,
}

impl Default for BrdfParams {
    fn default() -> Self {
        BrdfParams {
            albedo: DVec3::splat(0.5),
            roughness: 1.0,
            metallic: 0.0,
        }
    }
}

impl BrdfParams {
    pub fn new(albedo: DVec3, roughness: f64, metallic: f64) -> Result<Self> {
        let p = BrdfParams { albedo, roughness, metallic };
        p.validate()?;
        Ok(p)
    }

    /// Rough dielectric: roughness 1, metallic 0.
    pub fn lambertian(albedo: DVec3) -> Self {
        BrdfParams {
            albedo,
            roughness: 1.0,
            metallic: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.albedo.to_array().iter().all(|&c| unit(c)) && unit(self.roughness) && unit(self.metallic)) {
            return Err(Error::Domain(format!("BRDF parameters out of [0, 1]: {self:?}")));
        }
        Ok(())
    }

    pub fn ggx_alpha(&self) -> f64 {
        (self.roughness * self.roughness).max(MIN_GGX_ALPHA)
    }

    pub fn f0(&self) -> DVec3 {
        DVec3::splat(0.04).lerp(self.albedo, self.metallic)
    }
}

#[inline]
fn ggx_d(n_h: f64, a2: f64) -> f64 {
    let d = n_h * n_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

#[inline]
fn smith_lambda(cos: f64, a2: f64) -> f64 {
    let c2 = cos * cos;
    let tan2 = (1.0 - c2).max(0.0) / c2;
    0.5 * (-1.0 + (1.0 + a2 * tan2).sqrt())
}

/// Height-correlated Smith masking-shadowing.
#[inline]
fn smith_g2(n_v: f64, n_l: f64, a2: f64) -> f64 {
    1.0 / (1.0 + smith_lambda(n_v, a2) + smith_lambda(n_l, a2))
}

#[inline]
fn schlick_weight(v_h: f64) -> f64 {
    (1.0 - v_h).clamp(0.0, 1.0).powi(5)
}

const LUT_SIZE: usize = 32;
const LUT_SAMPLES: u32 = 1024;

/// Directional albedo of the specular lobe as `f0·A + B`, tabulated over
/// `(n·ω_o, roughness)`.
struct SpecularAlbedo {
    a: Vec<f64>,
    b: Vec<f64>,
}

fn lut_node_cos(i: usize) -> f64 {
    (i as f64 / (LUT_SIZE - 1) as f64).max(1e-4)
}

impl SpecularAlbedo {
    fn build() -> Self {
        let mut a = vec![0.0; LUT_SIZE * LUT_SIZE];
        let mut b = vec![0.0; LUT_SIZE * LUT_SIZE];
        for j in 0..LUT_SIZE {
            let roughness = j as f64 / (LUT_SIZE - 1) as f64;
            let alpha = (roughness * roughness).max(MIN_GGX_ALPHA);
            let a2 = alpha * alpha;
            for i in 0..LUT_SIZE {
                let n_v = lut_node_cos(i);
                let v = DVec3::new((1.0 - n_v * n_v).sqrt(), 0.0, n_v);
                let (mut sa, mut sb) = (0.0, 0.0);
                for s in 0..LUT_SAMPLES {
                    let (u1, u2) = hammersley(s, LUT_SAMPLES);
                    let cos_h = ((1.0 - u1) / (1.0 + (a2 - 1.0) * u1)).sqrt();
                    let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
                    let phi = TAU * u2;
                    let h = DVec3::new(sin_h * phi.cos(), sin_h * phi.sin(), cos_h);
                    let v_h = v.dot(h);
                    let l = 2.0 * v_h * h - v;
                    if l.z <= 0.0 || v_h <= 0.0 {
                        continue;
                    }
                    let g_vis = smith_g2(n_v, l.z, a2) * v_h / (cos_h * n_v);
                    let fc = schlick_weight(v_h);
                    sa += (1.0 - fc) * g_vis;
                    sb += fc * g_vis;
                }
                a[j * LUT_SIZE + i] = sa / LUT_SAMPLES as f64;
                b[j * LUT_SIZE + i] = sb / LUT_SAMPLES as f64;
            }
        }
        SpecularAlbedo { a, b }
    }

    fn get() -> &'static SpecularAlbedo {
        static LUT: OnceLock<SpecularAlbedo> = OnceLock::new();
        LUT.get_or_init(SpecularAlbedo::build)
    }

    fn lookup(&self, n_v: f64, roughness: f64) -> (f64, f64) {
        let s = (LUT_SIZE - 1) as f64;
        let fx = (n_v.clamp(0.0, 1.0) * s).min(s);
        let fy = (roughness.clamp(0.0, 1.0) * s).min(s);
        let (x0, y0) = ((fx as usize).min(LUT_SIZE - 2), (fy as usize).min(LUT_SIZE - 2));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let at = |t: &[f64], x: usize, y: usize| t[y * LUT_SIZE + x];
        let bilerp = |t: &[f64]| {
            let top = at(t, x0, y0) * (1.0 - tx) + at(t, x0 + 1, y0) * tx;
            let bot = at(t, x0, y0 + 1) * (1.0 - tx) + at(t, x0 + 1, y0 + 1) * tx;
            top * (1.0 - ty) + bot * ty
        };
        (bilerp(&self.a), bilerp(&self.b))
    }
}

/// Fraction of energy reflected by the specular lobe toward all of the
/// hemisphere for view cosine `n_v`, per channel.
pub fn specular_albedo(p: &BrdfParams, n_v: f64) -> DVec3 {
    let (a, b) = SpecularAlbedo::get().lookup(n_v, p.roughness);
    p.f0() * a + DVec3::splat(b)
}

/// BRDF value for outgoing `wo` and incident `wi` about normal `n`.
///
/// The diffuse lobe is scaled by the energy the specular lobe leaves
/// behind, `1 - E_spec(ω_o)`, so that reflectance never exceeds one.
pub fn eval_brdf(p: &BrdfParams, wo: DVec3, wi: DVec3, n: DVec3) -> DVec3 {
    let n_l = n.dot(wi);
    if n_l <= 0.0 {
        return DVec3::ZERO;
    }
    let n_v = n.dot(wo).max(1e-4);
    let h = (wo + wi).normalize_or_zero();
    if h == DVec3::ZERO {
        return DVec3::ZERO;
    }
    let n_h = n.dot(h).max(0.0);
    let v_h = wo.dot(h).max(0.0);
    let alpha = p.ggx_alpha();
    let a2 = alpha * alpha;
    let f0 = p.f0();
    let fresnel = f0 + (DVec3::ONE - f0) * schlick_weight(v_h);
    let specular = fresnel * (ggx_d(n_h, a2) * smith_g2(n_v, n_l, a2) / (4.0 * n_v * n_l));
    let diffuse = (1.0 - p.metallic) * p.albedo / PI * (DVec3::ONE - specular_albedo(p, n_v)).max(DVec3::ZERO);
    diffuse + specular
}

/// Direct lighting: an HDR octahedral environment with its sampling table.
/// The table is absent when the environment is black.
#[derive(Clone, Debug)]
pub struct Environment {
    texture: OctTexture,
    table: Option<SamplingTable>,
}

impl Environment {
    pub fn new(texture: OctTexture) -> Result<Self> {
        if texture.channels() != 3 {
            return Err(Error::invalid("environment must be an RGB texture"));
        }
        texture.validate()?;
        let table = match SamplingTable::build(&texture) {
            Ok(t) => Some(t),
            Err(Error::Unsampleable) => None,
            Err(e) => return Err(e),
        };
        Ok(Environment { texture, table })
    }

    pub fn constant(size: usize, radiance: DVec3) -> Self {
        Environment::new(OctTexture::constant(size, &radiance.as_vec3().to_array())).expect("valid constant env")
    }

    pub fn texture(&self) -> &OctTexture {
        &self.texture
    }

    pub fn table(&self) -> Option<&SamplingTable> {
        self.table.as_ref()
    }

    /// Radiance arriving from `dir` (piecewise constant per texel, matching
    /// the sampling density).
    #[inline]
    pub fn radiance(&self, dir: DVec3) -> DVec3 {
        self.texture.sample_nearest(dir)
    }

    /// The environment turned half way around the `+Z` axis.
    pub fn rotated_half_turn(&self) -> Self {
        Environment::new(self.texture.rotated_half_turn_z()).expect("rotation preserves validity")
    }
}

/// Everything needed to evaluate `L_i` at a shading point.
#[derive(Clone, Copy)]
pub struct IlluminationContext<'a> {
    pub env: &'a Environment,
    pub probes: Option<&'a ProbeSet>,
}

impl<'a> IlluminationContext<'a> {
    pub fn direct_only(env: &'a Environment) -> Self {
        IlluminationContext { env, probes: None }
    }

    pub fn with_probes(env: &'a Environment, probes: &'a ProbeSet) -> Self {
        IlluminationContext { env, probes: Some(probes) }
    }

    /// Probe neighbourhood of `x`, `None` when no probes are attached.
    pub fn neighborhood(&self, x: DVec3) -> Option<Neighborhood<'a>> {
        self.probes.map(|p| p.neighborhood(x))
    }
}

#[inline]
fn radiance_with(ctx: &IlluminationContext, nb: Option<&Neighborhood>, wi: DVec3) -> DVec3 {
    let direct = ctx.env.radiance(wi);
    match nb {
        Some(nb) if !nb.is_empty() => {
            let (l_in, occlusion) = nb.sample(wi);
            (1.0 - occlusion) * direct + l_in
        }
        _ => direct,
    }
}

/// `L_i(ω) = (1 - O(ω)) L_dir(ω) + L_in(ω)` with `O` and `L_in` taken from
/// the probes around `x` (both zero without probes or neighbours).
pub fn incident_radiance(x: DVec3, wi: DVec3, ctx: &IlluminationContext) -> DVec3 {
    let nb = ctx.neighborhood(x);
    radiance_with(ctx, nb.as_ref(), wi)
}

fn uniform_with(n: DVec3, wo: DVec3, p: &BrdfParams, ctx: &IlluminationContext, nb: Option<&Neighborhood>, samples: usize) -> DVec3 {
    let count = samples.max(1) as u32;
    let mut acc = DVec3::ZERO;
    for i in 0..count {
        let (u1, u2) = hammersley(i, count);
        let wi = uniform_hemisphere_dir(u1, u2, n);
        let cos = wi.dot(n);
        if cos <= 0.0 {
            continue;
        }
        acc += eval_brdf(p, wo, wi, n) * radiance_with(ctx, nb, wi) * cos;
    }
    acc * (TAU / count as f64)
}

/// Uniform-hemisphere Hammersley estimator `(2π/S_r) Σ f L_i (ω_i·n)`.
pub fn shade_point_uniform(x: DVec3, n: DVec3, wo: DVec3, p: &BrdfParams, ctx: &IlluminationContext, samples: usize) -> DVec3 {
    let nb = ctx.neighborhood(x);
    uniform_with(n, wo, p, ctx, nb.as_ref(), samples)
}

/// Hammersley points under a seeded random shift (Cranley–Patterson):
/// each point is uniform, so estimators built on them stay unbiased.
pub(crate) fn shifted_hammersley(count: usize, seed_value: u64) -> impl Iterator<Item = DVec2> {
    let count = count as u32;
    let mut rng = seed::rng(seed_value);
    let shift = DVec2::new(rng.gen(), rng.gen());
    (0..count).map(move |i| {
        let (h1, h2) = hammersley(i, count);
        (DVec2::new(h1, h2) + shift).fract()
    })
}

fn importance_with(
    n: DVec3,
    wo: DVec3,
    p: &BrdfParams,
    ctx: &IlluminationContext,
    nb: Option<&Neighborhood>,
    samples: usize,
    seed_value: u64,
) -> DVec3 {
    let Some(table) = ctx.env.table() else {
        return DVec3::ZERO;
    };
    let count = samples.max(1);
    let mut acc = DVec3::ZERO;
    for u in shifted_hammersley(count, seed_value) {
        let (wi, pdf) = table.sample(u.x, u.y);
        let cos = wi.dot(n);
        if cos <= 0.0 || pdf <= 0.0 {
            continue;
        }
        acc += eval_brdf(p, wo, wi, n) * radiance_with(ctx, nb, wi) * (cos / pdf);
    }
    acc / count as f64
}

/// Environment-importance estimator `Σ f L_i (ω_i·n) / pdf(ω_i) / S_r`.
/// Directions below the horizon contribute zero. A black environment (no
/// sampling table) shades to black.
pub fn shade_point_importance(
    x: DVec3,
    n: DVec3,
    wo: DVec3,
    p: &BrdfParams,
    ctx: &IlluminationContext,
    samples: usize,
    seed_value: u64,
) -> DVec3 {
    let nb = ctx.neighborhood(x);
    importance_with(n, wo, p, ctx, nb.as_ref(), samples, seed_value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Uniform,
    Importance,
}

/// Deferred shading output.
#[derive(Clone, Debug)]
pub struct PbrImage {
    /// Linear HDR radiance, black where nothing valid was shaded.
    pub image: Image,
    /// Blend weight `W` of the G-buffer.
    pub alpha: Vec<f64>,
    /// Shaded pixels whose probe neighbourhood was empty.
    pub probe_fallbacks: usize,
}

/// Shades every valid G-buffer pixel.
pub fn deferred_pbr(
    g: &GBuffer,
    cam: &Camera,
    ctx: &IlluminationContext,
    samples: usize,
    mode: EstimatorMode,
    seed_value: u64,
) -> PbrImage {
    let points = shading_points(g, cam);
    let shade = |k: usize, sp: &ShadingPoint| -> (DVec3, bool) {
        let nb = ctx.neighborhood(sp.position);
        let fallback = nb.as_ref().is_some_and(|nb| nb.is_empty());
        let c = match mode {
            EstimatorMode::Uniform => uniform_with(sp.normal, sp.view, &sp.material, ctx, nb.as_ref(), samples),
            EstimatorMode::Importance => importance_with(
                sp.normal,
                sp.view,
                &sp.material,
                ctx,
                nb.as_ref(),
                samples,
                seed::item_seed(seed_value, k as u64),
            ),
        };
        (c, fallback)
    };
    let shaded: Vec<(DVec3, bool)> = points
        .points
        .par_iter()
        .enumerate()
        .map(|(k, sp)| sp.as_ref().map_or((DVec3::ZERO, false), |sp| shade(k, sp)))
        .collect();
    let mut image = Image::new(g.width, g.height, 3);
    let mut probe_fallbacks = 0;
    for (k, (c, fb)) in shaded.into_iter().enumerate() {
        image.set_rgb(k % g.width, k / g.width, c);
        probe_fallbacks += fb as usize;
    }
    PbrImage {
        image,
        alpha: g.weight.clone(),
        probe_fallbacks,
    }
}
