//! Panorama capture from the surfel field, hole completion, exposure fusion
//! and conversion of equirectangular HDR maps to octahedral textures.
//!
//! Equirectangular images are Z-up: row 0 looks at `+Z`, the last row at
//! `-Z`, and column `x` has azimuth `2π (x + 0.5) / W` measured from `+X`
//! toward `+Y`.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use glam::{DVec2, DVec3};
use rayon::prelude::*;

use crate::gbuffer::blend_ray;
use crate::geometry::{Ray, SurfelScene};
use crate::octmap::OctTexture;
use crate::raster::{decode_gamma, encode_gamma, Image};
use crate::shading::Environment;
use crate::{hdr, Error, Result};

/// Capture resolution (height, width).
pub const PANORAMA_SIZE: (usize, usize) = (512, 1024);
/// Octahedral resolution of the relighting environment.
pub const ENV_OCT_SIZE: usize = 512;
/// Exposure values of the bracketed stack.
pub const DEFAULT_EVS: [f64; 3] = [-5.0, -2.5, 0.0];
/// Pixels with alpha above this are known and never modified.
pub const KNOWN_ALPHA: f64 = 0.5;

/// Direction at the continuous equirect position `p` (pixel units).
pub fn equirect_dir(p: DVec2, width: usize, height: usize) -> DVec3 {
    let phi = TAU * p.x / width as f64;
    let theta = PI * p.y / height as f64;
    let s = theta.sin();
    DVec3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

pub fn equirect_pixel_dir(x: usize, y: usize, width: usize, height: usize) -> DVec3 {
    equirect_dir(DVec2::new(x as f64 + 0.5, y as f64 + 0.5), width, height)
}

/// Exact solid angle of an equirect pixel in row `y`.
pub fn equirect_pixel_solid_angle(y: usize, width: usize, height: usize) -> f64 {
    let t0 = PI * y as f64 / height as f64;
    let t1 = PI * (y + 1) as f64 / height as f64;
    TAU / width as f64 * (t0.cos() - t1.cos())
}

/// Continuous equirect position of `dir`.
pub fn dir_to_equirect(dir: DVec3, width: usize, height: usize) -> DVec2 {
    let d = dir.normalize();
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let mut phi = d.y.atan2(d.x);
    if phi < 0.0 {
        phi += TAU;
    }
    DVec2::new(phi / TAU * width as f64, theta / PI * height as f64)
}

/// Bilinear lookup, wrapping in azimuth and clamping at the poles.
pub fn sample_equirect(img: &Image, dir: DVec3) -> DVec3 {
    let (w, h) = (img.width(), img.height());
    let p = dir_to_equirect(dir, w, h) - DVec2::splat(0.5);
    let x0 = p.x.floor();
    let y0 = p.y.floor();
    let (tx, ty) = (p.x - x0, p.y - y0);
    let wrap = |x: i64| x.rem_euclid(w as i64) as usize;
    let clamp = |y: i64| y.clamp(0, h as i64 - 1) as usize;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let a = img.rgb(wrap(x0), clamp(y0));
    let b = img.rgb(wrap(x0 + 1), clamp(y0));
    let c = img.rgb(wrap(x0), clamp(y0 + 1));
    let d = img.rgb(wrap(x0 + 1), clamp(y0 + 1));
    (a * (1.0 - tx) + b * tx) * (1.0 - ty) + (c * (1.0 - tx) + d * tx) * ty
}

/// 360° capture: LDR color, blended normals and coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialPanorama {
    pub rgb: Image,
    pub normal: Image,
    pub alpha: Vec<f64>,
}

impl PartialPanorama {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn alpha_image(&self) -> Image {
        Image::from_data(self.width(), self.height(), 1, self.alpha.clone()).expect("alpha plane size")
    }

    /// Solid-angle-weighted fraction of the sphere that was hit.
    pub fn coverage(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        let mut acc = 0.0;
        for y in 0..h {
            let dw = equirect_pixel_solid_angle(y, w, h);
            acc += self.alpha[y * w..(y + 1) * w].iter().sum::<f64>() * dw;
        }
        acc / (4.0 * PI)
    }

    pub fn is_complete(&self) -> bool {
        self.alpha.iter().all(|&a| a > KNOWN_ALPHA)
    }
}

/// Casts one ray per equirect pixel from `location` and blends the color,
/// weight and normal targets. Color is clamped to [0, 1] and gamma encoded.
pub fn capture_panorama(scene: &SurfelScene, location: DVec3, height: usize, width: usize) -> PartialPanorama {
    scene.accel();
    let samples: Vec<_> = (0..width * height)
        .into_par_iter()
        .map(|k| blend_ray(scene, &Ray::new(location, equirect_pixel_dir(k % width, k / width, width, height))))
        .collect();
    let mut rgb = Image::new(width, height, 3);
    let mut normal = Image::new(width, height, 3);
    let mut alpha = vec![0.0; width * height];
    for (k, s) in samples.into_iter().enumerate() {
        let (x, y) = (k % width, k / width);
        rgb.set_rgb(x, y, s.color.map(encode_gamma));
        normal.set_rgb(x, y, s.normal.normalize_or_zero());
        alpha[k] = s.weight.clamp(0.0, 1.0);
    }
    PartialPanorama { rgb, normal, alpha }
}

/// Fills panorama holes.
#[derive(Clone, Debug)]
pub enum Completer {
    /// Each hole takes the mean of the known pixels in its row (or of all
    /// known pixels when its row has none).
    IdentityFill,
    /// A completed panorama supplied from outside (e.g. an inpainting
    /// model); only its hole pixels are used.
    External(Image),
}

impl Completer {
    /// Loads an external completion from `.hdr` or PNG (8 or 16 bit).
    pub fn external_from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_hdr = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("hdr"));
        let img = if is_hdr { hdr::load_hdr(path)? } else { crate::raster::load_png_rgb(path)? };
        Ok(Completer::External(img))
    }
}

pub fn complete_panorama(p: &PartialPanorama, completer: &Completer) -> Result<Image> {
    let (w, h) = (p.width(), p.height());
    let known = |k: usize| p.alpha[k] > KNOWN_ALPHA;
    let mut out = p.rgb.clone();
    match completer {
        Completer::IdentityFill => {
            let mut total = DVec3::ZERO;
            let mut total_n = 0usize;
            let mut rows = vec![None; h];
            for (y, row) in rows.iter_mut().enumerate() {
                let mut acc = DVec3::ZERO;
                let mut n = 0usize;
                for x in 0..w {
                    if known(y * w + x) {
                        acc += p.rgb.rgb(x, y);
                        n += 1;
                    }
                }
                total += acc;
                total_n += n;
                if n > 0 {
                    *row = Some(acc / n as f64);
                }
            }
            let global = if total_n > 0 { total / total_n as f64 } else { DVec3::ZERO };
            for (y, row) in rows.iter().enumerate() {
                let fill = row.unwrap_or(global);
                for x in 0..w {
                    if !known(y * w + x) {
                        out.set_rgb(x, y, fill);
                    }
                }
            }
        }
        Completer::External(img) => {
            if img.width() != w || img.height() != h {
                return Err(Error::DimensionMismatch(format!(
                    "external completion is {}x{}, panorama is {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
            for y in 0..h {
                for x in 0..w {
                    if !known(y * w + x) {
                        out.set_rgb(x, y, img.rgb(x, y));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exposure bracket of LDR (gamma encoded, [0, 1]) panoramas.
#[derive(Clone, Debug)]
pub struct EvStack {
    entries: Vec<(f64, Image)>,
}

impl EvStack {
    pub fn new(entries: Vec<(f64, Image)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("exposure stack is empty"));
        }
        if entries.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::invalid("exposure values must be strictly increasing"));
        }
        if entries.iter().any(|(_, img)| !img.same_shape(&entries[0].1) || img.channels() != 3) {
            return Err(Error::DimensionMismatch("exposures differ in shape".into()));
        }
        Ok(EvStack { entries })
    }

    pub fn entries(&self) -> &[(f64, Image)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// LDR rendering of linear radiance at exposure `ev`: scale by `2^ev`,
/// clamp to [0, 1], gamma 1/2.2.
pub fn expose(hdr_img: &Image, ev: f64) -> Image {
    let scale = 2f64.powf(ev);
    hdr_img.map(|v| encode_gamma(v * scale))
}

pub fn synthesize_ev_stack(hdr_img: &Image, evs: &[f64]) -> Result<EvStack> {
    EvStack::new(evs.iter().map(|&ev| (ev, expose(hdr_img, ev))).collect())
}

/// Well-exposedness weight: 1 at 0.5, 0 at 0 and 1.
#[inline]
pub fn hat_weight(v: f64) -> f64 {
    (1.0 - (2.0 * v - 1.0).abs()).max(0.0)
}

/// Merges the stack into linear radiance. Each channel value is linearized,
/// divided by `2^ev` and averaged with hat weights; a channel with zero
/// total weight takes the lowest exposure's estimate.
pub fn fuse_hdr(stack: &EvStack) -> Image {
    let entries = stack.entries();
    let first = &entries[0].1;
    if entries.len() == 1 {
        log::warn!("single-exposure stack; passing it through without fusion");
    }
    let scales: Vec<f64> = entries.iter().map(|(ev, _)| 2f64.powf(-ev)).collect();
    let data: Vec<f64> = (0..first.data().len())
        .into_par_iter()
        .map(|i| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for ((_, img), s) in entries.iter().zip(&scales) {
                let v = img.data()[i];
                let w = hat_weight(v);
                acc += w * decode_gamma(v) * s;
                wsum += w;
            }
            if wsum > 0.0 {
                acc / wsum
            } else {
                decode_gamma(first.data()[i]) * scales[0]
            }
        })
        .collect();
    Image::from_data(first.width(), first.height(), 3, data).expect("fused shape")
}

/// Resamples an equirect map at every octahedral texel center.
pub fn equirect_to_oct(equirect: &Image, size: usize) -> OctTexture {
    let mut tex = OctTexture::new(size, 3);
    let rows: Vec<Vec<f32>> = (0..size)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(size * 3);
            for i in 0..size {
                let v = sample_equirect(equirect, tex.texel_center_dir(i, j)).max(DVec3::ZERO);
                row.extend_from_slice(&v.as_vec3().to_array());
            }
            row
        })
        .collect();
    for (j, row) in rows.into_iter().enumerate() {
        tex.data_mut()[j * size * 3..(j + 1) * size * 3].copy_from_slice(&row);
    }
    tex
}

/// Σ value · Δω of an equirect map, per channel.
pub fn equirect_flux(img: &Image) -> DVec3 {
    let (w, h) = (img.width(), img.height());
    let mut acc = DVec3::ZERO;
    for y in 0..h {
        let dw = equirect_pixel_solid_angle(y, w, h);
        for x in 0..w {
            acc += img.rgb(x, y) * dw;
        }
    }
    acc
}

/// Σ value · Δω of an octahedral texture, per channel.
pub fn oct_flux(tex: &OctTexture) -> DVec3 {
    let n = tex.size();
    let mut acc = DVec3::ZERO;
    for j in 0..n {
        for i in 0..n {
            acc += tex.texel_rgb(j * n + i) * tex.texel_solid_angle(i, j);
        }
    }
    acc
}

/// An HDR environment in both layouts.
#[derive(Clone, Debug)]
pub struct HdrEnvironment {
    pub equirect: Image,
    pub oct: OctTexture,
}

impl HdrEnvironment {
    pub fn from_equirect(equirect: Image, oct_size: usize) -> Result<Self> {
        if equirect.channels() != 3 {
            return Err(Error::invalid("environment must be RGB"));
        }
        if !equirect.data().iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Domain("environment radiance must be finite and non-negative".into()));
        }
        let oct = equirect_to_oct(&equirect, oct_size);
        Ok(HdrEnvironment { equirect, oct })
    }

    pub fn environment(&self) -> Result<Environment> {
        Environment::new(self.oct.clone())
    }

    /// Writes `<stem>.hdr` (equirect) and `<stem>.oct.hdr`.
    pub fn save(&self, equirect_path: impl AsRef<Path>, oct_path: impl AsRef<Path>) -> Result<()> {
        hdr::save_hdr(&self.equirect, equirect_path)?;
        hdr::save_oct_texture(&self.oct, oct_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surfel;
    use crate::octmap::uniform_sphere_dir;
    use glam::DVec2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fibonacci_sphere(radius: f64, n: usize, keep: impl Fn(DVec3) -> bool, color: DVec3) -> SurfelScene {
        let golden = PI * (3.0 - 5f64.sqrt());
        let spacing = radius * (4.0 * PI / n as f64).sqrt();
        let surfels = (0..n)
            .filter_map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let d = DVec3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
                keep(d).then(|| Surfel {
                    color,
                    ..Surfel::facing(d * radius, d, DVec2::splat(spacing))
                })
            })
            .collect();
        SurfelScene::new(surfels)
    }

    #[test]
    fn equirect_mapping_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let d = uniform_sphere_dir(rng.gen(), rng.gen());
            let p = dir_to_equirect(d, 64, 32);
            assert!((equirect_dir(p, 64, 32) - d).length() < 1e-9);
        }
        let total: f64 = (0..32).map(|y| equirect_pixel_solid_angle(y, 64, 32) * 64.0).sum();
        assert!((total - 4.0 * PI).abs() < 1e-9);
        assert!(equirect_pixel_dir(0, 0, 64, 32).z > 0.99);
    }

    #[test]
    fn empty_scene_captures_nothing() {
        let p = capture_panorama(&SurfelScene::empty(), DVec3::ZERO, 16, 32);
        assert!(p.alpha.iter().all(|&a| a == 0.0));
        assert!(p.rgb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inside_closed_sphere() {
        let scene = fibonacci_sphere(2.0, 3000, |_| true, DVec3::splat(0.25));
        let p = capture_panorama(&scene, DVec3::ZERO, 32, 64);
        for k in 0..p.alpha.len() {
            assert!(p.alpha[k] > 0.999);
            let c = p.rgb.rgb(k % 64, k / 64);
            assert!((c - DVec3::splat(encode_gamma(0.25))).abs().max_element() < 2e-3);
        }
        assert!(p.is_complete());
    }

    #[test]
    fn half_dome_covers_half_the_sphere() {
        let scene = fibonacci_sphere(2.0, 80000, |d| d.z > 0.0, DVec3::ONE);
        let p = capture_panorama(&scene, DVec3::ZERO, 128, 256);
        assert!((p.coverage() - 0.5).abs() < 0.01, "{}", p.coverage());
        // alpha equals one minus the transmittance of the same ray
        for k in (0..p.alpha.len()).step_by(37) {
            let ray = Ray::new(DVec3::ZERO, equirect_pixel_dir(k % 256, k / 256, 256, 128));
            assert!((p.alpha[k] - (1.0 - scene.transmittance(&ray))).abs() < 1e-6);
        }
    }

    fn gray_partial(w: usize, h: usize) -> PartialPanorama {
        let mut rgb = Image::new(w, h, 3);
        let mut alpha = vec![0.0; w * h];
        for y in h / 2..h {
            for x in 0..w {
                rgb.set_rgb(x, y, DVec3::splat(0.4));
                alpha[y * w + x] = 1.0;
            }
        }
        PartialPanorama {
            normal: Image::new(w, h, 3),
            rgb,
            alpha,
        }
    }

    #[test]
    fn identity_fill_uses_row_then_global_means() {
        let p = gray_partial(16, 8);
        let out = complete_panorama(&p, &Completer::IdentityFill).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));

        let mut p = p;
        p.rgb.set_rgb(3, 1, DVec3::new(0.9, 0.1, 0.2));
        p.alpha[16 + 3] = 0.8;
        let out = complete_panorama(&p, &Completer::IdentityFill).unwrap();
        assert_eq!(out.rgb(7, 1), DVec3::new(0.9, 0.1, 0.2));
        assert_eq!(out.rgb(3, 1), DVec3::new(0.9, 0.1, 0.2));
    }

    #[test]
    fn complete_input_is_unchanged() {
        let mut p = gray_partial(8, 4);
        p.alpha.iter_mut().for_each(|a| *a = 1.0);
        assert_eq!(complete_panorama(&p, &Completer::IdentityFill).unwrap(), p.rgb);
    }

    #[test]
    fn external_fill_keeps_known_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = gray_partial(16, 8);
        for (k, a) in p.alpha.iter_mut().enumerate() {
            *a = rng.gen();
            p.rgb.data_mut()[3 * k] = rng.gen();
        }
        let ext = Image::from_fn(16, 8, 3, |_, _, px| px.fill(0.77));
        let out = complete_panorama(&p, &Completer::External(ext)).unwrap();
        for k in 0..p.alpha.len() {
            let (x, y) = (k % 16, k / 16);
            if p.alpha[k] > KNOWN_ALPHA {
                assert_eq!(out.pixel(x, y), p.rgb.pixel(x, y));
            } else {
                assert_eq!(out.rgb(x, y), DVec3::splat(0.77));
            }
        }
        assert!(complete_panorama(&p, &Completer::External(Image::new(4, 4, 3))).is_err());
    }

    fn random_hdr(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 3, |_, _, p| {
            for v in p.iter_mut() {
                *v = 2f64.powf(rng.gen_range(-6.0..7.0));
            }
        })
    }

    #[test]
    fn fusion_round_trip() {
        let hdr_img = random_hdr(64, 32, 3);
        let fused = fuse_hdr(&synthesize_ev_stack(&hdr_img, &DEFAULT_EVS).unwrap());
        let mut checked = 0;
        for (a, b) in hdr_img.data().iter().zip(fused.data()) {
            let unclipped = DEFAULT_EVS.iter().any(|ev| a * 2f64.powf(*ev) < 1.0);
            if unclipped {
                assert!((b / a - 1.0).abs() < 0.05);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn fusion_edge_cases() {
        let black = EvStack::new(DEFAULT_EVS.iter().map(|&ev| (ev, Image::new(4, 4, 3))).collect()).unwrap();
        assert!(fuse_hdr(&black).data().iter().all(|&v| v == 0.0));

        let gray = Image::from_fn(4, 4, 3, |_, _, p| p.fill(0.5));
        let stack = EvStack::new(vec![(-5.0, Image::new(4, 4, 3)), (-2.5, Image::new(4, 4, 3)), (0.0, gray)]).unwrap();
        assert!(fuse_hdr(&stack).data().iter().all(|&v| (v - 0.5f64.powf(2.2)).abs() < 1e-12));

        assert!(EvStack::new(vec![(0.0, Image::new(2, 2, 3)), (0.0, Image::new(2, 2, 3))]).is_err());
        let single = EvStack::new(vec![(1.0, Image::from_fn(2, 2, 3, |_, _, p| p.fill(1.0)))]).unwrap();
        assert!(fuse_hdr(&single).data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn fusion_is_exposure_equivariant() {
        let hdr_img = random_hdr(32, 16, 4);
        let scaled = hdr_img.map(|v| v * 1.7);
        let a = fuse_hdr(&synthesize_ev_stack(&hdr_img, &DEFAULT_EVS).unwrap());
        let b = fuse_hdr(&synthesize_ev_stack(&scaled, &DEFAULT_EVS).unwrap());
        for ((x, y), (fa, fb)) in hdr_img.data().iter().zip(scaled.data()).zip(a.data().iter().zip(b.data())) {
            let unclipped = DEFAULT_EVS.iter().any(|ev| x * 2f64.powf(*ev) < 1.0) && DEFAULT_EVS.iter().any(|ev| y * 2f64.powf(*ev) < 1.0);
            if unclipped {
                assert!((fb / (1.7 * fa) - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn constant_equirect_gives_constant_oct() {
        let img = Image::from_fn(32, 16, 3, |_, _, p| p.copy_from_slice(&[0.5, 1.5, 2.5]));
        let tex = equirect_to_oct(&img, 16);
        for t in tex.data().chunks(3) {
            assert!((t[0] - 0.5).abs() < 1e-6 && (t[1] - 1.5).abs() < 1e-6 && (t[2] - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn zenith_pixel_lands_at_oct_center() {
        let (w, h) = (64, 32);
        let mut img = Image::new(w, h, 3);
        // the +Z pole column facing the (+X, +Y) texel next to the center
        img.set_rgb(w / 8, 0, DVec3::splat(100.0));
        let tex = equirect_to_oct(&img, 16);
        let (mut best, mut at) = (0.0, 0);
        for k in 0..256 {
            if tex.texel_luminance(k) > best {
                best = tex.texel_luminance(k);
                at = k;
            }
        }
        assert_eq!((at % 16, at / 16), (8, 8));
    }

    #[test]
    fn flux_is_preserved() {
        let img = random_hdr(256, 128, 5);
        let tex = equirect_to_oct(&img, 256);
        let (a, b) = (equirect_flux(&img), oct_flux(&tex));
        for c in 0..3 {
            assert!((b[c] / a[c] - 1.0).abs() < 0.02, "{a} vs {b}");
        }
    }
}
