//! Image metrics and the reconstruction loss terms, evaluated as plain
//! numbers (nothing here is differentiated).

use glam::DVec3;
use rayon::prelude::*;

use crate::geometry::SurfelScene;
use crate::probes::{bake_probe, ProbeSet};
use crate::raster::Image;
use crate::{Error, Result};

pub const LAMBDA_D2N: f64 = 0.05;
pub const LAMBDA_MASK: f64 = 0.05;
pub const LAMBDA_LAM: f64 = 0.001;
pub const LAMBDA_SOPS: f64 = 1.0;

/// Weight of the structural term in the rendering loss.
pub const RENDER_SSIM_WEIGHT: f64 = 0.2;
/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Clamp applied to the coverage before taking logs in the mask loss.
pub const BCE_EPS: f64 = 1e-6;

/// Prediction and reference of identical shape, with an optional pixel mask.
#[derive(Clone, Copy, Debug)]
pub struct ImagePair<'a> {
    pub prediction: &'a Image,
    pub reference: &'a Image,
    pub mask: Option<&'a [bool]>,
}

impl<'a> ImagePair<'a> {
    pub fn new(prediction: &'a Image, reference: &'a Image) -> Result<Self> {
        Self::masked(prediction, reference, None)
    }

    pub fn masked(prediction: &'a Image, reference: &'a Image, mask: Option<&'a [bool]>) -> Result<Self> {
        if !prediction.same_shape(reference) {
            return Err(Error::DimensionMismatch(format!(
                "prediction is {}x{}x{}, reference is {}x{}x{}",
                prediction.width(),
                prediction.height(),
                prediction.channels(),
                reference.width(),
                reference.height(),
                reference.channels()
            )));
        }
        if let Some(m) = mask {
            if m.len() != prediction.width() * prediction.height() {
                return Err(Error::DimensionMismatch("mask size differs from the images".into()));
            }
        }
        if !prediction.all_finite() || !reference.all_finite() {
            return Err(Error::Domain("images contain non-finite values".into()));
        }
        Ok(ImagePair { prediction, reference, mask })
    }

    fn valid(&self, pixel: usize) -> bool {
        self.mask.map_or(true, |m| m[pixel])
    }

    /// Mean of `f(pred, ref)` over every channel of every valid pixel.
    fn mean_of(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let c = self.prediction.channels();
        let (mut acc, mut n) = (0.0, 0usize);
        for (k, (p, r)) in self
            .prediction
            .data()
            .chunks(c)
            .zip(self.reference.data().chunks(c))
            .enumerate()
        {
            if self.valid(k) {
                acc += p.iter().zip(r).map(|(&a, &b)| f(a, b)).sum::<f64>();
                n += c;
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }
}

pub fn l1(pair: &ImagePair) -> f64 {
    pair.mean_of(|a, b| (a - b).abs())
}

pub fn mse(pair: &ImagePair) -> f64 {
    pair.mean_of(|a, b| (a - b) * (a - b))
}

/// PSNR for a data range of 1, capped at [`PSNR_CAP`].
pub fn psnr(pair: &ImagePair) -> f64 {
    let m = mse(pair);
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * m.log10()).min(PSNR_CAP)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter of one plane. Taps falling outside the image
/// are dropped and the remaining weights renormalized.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let (mut acc, mut ws) = (0.0, 0.0);
                for (t, &kv) in k.iter().enumerate() {
                    let off = t as isize - half;
                    let (sx, sy) = if horizontal { (x as isize + off, y as isize) } else { (x as isize, y as isize + off) };
                    if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                        acc += kv * src[sy as usize * w + sx as usize];
                        ws += kv;
                    }
                }
                *o = acc / ws;
            }
        });
        out
    };
    pass(&pass(plane, true), false)
}

/// Per-pixel SSIM averaged over channels.
pub fn ssim_map(pair: &ImagePair) -> Vec<f64> {
    let (w, h, c) = (pair.prediction.width(), pair.prediction.height(), pair.prediction.channels());
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut map = vec![0.0; w * h];
    for ch in 0..c {
        let x: Vec<f64> = pair.prediction.data().iter().skip(ch).step_by(c).copied().collect();
        let y: Vec<f64> = pair.reference.data().iter().skip(ch).step_by(c).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, my) = (blur(&x, w, h, &k), blur(&y, w, h, &k));
        let (sxx, syy, sxy) = (blur(&xx, w, h, &k), blur(&yy, w, h, &k), blur(&xy, w, h, &k));
        for i in 0..w * h {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            let s = ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            map[i] += s / c as f64;
        }
    }
    map
}

pub fn ssim(pair: &ImagePair) -> f64 {
    let map = ssim_map(pair);
    let (mut acc, mut n) = (0.0, 0usize);
    for (k, v) in map.iter().enumerate() {
        if pair.valid(k) {
            acc += v;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        acc / n as f64
    }
}

/// `L1 + 0.2 (1 - SSIM)`.
pub fn render_loss(pair: &ImagePair) -> f64 {
    l1(pair) + RENDER_SSIM_WEIGHT * (1.0 - ssim(pair))
}

/// Same as [`render_loss`]; any other structural weight is refused.
pub fn render_loss_with_weight(pair: &ImagePair, ssim_weight: f64) -> Result<f64> {
    if ssim_weight != RENDER_SSIM_WEIGHT {
        return Err(Error::invalid(format!(
            "rendering loss SSIM weight is fixed at {RENDER_SSIM_WEIGHT}, got {ssim_weight}"
        )));
    }
    Ok(render_loss(pair))
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} vs {b} entries")));
    }
    Ok(())
}

/// Mean of `1 - N·N_d` over pixels where `mask` is set and both normals exist.
pub fn loss_d2n(normals: &[DVec3], depth_normals: &[Option<DVec3>], mask: &[bool]) -> Result<f64> {
    check_len("normal planes", normals.len(), depth_normals.len())?;
    check_len("normal mask", normals.len(), mask.len())?;
    let (mut acc, mut n) = (0.0, 0usize);
    for ((nb, nd), &m) in normals.iter().zip(depth_normals).zip(mask) {
        if let (true, Some(nd)) = (m, nd) {
            acc += 1.0 - nb.dot(*nd);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { acc / n as f64 })
}

/// Binary cross-entropy between coverage `w` and the object mask `k`.
pub fn loss_mask(w: &[f64], k: &[f64]) -> Result<f64> {
    check_len("mask planes", w.len(), k.len())?;
    if w.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = w
        .iter()
        .zip(k)
        .map(|(&w, &k)| {
            let w = w.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -k * w.ln() - (1.0 - k) * (1.0 - w).ln()
        })
        .sum();
    Ok(s / w.len() as f64)
}

/// `mean(|R - 1|) + mean(|M|)`.
pub fn loss_lam(roughness: &[f64], metallic: &[f64]) -> Result<f64> {
    check_len("material planes", roughness.len(), metallic.len())?;
    if roughness.is_empty() {
        return Ok(0.0);
    }
    let n = roughness.len() as f64;
    Ok(roughness.iter().map(|r| (r - 1.0).abs()).sum::<f64>() / n + metallic.iter().map(|m| m.abs()).sum::<f64>() / n)
}

/// Residual between stored probe textures and a fresh trace of the scene.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SopsResidual {
    /// Texel and channel mean of `|L_in - L_traced|`.
    pub radiance: f64,
    /// Texel mean of `|O - O_traced|`.
    pub occlusion: f64,
}

impl SopsResidual {
    pub fn total(&self) -> f64 {
        self.radiance + self.occlusion
    }
}

pub fn loss_sops(set: &ProbeSet, scene: &SurfelScene) -> SopsResidual {
    if set.is_empty() {
        return SopsResidual { radiance: 0.0, occlusion: 0.0 };
    }
    scene.accel();
    let size = set.tex_size();
    let per_probe: Vec<(f64, f64)> = set
        .probes()
        .par_iter()
        .map(|p| {
            let fresh = bake_probe(scene, p.position, size);
            let mean_abs = |a: &[f32], b: &[f32]| {
                a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / a.len() as f64
            };
            (
                mean_abs(p.radiance.data(), fresh.radiance.data()),
                mean_abs(p.occlusion.data(), fresh.occlusion.data()),
            )
        })
        .collect();
    let n = per_probe.len() as f64;
    SopsResidual {
        radiance: per_probe.iter().map(|v| v.0).sum::<f64>() / n,
        occlusion: per_probe.iter().map(|v| v.1).sum::<f64>() / n,
    }
}

/// The weighted sum of the auxiliary reconstruction terms.
pub fn combined_regularizer(d2n: f64, mask: f64, lam: f64, sops: f64) -> f64 {
    LAMBDA_D2N * d2n + LAMBDA_MASK * mask + LAMBDA_LAM * lam + LAMBDA_SOPS * sops
}

/// Scalar metrics for a prediction/reference pair.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub l1: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub render_loss: f64,
}

pub fn report(pair: &ImagePair) -> MetricReport {
    let l1 = l1(pair);
    let ssim = ssim(pair);
    MetricReport {
        l1,
        mse: mse(pair),
        psnr: psnr(pair),
        ssim,
        render_loss: l1 + RENDER_SSIM_WEIGHT * (1.0 - ssim),
    }
}
