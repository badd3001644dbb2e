use glam::DVec3;

use super::texture::{texel_of, texel_solid_angle, texel_triangles};
use super::OctTexture;
use crate::{Error, Result};

/// Discrete distribution over texels with pmf ∝ luminance × solid angle,
/// sampled by a row marginal followed by a per-row conditional.
#[derive(Clone, Debug)]
pub struct SamplingTable {
    size: usize,
    pmf: Vec<f64>,
    solid_angle: Vec<f64>,
    row_cdf: Vec<f64>,
    col_cdf: Vec<f64>,
    total_intensity: f64,
}

/// Index `k` with `cdf[k] <= u < cdf[k + 1]`, skipping zero-width bins.
fn find_interval(cdf: &[f64], u: f64) -> usize {
    let n = cdf.len() - 1;
    let k = cdf.partition_point(|&c| c <= u);
    let mut k = k.saturating_sub(1).min(n - 1);
    // a u at or beyond the final bound lands in the last non-empty bin
    while k > 0 && cdf[k + 1] <= cdf[k] {
        k -= 1;
    }
    k
}

impl SamplingTable {
    pub fn build(tex: &OctTexture) -> Result<Self> {
        let n = tex.size();
        let solid_angle: Vec<f64> = (0..n * n).map(|k| texel_solid_angle(n, k % n, k / n)).collect();
        let weights: Vec<f64> = (0..n * n).map(|k| tex.texel_luminance(k).max(0.0) * solid_angle[k]).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Unsampleable);
        }
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();

        let mut row_cdf = vec![0.0; n + 1];
        let mut col_cdf = vec![0.0; n * (n + 1)];
        for j in 0..n {
            let row = &pmf[j * n..(j + 1) * n];
            let row_sum: f64 = row.iter().sum();
            row_cdf[j + 1] = row_cdf[j] + row_sum;
            let cdf = &mut col_cdf[j * (n + 1)..(j + 1) * (n + 1)];
            for i in 0..n {
                cdf[i + 1] = cdf[i] + row[i];
            }
            if row_sum > 0.0 {
                for c in cdf.iter_mut() {
                    *c /= row_sum;
                }
            }
            cdf[n] = 1.0;
        }
        let last = row_cdf[n];
        for c in row_cdf.iter_mut() {
            *c /= last;
        }
        row_cdf[n] = 1.0;

        Ok(SamplingTable {
            size: n,
            pmf,
            solid_angle,
            row_cdf,
            col_cdf,
            total_intensity: total,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn texel_pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn solid_angles(&self) -> &[f64] {
        &self.solid_angle
    }

    pub fn row_cdf(&self) -> &[f64] {
        &self.row_cdf
    }

    /// Conditional cumulative table of row `j` (length `size + 1`).
    pub fn col_cdf(&self, j: usize) -> &[f64] {
        &self.col_cdf[j * (self.size + 1)..(j + 1) * (self.size + 1)]
    }

    /// Σ luminance · Δω over the texture, i.e. the normalizer of the pmf.
    pub fn total_intensity(&self) -> f64 {
        self.total_intensity
    }

    /// Density with respect to solid angle at `dir`.
    pub fn pdf(&self, dir: DVec3) -> f64 {
        let (i, j) = texel_of(self.size, dir);
        let k = j * self.size + i;
        self.pmf[k] / self.solid_angle[k]
    }

    /// Picks a texel from the two cumulative tables; returns it with the
    /// two uniforms rescaled to [0, 1) within the chosen bins.
    pub fn sample_texel(&self, u1: f64, u2: f64) -> (usize, f64, f64) {
        let n = self.size;
        let j = find_interval(&self.row_cdf, u1);
        let r = remap(u1, self.row_cdf[j], self.row_cdf[j + 1]);
        let cdf = self.col_cdf(j);
        let i = find_interval(cdf, u2);
        let c = remap(u2, cdf[i], cdf[i + 1]);
        (j * n + i, r, c)
    }

    /// Draws a direction uniformly in solid angle inside a texel chosen by
    /// the table. Returns the direction and its solid-angle density.
    pub fn sample(&self, u1: f64, u2: f64) -> (DVec3, f64) {
        let n = self.size;
        let (k, r, c) = self.sample_texel(u1, u2);
        let area = self.solid_angle[k];
        let mut tris = [[DVec3::ZERO; 3]; 8];
        let mut count = 0;
        texel_triangles(n, k % n, k / n, |t| {
            if count < tris.len() {
                tris[count] = t;
                count += 1;
            }
        });
        // choose a triangle by area, reusing the row uniform
        let mut target = r * area;
        let mut pick = count - 1;
        let mut u = r;
        for (t, tri) in tris[..count].iter().enumerate() {
            let a = super::spherical_triangle_area(tri[0], tri[1], tri[2]);
            if target < a || t == count - 1 {
                pick = t;
                u = if a > 0.0 { (target / a).clamp(0.0, 1.0 - f64::EPSILON) } else { 0.0 };
                break;
            }
            target -= a;
        }
        let [a, b, cc] = tris[pick];
        let dir = sample_spherical_triangle(a, b, cc, u, c);
        (dir, self.pmf[k] / area)
    }
}

#[inline]
fn remap(u: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((u - lo) / (hi - lo)).clamp(0.0, 1.0 - f64::EPSILON)
    } else {
        0.0
    }
}

/// Arvo's area-preserving map from the unit square onto a spherical
/// triangle. Uniform inputs give directions uniform in solid angle.
pub fn sample_spherical_triangle(a: DVec3, b: DVec3, c: DVec3, u1: f64, u2: f64) -> DVec3 {
    let angle_at = |p: DVec3, q: DVec3, r: DVec3| {
        let tq = (q - p * p.dot(q)).normalize_or_zero();
        let tr = (r - p * p.dot(r)).normalize_or_zero();
        tq.dot(tr).clamp(-1.0, 1.0).acos()
    };
    let alpha = angle_at(a, b, c);
    let beta = angle_at(b, c, a);
    let gamma = angle_at(c, a, b);
    let area = alpha + beta + gamma - std::f64::consts::PI;

    let area_hat = u1 * area;
    let s = (area_hat - alpha).sin();
    let t = (area_hat - alpha).cos();
    let cos_c = a.dot(b);
    let u = t - alpha.cos();
    let v = s + alpha.sin() * cos_c;
    let denom = (v * s + u * t) * alpha.sin();
    let q = if denom.abs() > 0.0 {
        (((v * t - u * s) * alpha.cos() - v) / denom).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    let c_perp = (c - a * c.dot(a)).normalize_or_zero();
    let c_hat = a * q + c_perp * (1.0 - q * q).max(0.0).sqrt();

    let z = 1.0 - u2 * (1.0 - c_hat.dot(b));
    let ch_perp = (c_hat - b * c_hat.dot(b)).normalize_or_zero();
    (b * z + ch_perp * (1.0 - z * z).max(0.0).sqrt()).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octmap::{spherical_triangle_area, uniform_sphere_dir};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_texture(size: usize, seed: u64) -> OctTexture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        OctTexture::from_fn(size, 3, |_| {
            let s: f64 = rng.gen::<f64>().powi(3) * 10.0;
            DVec3::new(s * rng.gen::<f64>(), s * rng.gen::<f64>(), s * rng.gen::<f64>())
        })
    }

    #[test]
    fn all_zero_is_unsampleable() {
        let tex = OctTexture::new(8, 3);
        assert!(matches!(SamplingTable::build(&tex), Err(Error::Unsampleable)));
    }

    #[test]
    fn pmf_sums_to_one_and_cdfs_are_monotone() {
        let tex = random_texture(32, 5);
        let table = SamplingTable::build(&tex).unwrap();
        let sum: f64 = table.texel_pmf().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let check = |cdf: &[f64]| {
            assert_eq!(cdf[0], 0.0);
            assert_eq!(*cdf.last().unwrap(), 1.0);
            assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
        };
        check(table.row_cdf());
        for j in 0..32 {
            check(table.col_cdf(j));
        }
    }

    #[test]
    fn uniform_texture_gives_uniform_pdf() {
        let tex = OctTexture::constant(16, &[1.0, 1.0, 1.0]);
        let table = SamplingTable::build(&tex).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let (dir, pdf) = table.sample(rng.gen(), rng.gen());
            assert!((dir.length() - 1.0).abs() < 1e-9);
            assert!((pdf * 4.0 * PI - 1.0).abs() < 1e-3);
            let d = uniform_sphere_dir(rng.gen(), rng.gen());
            assert!((table.pdf(d) * 4.0 * PI - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn single_bright_texel_takes_all_mass() {
        let mut tex = OctTexture::new(16, 3);
        tex.texel_mut(3, 11).copy_from_slice(&[5.0, 2.0, 1.0]);
        let table = SamplingTable::build(&tex).unwrap();
        assert!((table.texel_pmf()[11 * 16 + 3] - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (dir, _) = table.sample(rng.gen(), rng.gen());
            assert_eq!(tex.texel_of(dir), (3, 11));
        }
    }

    #[test]
    fn samples_stay_in_their_texel() {
        let tex = random_texture(16, 8);
        let table = SamplingTable::build(&tex).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stray = 0;
        for _ in 0..20_000 {
            let (u1, u2) = (rng.gen(), rng.gen());
            let (k, _, _) = table.sample_texel(u1, u2);
            let (dir, _) = table.sample(u1, u2);
            let (i, j) = tex.texel_of(dir);
            if j * 16 + i != k {
                stray += 1;
            }
        }
        // only points on a shared edge may round into the neighbour
        assert!(stray <= 2, "{stray} samples left their texel");
    }

    #[test]
    fn triangle_sampler_is_uniform() {
        // Oracle: split the triangle at its centroid into three sub-triangles
        // and compare hit counts with their exact area fractions.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let a = uniform_sphere_dir(rng.gen(), rng.gen());
            let b = (a + DVec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.8).normalize();
            let c = (a + DVec3::new(rng.gen(), rng.gen(), -rng.gen::<f64>()) * 0.8).normalize();
            let m = (a + b + c).normalize();
            let subs = [[a, b, m], [b, c, m], [c, a, m]];
            let total = spherical_triangle_area(a, b, c);
            let n = 60_000;
            let mut counts = [0usize; 3];
            for _ in 0..n {
                let p = sample_spherical_triangle(a, b, c, rng.gen(), rng.gen());
                let inside = |t: &[DVec3; 3]| {
                    let s0 = t[0].cross(t[1]).dot(p);
                    let s1 = t[1].cross(t[2]).dot(p);
                    let s2 = t[2].cross(t[0]).dot(p);
                    (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
                };
                for (k, t) in subs.iter().enumerate() {
                    if inside(t) {
                        counts[k] += 1;
                        break;
                    }
                }
            }
            assert_eq!(counts.iter().sum::<usize>(), n);
            for (k, t) in subs.iter().enumerate() {
                let p = spherical_triangle_area(t[0], t[1], t[2]) / total;
                let sigma = (n as f64 * p * (1.0 - p)).sqrt();
                assert!((counts[k] as f64 - n as f64 * p).abs() < 4.0 * sigma);
            }
        }
    }

    #[test]
    fn frequencies_match_pmf() {
        let tex = random_texture(6, 11);
        let table = SamplingTable::build(&tex).unwrap();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = vec![0usize; 36];
        for _ in 0..n {
            let (dir, _) = table.sample(rng.gen(), rng.gen());
            let (i, j) = tex.texel_of(dir);
            counts[j * 6 + i] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = table.texel_pmf()[k];
            let sigma = (n as f64 * p * (1.0 - p)).sqrt().max(1e-9);
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1.0, "texel {k}: {c} vs {}", n as f64 * p);
        }
    }

    #[test]
    fn estimator_matches_quadrature() {
        let tex = random_texture(16, 13);
        let table = SamplingTable::build(&tex).unwrap();
        let quad: f64 = (0..256).map(|k| tex.texel_luminance(k) * table.solid_angles()[k]).sum();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut acc = 0.0;
        for _ in 0..n {
            let (dir, pdf) = table.sample(rng.gen(), rng.gen());
            let (i, j) = tex.texel_of(dir);
            acc += tex.texel_luminance(j * 16 + i) / pdf;
        }
        let est = acc / n as f64;
        assert!((est / quad - 1.0).abs() < 0.01, "{est} vs {quad}");
    }

    #[test]
    fn smooth_integrand_is_unbiased() {
        // bounded test function times texture, against fine texel quadrature
        let tex = random_texture(8, 15);
        let table = SamplingTable::build(&tex).unwrap();
        let g = |d: DVec3| 1.0 + 0.5 * d.x - 0.3 * d.z * d.y;
        let fine = 128;
        let probe = OctTexture::new(fine, 1);
        let mut quad = 0.0;
        for j in 0..fine {
            for i in 0..fine {
                let d = probe.texel_center_dir(i, j);
                let w = texel_solid_angle(fine, i, j);
                quad += tex.sample_nearest(d).dot(DVec3::new(0.2126, 0.7152, 0.0722)) * g(d) * w;
            }
        }
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (d, pdf) = table.sample(rng.gen(), rng.gen());
            let v = tex.sample_nearest(d).dot(DVec3::new(0.2126, 0.7152, 0.0722)) * g(d) / pdf;
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        // fine-grid quadrature of a piecewise-constant texture carries its own
        // edge error; allow it on top of three standard errors
        assert!((mean - quad).abs() < 3.0 * se + 2e-3 * quad.abs(), "{mean} vs {quad} (se {se})");
    }
}
