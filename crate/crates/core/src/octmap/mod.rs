//! Octahedral sphere parameterization and the sampling machinery built on it.
//!
//! Convention: `+Z` maps to the center of the unit square, `-Z` to all four
//! corners, and the lower hemisphere is folded across the diamond edges.

mod table;
mod texture;

use glam::{DVec2, DVec3};

pub use table::SamplingTable;
pub use texture::{spherical_triangle_area, OctTexture, Taps};
pub(crate) use texture::bilinear_taps;

use crate::{Error, Result};

#[inline]
fn sign_nz(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Maps a (not necessarily normalized) non-zero direction to `[-1, 1]²`.
#[inline]
pub fn oct_encode(d: DVec3) -> DVec2 {
    let l1 = d.x.abs() + d.y.abs() + d.z.abs();
    let p = DVec2::new(d.x, d.y) / l1;
    if d.z >= 0.0 {
        p
    } else {
        DVec2::new((1.0 - p.y.abs()) * sign_nz(p.x), (1.0 - p.x.abs()) * sign_nz(p.y))
    }
}

/// Unnormalized inverse of [`oct_encode`]: a point on the octahedron.
#[inline]
pub fn oct_decode_unnormalized(p: DVec2) -> DVec3 {
    let z = 1.0 - p.x.abs() - p.y.abs();
    if z >= 0.0 {
        DVec3::new(p.x, p.y, z)
    } else {
        DVec3::new((1.0 - p.y.abs()) * sign_nz(p.x), (1.0 - p.x.abs()) * sign_nz(p.y), z)
    }
}

#[inline]
pub fn oct_decode(p: DVec2) -> DVec3 {
    oct_decode_unnormalized(p).normalize()
}

/// Direction to texture coordinates in `[0, 1]²`.
pub fn dir_to_oct_uv(d: DVec3) -> Result<DVec2> {
    let l1 = d.x.abs() + d.y.abs() + d.z.abs();
    if !(l1 > 0.0 && l1.is_finite()) {
        return Err(Error::Domain(format!("cannot map direction {d} to the octahedron")));
    }
    Ok(oct_encode(d) * 0.5 + DVec2::splat(0.5))
}

/// Texture coordinates in `[0, 1]²` to a unit direction.
#[inline]
pub fn oct_uv_to_dir(uv: DVec2) -> DVec3 {
    oct_decode(uv * 2.0 - DVec2::ONE)
}

/// `i`-th point of the `n`-point Hammersley set: `(i / n, radical_inverse_2(i))`.
#[inline]
pub fn hammersley(i: u32, n: u32) -> (f64, f64) {
    debug_assert!(i < n);
    (i as f64 / n as f64, radical_inverse_base2(i))
}

#[inline]
pub fn radical_inverse_base2(i: u32) -> f64 {
    i.reverse_bits() as f64 * (1.0 / 4_294_967_296.0)
}

/// Uniform-density direction on the hemisphere around `n`, with
/// `cos(theta) = u1`.
#[inline]
pub fn uniform_hemisphere_dir(u1: f64, u2: f64, n: DVec3) -> DVec3 {
    let cos_theta = u1.clamp(0.0, 1.0);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = std::f64::consts::TAU * u2;
    let (t, b) = n.any_orthonormal_pair();
    (t * (sin_theta * phi.cos()) + b * (sin_theta * phi.sin()) + n * cos_theta).normalize()
}

/// Uniform direction on the full sphere.
#[inline]
pub fn uniform_sphere_dir(u1: f64, u2: f64) -> DVec3 {
    let z = 1.0 - 2.0 * u1;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = std::f64::consts::TAU * u2;
    DVec3::new(r * phi.cos(), r * phi.sin(), z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> DVec3 {
        uniform_sphere_dir(rng.gen(), rng.gen())
    }

    #[test]
    fn poles_and_axes() {
        assert_eq!(dir_to_oct_uv(DVec3::Z).unwrap(), DVec2::new(0.5, 0.5));
        assert_eq!(dir_to_oct_uv(DVec3::X).unwrap(), DVec2::new(1.0, 0.5));
        assert_eq!(oct_uv_to_dir(DVec2::new(0.5, 0.5)), DVec3::Z);
        for corner in [DVec2::ZERO, DVec2::X, DVec2::Y, DVec2::ONE] {
            assert!((oct_uv_to_dir(corner) - DVec3::NEG_Z).length() < 1e-12);
        }
        assert!(dir_to_oct_uv(DVec3::ZERO).is_err());
    }

    #[test]
    fn round_trip_angular_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let d = random_dir(&mut rng);
            let back = oct_uv_to_dir(dir_to_oct_uv(d).unwrap());
            let angle = d.dot(back).clamp(-1.0, 1.0).acos().max((d - back).length());
            assert!(angle < 1e-5, "{d} -> {back}");
        }
    }

    #[test]
    fn uv_round_trip_inside_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let uv = DVec2::new(rng.gen_range(0.001..0.999), rng.gen_range(0.001..0.999));
            let back = dir_to_oct_uv(oct_uv_to_dir(uv)).unwrap();
            assert!((back - uv).length() < 1e-6, "{uv} -> {back}");
        }
    }

    #[test]
    fn hammersley_definition() {
        assert_eq!(hammersley(0, 4), (0.0, 0.0));
        assert_eq!(hammersley(1, 4), (0.25, 0.5));
        assert_eq!(hammersley(3, 4), (0.75, 0.75));
        assert_eq!(radical_inverse_base2(6), 0.375);
    }

    // Exact L∞ star discrepancy evaluated on the grid of point coordinates.
    fn star_discrepancy(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let mut xs: Vec<f64> = points.iter().map(|p| p.0).chain([1.0]).collect();
        let mut ys: Vec<f64> = points.iter().map(|p| p.1).chain([1.0]).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let mut worst: f64 = 0.0;
        for &x in &xs {
            for &y in &ys {
                let open = points.iter().filter(|p| p.0 < x && p.1 < y).count() as f64;
                let closed = points.iter().filter(|p| p.0 <= x && p.1 <= y).count() as f64;
                let vol = x * y;
                worst = worst.max(vol - open / n).max(closed / n - vol);
            }
        }
        worst
    }

    #[test]
    fn hammersley_beats_random_discrepancy() {
        let n = 256;
        let ham: Vec<_> = (0..n).map(|i| hammersley(i, n)).collect();
        let d_ham = star_discrepancy(&ham);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 10;
        let mean_random = (0..trials)
            .map(|_| {
                let pts: Vec<_> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
                star_discrepancy(&pts)
            })
            .sum::<f64>()
            / trials as f64;
        assert!(d_ham < mean_random, "hammersley {d_ham} vs random {mean_random}");
    }

    #[test]
    fn hemisphere_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = random_dir(&mut rng);
            let d = uniform_hemisphere_dir(rng.gen(), rng.gen(), n);
            assert!(d.dot(n) >= -1e-12);
            assert!((d.length() - 1.0).abs() < 1e-12);
        }
        let n = DVec3::new(0.3, -0.4, 0.866).normalize();
        assert!((uniform_hemisphere_dir(1.0 - 1e-12, 0.3, n) - n).length() < 1e-5);
    }

    #[test]
    fn hammersley_hemisphere_mean_cosine() {
        let count = 100_000;
        let mean_z = (0..count)
            .map(|i| {
                let (u1, u2) = hammersley(i, count);
                uniform_hemisphere_dir(u1, u2, DVec3::Z).z
            })
            .sum::<f64>()
            / count as f64;
        assert!((mean_z - 0.5).abs() < 0.01);
    }
}
