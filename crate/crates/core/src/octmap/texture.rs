use glam::{DVec2, DVec3};

use super::{oct_decode, oct_encode};
use crate::{Error, Result};

/// Square texture addressed by octahedral direction.
///
/// Texel `(i, j)` covers `u ∈ [i/N, (i+1)/N]`, `v ∈ [j/N, (j+1)/N]` and is
/// stored at `(j * N + i) * channels`. One-channel textures hold occlusion
/// and are bounded by 1; three-channel textures hold linear RGB radiance.
#[derive(Clone, Debug, PartialEq)]
pub struct OctTexture {
    size: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Four bilinear taps (texel index, weight) for one lookup direction.
/// Taps depend only on the texture size, so they can be shared between
/// textures of equal size.
#[derive(Clone, Copy, Debug)]
pub struct Taps {
    pub texels: [u32; 4],
    pub weights: [f64; 4],
}

impl OctTexture {
    pub fn new(size: usize, channels: usize) -> Self {
        assert!(size >= 2, "octahedral texture needs at least 2 texels per side");
        assert!(channels == 1 || channels == 3);
        OctTexture {
            size,
            channels,
            data: vec![0.0; size * size * channels],
        }
    }

    pub fn from_data(size: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid("octahedral texture size must be >= 2"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid("octahedral texture must have 1 or 3 channels"));
        }
        if data.len() != size * size * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {size}x{size}x{channels} texture",
                data.len()
            )));
        }
        let tex = OctTexture { size, channels, data };
        tex.validate()?;
        Ok(tex)
    }

    pub fn constant(size: usize, value: &[f32]) -> Self {
        let mut tex = OctTexture::new(size, value.len());
        for texel in tex.data.chunks_exact_mut(value.len()) {
            texel.copy_from_slice(value);
        }
        tex
    }

    /// Fills each texel from its center direction.
    pub fn from_fn(size: usize, channels: usize, mut f: impl FnMut(DVec3) -> DVec3) -> Self {
        let mut tex = OctTexture::new(size, channels);
        for j in 0..size {
            for i in 0..size {
                let v = f(tex.texel_center_dir(i, j));
                let t = tex.texel_mut(i, j);
                for (c, out) in t.iter_mut().enumerate() {
                    *out = v[c] as f32;
                }
            }
        }
        tex
    }

    pub fn validate(&self) -> Result<()> {
        for &v in &self.data {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain("texture values must be finite and non-negative".into()));
            }
            if self.channels == 1 && v > 1.0 {
                return Err(Error::Domain("occlusion texture values must be <= 1".into()));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn texel_count(&self) -> usize {
        self.size * self.size
    }

    #[inline]
    pub fn texel(&self, i: usize, j: usize) -> &[f32] {
        let at = (j * self.size + i) * self.channels;
        &self.data[at..at + self.channels]
    }

    #[inline]
    pub fn texel_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let at = (j * self.size + i) * self.channels;
        &mut self.data[at..at + self.channels]
    }

    /// Texel value by linear index as RGB (one-channel textures replicate).
    #[inline]
    pub fn texel_rgb(&self, index: usize) -> DVec3 {
        let at = index * self.channels;
        if self.channels == 1 {
            DVec3::splat(self.data[at] as f64)
        } else {
            DVec3::new(self.data[at] as f64, self.data[at + 1] as f64, self.data[at + 2] as f64)
        }
    }

    /// Rec. 709 luminance of a texel (the value itself for one channel).
    pub fn texel_luminance(&self, index: usize) -> f64 {
        let c = self.texel_rgb(index);
        if self.channels == 1 {
            c.x
        } else {
            0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z
        }
    }

    pub fn texel_center_uv(&self, i: usize, j: usize) -> DVec2 {
        DVec2::new((i as f64 + 0.5) / self.size as f64, (j as f64 + 0.5) / self.size as f64)
    }

    pub fn texel_center_dir(&self, i: usize, j: usize) -> DVec3 {
        oct_decode(self.texel_center_uv(i, j) * 2.0 - DVec2::ONE)
    }

    /// Texel containing `dir`.
    #[inline]
    pub fn texel_of(&self, dir: DVec3) -> (usize, usize) {
        texel_of(self.size, dir)
    }

    /// Nearest-texel lookup.
    #[inline]
    pub fn sample_nearest(&self, dir: DVec3) -> DVec3 {
        let (i, j) = self.texel_of(dir);
        self.texel_rgb(j * self.size + i)
    }

    #[inline]
    pub fn taps(&self, dir: DVec3) -> Taps {
        bilinear_taps(self.size, dir)
    }

    #[inline]
    pub fn apply_taps_rgb(&self, taps: &Taps) -> DVec3 {
        let mut acc = DVec3::ZERO;
        for k in 0..4 {
            acc += self.texel_rgb(taps.texels[k] as usize) * taps.weights[k];
        }
        acc
    }

    #[inline]
    pub fn apply_taps_scalar(&self, taps: &Taps) -> f64 {
        let mut acc = 0.0;
        for k in 0..4 {
            acc += self.data[taps.texels[k] as usize * self.channels] as f64 * taps.weights[k];
        }
        acc
    }

    /// Bilinear lookup with octahedral wrap at the borders.
    pub fn sample_rgb(&self, dir: DVec3) -> DVec3 {
        self.apply_taps_rgb(&self.taps(dir))
    }

    /// Bilinear lookup of the first channel.
    pub fn sample_scalar(&self, dir: DVec3) -> f64 {
        self.apply_taps_scalar(&self.taps(dir))
    }

    /// Solid angle subtended by texel `(i, j)`.
    pub fn texel_solid_angle(&self, i: usize, j: usize) -> f64 {
        texel_solid_angle(self.size, i, j)
    }

    /// Texel `(i, j)` → `(N-1-i, N-1-j)`, i.e. a half turn about the Z axis.
    pub fn rotated_half_turn_z(&self) -> Self {
        let mut out = OctTexture::new(self.size, self.channels);
        let n = self.size;
        for j in 0..n {
            for i in 0..n {
                out.texel_mut(n - 1 - i, n - 1 - j).copy_from_slice(self.texel(i, j));
            }
        }
        out
    }
}

#[inline]
pub(crate) fn texel_of(size: usize, dir: DVec3) -> (usize, usize) {
    let uv = oct_encode(dir) * 0.5 + DVec2::splat(0.5);
    let n = size as f64;
    let i = ((uv.x * n) as usize).min(size - 1);
    let j = ((uv.y * n) as usize).min(size - 1);
    (i, j)
}

/// Maps an index at most one texel outside the square back inside by the
/// octahedral mirror rule: crossing an edge reflects along that edge.
#[inline]
fn wrap_texel(mut x: i64, mut y: i64, n: i64) -> (i64, i64) {
    if x < 0 {
        x = 0;
        y = n - 1 - y;
    } else if x >= n {
        x = n - 1;
        y = n - 1 - y;
    }
    if y < 0 {
        y = 0;
        x = n - 1 - x;
    } else if y >= n {
        y = n - 1;
        x = n - 1 - x;
    }
    (x, y)
}

#[inline]
pub(crate) fn bilinear_taps(size: usize, dir: DVec3) -> Taps {
    let uv = oct_encode(dir) * 0.5 + DVec2::splat(0.5);
    let n = size as f64;
    let fx = uv.x * n - 0.5;
    let fy = uv.y * n - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let ni = size as i64;
    let idx = |x: i64, y: i64| {
        let (x, y) = wrap_texel(x, y, ni);
        (y * ni + x) as u32
    };
    Taps {
        texels: [idx(x0, y0), idx(x0 + 1, y0), idx(x0, y0 + 1), idx(x0 + 1, y0 + 1)],
        weights: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
    }
}

/// Solid angle of the spherical triangle `abc` (Van Oosterom–Strackee).
#[inline]
pub fn spherical_triangle_area(a: DVec3, b: DVec3, c: DVec3) -> f64 {
    let num = a.dot(b.cross(c)).abs();
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// The texel square clipped against each octahedron face it overlaps.
/// Inside one face the octahedral map is a central projection of an affine
/// map, so straight edges become great arcs and every returned triangle is a
/// true spherical triangle.
pub(crate) fn texel_triangles(size: usize, i: usize, j: usize, mut emit: impl FnMut([DVec3; 3])) {
    let step = 2.0 / size as f64;
    let x0 = -1.0 + i as f64 * step;
    let y0 = -1.0 + j as f64 * step;
    let (x1, y1) = (x0 + step, y0 + step);
    let square = [DVec2::new(x0, y0), DVec2::new(x1, y0), DVec2::new(x1, y1), DVec2::new(x0, y1)];

    let center = DVec2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let face_of = |p: DVec2| -> (bool, bool, bool) { (p.x >= 0.0, p.y >= 0.0, p.x.abs() + p.y.abs() <= 1.0) };
    let in_face = |p: DVec2, f: (bool, bool, bool)| -> bool {
        let sx = if f.0 { p.x >= 0.0 } else { p.x <= 0.0 };
        let sy = if f.1 { p.y >= 0.0 } else { p.y <= 0.0 };
        let l1 = p.x.abs() + p.y.abs();
        let side = if f.2 { l1 <= 1.0 } else { l1 >= 1.0 };
        sx && sy && side
    };

    let fan = |poly: &[DVec2], emit: &mut dyn FnMut([DVec3; 3])| {
        let dirs: Vec<DVec3> = poly.iter().map(|&p| oct_decode(p)).collect();
        for k in 1..dirs.len().saturating_sub(1) {
            emit([dirs[0], dirs[k], dirs[k + 1]]);
        }
    };

    let home = face_of(center);
    if square.iter().all(|&p| in_face(p, home)) {
        fan(&square, &mut emit);
        return;
    }
    for face in 0..8u8 {
        let f = (face & 1 != 0, face & 2 != 0, face & 4 != 0);
        let sx = if f.0 { 1.0 } else { -1.0 };
        let sy = if f.1 { 1.0 } else { -1.0 };
        // half-planes a·p + c >= 0
        let mut planes = vec![(DVec2::new(sx, 0.0), 0.0), (DVec2::new(0.0, sy), 0.0)];
        if f.2 {
            planes.push((DVec2::new(-sx, -sy), 1.0));
        } else {
            planes.push((DVec2::new(sx, sy), -1.0));
        }
        let mut poly = square.to_vec();
        for (a, c) in planes {
            poly = clip_polygon(&poly, a, c);
            if poly.len() < 3 {
                break;
            }
        }
        if poly.len() >= 3 {
            fan(&poly, &mut emit);
        }
    }
}

/// Sutherland–Hodgman clip against the half-plane `a·p + c >= 0`.
fn clip_polygon(poly: &[DVec2], a: DVec2, c: f64) -> Vec<DVec2> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let dp = a.dot(p) + c;
        let dq = a.dot(q) + c;
        if dp >= 0.0 {
            out.push(p);
        }
        if (dp >= 0.0) != (dq >= 0.0) {
            let t = dp / (dp - dq);
            out.push(p + (q - p) * t);
        }
    }
    out
}

pub(crate) fn texel_solid_angle(size: usize, i: usize, j: usize) -> f64 {
    let mut total = 0.0;
    texel_triangles(size, i, j, |[a, b, c]| total += spherical_triangle_area(a, b, c));
    total
}
