//! Surface octahedral probes: placement, baking, fixed-radius lookup and
//! weighted interpolation of radiance and occlusion.

mod bake;
mod diagnostics;
mod io;
mod placement;

use glam::DVec3;

pub use bake::{bake_probe, bake_probes, ProbeBake};
pub use diagnostics::{
    bench_occlusion, interpolated_vs_traced_error, near_surface_queries, BenchReport, ErrorReport, QueryDirections,
    QueryPair,
};
pub use io::{load_probes, read_probes, save_probes, write_probes, SOPS_MAGIC};
pub use placement::{
    build_probes, default_offset, farthest_point_sample, fuse_surface_points, fuse_surface_points_where, place_probes,
    BuiltProbes, SurfacePoints, FUSION_VOXEL_DIVISOR,
};

use crate::geometry::Aabb;
use crate::octmap::{OctTexture, Taps};
use crate::{Error, Result};

/// Default probe texture resolution.
pub const DEFAULT_TEX_SIZE: usize = 16;
/// Most neighbours blended per query.
pub const MAX_NEIGHBORS: usize = 8;
/// Queries closer than this to a probe take that probe's value directly.
pub const SNAP_EPS: f64 = 1e-8;
/// Floor of the back-face weight.
pub const BACKFACE_BIAS: f64 = 0.01;

/// A probe: position, the normal of the surface it was lifted from, and its
/// radiance (RGB) and occlusion (scalar) textures.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub position: DVec3,
    pub source_normal: DVec3,
    pub radiance: OctTexture,
    pub occlusion: OctTexture,
}

impl Probe {
    pub fn validate(&self) -> Result<()> {
        if self.radiance.channels() != 3 || self.occlusion.channels() != 1 {
            return Err(Error::invalid("probe needs an RGB radiance and a scalar occlusion texture"));
        }
        if self.radiance.size() != self.occlusion.size() {
            return Err(Error::DimensionMismatch("probe textures differ in size".into()));
        }
        if !self.position.is_finite() || (self.source_normal.length() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("probe needs a finite position and a unit normal"));
        }
        self.radiance.validate()?;
        self.occlusion.validate()
    }
}

/// Uniform grid with cells at least one search radius wide, stored as a
/// compressed cell list.
#[derive(Clone, Debug)]
struct Grid {
    origin: DVec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

const MAX_GRID_CELLS: usize = 1 << 21;

impl Grid {
    fn build(points: &[DVec3], radius: f64) -> Grid {
        let bounds = Aabb::from_points(points);
        let extent = if bounds.is_empty() { DVec3::ZERO } else { bounds.size() };
        let mut cell = radius;
        let dims_for = |cell: f64| -> [usize; 3] {
            let d = (extent / cell).floor();
            [d.x as usize + 1, d.y as usize + 1, d.z as usize + 1]
        };
        let mut dims = dims_for(cell);
        while dims.iter().product::<usize>() > MAX_GRID_CELLS {
            cell *= 2.0;
            dims = dims_for(cell);
        }
        let origin = if bounds.is_empty() { DVec3::ZERO } else { bounds.min };
        let mut grid = Grid {
            origin,
            cell,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let ncells = dims.iter().product::<usize>();
        let keys: Vec<usize> = points.iter().map(|&p| grid.cell_index(grid.cell_of(p))).collect();
        let mut counts = vec![0u32; ncells + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for k in 0..ncells {
            counts[k + 1] += counts[k];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    #[inline]
    fn cell_of(&self, p: DVec3) -> [i64; 3] {
        let q = ((p - self.origin) / self.cell).floor();
        [q.x as i64, q.y as i64, q.z as i64]
    }

    #[inline]
    fn cell_index(&self, c: [i64; 3]) -> usize {
        let cx = c[0].clamp(0, self.dims[0] as i64 - 1) as usize;
        let cy = c[1].clamp(0, self.dims[1] as i64 - 1) as usize;
        let cz = c[2].clamp(0, self.dims[2] as i64 - 1) as usize;
        (cz * self.dims[1] + cy) * self.dims[0] + cx
    }

    /// Calls `f` with every item in the cells overlapping the sphere of
    /// `radius` around `p`.
    #[inline]
    fn for_each_near(&self, p: DVec3, radius: f64, mut f: impl FnMut(u32)) {
        let lo = self.cell_of(p - DVec3::splat(radius));
        let hi = self.cell_of(p + DVec3::splat(radius));
        let clamp = |v: i64, d: usize| v.clamp(0, d as i64 - 1);
        // every point lies in a clamped cell, so clamping the query range
        // to the grid loses nothing
        if hi[0] < 0 || hi[1] < 0 || hi[2] < 0 {
            return;
        }
        if lo[0] >= self.dims[0] as i64 || lo[1] >= self.dims[1] as i64 || lo[2] >= self.dims[2] as i64 {
            return;
        }
        for z in clamp(lo[2], self.dims[2])..=clamp(hi[2], self.dims[2]) {
            for y in clamp(lo[1], self.dims[1])..=clamp(hi[1], self.dims[1]) {
                let row = (z as usize * self.dims[1] + y as usize) * self.dims[0];
                let x0 = clamp(lo[0], self.dims[0]) as usize;
                let x1 = clamp(hi[0], self.dims[0]) as usize;
                let s = self.starts[row + x0] as usize;
                let e = self.starts[row + x1 + 1] as usize;
                for &i in &self.items[s..e] {
                    f(i);
                }
            }
        }
    }
}

/// Probes indexed for fixed-radius neighbour queries.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    probes: Vec<Probe>,
    positions: Vec<DVec3>,
    radius: f64,
    tex_size: usize,
    grid: Grid,
}

impl ProbeSet {
    pub fn new(probes: Vec<Probe>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("probe search radius must be positive"));
        }
        let tex_size = probes.first().map_or(DEFAULT_TEX_SIZE, |p| p.radiance.size());
        for p in &probes {
            p.validate()?;
            if p.radiance.size() != tex_size {
                return Err(Error::DimensionMismatch("all probes must share a texture size".into()));
            }
        }
        let positions: Vec<DVec3> = probes.iter().map(|p| p.position).collect();
        let grid = Grid::build(&positions, radius);
        Ok(ProbeSet {
            probes,
            positions,
            radius,
            tex_size,
            grid,
        })
    }

    /// Radius of four mean spacings, the spacing estimated as
    /// `diagonal / sqrt(count)` over the probe positions' bounding box.
    pub fn default_radius(positions: &[DVec3]) -> f64 {
        let diag = Aabb::from_points(positions).diagonal();
        let n = positions.len().max(1) as f64;
        let r = 4.0 * diag / n.sqrt();
        if r > 0.0 && r.is_finite() {
            r
        } else {
            1.0
        }
    }

    pub fn with_default_radius(probes: Vec<Probe>) -> Result<Self> {
        let positions: Vec<DVec3> = probes.iter().map(|p| p.position).collect();
        let radius = ProbeSet::default_radius(&positions);
        ProbeSet::new(probes, radius)
    }

    pub fn empty() -> Self {
        ProbeSet::new(Vec::new(), 1.0).expect("empty set")
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn into_probes(self) -> Vec<Probe> {
        self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn tex_size(&self) -> usize {
        self.tex_size
    }

    /// Probes within the radius of `x`, nearest first (ties by index),
    /// at most [`MAX_NEIGHBORS`].
    pub fn frnn(&self, x: DVec3) -> Vec<usize> {
        self.nearest(x).iter().map(|&(_, i)| i as usize).collect()
    }

    fn nearest(&self, x: DVec3) -> arrayvec::ArrayVec<(f64, u32), MAX_NEIGHBORS> {
        let mut best = arrayvec::ArrayVec::<(f64, u32), MAX_NEIGHBORS>::new();
        if self.probes.is_empty() {
            return best;
        }
        let r2 = self.radius * self.radius;
        self.grid.for_each_near(x, self.radius, |i| {
            let d2 = self.positions[i as usize].distance_squared(x);
            if d2 > r2 {
                return;
            }
            let key = (d2, i);
            let worse = |a: &(f64, u32), b: &(f64, u32)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1);
            if best.is_full() {
                if !worse(best.last().unwrap(), &key) {
                    return;
                }
                best.pop();
            }
            let at = best.iter().position(|e| worse(e, &key)).unwrap_or(best.len());
            best.insert(at, key);
        });
        best
    }

    /// Interpolation weights around `x`.
    pub fn neighborhood(&self, x: DVec3) -> Neighborhood<'_> {
        let near = self.nearest(x);
        let mut entries = arrayvec::ArrayVec::new();
        if let Some(&(d2, i)) = near.first() {
            if d2.sqrt() < SNAP_EPS {
                entries.push((i, 1.0));
                return Neighborhood { set: self, entries };
            }
        }
        let mut total = 0.0;
        for &(d2, i) in &near {
            let d = self.positions[i as usize] - x;
            let dist = d2.sqrt();
            let w = spatial_weight(dist) * backface_weight(d / dist, self.probes[i as usize].source_normal);
            entries.push((i, w));
            total += w;
        }
        for e in entries.iter_mut() {
            e.1 /= total;
        }
        Neighborhood { set: self, entries }
    }

    /// Interpolated `(L_in, O)` at `x` toward `dir`; `None` when no probe is
    /// within range.
    pub fn interpolate(&self, x: DVec3, dir: DVec3) -> Option<(DVec3, f64)> {
        let nb = self.neighborhood(x);
        (!nb.is_empty()).then(|| nb.sample(dir))
    }
}

/// Spatial weight `1 / ‖d‖`.
#[inline]
pub fn spatial_weight(dist: f64) -> f64 {
    1.0 / dist
}

/// Back-face weight `0.5 (1 + d̂·n_p) + 0.01` for unit `d_hat`.
#[inline]
pub fn backface_weight(d_hat: DVec3, probe_normal: DVec3) -> f64 {
    0.5 * (1.0 + d_hat.dot(probe_normal)) + BACKFACE_BIAS
}

/// Normalized blend weights of the probes around one shading point.
#[derive(Clone, Debug)]
pub struct Neighborhood<'a> {
    set: &'a ProbeSet,
    entries: arrayvec::ArrayVec<(u32, f64), MAX_NEIGHBORS>,
}

impl Neighborhood<'_> {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// `(probe index, normalized weight)` pairs.
    pub fn weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|&(i, w)| (i as usize, w))
    }

    #[inline]
    pub fn taps(&self, dir: DVec3) -> Taps {
        crate::octmap::bilinear_taps(self.set.tex_size, dir)
    }

    /// Blended `(L_in, O)` toward `dir`; zeros for an empty neighbourhood.
    #[inline]
    pub fn sample(&self, dir: DVec3) -> (DVec3, f64) {
        let taps = self.taps(dir);
        let mut radiance = DVec3::ZERO;
        let mut occlusion = 0.0;
        for &(i, w) in &self.entries {
            let p = &self.set.probes[i as usize];
            radiance += w * p.radiance.apply_taps_rgb(&taps);
            occlusion += w * p.occlusion.apply_taps_scalar(&taps);
        }
        (radiance, occlusion.clamp(0.0, 1.0))
    }

    /// Blended occlusion only.
    #[inline]
    pub fn occlusion(&self, dir: DVec3) -> f64 {
        let taps = self.taps(dir);
        let mut occlusion = 0.0;
        for &(i, w) in &self.entries {
            occlusion += w * self.set.probes[i as usize].occlusion.apply_taps_scalar(&taps);
        }
        occlusion.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octmap::uniform_sphere_dir;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn constant_probe(position: DVec3, normal: DVec3, radiance: f32, occlusion: f32) -> Probe {
        Probe {
            position,
            source_normal: normal,
            radiance: OctTexture::constant(4, &[radiance; 3]),
            occlusion: OctTexture::constant(4, &[occlusion]),
        }
    }

    fn random_probe(rng: &mut impl Rng, extent: f64) -> Probe {
        let mut p = constant_probe(
            DVec3::new(rng.gen_range(-extent..extent), rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)),
            uniform_sphere_dir(rng.gen(), rng.gen()),
            0.0,
            0.0,
        );
        for v in p.radiance.data_mut() {
            *v = rng.gen_range(0.0..3.0);
        }
        for v in p.occlusion.data_mut() {
            *v = rng.gen();
        }
        p
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(ProbeSet::new(vec![], 0.0).is_err());
        let a = constant_probe(DVec3::ZERO, DVec3::Z, 1.0, 0.5);
        let mut b = a.clone();
        b.radiance = OctTexture::constant(8, &[1.0; 3]);
        b.occlusion = OctTexture::constant(8, &[0.0]);
        assert!(ProbeSet::new(vec![a.clone(), b], 1.0).is_err());
        let mut c = a;
        c.source_normal = DVec3::new(0.0, 0.0, 2.0);
        assert!(ProbeSet::new(vec![c], 1.0).is_err());
    }

    #[test]
    fn coincident_query_includes_probe() {
        let set = ProbeSet::new(vec![constant_probe(DVec3::ONE, DVec3::Z, 1.0, 0.0)], 0.5).unwrap();
        assert_eq!(set.frnn(DVec3::ONE), vec![0]);
        assert!(set.frnn(DVec3::new(5.0, 5.0, 5.0)).is_empty());
        assert!(set.frnn(DVec3::new(-50.0, 1.0, 1.0)).is_empty());
        assert!(set.interpolate(DVec3::splat(3.0), DVec3::Z).is_none());
    }

    #[test]
    fn frnn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probes: Vec<Probe> = (0..10_000).map(|_| random_probe(&mut rng, 5.0)).collect();
        let set = ProbeSet::new(probes, 0.6).unwrap();
        for _ in 0..1000 {
            let x = DVec3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
            let mut brute: Vec<(f64, usize)> = set
                .probes()
                .iter()
                .enumerate()
                .map(|(i, p)| (p.position.distance_squared(x), i))
                .filter(|&(d2, _)| d2 <= 0.36)
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            brute.truncate(MAX_NEIGHBORS);
            assert_eq!(set.frnn(x), brute.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_neighbor_returns_its_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_probe(&mut rng, 1.0);
        let set = ProbeSet::new(vec![p.clone()], 10.0).unwrap();
        for _ in 0..100 {
            let x = p.position + DVec3::new(rng.gen(), rng.gen(), rng.gen());
            let d = uniform_sphere_dir(rng.gen(), rng.gen());
            let (l, o) = set.interpolate(x, d).unwrap();
            assert!((l - p.radiance.sample_rgb(d)).length() < 1e-12);
            assert!((o - p.occlusion.sample_scalar(d)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_textures_interpolate_exactly() {
        let set = ProbeSet::new(
            vec![
                constant_probe(DVec3::ZERO, DVec3::Z, 0.7, 0.25),
                constant_probe(DVec3::X, -DVec3::Z, 0.7, 0.25),
            ],
            5.0,
        )
        .unwrap();
        let (l, o) = set.interpolate(DVec3::new(0.3, 0.2, 0.1), DVec3::Y).unwrap();
        assert!((l - DVec3::splat(0.7)).abs().max_element() < 1e-7);
        assert!((o - 0.25).abs() < 1e-7);
    }

    #[test]
    fn backface_weight_ratio() {
        // both probes one unit away; the one above the surface faces its
        // normal along d, the one below opposes it
        let x = DVec3::ZERO;
        let above = constant_probe(DVec3::Z, DVec3::Z, 1.0, 0.0);
        let below = constant_probe(-DVec3::Z, DVec3::Z, 0.0, 0.0);
        let set = ProbeSet::new(vec![above, below], 2.0).unwrap();
        let nb = set.neighborhood(x);
        let w: Vec<(usize, f64)> = nb.weights().collect();
        let wa = w.iter().find(|e| e.0 == 0).unwrap().1;
        let wb = w.iter().find(|e| e.0 == 1).unwrap().1;
        assert!((wa / wb - 101.0).abs() < 1e-9);
        assert!((backface_weight(DVec3::Z, DVec3::Z) - 1.01).abs() < 1e-15);
        assert!((backface_weight(-DVec3::Z, DVec3::Z) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn snaps_to_coincident_probe() {
        let set = ProbeSet::new(
            vec![constant_probe(DVec3::ZERO, DVec3::Z, 0.2, 0.9), constant_probe(DVec3::X * 0.1, DVec3::Z, 2.0, 0.0)],
            1.0,
        )
        .unwrap();
        let (l, o) = set.interpolate(DVec3::splat(1e-10), DVec3::Z).unwrap();
        assert!((l - DVec3::splat(0.2)).abs().max_element() < 1e-7);
        assert!((o - 0.9).abs() < 1e-7);
    }

    #[test]
    fn interpolation_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes: Vec<Probe> = (0..500).map(|_| random_probe(&mut rng, 2.0)).collect();
        let set = ProbeSet::new(probes, 1.0).unwrap();
        for _ in 0..2000 {
            let x = DVec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = uniform_sphere_dir(rng.gen(), rng.gen());
            let nb = set.neighborhood(x);
            if nb.is_empty() {
                continue;
            }
            let (l, o) = nb.sample(d);
            let vals: Vec<(DVec3, f64)> = nb
                .weights()
                .map(|(i, w)| {
                    assert!(w > 0.0);
                    let p = &set.probes()[i];
                    (p.radiance.sample_rgb(d), p.occlusion.sample_scalar(d))
                })
                .collect();
            let lo = vals.iter().fold(DVec3::INFINITY, |a, v| a.min(v.0));
            let hi = vals.iter().fold(DVec3::NEG_INFINITY, |a, v| a.max(v.0));
            assert!(l.cmpge(lo - 1e-9).all() && l.cmple(hi + 1e-9).all());
            let (olo, ohi) = vals.iter().fold((1.0f64, 0.0f64), |a, v| (a.0.min(v.1), a.1.max(v.1)));
            assert!(o >= olo - 1e-9 && o <= ohi + 1e-9 && (0.0..=1.0).contains(&o));
            assert!((nb.occlusion(d) - o).abs() < 1e-12);
        }
    }

    #[test]
    fn default_radius_follows_spacing() {
        let positions: Vec<DVec3> = (0..100).map(|i| DVec3::new((i % 10) as f64, (i / 10) as f64, 0.0)).collect();
        let r = ProbeSet::default_radius(&positions);
        assert!((r - 4.0 * (2.0f64 * 81.0).sqrt() / 10.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn backface_weight_in_range(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            let d = DVec3::new(x, y, z);
            proptest::prop_assume!(d.length() > 1e-3);
            let w = backface_weight(d.normalize(), DVec3::Z);
            proptest::prop_assert!((0.01 - 1e-12..=1.01 + 1e-12).contains(&w));
        }
    }
}
