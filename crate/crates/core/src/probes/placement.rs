use std::collections::HashSet;

use glam::DVec3;
use rayon::prelude::*;

use crate::gbuffer::{render_gbuffers, unbiased_depth, Camera};
use crate::geometry::SurfelScene;
use crate::{Error, Result};

/// Fusion deduplicates points on a voxel grid of `diagonal / 512`.
pub const FUSION_VOXEL_DIVISOR: f64 = 512.0;

/// Pixels blended from less coverage than this are silhouette fringes whose
/// depth and normal are unreliable; fusion skips them.
pub const FUSION_MIN_COVERAGE: f64 = 0.5;

/// Surface samples with unit normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfacePoints {
    pub points: Vec<DVec3>,
    pub normals: Vec<DVec3>,
}

impl SurfacePoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> SurfacePoints {
        SurfacePoints {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

/// Multi-view depth fusion: back-projects every valid, mostly covered pixel
/// of every view and keeps the first point landing in each voxel.
pub fn fuse_surface_points(scene: &SurfelScene, cams: &[Camera]) -> Result<SurfacePoints> {
    fuse_surface_points_where(scene, cams, |_| true)
}

/// [`fuse_surface_points`] keeping only points accepted by `keep`.
pub fn fuse_surface_points_where(
    scene: &SurfelScene,
    cams: &[Camera],
    keep: impl Fn(DVec3) -> bool,
) -> Result<SurfacePoints> {
    if cams.is_empty() {
        return Err(Error::invalid("depth fusion needs at least one camera"));
    }
    let voxel = scene.bounds().diagonal() / FUSION_VOXEL_DIVISOR;
    let mut seen: HashSet<[i64; 3]> = HashSet::new();
    let mut out = SurfacePoints::default();
    for cam in cams {
        let g = render_gbuffers(scene, cam);
        let depth = unbiased_depth(&g);
        for (k, d) in depth.values.iter().enumerate() {
            let (Some(d), n) = (d, g.normal[k]) else { continue };
            if n == DVec3::ZERO || g.weight[k] < FUSION_MIN_COVERAGE {
                continue;
            }
            let p = cam.position + *d * cam.pixel_center_direction(k % cam.width, k / cam.width);
            if !keep(p) {
                continue;
            }
            let key = if voxel > 0.0 {
                let q = (p / voxel).floor();
                [q.x as i64, q.y as i64, q.z as i64]
            } else {
                [0; 3]
            };
            if seen.insert(key) {
                out.points.push(p);
                out.normals.push(n);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoSurfaceCoverage);
    }
    Ok(out)
}

/// Greedy max–min subsampling from `start`. Ties go to the lower index.
pub fn farthest_point_sample(points: &[DVec3], k: usize, start: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::invalid(format!("cannot pick {k} of {} points", points.len())));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(Error::invalid("start index out of range"));
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut chosen = Vec::with_capacity(k);
    let mut current = start;
    const CHUNK: usize = 4096;
    for _ in 0..k {
        chosen.push(current);
        let c = points[current];
        // per-chunk (distance, index) of the farthest point, merged in order
        let best = dist
            .par_chunks_mut(CHUNK)
            .zip(points.par_chunks(CHUNK))
            .enumerate()
            .map(|(ci, (d, p))| {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for (j, (dj, pj)) in d.iter_mut().zip(p).enumerate() {
                    let nd = pj.distance_squared(c);
                    if nd < *dj {
                        *dj = nd;
                    }
                    if *dj > best.0 {
                        best = (*dj, ci * CHUNK + j);
                    }
                }
                best
            })
            .reduce(
                || (f64::NEG_INFINITY, usize::MAX),
                |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        current = best.1;
    }
    Ok(chosen)
}

/// Probe position `point + offset · normal`, keeping the normal.
pub fn place_probes(points: &[DVec3], normals: &[DVec3], offset: f64) -> Result<Vec<(DVec3, DVec3)>> {
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(Error::invalid("probe offset must be positive"));
    }
    if points.len() != normals.len() {
        return Err(Error::DimensionMismatch("points and normals differ in length".into()));
    }
    Ok(points
        .iter()
        .zip(normals)
        .map(|(&p, &n)| {
            let n = n.normalize();
            (p + offset * n, n)
        })
        .collect())
}

/// One percent of the object's bounding-box diagonal.
pub fn default_offset(object: &SurfelScene) -> f64 {
    0.01 * object.bounds().diagonal()
}

/// Probes built on a scene along with the surface samples they came from.
#[derive(Clone, Debug)]
pub struct BuiltProbes {
    pub probes: Vec<super::Probe>,
    /// Every fused surface point, before subsampling.
    pub surface: SurfacePoints,
}

/// Fuses `cams`, keeps `count` farthest points, lifts them by `offset` and
/// bakes each probe against `scene`.
pub fn build_probes(scene: &SurfelScene, cams: &[Camera], count: usize, tex_size: usize, offset: f64) -> Result<BuiltProbes> {
    if count == 0 {
        return Err(Error::invalid("probe count must be at least 1"));
    }
    let surface = fuse_surface_points(scene, cams)?;
    let picked = farthest_point_sample(&surface.points, count.min(surface.len()), 0)?;
    let chosen = surface.select(&picked);
    let placements = place_probes(&chosen.points, &chosen.normals, offset)?;
    Ok(BuiltProbes {
        probes: super::bake_probes(scene, &placements, tex_size),
        surface,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surfel;
    use glam::{DQuat, DVec2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad(n: usize, z: f64) -> SurfelScene {
        let step = 2.0 / n as f64;
        let mut surfels = Vec::new();
        for j in 0..n {
            for i in 0..n {
                surfels.push(Surfel::facing(
                    DVec3::new(-1.0 + (i as f64 + 0.5) * step, -1.0 + (j as f64 + 0.5) * step, z),
                    DVec3::Z,
                    DVec2::splat(step),
                ));
            }
        }
        SurfelScene::new(surfels)
    }

    #[test]
    fn fused_points_lie_on_the_plane() {
        let scene = quad(40, 0.0);
        let cam = Camera::look_at(DVec3::new(0.3, -0.2, 3.0), DVec3::ZERO, DVec3::Y, 0.8, 96, 96).unwrap();
        let pts = fuse_surface_points(&scene, &[cam]).unwrap();
        assert!(pts.len() > 1000);
        for (p, n) in pts.points.iter().zip(&pts.normals) {
            assert!(p.z.abs() < 1e-3, "{p}");
            assert!((*n - DVec3::Z).length() < 1e-9);
        }
    }

    #[test]
    fn empty_scene_has_no_coverage() {
        let cam = Camera::new(DVec3::ZERO, DQuat::IDENTITY, 1.0, 8, 8).unwrap();
        assert!(matches!(fuse_surface_points(&SurfelScene::empty(), &[cam]), Err(Error::NoSurfaceCoverage)));
        assert!(fuse_surface_points(&quad(4, -2.0), &[]).is_err());
    }

    #[test]
    fn second_view_is_deduplicated() {
        // pixel footprint below the dedup voxel so overlapping views collapse
        let scene = quad(60, 0.0);
        let a = Camera::look_at(DVec3::new(0.0, 0.0, 2.5), DVec3::ZERO, DVec3::Y, 0.35, 640, 640).unwrap();
        let b = Camera::look_at(DVec3::new(0.05, 0.02, 2.5), DVec3::ZERO, DVec3::Y, 0.35, 640, 640).unwrap();
        let single = fuse_surface_points(&scene, &[a]).unwrap().len() as f64;
        let both = fuse_surface_points(&scene, &[a, b]).unwrap().len() as f64;
        assert!(both / single < 1.2, "{both} vs {single}");
    }

    #[test]
    fn fps_on_a_line() {
        let pts: Vec<DVec3> = (0..=10).map(|i| DVec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(farthest_point_sample(&pts, 3, 0).unwrap(), vec![0, 10, 5]);
        let mut all = farthest_point_sample(&pts, 11, 0).unwrap();
        all.sort();
        assert_eq!(all, (0..=10).collect::<Vec<_>>());
        assert!(farthest_point_sample(&pts, 12, 0).is_err());
    }

    fn min_pairwise(points: &[DVec3], idx: &[usize]) -> f64 {
        let mut m = f64::INFINITY;
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                m = m.min(points[idx[a]].distance(points[idx[b]]));
            }
        }
        m
    }

    #[test]
    fn fps_spreads_better_than_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<DVec3> = (0..5000).map(|_| DVec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let fps = min_pairwise(&pts, &farthest_point_sample(&pts, 64, 0).unwrap());
        let mut random: Vec<f64> = (0..100)
            .map(|_| {
                let idx: Vec<usize> = rand::seq::index::sample(&mut rng, pts.len(), 64).into_vec();
                min_pairwise(&pts, &idx)
            })
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(fps >= random[50], "{fps} vs median {}", random[50]);
    }

    #[test]
    fn fps_ignores_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<DVec3> = (0..2000).map(|_| DVec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.reverse();
        perm.swap(3, 77);
        let shuffled: Vec<DVec3> = perm.iter().map(|&i| pts[i]).collect();
        let start_shuffled = perm.iter().position(|&i| i == 0).unwrap();
        let a: Vec<DVec3> = farthest_point_sample(&pts, 50, 0).unwrap().iter().map(|&i| pts[i]).collect();
        let b: Vec<DVec3> = farthest_point_sample(&shuffled, 50, start_shuffled)
            .unwrap()
            .iter()
            .map(|&i| shuffled[i])
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_placement_offsets_along_normal() {
        let placed = place_probes(&[DVec3::ZERO], &[DVec3::Z], 0.05).unwrap();
        assert_eq!(placed, vec![(DVec3::new(0.0, 0.0, 0.05), DVec3::Z)]);
        assert!(place_probes(&[DVec3::ZERO], &[DVec3::Z], 0.0).is_err());
    }
}
