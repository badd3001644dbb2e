use std::ops::ControlFlow;
use std::time::Instant;

use glam::DVec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ProbeSet, SurfacePoints};
use crate::geometry::{Ray, SurfelScene, TRANSMITTANCE_STOP};
use crate::octmap::{hammersley, uniform_hemisphere_dir};
use crate::seed;

/// A query position and a direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryPair {
    pub point: DVec3,
    pub dir: DVec3,
    /// Normal of the surface the point was lifted from.
    pub normal: DVec3,
}

/// How query directions are spread over the hemisphere about the normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryDirections {
    Uniform,
    /// Density proportional to `cos(theta)`, as in the shading integral.
    Cosine,
}

/// Random surface samples lifted by `offset` along their normals, each with
/// a direction on the hemisphere about the normal.
pub fn near_surface_queries(
    surface: &SurfacePoints,
    offset: f64,
    count: usize,
    seed_value: u64,
    directions: QueryDirections,
) -> Vec<QueryPair> {
    let mut rng = seed::rng(seed_value);
    (0..count)
        .map(|_| {
            let k = rng.gen_range(0..surface.len());
            let n = surface.normals[k];
            let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
            let cos_theta = match directions {
                QueryDirections::Uniform => u1,
                QueryDirections::Cosine => u1.sqrt(),
            };
            QueryPair {
                point: surface.points[k] + offset * n,
                dir: uniform_hemisphere_dir(cos_theta, u2, n),
                normal: n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub count: usize,
    pub mean_occlusion_error: f64,
    pub p95_occlusion_error: f64,
    /// Channel-averaged absolute radiance error.
    pub mean_radiance_error: f64,
    pub p95_radiance_error: f64,
    /// Queries with no probe in range.
    pub fallbacks: usize,
    pub interp_seconds: f64,
    pub trace_seconds: f64,
}

fn traced(scene: &SurfelScene, ray: &Ray) -> (DVec3, f64) {
    let surfels = scene.surfels();
    let mut color = DVec3::ZERO;
    let mut transmittance = 1.0;
    scene.visit_ordered(ray, |hit| {
        color += transmittance * hit.alpha * surfels[hit.surfel_index].color;
        transmittance *= 1.0 - hit.alpha;
        if transmittance < TRANSMITTANCE_STOP {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    (color, 1.0 - transmittance)
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let at = ((v.len() - 1) as f64 * q).round() as usize;
    v[at]
}

/// Compares probe interpolation against ray tracing at each query.
pub fn interpolated_vs_traced_error(scene: &SurfelScene, set: &ProbeSet, queries: &[QueryPair]) -> ErrorReport {
    scene.accel();
    let start = Instant::now();
    let interp: Vec<Option<(DVec3, f64)>> = queries.par_iter().map(|q| set.interpolate(q.point, q.dir)).collect();
    let interp_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let exact: Vec<(DVec3, f64)> = queries.par_iter().map(|q| traced(scene, &Ray::new(q.point, q.dir))).collect();
    let trace_seconds = start.elapsed().as_secs_f64();

    let mut occ = Vec::with_capacity(queries.len());
    let mut rad = Vec::with_capacity(queries.len());
    let mut fallbacks = 0;
    for (i, e) in interp.iter().zip(&exact) {
        let (l, o) = i.unwrap_or_else(|| {
            fallbacks += 1;
            (DVec3::ZERO, 0.0)
        });
        occ.push((o - e.1).abs());
        rad.push((l - e.0).abs().element_sum() / 3.0);
    }
    let n = queries.len().max(1) as f64;
    ErrorReport {
        count: queries.len(),
        mean_occlusion_error: occ.iter().sum::<f64>() / n,
        p95_occlusion_error: percentile(occ, 0.95),
        mean_radiance_error: rad.iter().sum::<f64>() / n,
        p95_radiance_error: percentile(rad, 0.95),
        fallbacks,
        interp_seconds,
        trace_seconds,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub points: usize,
    pub directions: usize,
    pub trace_seconds: f64,
    pub probe_seconds: f64,
    /// Occlusion queries per second along each path.
    pub trace_throughput: f64,
    pub probe_throughput: f64,
    pub speedup: f64,
    /// Mean |O_probe - O_traced| over every query of the run.
    pub mean_abs_difference: f64,
}

/// Occlusion throughput of probe interpolation against BVH tracing for the
/// same `directions` Hammersley hemisphere directions at every point.
pub fn bench_occlusion(scene: &SurfelScene, set: &ProbeSet, points: &[(DVec3, DVec3)], directions: usize) -> BenchReport {
    scene.accel();
    let count = directions.max(1) as u32;
    let dirs_for = |n: DVec3| (0..count).map(move |i| {
        let (u1, u2) = hammersley(i, count);
        uniform_hemisphere_dir(u1, u2, n)
    });

    let start = Instant::now();
    let probe: Vec<f64> = points
        .par_iter()
        .map(|&(x, n)| {
            let nb = set.neighborhood(x);
            dirs_for(n).map(|d| nb.occlusion(d)).sum()
        })
        .collect();
    let probe_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let trace: Vec<f64> = points
        .par_iter()
        .map(|&(x, n)| dirs_for(n).map(|d| 1.0 - scene.transmittance(&Ray::new(x, d))).sum())
        .collect();
    let trace_seconds = start.elapsed().as_secs_f64();

    let queries = (points.len() * count as usize) as f64;
    let diff: f64 = probe.iter().zip(&trace).map(|(a, b)| (a - b).abs()).sum::<f64>() / queries.max(1.0);
    BenchReport {
        points: points.len(),
        directions: count as usize,
        trace_seconds,
        probe_seconds,
        trace_throughput: queries / trace_seconds.max(1e-12),
        probe_throughput: queries / probe_seconds.max(1e-12),
        speedup: trace_seconds / probe_seconds.max(1e-12),
        mean_abs_difference: diff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surfel;
    use crate::probes::{bake_probes, farthest_point_sample, place_probes};
    use glam::DVec2;

    fn plane(n: i32, step: f64) -> SurfelScene {
        let mut surfels = Vec::new();
        for j in -n..n {
            for i in -n..n {
                surfels.push(Surfel {
                    color: DVec3::new(0.5, 0.4, 0.3),
                    ..Surfel::facing(DVec3::new(i as f64 * step, j as f64 * step, 0.0), DVec3::Z, DVec2::splat(step))
                });
            }
        }
        SurfelScene::new(surfels)
    }

    fn plane_points(extent: f64, n: usize) -> SurfacePoints {
        let mut s = SurfacePoints::default();
        for j in 0..n {
            for i in 0..n {
                let t = |k: usize| -extent + 2.0 * extent * (k as f64 + 0.5) / n as f64;
                s.points.push(DVec3::new(t(i), t(j), 0.0));
                s.normals.push(DVec3::Z);
            }
        }
        s
    }

    #[test]
    fn plane_probes_reproduce_tracing_and_detect_staleness() {
        let scene = plane(40, 0.1);
        let surface = plane_points(3.0, 100);
        let pick = farthest_point_sample(&surface.points, 600, 0).unwrap();
        let chosen = surface.select(&pick);
        let placed = place_probes(&chosen.points, &chosen.normals, 0.02).unwrap();
        let set = ProbeSet::with_default_radius(bake_probes(&scene, &placed, 16)).unwrap();
        let queries = near_surface_queries(&surface, 0.02, 3000, 1, QueryDirections::Uniform);
        let fresh = interpolated_vs_traced_error(&scene, &set, &queries);
        assert!(fresh.mean_occlusion_error < 0.05, "{fresh:?}");
        assert_eq!(fresh.fallbacks, 0);

        // lift a blocker over part of the plane without re-baking
        let mut mutated = scene.surfels().to_vec();
        for j in -10..10 {
            for i in -10..10 {
                mutated.push(Surfel::facing(DVec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.3), DVec3::Z, DVec2::splat(0.1)));
            }
        }
        let stale = interpolated_vs_traced_error(&SurfelScene::new(mutated), &set, &queries);
        assert!(stale.mean_occlusion_error > fresh.mean_occlusion_error + 0.02, "{stale:?}");
    }

    #[test]
    fn bench_runs_with_one_probe() {
        let scene = plane(5, 0.2);
        let placed = vec![(DVec3::new(0.0, 0.0, 0.05), DVec3::Z)];
        let set = ProbeSet::new(bake_probes(&scene, &placed, 8), 1.0).unwrap();
        let report = bench_occlusion(&scene, &set, &[(DVec3::new(0.1, 0.0, 0.05), DVec3::Z)], 16);
        assert_eq!((report.points, report.directions), (1, 16));
        assert!(report.speedup.is_finite() && report.speedup > 0.0);
    }
}
