use std::ops::ControlFlow;
use std::sync::OnceLock;

use super::{Aabb, Bvh, PlacementTransform, Ray, Surfel, SurfelHit};

/// Traversal stops once accumulated transmittance drops below this value.
pub const TRANSMITTANCE_STOP: f64 = 1e-3;

/// A list of surfels with cached bounds and a lazily built BVH.
///
/// The scene is immutable once constructed; the BVH is built on first use
/// and is shared by all readers.
#[derive(Debug, Default)]
pub struct SurfelScene {
    surfels: Vec<Surfel>,
    bounds: Aabb,
    accel: OnceLock<Bvh>,
}

impl Clone for SurfelScene {
    fn clone(&self) -> Self {
        SurfelScene::new(self.surfels.clone())
    }
}

impl SurfelScene {
    pub fn new(surfels: Vec<Surfel>) -> Self {
        let bounds = surfels.iter().fold(Aabb::EMPTY, |b, s| b.union(s.bounds()));
        SurfelScene {
            surfels,
            bounds,
            accel: OnceLock::new(),
        }
    }

    pub fn empty() -> Self {
        SurfelScene::new(Vec::new())
    }

    /// Concatenates two scenes.
    pub fn merged(&self, other: &SurfelScene) -> Self {
        let mut surfels = self.surfels.clone();
        surfels.extend_from_slice(&other.surfels);
        SurfelScene::new(surfels)
    }

    pub fn surfels(&self) -> &[Surfel] {
        &self.surfels
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    /// Box enclosing every truncated surfel disc.
    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    /// Box enclosing the surfel centers; used as the object's dimensions.
    pub fn center_bounds(&self) -> Aabb {
        Aabb::from_points(self.surfels.iter().map(|s| &s.center))
    }

    pub fn accel(&self) -> &Bvh {
        self.accel.get_or_init(|| Bvh::build(&self.surfels))
    }

    pub fn has_accel(&self) -> bool {
        self.accel.get().is_some()
    }

    /// Visits hits front to back until `visit` breaks.
    pub fn visit_ordered<F>(&self, ray: &Ray, visit: F)
    where
        F: FnMut(&SurfelHit) -> ControlFlow<()>,
    {
        self.accel().visit_ordered(&self.surfels, ray, visit)
    }

    /// Front-to-back hits, stopping after the hit that brings the
    /// accumulated transmittance below `t_stop`.
    pub fn trace_ordered(&self, ray: &Ray, t_stop: f64) -> Vec<SurfelHit> {
        let mut hits = Vec::new();
        let mut transmittance = 1.0;
        self.visit_ordered(ray, |hit| {
            hits.push(*hit);
            transmittance *= 1.0 - hit.alpha;
            if transmittance < t_stop {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        hits
    }

    /// Product of `1 - alpha` over the ordered hits; 1 means unoccluded.
    pub fn transmittance(&self, ray: &Ray) -> f64 {
        let mut transmittance = 1.0;
        self.visit_ordered(ray, |hit| {
            transmittance *= 1.0 - hit.alpha;
            if transmittance < TRANSMITTANCE_STOP {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        transmittance
    }

    /// Applies a placement; the result has no acceleration structure yet.
    pub fn transformed(&self, xf: &PlacementTransform) -> SurfelScene {
        SurfelScene::new(self.surfels.iter().map(|s| xf.apply_surfel(s)).collect())
    }
}
