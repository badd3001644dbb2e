use std::ops::ControlFlow;

use glam::DVec3;
use rayon::prelude::*;

use super::Probe;
use crate::geometry::{Ray, SurfelScene, TRANSMITTANCE_STOP};
use crate::octmap::OctTexture;

/// Traced radiance and occlusion textures of one probe.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBake {
    pub radiance: OctTexture,
    pub occlusion: OctTexture,
}

/// Traces one unbounded ray per texel center: occlusion is one minus the
/// transmittance, radiance the front-to-back blended surfel color.
pub fn bake_probe(scene: &SurfelScene, position: DVec3, tex_size: usize) -> ProbeBake {
    let mut radiance = OctTexture::new(tex_size, 3);
    let mut occlusion = OctTexture::new(tex_size, 1);
    if scene.is_empty() {
        return ProbeBake { radiance, occlusion };
    }
    let surfels = scene.surfels();
    for j in 0..tex_size {
        for i in 0..tex_size {
            let dir = radiance.texel_center_dir(i, j);
            let ray = Ray::new(position, dir);
            let mut color = DVec3::ZERO;
            let mut transmittance = 1.0;
            scene.visit_ordered(&ray, |hit| {
                color += transmittance * hit.alpha * surfels[hit.surfel_index].color;
                transmittance *= 1.0 - hit.alpha;
                if transmittance < TRANSMITTANCE_STOP {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
            radiance.texel_mut(i, j).copy_from_slice(&color.as_vec3().to_array());
            occlusion.texel_mut(i, j)[0] = (1.0 - transmittance).clamp(0.0, 1.0) as f32;
        }
    }
    ProbeBake { radiance, occlusion }
}

/// Bakes every placement `(position, source normal)` in parallel.
pub fn bake_probes(scene: &SurfelScene, placements: &[(DVec3, DVec3)], tex_size: usize) -> Vec<Probe> {
    scene.accel();
    placements
        .par_iter()
        .map(|&(position, source_normal)| {
            let ProbeBake { radiance, occlusion } = bake_probe(scene, position, tex_size);
            Probe {
                position,
                source_normal,
                radiance,
                occlusion,
            }
        })
        .collect()
}
