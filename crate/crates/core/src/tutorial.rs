//! A small synthetic scene used by the CLI walkthrough and the tests:
//! a Z-up ground plane with a sphere on it, a second sphere to insert and a
//! procedural sky.

use std::f64::consts::PI;

use glam::{DQuat, DVec2, DVec3};

use crate::gbuffer::Camera;
use crate::geometry::{PlacementTransform, Surfel, SurfelScene};
use crate::lighting::equirect_pixel_dir;
use crate::raster::Image;

/// Kernel sigma as a fraction of the surfel spacing; dense enough that a
/// surface is opaque between centers.
const SIGMA_PER_SPACING: f64 = 0.8;

pub const GROUND_HALF_SIZE: f64 = 5.0;
pub const GROUND_SPACING: f64 = 0.1;
pub const SPHERE_CENTER: DVec3 = DVec3::new(-1.8, -0.6, 0.7);
pub const SPHERE_RADIUS: f64 = 0.7;
pub const OBJECT_RADIUS: f64 = 0.5;

/// Direction toward the sun of [`synthetic_sky`].
pub fn sun_direction() -> DVec3 {
    let (elev, azim) = (40f64.to_radians(), 135f64.to_radians());
    DVec3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin())
}

/// Square grid of surfels in the plane `z = height`, facing `+Z`.
pub fn ground_plane(half_size: f64, spacing: f64, height: f64, color: DVec3, albedo: DVec3) -> Vec<Surfel> {
    let n = (2.0 * half_size / spacing).round() as usize;
    let sigma = DVec2::splat(SIGMA_PER_SPACING * spacing);
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let c = DVec3::new(
                -half_size + (i as f64 + 0.5) * spacing,
                -half_size + (j as f64 + 0.5) * spacing,
                height,
            );
            // faint checker so renders are readable
            let tint = if ((c.x.floor() + c.y.floor()) as i64).rem_euclid(2) == 0 { 1.0 } else { 0.85 };
            out.push(Surfel {
                color: color * tint,
                albedo: albedo * tint,
                roughness: 0.9,
                metallic: 0.0,
                ..Surfel::facing(c, DVec3::Z, sigma)
            });
        }
    }
    out
}

/// `count` surfels on a Fibonacci lattice over a sphere, facing outward.
pub fn surfel_sphere(center: DVec3, radius: f64, count: usize, color: DVec3, albedo: DVec3, roughness: f64, metallic: f64) -> Vec<Surfel> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let spacing = radius * (4.0 * PI / count as f64).sqrt();
    let sigma = DVec2::splat(SIGMA_PER_SPACING * spacing);
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            let d = DVec3::new(r * a.cos(), r * a.sin(), z);
            // simple sky/ground shading baked into the radiance color
            let light = 0.55 + 0.45 * d.z.max(0.0) + 0.3 * d.dot(sun_direction()).max(0.0);
            Surfel {
                color: color * light,
                albedo,
                roughness,
                metallic,
                ..Surfel::facing(center + d * radius, d, sigma)
            }
        })
        .collect()
}

pub fn tutorial_scene() -> SurfelScene {
    let mut surfels = ground_plane(
        GROUND_HALF_SIZE,
        GROUND_SPACING,
        0.0,
        DVec3::new(0.55, 0.5, 0.45),
        DVec3::new(0.6, 0.55, 0.5),
    );
    surfels.extend(surfel_sphere(
        SPHERE_CENTER,
        SPHERE_RADIUS,
        3000,
        DVec3::new(0.35, 0.45, 0.7),
        DVec3::new(0.3, 0.4, 0.8),
        0.5,
        0.0,
    ));
    SurfelScene::new(surfels)
}

/// The object to insert, centered at its local origin.
pub fn tutorial_object() -> SurfelScene {
    SurfelScene::new(surfel_sphere(
        DVec3::ZERO,
        OBJECT_RADIUS,
        2000,
        DVec3::new(0.8, 0.3, 0.25),
        DVec3::new(0.85, 0.3, 0.2),
        0.4,
        0.1,
    ))
}

/// Rests the object on the ground next to the scene sphere.
pub fn tutorial_placement() -> PlacementTransform {
    PlacementTransform::new(DVec3::new(0.6, -0.4, OBJECT_RADIUS), DQuat::IDENTITY, 1.0)
}

/// Where the lighting is estimated: just above the placement.
pub fn tutorial_light_probe_location() -> DVec3 {
    tutorial_placement().translation + DVec3::new(0.0, 0.0, OBJECT_RADIUS + 0.3)
}

/// Main viewpoint.
pub fn tutorial_view(width: usize, height: usize) -> Camera {
    Camera::look_at(
        DVec3::new(5.5, -5.0, 3.2),
        DVec3::new(0.0, 0.0, 0.4),
        DVec3::Z,
        45f64.to_radians(),
        width,
        height,
    )
    .expect("tutorial camera")
}

/// Ring of views around the scene, used for depth fusion.
pub fn tutorial_cameras(width: usize, height: usize) -> Vec<Camera> {
    let mut cams = Vec::new();
    for (count, radius, z) in [(8, 9.0, 5.0), (6, 5.0, 1.5)] {
        for k in 0..count {
            let a = 2.0 * PI * (k as f64 + 0.25) / count as f64;
            let pos = DVec3::new(radius * a.cos(), radius * a.sin(), z);
            cams.push(Camera::look_at(pos, DVec3::new(0.0, 0.0, 0.3), DVec3::Z, 60f64.to_radians(), width, height).expect("ring camera"));
        }
    }
    cams.push(
        Camera::look_at(DVec3::new(0.0, 0.01, 12.0), DVec3::ZERO, DVec3::Y, 60f64.to_radians(), width, height).expect("top camera"),
    );
    cams
}

/// Radiance of the procedural sky in direction `d`.
pub fn sky_radiance(d: DVec3) -> DVec3 {
    let d = d.normalize();
    if d.dot(sun_direction()) > 2f64.to_radians().cos() {
        return DVec3::new(400.0, 370.0, 320.0);
    }
    if d.z >= 0.0 {
        let t = d.z.sqrt();
        DVec3::new(1.1, 1.1, 1.15).lerp(DVec3::new(0.35, 0.55, 1.1), t)
    } else {
        DVec3::new(0.3, 0.27, 0.24)
    }
}

/// Equirectangular HDR sky with a sun disc.
pub fn synthetic_sky(width: usize, height: usize) -> Image {
    Image::from_fn(width, height, 3, |x, y, px| {
        px.copy_from_slice(&sky_radiance(equirect_pixel_dir(x, y, width, height)).to_array());
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Ray;

    #[test]
    fn ground_is_opaque_between_centers() {
        let g = SurfelScene::new(ground_plane(1.0, 0.1, 0.0, DVec3::ONE, DVec3::ONE));
        for p in [DVec2::new(0.0, 0.0), DVec2::new(0.05, 0.05), DVec2::new(0.123, -0.31)] {
            let t = g.transmittance(&Ray::new(DVec3::new(p.x, p.y, 1.0), -DVec3::Z));
            assert!(t < 0.02, "{t}");
        }
    }

    #[test]
    fn sphere_is_closed() {
        let s = SurfelScene::new(surfel_sphere(DVec3::ZERO, 1.0, 2000, DVec3::ONE, DVec3::ONE, 0.5, 0.0));
        let mut worst: f64 = 0.0;
        for i in 0..200 {
            let d = crate::octmap::uniform_sphere_dir((i as f64 + 0.5) / 200.0, (i as f64 * 0.618).fract());
            worst = worst.max(s.transmittance(&Ray::new(DVec3::ZERO, d)));
        }
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn scene_layout() {
        let scene = tutorial_scene();
        assert!(scene.surfels().iter().all(|s| s.validate().is_ok()));
        let b = scene.center_bounds();
        assert!(b.min.z.abs() < 1e-12 && (b.max.z - 1.4).abs() < 0.01);
        let placed = tutorial_object().transformed(&tutorial_placement());
        assert!((placed.center_bounds().min.z).abs() < 0.01);
        // the inserted object does not intersect the scene sphere
        assert!((tutorial_placement().translation - SPHERE_CENTER).length() > SPHERE_RADIUS + OBJECT_RADIUS);
        for cam in tutorial_cameras(32, 24) {
            assert!(cam.project(DVec3::ZERO).is_some());
        }
        assert!(tutorial_view(32, 18).project(tutorial_placement().translation).is_some());
    }

    #[test]
    fn sky_has_a_sun() {
        let sky = synthetic_sky(256, 128);
        assert!(sky.all_finite());
        assert!(sky.data().iter().cloned().fold(0.0, f64::max) >= 300.0);
        assert!(sky_radiance(DVec3::Z).z > sky_radiance(-DVec3::Z).z);
    }
}
