//! Run configuration: JSON file, command-line overrides and path resolution.

use std::fs;
use std::path::{Path, PathBuf};

use glam::{DQuat, DVec3};
use serde::{Deserialize, Serialize};
use sop_core::composition::{DEFAULT_REGION_MULTIPLIER, OBJECT_PROBE_COUNT, SHADOW_PROBE_COUNT};
use sop_core::gbuffer::Camera;
use sop_core::geometry::PlacementTransform;
use sop_core::lighting::{DEFAULT_EVS, ENV_OCT_SIZE, PANORAMA_SIZE};
use sop_core::probes::DEFAULT_TEX_SIZE;
use sop_core::shading::{RECONSTRUCTION_SAMPLES, RENDER_SAMPLES};

use crate::error::{CliError, CliResult};

/// One camera as written in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: DVec3,
    /// `[x, y, z, w]`; the camera looks down its local `-Z` with `+Y` up.
    pub quaternion: DQuat,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn from_camera(c: &Camera) -> Self {
        CameraSpec {
            position: c.position,
            quaternion: c.orientation,
            fov_y_deg: c.fov_y.to_degrees(),
            width: c.width,
            height: c.height,
        }
    }

    pub fn to_camera(&self) -> CliResult<Camera> {
        Camera::new(
            self.position,
            self.quaternion.normalize(),
            self.fov_y_deg.to_radians(),
            self.width,
            self.height,
        )
        .map_err(|e| CliError::Config(format!("camera: {e}")))
    }
}

/// Cameras given inline or as a path to a JSON list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSource {
    Inline(Vec<CameraSpec>),
    File(PathBuf),
}

impl Default for CameraSource {
    fn default() -> Self {
        CameraSource::Inline(Vec::new())
    }
}

impl CameraSource {
    pub fn load(&self) -> CliResult<Vec<Camera>> {
        let specs = match self {
            CameraSource::Inline(v) => v.clone(),
            CameraSource::File(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str::<Vec<CameraSpec>>(&text).map_err(|e| CliError::ConfigFile {
                    path: p.clone(),
                    source: e,
                })?
            }
        };
        specs.iter().map(CameraSpec::to_camera).collect()
    }

    fn resolve(&mut self, base: &Path) {
        if let CameraSource::File(p) = self {
            *p = resolve_path(base, p);
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, CameraSource::Inline(v) if v.is_empty())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSpec {
    pub translation: DVec3,
    /// `[x, y, z, w]`.
    pub rotation: DQuat,
    pub scale: f64,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        PlacementSpec {
            translation: DVec3::ZERO,
            rotation: DQuat::IDENTITY,
            scale: 1.0,
        }
    }
}

impl PlacementSpec {
    pub fn transform(&self) -> CliResult<PlacementTransform> {
        let xf = PlacementTransform::new(self.translation, self.rotation.normalize(), self.scale);
        xf.validate().map_err(|e| CliError::Config(format!("placement: {e}")))?;
        Ok(xf)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCounts {
    pub reconstruction: usize,
    pub rendering: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts {
            reconstruction: RECONSTRUCTION_SAMPLES,
            rendering: RENDER_SAMPLES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeCounts {
    pub object: usize,
    pub shadow: usize,
}

impl Default for ProbeCounts {
    fn default() -> Self {
        ProbeCounts {
            object: OBJECT_PROBE_COUNT,
            shadow: SHADOW_PROBE_COUNT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureSizes {
    pub probe: usize,
    pub env_oct: usize,
}

impl Default for TextureSizes {
    fn default() -> Self {
        TextureSizes {
            probe: DEFAULT_TEX_SIZE,
            env_oct: ENV_OCT_SIZE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CompleterKind {
    Identity,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub points: usize,
    pub directions: usize,
    /// Probes placed on the scene for the benchmark.
    pub probes: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            points: 100_000,
            directions: 128,
            probes: OBJECT_PROBE_COUNT,
        }
    }
}

/// All inputs of a run. Relative paths in a config file are relative to
/// that file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    pub object: Option<PathBuf>,
    pub placement: PlacementSpec,
    pub region_multiplier: f64,
    /// Views rendered by `render` and `compose`.
    pub cameras: CameraSource,
    /// Views used for depth fusion when baking scene probes; generated
    /// around the scene when empty.
    pub fusion_cameras: CameraSource,
    pub samples: SampleCounts,
    pub probes: ProbeCounts,
    pub tex: TextureSizes,
    /// Lift of probes off the surface; one percent of the target's bounding
    /// diagonal when unset.
    pub probe_offset: Option<f64>,
    /// Equirectangular HDR environment used for relighting and shadows.
    pub environment: Option<PathBuf>,
    pub object_probes: Option<PathBuf>,
    pub shadow_probes: Option<PathBuf>,
    /// Panorama capture point; just above the placement when unset.
    pub light_location: Option<DVec3>,
    pub panorama_size: [usize; 2],
    pub completer: CompleterKind,
    pub external_file: Option<PathBuf>,
    pub evs: Vec<f64>,
    pub bench: BenchSettings,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: None,
            object: None,
            placement: PlacementSpec::default(),
            region_multiplier: DEFAULT_REGION_MULTIPLIER,
            cameras: CameraSource::default(),
            fusion_cameras: CameraSource::default(),
            samples: SampleCounts::default(),
            probes: ProbeCounts::default(),
            tex: TextureSizes::default(),
            probe_offset: None,
            environment: None,
            object_probes: None,
            shadow_probes: None,
            light_location: None,
            panorama_size: [PANORAMA_SIZE.0, PANORAMA_SIZE.1],
            completer: CompleterKind::Identity,
            external_file: None,
            evs: DEFAULT_EVS.to_vec(),
            bench: BenchSettings::default(),
            seed: 0,
            out: PathBuf::from("."),
        }
    }
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads a config (or a run manifest, whose extra keys are ignored) and
    /// resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.scene,
            &mut self.object,
            &mut self.environment,
            &mut self.object_probes,
            &mut self.shadow_probes,
            &mut self.external_file,
        ]
        .into_iter()
        .flatten()
        {
            *p = resolve_path(base, p);
        }
        self.out = resolve_path(base, &self.out);
        self.cameras.resolve(base);
        self.fusion_cameras.resolve(base);
    }

    pub fn validate(&self) -> CliResult<()> {
        let counts = [
            ("samples.reconstruction", self.samples.reconstruction),
            ("samples.rendering", self.samples.rendering),
            ("probes.object", self.probes.object),
            ("probes.shadow", self.probes.shadow),
            ("bench.points", self.bench.points),
            ("bench.directions", self.bench.directions),
            ("bench.probes", self.bench.probes),
            ("panorama_size[0]", self.panorama_size[0]),
            ("panorama_size[1]", self.panorama_size[1]),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.tex.probe < 2 || self.tex.env_oct < 2 {
            return Err(CliError::Config("texture sizes must be at least 2".into()));
        }
        if !(self.region_multiplier >= 1.0) {
            return Err(CliError::Config("region_multiplier must be at least 1".into()));
        }
        if let Some(o) = self.probe_offset {
            if !(o > 0.0 && o.is_finite()) {
                return Err(CliError::Config("probe_offset must be positive".into()));
            }
        }
        if self.evs.is_empty() || self.evs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CliError::Config("evs must be non-empty and strictly increasing".into()));
        }
        self.placement.transform()?;
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("`{key}` is required (set it in the config or pass --{})", key.replace('_', "-"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings() {
        let c = RunConfig::default();
        assert_eq!((c.samples.reconstruction, c.samples.rendering), (128, 256));
        assert_eq!((c.probes.object, c.probes.shadow), (5000, 10000));
        assert_eq!((c.tex.probe, c.tex.env_oct), (16, 512));
        assert_eq!(c.evs, vec![-5.0, -2.5, 0.0]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_file_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"scene": "a/scene.surfels", "samples": {"rendering": 64},
                "cameras": [{"position": [0, 0, 5], "quaternion": [0, 0, 0, 1], "fov_y_deg": 45, "width": 8, "height": 6}]}"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.scene.unwrap(), dir.path().join("a/scene.surfels"));
        assert_eq!(c.samples.rendering, 64);
        assert_eq!(c.samples.reconstruction, 128);
        assert_eq!(c.out, dir.path().join("."));
        let cams = c.cameras.load().unwrap();
        assert_eq!(cams[0].width, 8);
        assert!((cams[0].fov_y - 45f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn camera_list_file() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CameraSpec {
            position: DVec3::new(1.0, 2.0, 3.0),
            quaternion: DQuat::from_rotation_x(0.3),
            fov_y_deg: 50.0,
            width: 4,
            height: 3,
        };
        fs::write(dir.path().join("cams.json"), serde_json::to_string(&vec![spec.clone()]).unwrap()).unwrap();
        fs::write(dir.path().join("run.json"), r#"{"cameras": "cams.json"}"#).unwrap();
        let c = RunConfig::load(&dir.path().join("run.json")).unwrap();
        let cams = c.cameras.load().unwrap();
        assert_eq!(CameraSpec::from_camera(&cams[0]).position, spec.position);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        c.probes.shadow = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.evs = vec![0.0, -1.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.placement.scale = -1.0;
        assert!(c.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.json"), r#"{"samples": {"renderin": 3}}"#).unwrap();
        let err = RunConfig::load(&dir.path().join("bad.json")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn serialization_round_trip() {
        let mut c = RunConfig::default();
        c.scene = Some("/x/scene.surfels".into());
        c.light_location = Some(DVec3::new(1.0, 2.0, 3.0));
        c.cameras = CameraSource::File("/x/cams.json".into());
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
