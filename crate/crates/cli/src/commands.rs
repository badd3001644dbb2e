//! Subcommand implementations. Each returns the JSON value it prints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use glam::DVec3;
use serde::Serialize;
use serde_json::{json, Value};
use sop_core::composition::{
    cache_occlusion, compose_view, define_shadow_region, Insertion, ShadowField, ShadowFieldOptions, ShadowRegion,
};
use sop_core::gbuffer::{render_gbuffers, Camera};
use sop_core::geometry::{load_surfels, save_surfels, Aabb, SurfelScene};
use sop_core::hdr::{load_hdr, save_hdr};
use sop_core::lighting::{
    capture_panorama, complete_panorama, fuse_hdr, synthesize_ev_stack, Completer, HdrEnvironment, PartialPanorama,
};
use sop_core::metrics::{report, ImagePair};
use sop_core::probes::{
    bench_occlusion, build_probes, default_offset, load_probes, near_surface_queries, save_probes, Probe, ProbeSet,
    QueryDirections,
};
use sop_core::raster::{decode_gamma, load_png_rgb, Image};
use sop_core::seed::{derive_seed, item_seed};
use sop_core::shading::Environment;
use sop_core::tutorial;

use crate::config::{CameraSource, CameraSpec, CompleterKind, RunConfig};
use crate::error::{CliError, CliResult};

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Resolution of generated fusion views.
const FUSION_RESOLUTION: (usize, usize) = (256, 192);

#[derive(Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

#[derive(Serialize)]
struct RunRecord {
    command: String,
    version: &'static str,
    threads: usize,
    timings: Vec<Timing>,
    outputs: Vec<PathBuf>,
    counters: BTreeMap<String, Value>,
}

/// Written next to the outputs; loading it as a config reproduces the run.
#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    run: &'a RunRecord,
}

/// Timing, output and counter bookkeeping for one command.
pub struct Run {
    pub cfg: RunConfig,
    record: RunRecord,
}

impl Run {
    pub fn new(command: &str, cfg: RunConfig) -> CliResult<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
        Ok(Run {
            cfg,
            record: RunRecord {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                threads: rayon::current_num_threads(),
                timings: Vec::new(),
                outputs: Vec::new(),
                counters: BTreeMap::new(),
            },
        })
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        let seconds = t.elapsed().as_secs_f64();
        log::info!("{name}: {seconds:.3}s");
        self.record.timings.push(Timing {
            stage: name.to_string(),
            seconds,
        });
        v
    }

    fn timing(&mut self, name: String, seconds: f64) {
        self.record.timings.push(Timing { stage: name, seconds });
    }

    fn out_path(&mut self, name: &str) -> PathBuf {
        let p = self.cfg.out.join(name);
        self.record.outputs.push(p.clone());
        p
    }

    fn count(&mut self, key: &str, v: impl Into<Value>) {
        self.record.counters.insert(key.to_string(), v.into());
    }

    /// Writes `<command>.manifest.json` and returns the run record as JSON.
    pub fn finish(mut self) -> CliResult<Value> {
        let path = self.cfg.out.join(format!("{}.manifest.json", self.record.command));
        self.record.outputs.push(path.clone());
        let manifest = Manifest {
            config: &self.cfg,
            run: &self.record,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(json!({
            "command": self.record.command,
            "manifest": path,
            "counters": self.record.counters,
        }))
    }
}

fn load_scene(cfg: &RunConfig) -> CliResult<SurfelScene> {
    let path = cfg.require(&cfg.scene, "scene")?;
    Ok(load_surfels(path)?)
}

/// The object with its placement applied, if one is configured.
fn load_placed_object(cfg: &RunConfig) -> CliResult<Option<(SurfelScene, SurfelScene)>> {
    let Some(path) = &cfg.object else {
        return Ok(None);
    };
    let object = load_surfels(path)?;
    let placed = object.transformed(&cfg.placement.transform()?);
    Ok(Some((object, placed)))
}

fn load_environment(cfg: &RunConfig) -> CliResult<Environment> {
    let path = cfg.require(&cfg.environment, "environment")?;
    let img = load_hdr(path)?;
    Ok(HdrEnvironment::from_equirect(img, cfg.tex.env_oct)?.environment()?)
}

fn render_cameras(cfg: &RunConfig) -> CliResult<Vec<Camera>> {
    let cams = cfg.cameras.load()?;
    if cams.is_empty() {
        return Err(CliError::Config("no cameras configured".into()));
    }
    Ok(cams)
}

/// Views on rings around `bounds`, plus one from straight above (and one
/// from below when `below` is set).
pub fn orbit_cameras(bounds: &Aabb, width: usize, height: usize, below: bool) -> Vec<Camera> {
    let fov = 50f64.to_radians();
    let c = bounds.center();
    let r = (0.5 * bounds.diagonal()).max(1e-3);
    let dist = 1.05 * r / (0.5 * fov).sin();
    let mut elevations = vec![(8, 50f64), (8, 15.0)];
    if below {
        elevations.push((6, -35.0));
    }
    let mut cams = Vec::new();
    for (count, elev) in elevations {
        let e = elev.to_radians();
        for k in 0..count {
            let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5 * (elev > 20.0) as u8 as f64) / count as f64;
            let dir = DVec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
            cams.push(Camera::look_at(c + dir * dist, c, DVec3::Z, fov, width, height).expect("orbit view"));
        }
    }
    cams.push(Camera::look_at(c + DVec3::Z * dist, c, DVec3::Y, fov, width, height).expect("top view"));
    if below {
        cams.push(Camera::look_at(c - DVec3::Z * dist, c, DVec3::Y, fov, width, height).expect("bottom view"));
    }
    cams
}

fn scene_fusion_cameras(cfg: &RunConfig, scene: &SurfelScene) -> CliResult<Vec<Camera>> {
    if cfg.fusion_cameras.is_empty() {
        Ok(orbit_cameras(&scene.center_bounds(), FUSION_RESOLUTION.0, FUSION_RESOLUTION.1, false))
    } else {
        cfg.fusion_cameras.load()
    }
}

fn occlusion_stats(probes: &[Probe]) -> (f64, f64) {
    let (mut sum, mut blocked, mut n) = (0.0, 0usize, 0usize);
    for p in probes {
        for &v in p.occlusion.data() {
            sum += v as f64;
            blocked += (v > 0.5) as usize;
            n += 1;
        }
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (sum / n as f64, blocked as f64 / n as f64)
    }
}

fn bake_object_probes(cfg: &RunConfig, placed: &SurfelScene) -> CliResult<(Vec<Probe>, usize)> {
    if placed.is_empty() {
        return Err(CliError::Config("the object has no surfels".into()));
    }
    let cams = orbit_cameras(&placed.center_bounds(), FUSION_RESOLUTION.0, FUSION_RESOLUTION.0, true);
    let offset = cfg.probe_offset.unwrap_or_else(|| default_offset(placed));
    let built = build_probes(placed, &cams, cfg.probes.object, cfg.tex.probe, offset)?;
    Ok((built.probes, built.surface.len()))
}

pub fn cmd_tutorial(out: &Path, width: usize, height: usize) -> CliResult<Value> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    save_surfels(&tutorial::tutorial_scene(), out.join("scene.surfels"))?;
    save_surfels(&tutorial::tutorial_object(), out.join("object.surfels"))?;
    save_hdr(&tutorial::synthetic_sky(1024, 512), out.join("sky.hdr"))?;
    let xf = tutorial::tutorial_placement();
    let mut cfg = RunConfig {
        scene: Some("scene.surfels".into()),
        object: Some("object.surfels".into()),
        environment: Some("sky.hdr".into()),
        cameras: CameraSource::Inline(vec![CameraSpec::from_camera(&tutorial::tutorial_view(width, height))]),
        fusion_cameras: CameraSource::Inline(tutorial::tutorial_cameras(320, 240).iter().map(CameraSpec::from_camera).collect()),
        light_location: Some(tutorial::tutorial_light_probe_location()),
        ..RunConfig::default()
    };
    cfg.placement.translation = xf.translation;
    cfg.placement.rotation = xf.rotation;
    cfg.placement.scale = xf.uniform_scale;
    let path = out.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).expect("config serializes")).map_err(|e| CliError::io(&path, e))?;
    Ok(json!({ "command": "tutorial", "config": path }))
}

pub fn cmd_render(cfg: RunConfig) -> CliResult<Value> {
    let mut run = Run::new("render", cfg)?;
    let scene = load_scene(&run.cfg)?;
    let cams = render_cameras(&run.cfg)?;
    for (i, cam) in cams.iter().enumerate() {
        let g = run.stage(&format!("gbuffer_{i:03}"), || render_gbuffers(&scene, cam));
        let img = g.color_image();
        if !img.all_finite() {
            return Err(CliError::Numerical(format!("non-finite color in frame {i}")));
        }
        img.save_png(run.out_path(&format!("frame_{i:03}.png")))?;
        save_hdr(&img, run.out_path(&format!("frame_{i:03}.hdr")))?;
        let (bin, json) = g.save_planes(&run.cfg.out, &format!("gbuffer_{i:03}"))?;
        run.record.outputs.extend([bin, json]);
    }
    run.count("frames", cams.len());
    run.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BakeTarget {
    Object,
    Scene,
}

pub fn cmd_bake(cfg: RunConfig, target: BakeTarget) -> CliResult<Value> {
    let mut run = Run::new("bake", cfg)?;
    let (probes, fused, name) = match target {
        BakeTarget::Object => {
            let (_, placed) = load_placed_object(&run.cfg)?.ok_or_else(|| CliError::Config("`object` is required".into()))?;
            let cfg = run.cfg.clone();
            let (probes, fused) = run.stage("fuse_place_bake", || bake_object_probes(&cfg, &placed))?;
            (probes, fused, "object.sops")
        }
        BakeTarget::Scene => {
            let scene = load_scene(&run.cfg)?;
            let cams = scene_fusion_cameras(&run.cfg, &scene)?;
            let offset = run.cfg.probe_offset.unwrap_or_else(|| default_offset(&scene));
            let (count, tex) = (run.cfg.probes.object, run.cfg.tex.probe);
            let built = run.stage("fuse_place_bake", || build_probes(&scene, &cams, count, tex, offset))?;
            (built.probes, built.surface.len(), "scene.sops")
        }
    };
    let path = run.out_path(name);
    save_probes(&probes, run.cfg.tex.probe, &path)?;
    let (mean_occ, blocked) = occlusion_stats(&probes);
    say!(
        "fused {fused} surface points, wrote {} probes to {} (mean occlusion {mean_occ:.3}, {:.1}% texels blocked)",
        probes.len(),
        path.display(),
        100.0 * blocked
    );
    run.count("fused_points", fused);
    run.count("probes", probes.len());
    run.count("mean_occlusion", mean_occ);
    run.count("blocked_texel_fraction", blocked);
    run.finish()
}

/// Turns the captured panorama into linear radiance, filling holes with
/// the configured completer.
fn complete_to_linear(cfg: &RunConfig, pano: &PartialPanorama, run: &mut Run) -> CliResult<Image> {
    let holes = pano.alpha.iter().filter(|&&a| a <= sop_core::lighting::KNOWN_ALPHA).count();
    run.count("hole_pixels", holes);
    if holes == 0 {
        log::info!("panorama fully covered; completer bypassed");
        run.count("completer_bypassed", true);
        return Ok(pano.rgb.map(decode_gamma));
    }
    run.count("completer_bypassed", false);
    match cfg.completer {
        CompleterKind::Identity => {
            let ldr = complete_panorama(pano, &Completer::IdentityFill)?;
            Ok(ldr.map(decode_gamma))
        }
        CompleterKind::External => {
            let path = cfg.require(&cfg.external_file, "external_file")?;
            if !path.exists() {
                return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "external completion not found")));
            }
            let is_hdr = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("hdr"));
            let Completer::External(ext) = Completer::external_from_file(path)? else {
                unreachable!()
            };
            if is_hdr {
                // merge in linear space, then go through the bracketed
                // exposures a generative completer would produce
                let linear = PartialPanorama {
                    rgb: pano.rgb.map(decode_gamma),
                    normal: pano.normal.clone(),
                    alpha: pano.alpha.clone(),
                };
                let merged = complete_panorama(&linear, &Completer::External(ext))?;
                let stack = synthesize_ev_stack(&merged, &cfg.evs)?;
                run.count("exposures", stack.len());
                Ok(fuse_hdr(&stack))
            } else {
                Ok(complete_panorama(pano, &Completer::External(ext))?.map(decode_gamma))
            }
        }
    }
}

pub fn cmd_estimate_light(cfg: RunConfig) -> CliResult<Value> {
    let mut run = Run::new("estimate-light", cfg)?;
    let scene = load_scene(&run.cfg)?;
    let at = run.cfg.light_location.unwrap_or(run.cfg.placement.translation);
    let [h, w] = run.cfg.panorama_size;
    let pano = run.stage("capture", || capture_panorama(&scene, at, h, w));
    pano.rgb.save_png(run.out_path("panorama_partial.png"))?;
    pano.alpha_image().save_png(run.out_path("panorama_alpha.png"))?;
    run.count("coverage", pano.coverage());
    let cfg = run.cfg.clone();
    let t = Instant::now();
    let linear = complete_to_linear(&cfg, &pano, &mut run)?;
    run.timing("complete_fuse".into(), t.elapsed().as_secs_f64());
    if !linear.all_finite() {
        return Err(CliError::Numerical("non-finite radiance in the estimated environment".into()));
    }
    let env = run.stage("equirect_to_oct", || HdrEnvironment::from_equirect(linear, cfg.tex.env_oct))?;
    let (eq, oct) = (run.out_path("env.hdr"), run.out_path("env.oct.hdr"));
    env.save(&eq, &oct)?;
    env.equirect.save_png(run.out_path("panorama_completed.png"))?;
    say!("wrote {} and {}", eq.display(), oct.display());
    run.finish()
}

fn shadow_region(cfg: &RunConfig, object: &SurfelScene) -> CliResult<ShadowRegion> {
    Ok(define_shadow_region(object, &cfg.placement.transform()?, cfg.region_multiplier)?)
}

fn build_shadow_field(cfg: &RunConfig, scene: &SurfelScene, object: &SurfelScene, placed: &SurfelScene) -> CliResult<ShadowField> {
    let region = shadow_region(cfg, object)?;
    let opts = ShadowFieldOptions {
        probe_count: cfg.probes.shadow,
        tex_size: cfg.tex.probe,
        ..ShadowFieldOptions::default()
    };
    Ok(cache_occlusion(scene, placed, &region, &opts)?)
}

pub fn cmd_cache_shadows(cfg: RunConfig) -> CliResult<Value> {
    let mut run = Run::new("cache-shadows", cfg)?;
    let scene = load_scene(&run.cfg)?;
    let (object, placed) = load_placed_object(&run.cfg)?.ok_or_else(|| CliError::Config("`object` is required".into()))?;
    if object.is_empty() {
        return Err(CliError::Config("the object has no surfels".into()));
    }
    let cfg = run.cfg.clone();
    let field = run.stage("cache_occlusion", || build_shadow_field(&cfg, &scene, &object, &placed))?;
    let path = run.out_path("shadow.sops");
    save_probes(field.probes.probes(), field.probes.tex_size(), &path)?;
    let region_path = run.out_path("shadow_region.json");
    fs::write(&region_path, serde_json::to_string_pretty(&field.region).expect("region serializes"))
        .map_err(|e| CliError::io(&region_path, e))?;
    let (mean_occ, _) = occlusion_stats(field.probes.probes());
    say!("wrote {} shadow probes to {}", field.probes.len(), path.display());
    run.count("probes", field.probes.len());
    run.count("mean_occlusion", mean_occ);
    run.finish()
}

fn load_probe_set(path: &Path) -> CliResult<ProbeSet> {
    let (probes, _) = load_probes(path)?;
    Ok(ProbeSet::with_default_radius(probes)?)
}

pub fn cmd_compose(cfg: RunConfig) -> CliResult<Value> {
    let mut run = Run::new("compose", cfg)?;
    let cfg = run.cfg.clone();
    let scene = load_scene(&cfg)?;
    let cams = render_cameras(&cfg)?;
    let env = run.stage("environment", || load_environment(&cfg))?;
    let object = load_placed_object(&cfg)?.filter(|(o, _)| !o.is_empty());

    let mut object_probes = ProbeSet::empty();
    let mut field = None;
    if let Some((object, placed)) = &object {
        object_probes = match &cfg.object_probes {
            Some(p) => run.stage("load_object_probes", || load_probe_set(p))?,
            None => {
                let (probes, _) = run.stage("bake_object_probes", || bake_object_probes(&cfg, placed))?;
                ProbeSet::with_default_radius(probes)?
            }
        };
        field = match &cfg.shadow_probes {
            Some(p) => Some(ShadowField {
                probes: run.stage("load_shadow_probes", || load_probe_set(p))?,
                region: shadow_region(&cfg, object)?,
            }),
            None => match run.stage("cache_occlusion", || build_shadow_field(&cfg, &scene, object, placed)) {
                Ok(f) => Some(f),
                Err(CliError::Core(sop_core::Error::NothingToShadow)) => {
                    log::warn!("no scene surface near the object; compositing without shadows");
                    None
                }
                Err(e) => return Err(e),
            },
        };
    }

    let stream = derive_seed(cfg.seed, "compose");
    let mut fallbacks = 0usize;
    for (i, cam) in cams.iter().enumerate() {
        let insertion = object.as_ref().map(|(_, placed)| Insertion {
            object_placed: placed,
            object_probes: &object_probes,
            field: field.as_ref(),
        });
        let frame = compose_view(&scene, cam, &env, insertion, cfg.samples.rendering, item_seed(stream, i as u64))
            .map_err(|e| match e {
                sop_core::Error::Domain(m) => CliError::Numerical(m),
                e => CliError::Core(e),
            })?;
        for (stage, secs) in frame.timings {
            run.timing(format!("frame_{i:03}/{stage}"), secs);
        }
        fallbacks += frame.probe_fallbacks;
        frame.image.save_png(run.out_path(&format!("frame_{i:03}.png")))?;
        save_hdr(&frame.image, run.out_path(&format!("frame_{i:03}.hdr")))?;
    }
    say!("composed {} frame(s) into {}", cams.len(), cfg.out.display());
    run.count("frames", cams.len());
    run.count("probe_fallbacks", fallbacks);
    run.count("shadow_probes", field.as_ref().map_or(0, |f| f.probes.len()));
    run.count("object_probes", object_probes.len());
    run.finish()
}

pub fn cmd_bench(cfg: RunConfig) -> CliResult<Value> {
    let mut run = Run::new("bench", cfg)?;
    let cfg = run.cfg.clone();
    let scene = load_scene(&cfg)?;
    let cams = scene_fusion_cameras(&cfg, &scene)?;
    let offset = cfg.probe_offset.unwrap_or_else(|| default_offset(&scene));
    let built = run.stage("build_probes", || build_probes(&scene, &cams, cfg.bench.probes, cfg.tex.probe, offset))?;
    let set = ProbeSet::with_default_radius(built.probes)?;
    let queries = near_surface_queries(&built.surface, offset, cfg.bench.points, derive_seed(cfg.seed, "bench"), QueryDirections::Cosine);
    let points: Vec<(DVec3, DVec3)> = queries.iter().map(|q| (q.point, q.normal)).collect();
    let report = run.stage("occlusion_bench", || bench_occlusion(&scene, &set, &points, cfg.bench.directions));

    let mut frame_times = Vec::new();
    if cfg.environment.is_some() && !cfg.cameras.is_empty() {
        let env = load_environment(&cfg)?;
        let cam = render_cameras(&cfg)?.remove(0);
        let frame = compose_view(&scene, &cam, &env, None, cfg.samples.rendering, cfg.seed)?;
        frame_times = frame.timings;
    }
    let value = json!({
        "probes": set.len(),
        "occlusion": report,
        "frame_stages": frame_times.iter().map(|(s, t)| json!({"stage": s, "seconds": t})).collect::<Vec<_>>(),
    });
    let path = run.out_path("bench.json");
    fs::write(&path, serde_json::to_string_pretty(&value).expect("bench report serializes")).map_err(|e| CliError::io(&path, e))?;
    run.count("speedup", report.speedup);
    run.count("probe_throughput", report.probe_throughput);
    run.count("trace_throughput", report.trace_throughput);
    run.finish()?;
    Ok(value)
}

fn load_any_image(path: &Path) -> CliResult<Image> {
    let is_hdr = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("hdr"));
    if is_hdr {
        Ok(load_hdr(path)?)
    } else {
        Ok(load_png_rgb(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Text,
}

pub fn cmd_metrics(pred: &Path, reference: &Path) -> CliResult<Value> {
    let (a, b) = (load_any_image(pred)?, load_any_image(reference)?);
    let pair = ImagePair::new(&a, &b)?;
    Ok(serde_json::to_value(report(&pair)).expect("report serializes"))
}
