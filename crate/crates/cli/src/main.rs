use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use glam::{DQuat, DVec3};
use serde_json::Value;

use sop_cli::commands::{self, BakeTarget, ReportFormat};
use sop_cli::config::{CameraSource, CompleterKind, RunConfig};
use sop_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "sop", version, about = "Surfel probe relighting and object insertion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    object: Option<PathBuf>,
    /// Equirectangular .hdr environment.
    #[arg(long)]
    environment: Option<PathBuf>,
    #[arg(long)]
    object_probes: Option<PathBuf>,
    #[arg(long)]
    shadow_probes: Option<PathBuf>,
    /// JSON list of cameras.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long, value_parser = parse_vec3)]
    translation: Option<DVec3>,
    /// Quaternion x,y,z,w.
    #[arg(long, value_parser = parse_quat)]
    rotation: Option<DQuat>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    region_multiplier: Option<f64>,
    /// Rendering samples per pixel.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    object_probe_count: Option<usize>,
    #[arg(long)]
    shadow_probe_count: Option<usize>,
    #[arg(long)]
    probe_tex: Option<usize>,
    #[arg(long)]
    env_tex: Option<usize>,
    #[arg(long)]
    probe_offset: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic tutorial scene, object, sky and config.
    Tutorial {
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 180)]
        height: usize,
    },
    /// Render scene G-buffers and color for every camera.
    Render {
        #[command(flatten)]
        o: Overrides,
    },
    /// Fuse, place and bake probes on the object or the scene.
    Bake {
        #[arg(long, value_enum, default_value_t = BakeTarget::Object)]
        target: BakeTarget,
        #[command(flatten)]
        o: Overrides,
    },
    /// Capture, complete and fuse an HDR environment at a location.
    EstimateLight {
        #[arg(long, value_parser = parse_vec3)]
        at: Option<DVec3>,
        #[arg(long, value_enum)]
        completer: Option<CompleterKind>,
        #[arg(long)]
        external_file: Option<PathBuf>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Bake object-only occlusion probes in the shadow region.
    CacheShadows {
        #[command(flatten)]
        o: Overrides,
    },
    /// Insert the relit object with its shadows into every camera view.
    Compose {
        #[command(flatten)]
        o: Overrides,
    },
    /// Compare probe and ray-traced occlusion throughput.
    Bench {
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        directions: Option<usize>,
        /// Probes placed on the scene.
        #[arg(long)]
        probes: Option<usize>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Image metrics between a prediction and a reference (.hdr or .png).
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        report: ReportFormat,
    },
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_vec3(s: &str) -> Result<DVec3, String> {
    parse_floats::<3>(s).map(DVec3::from_array)
}

fn parse_quat(s: &str) -> Result<DQuat, String> {
    parse_floats::<4>(s).map(DQuat::from_array)
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, o: Overrides) {
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(o.scene.map(Some) => cfg.scene);
    set!(o.object.map(Some) => cfg.object);
    set!(o.environment.map(Some) => cfg.environment);
    set!(o.object_probes.map(Some) => cfg.object_probes);
    set!(o.shadow_probes.map(Some) => cfg.shadow_probes);
    set!(o.cameras.map(CameraSource::File) => cfg.cameras);
    set!(o.translation => cfg.placement.translation);
    set!(o.rotation => cfg.placement.rotation);
    set!(o.scale => cfg.placement.scale);
    set!(o.region_multiplier => cfg.region_multiplier);
    set!(o.samples => cfg.samples.rendering);
    set!(o.object_probe_count => cfg.probes.object);
    set!(o.shadow_probe_count => cfg.probes.shadow);
    set!(o.probe_tex => cfg.tex.probe);
    set!(o.env_tex => cfg.tex.env_oct);
    set!(o.probe_offset.map(Some) => cfg.probe_offset);
}

fn run(command: Command, common: Common) -> CliResult<Value> {
    let config_for = |o: Overrides| -> CliResult<RunConfig> {
        let mut cfg = base_config(&common)?;
        apply(&mut cfg, o);
        Ok(cfg)
    };
    match command {
        Command::Tutorial { width, height } => {
            commands::cmd_tutorial(common.out.as_deref().unwrap_or("tutorial".as_ref()), width, height)
        }
        Command::Render { o } => commands::cmd_render(config_for(o)?),
        Command::Bake { target, o } => commands::cmd_bake(config_for(o)?, target),
        Command::EstimateLight { at, completer, external_file, o } => {
            let mut cfg = config_for(o)?;
            if let Some(at) = at {
                cfg.light_location = Some(at);
            }
            if let Some(c) = completer {
                cfg.completer = c;
            }
            if let Some(f) = external_file {
                cfg.external_file = Some(f);
            }
            commands::cmd_estimate_light(cfg)
        }
        Command::CacheShadows { o } => commands::cmd_cache_shadows(config_for(o)?),
        Command::Compose { o } => commands::cmd_compose(config_for(o)?),
        Command::Bench { points, directions, probes, o } => {
            let mut cfg = config_for(o)?;
            cfg.bench.points = points.unwrap_or(cfg.bench.points);
            cfg.bench.directions = directions.unwrap_or(cfg.bench.directions);
            cfg.bench.probes = probes.unwrap_or(cfg.bench.probes);
            commands::cmd_bench(cfg)
        }
        Command::Metrics { pred, reference, report } => {
            let v = commands::cmd_metrics(&pred, &reference)?;
            if report == ReportFormat::Text {
                if let Value::Object(m) = &v {
                    for (k, val) in m {
                        say(&format!("{k}: {val}"));
                    }
                }
                return Ok(Value::Null);
            }
            Ok(v)
        }
    }
}

fn say(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SOP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("SOP_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let Cli { common, command } = Cli::parse();
    let result = init_threads().and_then(|_| run(command, common));
    match result {
        Ok(Value::Null) => {}
        Ok(v) => say(&serde_json::to_string_pretty(&v).expect("json output")),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
