use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sop_cli::config::RunConfig;
use sop_core::geometry::{save_surfels, SurfelScene};
use sop_core::hdr::load_hdr;
use sop_core::tutorial::surfel_sphere;
use glam::DVec3;

fn sop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sop"))
        .args(args)
        .env("SOP_THREADS", "1")
        .output()
        .expect("run sop")
}

fn ok(args: &[&str]) -> String {
    let out = sop(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    sop(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tutorial assets with a small camera and reduced counts.
fn tutorial(dir: &Path) -> PathBuf {
    ok(&["tutorial", "--out", p(dir), "--width", "48", "--height", "32"]);
    let cfg_path = dir.join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    v["probes"] = serde_json::json!({"object": 150, "shadow": 150});
    v["samples"] = serde_json::json!({"reconstruction": 16, "rendering": 16});
    v["tex"] = serde_json::json!({"probe": 8, "env_oct": 32});
    v["panorama_size"] = serde_json::json!([32, 64]);
    fs::write(&cfg_path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    cfg_path
}

#[test]
fn render_writes_frames_and_a_reloadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tutorial(dir.path());
    let out = dir.path().join("r");
    ok(&["render", "--config", p(&cfg), "--out", p(&out)]);
    for f in ["frame_000.png", "frame_000.hdr", "gbuffer_000.bin", "gbuffer_000.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest = out.join("render.manifest.json");
    let reloaded = RunConfig::load(&manifest).unwrap();
    let mut original = RunConfig::load(&cfg).unwrap();
    original.out = out.clone();
    assert_eq!(reloaded, original);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert!(m["run"]["timings"].as_array().is_some_and(|t| !t.is_empty()));
}

#[test]
fn bake_is_deterministic_and_rejects_empty_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tutorial(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&["bake", "--config", p(&cfg), "--out", p(&a)]);
    assert!(stdout.contains("wrote 150 probes"));
    ok(&["bake", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("object.sops")).unwrap(), fs::read(b.join("object.sops")).unwrap());

    let empty = dir.path().join("empty.surfels");
    save_surfels(&SurfelScene::empty(), &empty).unwrap();
    assert_eq!(code(&["bake", "--config", p(&cfg), "--object", p(&empty), "--out", p(&a)]), 2);
    assert_eq!(
        code(&["bake", "--target", "scene", "--config", p(&cfg), "--scene", p(&empty), "--out", p(&a)]),
        2
    );
}

#[test]
fn estimate_light_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tutorial(dir.path());
    let out = dir.path().join("light");
    ok(&["estimate-light", "--config", p(&cfg), "--out", p(&out)]);
    let env = load_hdr(out.join("env.hdr")).unwrap();
    assert_eq!((env.width(), env.height()), (64, 32));
    // holes are filled: no pixel is left black
    assert!(env.data().chunks(3).all(|c| c.iter().any(|&v| v > 0.0)));
    assert!(out.join("env.oct.hdr").exists());

    assert_eq!(
        code(&[
            "estimate-light", "--config", p(&cfg), "--out", p(&out), "--completer", "external",
            "--external-file", p(&dir.path().join("missing.hdr")),
        ]),
        3
    );

    // an external HDR completion goes through the exposure stack
    let ext = dir.path().join("ext.hdr");
    let sky = sop_core::tutorial::synthetic_sky(64, 32);
    sop_core::hdr::save_hdr(&sky, &ext).unwrap();
    ok(&["estimate-light", "--config", p(&cfg), "--out", p(&out), "--completer", "external", "--external-file", p(&ext)]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimate-light.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["run"]["counters"]["exposures"], 3);

    let closed = dir.path().join("closed.surfels");
    save_surfels(&SurfelScene::new(surfel_sphere(DVec3::ZERO, 3.0, 4000, DVec3::splat(0.5), DVec3::ONE, 1.0, 0.0)), &closed).unwrap();
    ok(&["estimate-light", "--config", p(&cfg), "--scene", p(&closed), "--at", "0,0,0", "--out", p(&out)]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimate-light.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["run"]["counters"]["completer_bypassed"], true);
    assert_eq!(m["run"]["counters"]["hole_pixels"], 0);
}

#[test]
fn compose_without_object_matches_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = tutorial(dir.path());
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("object");
    let plain = dir.path().join("plain.json");
    fs::write(&plain, v.to_string()).unwrap();
    let (r, c) = (dir.path().join("r"), dir.path().join("c"));
    ok(&["render", "--config", p(&plain), "--out", p(&r)]);
    ok(&["compose", "--config", p(&plain), "--out", p(&c)]);
    assert_eq!(fs::read(r.join("frame_000.png")).unwrap(), fs::read(c.join("frame_000.png")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("compose.manifest.json")).unwrap()).unwrap();
    let stages: Vec<&str> = m["run"]["timings"].as_array().unwrap().iter().map(|t| t["stage"].as_str().unwrap()).collect();
    for s in ["scene_gbuffer", "shadow_ratio", "relight", "compose"] {
        assert!(stages.iter().any(|x| x.ends_with(s)), "{s}");
    }
}

#[test]
fn compose_with_object_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tutorial(dir.path());
    let out = dir.path().join("c");
    ok(&["compose", "--config", p(&cfg), "--out", p(&out), "--seed", "3"]);
    let frame = load_hdr(out.join("frame_000.hdr")).unwrap();
    assert!(frame.all_finite());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("compose.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert!(m["run"]["counters"]["shadow_probes"].as_u64().unwrap() > 0);
}

#[test]
fn single_probe_bench_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tutorial(dir.path());
    let out = ok(&[
        "bench", "--config", p(&cfg), "--out", p(&dir.path().join("b")), "--probes", "1", "--points", "500",
        "--directions", "8",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["probes"], 1);
    assert!(v["occlusion"]["speedup"].as_f64().unwrap() > 0.0);
}

#[test]
fn metrics_command() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.hdr");
    let b = dir.path().join("b.hdr");
    let img = sop_core::raster::Image::from_fn(16, 16, 3, |x, y, px| px.fill((x + y) as f64 / 40.0));
    sop_core::hdr::save_hdr(&img, &a).unwrap();
    sop_core::hdr::save_hdr(&img, &b).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["metrics", "--pred", p(&a), "--ref", p(&b), "--report", "json"])).unwrap();
    assert_eq!(v["psnr"], 99.0);
    assert_eq!(v["l1"], 0.0);
    assert!(ok(&["metrics", "--pred", p(&a), "--ref", p(&b), "--report", "text"]).contains("ssim: 1"));

    let small = dir.path().join("small.hdr");
    sop_core::hdr::save_hdr(&sop_core::raster::Image::new(4, 4, 3), &small).unwrap();
    assert_eq!(code(&["metrics", "--pred", p(&a), "--ref", p(&small)]), 2);
    assert_eq!(code(&["metrics", "--pred", p(&a), "--ref", p(&dir.path().join("nope.hdr"))]), 3);
}

#[test]
fn configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"probes": {"object": 0}}"#).unwrap();
    assert_eq!(code(&["render", "--config", p(&bad)]), 2);
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&["render", "--config", p(&bad)]), 2);
    assert_eq!(code(&["render", "--config", p(&dir.path().join("absent.json"))]), 3);
    // no scene configured
    assert_eq!(code(&["render", "--out", p(dir.path())]), 2);
    let cfg = tutorial(dir.path());
    assert_eq!(code(&["render", "--config", p(&cfg), "--scene", p(&dir.path().join("gone.surfels"))]), 3);
    let out = sop(&["render", "--config", p(&cfg)]);
    assert!(out.status.success());
    let threads = Command::new(env!("CARGO_BIN_EXE_sop"))
        .args(["render", "--config", p(&cfg)])
        .env("SOP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}
