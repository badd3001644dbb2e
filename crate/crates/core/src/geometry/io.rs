//! `SURFEL1` file format: an ASCII header line `SURFEL1 <count>` followed by
//! `count` little-endian records of 18 `f32` values (center, quaternion
//! wxyz, scale, opacity, color, albedo, roughness, metallic).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use glam::{DQuat, DVec2, DVec3};

use super::{Surfel, SurfelScene};
use crate::error::{ParseError, Result};

pub const SURFEL_MAGIC: &str = "SURFEL1";
const FLOATS_PER_RECORD: usize = 18;
const RECORD_BYTES: usize = FLOATS_PER_RECORD * 4;
const FIELD_NAMES: [&str; FLOATS_PER_RECORD] = [
    "center.x", "center.y", "center.z", "rotation.w", "rotation.x", "rotation.y", "rotation.z", "scale.x",
    "scale.y", "opacity", "color.r", "color.g", "color.b", "albedo.r", "albedo.g", "albedo.b", "roughness",
    "metallic",
];

pub fn write_surfels<W: Write>(mut out: W, surfels: &[Surfel]) -> Result<()> {
    writeln!(out, "{SURFEL_MAGIC} {}", surfels.len())?;
    let mut buf = Vec::with_capacity(surfels.len() * RECORD_BYTES);
    for s in surfels {
        let q = s.rotation;
        let fields = [
            s.center.x, s.center.y, s.center.z, q.w, q.x, q.y, q.z, s.scale.x, s.scale.y, s.opacity, s.color.x,
            s.color.y, s.color.z, s.albedo.x, s.albedo.y, s.albedo.z, s.roughness, s.metallic,
        ];
        for v in fields {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn save_surfels(scene: &SurfelScene, path: impl AsRef<Path>) -> Result<()> {
    write_surfels(BufWriter::new(File::create(path)?), scene.surfels())
}

/// Reads a header line terminated by `\n`.
pub(crate) fn read_header_line<R: Read>(input: &mut R, limit: usize) -> Result<Option<String>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            if line.is_empty() {
                return Ok(None);
            }
            break;
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > limit {
            return Err(ParseError::MalformedHeader("header line too long".into()).into());
        }
    }
    String::from_utf8(line)
        .map(Some)
        .map_err(|_| ParseError::MalformedHeader("header is not ASCII".into()).into())
}

pub fn read_surfels<R: Read>(mut input: R) -> Result<Vec<Surfel>> {
    let header = read_header_line(&mut input, 64)?.ok_or(ParseError::MissingHeader)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(SURFEL_MAGIC) {
        return Err(ParseError::MalformedHeader(format!("expected `{SURFEL_MAGIC} <count>`, got `{header}`")).into());
    }
    let count: usize = parts
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| ParseError::MalformedHeader(format!("bad record count in `{header}`")))?;
    if parts.next().is_some() {
        return Err(ParseError::MalformedHeader(format!("trailing tokens in `{header}`")).into());
    }

    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() < count * RECORD_BYTES {
        return Err(ParseError::Truncated {
            record: payload.len() / RECORD_BYTES,
        }
        .into());
    }
    if payload.len() > count * RECORD_BYTES {
        return Err(ParseError::TrailingData {
            declared: count,
            record: count,
        }
        .into());
    }

    let mut surfels = Vec::with_capacity(count);
    for (record, chunk) in payload.chunks_exact(RECORD_BYTES).enumerate() {
        let mut f = [0.0f64; FLOATS_PER_RECORD];
        for (k, bytes) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(bytes.try_into().unwrap());
            if !v.is_finite() {
                return Err(ParseError::NonFinite {
                    record,
                    field: FIELD_NAMES[k],
                }
                .into());
            }
            f[k] = v as f64;
        }
        let mut rotation = DQuat::from_xyzw(f[4], f[5], f[6], f[3]);
        if (rotation.length() - 1.0).abs() > 1e-6 && rotation.length() > 0.0 {
            rotation = rotation.normalize();
        }
        let surfel = Surfel {
            center: DVec3::new(f[0], f[1], f[2]),
            rotation,
            scale: DVec2::new(f[7], f[8]),
            opacity: f[9],
            color: DVec3::new(f[10], f[11], f[12]),
            albedo: DVec3::new(f[13], f[14], f[15]),
            roughness: f[16],
            metallic: f[17],
        };
        surfel
            .validate()
            .map_err(|reason| ParseError::InvalidRecord { record, reason })?;
        surfels.push(surfel);
    }
    Ok(surfels)
}

pub fn load_surfels(path: impl AsRef<Path>) -> Result<SurfelScene> {
    read_surfels(BufReader::new(File::open(path)?)).map(SurfelScene::new)
}
