//! `SOPS1` probe files: header `SOPS1 <count> <tex_size>`, then per probe
//! position (3 f32), normal (3 f32), radiance texels (3·size² f32) and
//! occlusion texels (size² f32), little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use glam::DVec3;

use super::Probe;
use crate::error::ParseError;
use crate::geometry::io::read_header_line;
use crate::octmap::OctTexture;
use crate::{Error, Result};

pub const SOPS_MAGIC: &str = "SOPS1";

pub fn write_probes<W: Write>(mut out: W, probes: &[Probe], tex_size: usize) -> Result<()> {
    writeln!(out, "{SOPS_MAGIC} {} {tex_size}", probes.len())?;
    let mut buf = Vec::new();
    for p in probes {
        if p.radiance.size() != tex_size || p.occlusion.size() != tex_size {
            return Err(Error::DimensionMismatch("probe texture size differs from the file's".into()));
        }
        buf.clear();
        for v in p.position.to_array().into_iter().chain(p.source_normal.to_array()) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in p.radiance.data().iter().chain(p.occlusion.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_probes(probes: &[Probe], tex_size: usize, path: impl AsRef<Path>) -> Result<()> {
    write_probes(BufWriter::new(File::create(path)?), probes, tex_size)
}

/// Returns the probes and their texture size.
pub fn read_probes<R: Read>(mut input: R) -> Result<(Vec<Probe>, usize)> {
    let header = read_header_line(&mut input, 64)?.ok_or(ParseError::MissingHeader)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (count, size) = match parts.as_slice() {
        [magic, c, s] if *magic == SOPS_MAGIC => (
            c.parse::<usize>().map_err(|_| ParseError::MalformedHeader(header.clone()))?,
            s.parse::<usize>().map_err(|_| ParseError::MalformedHeader(header.clone()))?,
        ),
        _ => {
            return Err(ParseError::MalformedHeader(format!("expected `{SOPS_MAGIC} <count> <tex_size>`, got `{header}`")).into())
        }
    };
    if size < 2 {
        return Err(ParseError::MalformedHeader("texture size must be >= 2".into()).into());
    }
    let floats = 6 + 4 * size * size;
    let record_bytes = floats * 4;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() < count * record_bytes {
        return Err(ParseError::Truncated { record: payload.len() / record_bytes }.into());
    }
    if payload.len() > count * record_bytes {
        return Err(ParseError::TrailingData { declared: count, record: count }.into());
    }
    let mut probes = Vec::with_capacity(count);
    for (record, chunk) in payload.chunks_exact(record_bytes).enumerate() {
        let vals: Vec<f32> = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            let field = match k {
                0..=2 => "position",
                3..=5 => "normal",
                k if k < 6 + 3 * size * size => "radiance",
                _ => "occlusion",
            };
            return Err(ParseError::NonFinite { record, field }.into());
        }
        let position = DVec3::new(vals[0] as f64, vals[1] as f64, vals[2] as f64);
        let normal = DVec3::new(vals[3] as f64, vals[4] as f64, vals[5] as f64).normalize_or_zero();
        let invalid = |e: Error| ParseError::InvalidRecord { record, reason: e.to_string() };
        let radiance = OctTexture::from_data(size, 3, vals[6..6 + 3 * size * size].to_vec()).map_err(invalid)?;
        let occlusion = OctTexture::from_data(size, 1, vals[6 + 3 * size * size..].to_vec()).map_err(invalid)?;
        let probe = Probe {
            position,
            source_normal: normal,
            radiance,
            occlusion,
        };
        probe.validate().map_err(invalid)?;
        probes.push(probe);
    }
    Ok((probes, size))
}

pub fn load_probes(path: impl AsRef<Path>) -> Result<(Vec<Probe>, usize)> {
    read_probes(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probes(n: usize, size: usize) -> Vec<Probe> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..n)
            .map(|_| {
                let normal = DVec3::new(0.0, 0.6, 0.8);
                let mut radiance = OctTexture::new(size, 3);
                radiance.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.0..4.0));
                let mut occlusion = OctTexture::new(size, 1);
                occlusion.data_mut().iter_mut().for_each(|v| *v = rng.gen());
                Probe {
                    position: DVec3::new(rng.gen::<f32>() as f64, 1.5, -2.25),
                    source_normal: normal,
                    radiance,
                    occlusion,
                }
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let probes = random_probes(20, 4);
        let mut buf = Vec::new();
        write_probes(&mut buf, &probes, 4).unwrap();
        let (back, size) = read_probes(buf.as_slice()).unwrap();
        assert_eq!(size, 4);
        assert_eq!(back.len(), 20);
        for (a, b) in probes.iter().zip(&back) {
            assert_eq!(a.position, b.position);
            assert!((a.source_normal - b.source_normal).length() < 1e-7);
            assert_eq!(a.radiance, b.radiance);
            assert_eq!(a.occlusion, b.occlusion);
        }
    }

    #[test]
    fn rejects_damage() {
        assert!(matches!(read_probes(&b""[..]), Err(Error::Parse(ParseError::MissingHeader))));
        assert!(read_probes(&b"SOPS1 1\n"[..]).is_err());
        let probes = random_probes(3, 2);
        let mut buf = Vec::new();
        write_probes(&mut buf, &probes, 2).unwrap();
        let short = &buf[..buf.len() - 5];
        assert!(matches!(read_probes(short), Err(Error::Parse(ParseError::Truncated { record: 2 }))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_probes(long.as_slice()), Err(Error::Parse(ParseError::TrailingData { .. }))));
        let header_len = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        let mut nan = buf.clone();
        let record = 6 + 4 * 4;
        nan[header_len + record * 4 + 4..header_len + record * 4 + 8].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_probes(nan.as_slice()),
            Err(Error::Parse(ParseError::NonFinite { record: 1, field: "position" }))
        ));
        let mut over = buf;
        let occ_at = header_len + (6 + 12) * 4;
        over[occ_at..occ_at + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(read_probes(over.as_slice()), Err(Error::Parse(ParseError::InvalidRecord { record: 0, .. }))));
    }
}
