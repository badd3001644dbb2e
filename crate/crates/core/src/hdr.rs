//! Radiance `.hdr` (RGBE) reading and writing.
//!
//! Files are written flat (uncompressed scanlines); the reader also accepts
//! the run-length encoded scanlines most tools produce. Octahedral textures
//! use the same format with an extra `OCT` header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::ParseError;
use crate::geometry::io::read_header_line;
use crate::octmap::OctTexture;
use crate::raster::Image;
use crate::{Error, Result};

pub const OCT_TAG: &str = "OCT";

#[inline]
fn frexp(v: f64) -> (f64, i32) {
    let mut e = v.log2().floor() as i32 + 1;
    let mut m = v / 2f64.powi(e);
    // log2 can be off by one ulp near powers of two
    if m >= 1.0 {
        m *= 0.5;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

/// Shared-exponent encoding of one linear RGB value.
pub fn encode_rgbe(rgb: [f64; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if !(v >= 1e-32) {
        return [0; 4];
    }
    let (m, e) = frexp(v);
    if e > 127 {
        return [255, 255, 255, 255];
    }
    let scale = m * 256.0 / v;
    let q = |c: f64| (c.max(0.0) * scale).floor().min(255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), (e + 128) as u8]
}

pub fn decode_rgbe(p: [u8; 4]) -> [f64; 3] {
    if p[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(p[3] as i32 - (128 + 8));
    [(p[0] as f64 + 0.5) * f, (p[1] as f64 + 0.5) * f, (p[2] as f64 + 0.5) * f]
}

/// Writes a 3-channel image; `tags` become extra header lines.
pub fn write_hdr(out: &mut impl Write, img: &Image, tags: &[&str]) -> Result<()> {
    if img.channels() < 3 {
        return Err(Error::invalid("HDR export needs an RGB image"));
    }
    writeln!(out, "#?RADIANCE")?;
    writeln!(out, "FORMAT=32-bit_rle_rgbe")?;
    for tag in tags {
        writeln!(out, "{tag}")?;
    }
    writeln!(out)?;
    writeln!(out, "-Y {} +X {}", img.height(), img.width())?;
    let mut row = Vec::with_capacity(img.width() * 4);
    for y in 0..img.height() {
        row.clear();
        for x in 0..img.width() {
            row.extend_from_slice(&encode_rgbe(img.rgb(x, y).to_array()));
        }
        out.write_all(&row)?;
    }
    Ok(())
}

pub fn save_hdr(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_hdr(&mut out, img, &[])?;
    out.flush()?;
    Ok(())
}

fn malformed(msg: impl Into<String>) -> Error {
    ParseError::MalformedHeader(msg.into()).into()
}

/// Reads an RGBE image and the non-standard header lines it carried.
pub fn read_hdr(input: &mut impl BufRead) -> Result<(Image, Vec<String>)> {
    let first = read_header_line(input, 256)?.ok_or(ParseError::MissingHeader)?;
    if !first.starts_with("#?") {
        return Err(malformed(format!("not a Radiance file: {first:?}")));
    }
    let mut tags = Vec::new();
    loop {
        let line = read_header_line(input, 4096)?.ok_or_else(|| malformed("header ends before resolution"))?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt != "32-bit_rle_rgbe" {
                return Err(malformed(format!("unsupported format {fmt}")));
            }
        } else if !line.starts_with('#') && !line.starts_with("EXPOSURE=") {
            tags.push(line);
        }
    }
    let res = read_header_line(input, 256)?.ok_or_else(|| malformed("missing resolution line"))?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (h, w) = match parts.as_slice() {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>().map_err(|_| malformed(res.clone()))?,
            w.parse::<usize>().map_err(|_| malformed(res.clone()))?,
        ),
        _ => return Err(malformed(format!("unsupported orientation {res:?}"))),
    };
    let mut img = Image::new(w, h, 3);
    let mut scan = vec![[0u8; 4]; w];
    for y in 0..h {
        read_scanline(input, &mut scan, y)?;
        for (x, p) in scan.iter().enumerate() {
            img.pixel_mut(x, y).copy_from_slice(&decode_rgbe(*p));
        }
    }
    Ok((img, tags))
}

fn read_exact_rec(input: &mut impl Read, buf: &mut [u8], record: usize) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Parse(ParseError::Truncated { record }),
        _ => Error::Io(e),
    })
}

fn read_scanline(input: &mut impl Read, scan: &mut [[u8; 4]], y: usize) -> Result<()> {
    let w = scan.len();
    let mut head = [0u8; 4];
    read_exact_rec(input, &mut head, y)?;
    let rle = (8..0x8000).contains(&w) && head[0] == 2 && head[1] == 2 && head[2] & 0x80 == 0;
    if !rle {
        scan[0] = head;
        let mut rest = vec![0u8; (w - 1) * 4];
        read_exact_rec(input, &mut rest, y)?;
        for (x, c) in rest.chunks_exact(4).enumerate() {
            scan[x + 1] = [c[0], c[1], c[2], c[3]];
        }
        return Ok(());
    }
    if ((head[2] as usize) << 8 | head[3] as usize) != w {
        return Err(ParseError::InvalidRecord { record: y, reason: "scanline width mismatch".into() }.into());
    }
    for c in 0..4 {
        let mut x = 0;
        while x < w {
            let mut count = [0u8; 1];
            read_exact_rec(input, &mut count, y)?;
            let bad = || Error::from(ParseError::InvalidRecord { record: y, reason: "bad run length".into() });
            if count[0] > 128 {
                let n = (count[0] - 128) as usize;
                if n == 0 || x + n > w {
                    return Err(bad());
                }
                let mut v = [0u8; 1];
                read_exact_rec(input, &mut v, y)?;
                for p in &mut scan[x..x + n] {
                    p[c] = v[0];
                }
                x += n;
            } else {
                let n = count[0] as usize;
                if n == 0 || x + n > w {
                    return Err(bad());
                }
                let mut vals = vec![0u8; n];
                read_exact_rec(input, &mut vals, y)?;
                for (p, v) in scan[x..x + n].iter_mut().zip(vals) {
                    p[c] = v;
                }
                x += n;
            }
        }
    }
    Ok(())
}

pub fn load_hdr(path: impl AsRef<Path>) -> Result<Image> {
    let mut input = BufReader::new(File::open(path)?);
    Ok(read_hdr(&mut input)?.0)
}

/// Saves a texture as an `OCT`-tagged RGBE file (one-channel textures are
/// replicated to gray).
pub fn save_oct_texture(tex: &OctTexture, path: impl AsRef<Path>) -> Result<()> {
    let n = tex.size();
    let img = Image::from_fn(n, n, 3, |x, y, p| {
        p.copy_from_slice(&tex.texel_rgb(y * n + x).to_array());
    });
    let mut out = BufWriter::new(File::create(path)?);
    write_hdr(&mut out, &img, &[OCT_TAG])?;
    out.flush()?;
    Ok(())
}

pub fn load_oct_texture(path: impl AsRef<Path>) -> Result<OctTexture> {
    let mut input = BufReader::new(File::open(path)?);
    let (img, tags) = read_hdr(&mut input)?;
    if !tags.iter().any(|t| t == OCT_TAG) {
        return Err(malformed("missing OCT tag"));
    }
    if img.width() != img.height() {
        return Err(Error::DimensionMismatch("octahedral texture must be square".into()));
    }
    OctTexture::from_data(img.width(), 3, img.data().iter().map(|&v| v as f32).collect())
}
