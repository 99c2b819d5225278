//! Binary PGM (P5) output for heatmaps and input for glyph images.

use std::fs;
use std::path::Path;

use inkspot_core::Grid;

/// Rescales `[min, max]` to `0..=255` with flooring; a constant map is all zeros.
pub fn heatmap_pixels(map: &Grid) -> Vec<u8> {
    let data = map.as_slice();
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    if !(hi > lo) {
        return vec![0; data.len()];
    }
    data.iter()
        .map(|&v| ((v as f64 - lo) / (hi - lo) * 255.0).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_heatmap(path: &Path, map: &Grid) -> std::io::Result<()> {
    fs::write(path, encode_pgm(map.width(), map.height(), &heatmap_pixels(map)))
}

/// Parses a P5 image into a `[0, 1]` grid (value / maxval). 16-bit samples
/// are big-endian as the format prescribes.
pub fn decode_pgm(bytes: &[u8]) -> Result<Grid, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII PGM header")?);
    }
    if fields[0] != "P5" {
        return Err(format!("unsupported image magic {:?}, expected P5", fields[0]));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad PGM {what} {s:?}"))
    };
    let (w, h, maxval) = (parse(fields[1], "width")?, parse(fields[2], "height")?, parse(fields[3], "maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err("PGM dimensions and maxval must be positive (maxval ≤ 65535)".into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(sample))
        .ok_or("PGM size overflows")?;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(format!("PGM raster has {} bytes, expected {need}", raster.len()));
    }
    let data = raster
        .chunks_exact(sample)
        .map(|c| {
            let v = if sample == 1 { c[0] as u32 } else { u16::from_be_bytes([c[0], c[1]]) as u32 };
            (v.min(maxval as u32) as f64 / maxval as f64) as f32
        })
        .collect();
    Grid::new(h, w, data).map_err(|e| e.to_string())
}
