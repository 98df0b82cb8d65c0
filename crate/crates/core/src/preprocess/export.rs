//! 8-bit PGM renderings and CSV axis dumps.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde_json::json;

use super::SquaredAxisMap;
use crate::error::{Error, Result};
use crate::store::atomic_write;

/// Binary P5 image of a [0, 1] matrix. Row 0 of the matrix is drawn at the
/// bottom so ascending axes point up.
pub fn map_to_pgm(data: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = data.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        for c in 0..cols {
            let v = data[[r, c]];
            let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// Parses a P5 image written by [`map_to_pgm`] back into [0, 1] values.
pub fn read_pgm(bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit P5 is supported"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let pixels = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if pixels.len() != rows * cols {
        return Err(bad("raster size mismatch"));
    }
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        pixels[(rows - 1 - r) * cols + c] as f64 / 255.0
    }))
}

/// Writes `<stem>.pgm` plus a `<stem>.json` sidecar with both axes.
pub fn write_map_pgm(dir: &Path, stem: &str, map: &SquaredAxisMap) -> Result<()> {
    atomic_write(&dir.join(format!("{stem}.pgm")), &map_to_pgm(&map.data))?;
    let sidecar = json!({
        "axis_kind": map.axis_kind,
        "axis_max": map.axis_max,
        "axis_values": map.axis_values,
        "time_axis_s": map.time_axis_s,
        "degenerate": map.degenerate,
    });
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    atomic_write(&dir.join(format!("{stem}.json")), text.as_bytes())
}

/// One `index,value` line per entry under a `index,<name>` header.
pub fn write_axis_csv(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let mut s = format!("index,{name}\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(s, "{i},{v}").expect("string write");
    }
    atomic_write(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_quantizes() {
        let data = Array2::from_shape_fn((3, 5), |(r, c)| (r * 5 + c) as f64 / 14.0);
        let bytes = map_to_pgm(&data);
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        let back = read_pgm(&bytes).unwrap();
        for (a, b) in data.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert!(read_pgm(&bytes[..bytes.len() - 1]).is_err());
    }
}
