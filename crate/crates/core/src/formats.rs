//! On-disk formats.
//!
//! * `RAS1`: ASCII header `RAS1 <width> <height> <pixel_size_m> <nodata_value>\n`
//!   followed by `width * height` row-major little-endian `f32` values. A
//!   pixel is nodata when it equals the header value (or is NaN when the
//!   header value is `nan`). Written rasters use `-9999` as nodata.
//! * `EMB1`: ASCII header `EMB1 <count> <dim>\n` followed by `count * dim`
//!   little-endian `f32` values, one row per sample.
//! * CSV inputs: tree boxes `x_min,y_min,x_max,y_max`, polygons
//!   `id,x0,y0,x1,y1,...` (no header), footprint references `x,y,height`,
//!   probe labels `sample_id,keep` and sampler statistics
//!   `sample_id,frac_below_1m,p95_height`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::Grid;

pub const RAS1_NODATA: f32 = -9999.0;

pub fn encode_ras1(g: &Grid) -> Vec<u8> {
    let header = format!(
        "RAS1 {} {} {} {}\n",
        g.width(),
        g.height(),
        g.pixel_size(),
        RAS1_NODATA
    );
    let mut out = Vec::with_capacity(header.len() + 4 * g.len());
    out.extend_from_slice(header.as_bytes());
    for (v, ok) in g.values().iter().zip(g.validity()) {
        let f = if *ok { *v as f32 } else { RAS1_NODATA };
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

pub fn decode_ras1(bytes: &[u8], origin: &Path) -> Result<Grid> {
    let (header, body) = split_header(bytes, origin)?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() != 5 || fields[0] != "RAS1" {
        return Err(Error::format(origin, format!("bad RAS1 header `{header}`")));
    }
    let width: usize = parse_field(fields[1], "width", origin)?;
    let height: usize = parse_field(fields[2], "height", origin)?;
    let pixel_size: f64 = parse_field(fields[3], "pixel size", origin)?;
    let nodata: f32 = parse_field(fields[4], "nodata", origin)?;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, "raster size overflows"))?;
    if body.len() != expected {
        return Err(Error::format(
            origin,
            format!("expected {expected} payload bytes, found {}", body.len()),
        ));
    }
    let mut values = Vec::with_capacity(width * height);
    let mut valid = Vec::with_capacity(width * height);
    for chunk in body.chunks_exact(4) {
        let f = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let is_nodata = f == nodata || (f.is_nan() && nodata.is_nan()) || !f.is_finite();
        values.push(f as f64);
        valid.push(!is_nodata);
    }
    Grid::with_mask(width, height, pixel_size, values, valid)
        .map_err(|e| Error::format(origin, e.to_string()))
}

pub fn read_ras1(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_ras1(&bytes, path)
}

pub fn write_ras1(path: impl AsRef<Path>, g: &Grid) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ras1(g))?;
    Ok(())
}

/// Row-major embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

pub fn encode_emb1(e: &Embeddings) -> Vec<u8> {
    let header = format!("EMB1 {} {}\n", e.rows.len(), e.dim);
    let mut out = header.into_bytes();
    for row in &e.rows {
        for v in row {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_emb1(bytes: &[u8], origin: &Path) -> Result<Embeddings> {
    let (header, body) = split_header(bytes, origin)?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() != 3 || fields[0] != "EMB1" {
        return Err(Error::format(origin, format!("bad EMB1 header `{header}`")));
    }
    let count: usize = parse_field(fields[1], "count", origin)?;
    let dim: usize = parse_field(fields[2], "dim", origin)?;
    if body.len() != count * dim * 4 {
        return Err(Error::format(
            origin,
            format!("expected {} payload bytes, found {}", count * dim * 4, body.len()),
        ));
    }
    let mut rows = Vec::with_capacity(count);
    for r in 0..count {
        let row: Vec<f64> = body[r * dim * 4..(r + 1) * dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(origin, format!("non-finite value in row {r}")));
        }
        rows.push(row);
    }
    Ok(Embeddings { dim, rows })
}

pub fn read_emb1(path: impl AsRef<Path>) -> Result<Embeddings> {
    let path = path.as_ref();
    decode_emb1(&fs::read(path)?, path)
}

pub fn write_emb1(path: impl AsRef<Path>, e: &Embeddings) -> Result<()> {
    fs::write(path, encode_emb1(e))?;
    Ok(())
}

/// Reads a headed CSV into serde records.
pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Writes rows with a header derived from the field names.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn split_header<'a>(bytes: &'a [u8], origin: &Path) -> Result<(&'a str, &'a [u8])> {
    let nl = bytes
        .iter()
        .take(256)
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::format(origin, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format(origin, "header is not ASCII"))?;
    Ok((header.trim_end_matches('\r'), &bytes[nl + 1..]))
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, origin: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(origin, format!("cannot parse {what} `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ras1_roundtrip_keeps_nodata() {
        let mut g = Grid::from_fn(3, 2, 0.6, |x, y| (x + 3 * y) as f64 * 1.5).unwrap();
        g.set_nodata(1, 1);
        let bytes = encode_ras1(&g);
        assert!(bytes.starts_with(b"RAS1 3 2 0.6 -9999\n"));
        let back = decode_ras1(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn ras1_nan_nodata_header() {
        let mut bytes = b"RAS1 2 1 1 nan\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(&4.0f32.to_le_bytes());
        let g = decode_ras1(&bytes, Path::new("mem")).unwrap();
        assert_eq!(g.get(0, 0), None);
        assert_eq!(g.get(1, 0), Some(4.0));
    }

    #[test]
    fn ras1_rejects_truncated_payload() {
        let mut bytes = b"RAS1 2 2 1 -9999\n".to_vec();
        bytes.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            decode_ras1(&bytes, Path::new("t.ras")),
            Err(Error::Format { .. })
        ));
        assert!(decode_ras1(b"RAS2 1 1 1 0\n\0\0\0\0", Path::new("t.ras")).is_err());
        assert!(decode_ras1(b"garbage", Path::new("t.ras")).is_err());
    }

    #[test]
    fn emb1_roundtrip() {
        let e = Embeddings {
            dim: 3,
            rows: vec![vec![1.0, 2.0, 3.5], vec![-1.0, 0.25, 8.0]],
        };
        let back = decode_emb1(&encode_emb1(&e), Path::new("mem")).unwrap();
        assert_eq!(back, e);
    }
}
