//! On-disk formats.
//!
//! Raw arrays are little-endian `f64`, row-major with `x` fastest (and the
//! component index fastest of all for vector fields). Each raw file `name.f64`
//! has a sidecar header `name.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid, ReceiverData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub kind: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub components: usize,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

pub fn header_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

pub fn data_path(any: &Path) -> PathBuf {
    any.with_extension("f64")
}

pub fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64s(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::format(path, "length is not a multiple of 8 bytes"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `values` to `path` (extension forced to `.f64`) plus the header.
/// Returns the two paths written.
pub fn write_raw(path: &Path, header: &RawHeader, values: &[f64]) -> Result<[PathBuf; 2]> {
    let expected = header.nx * header.ny * header.components;
    if values.len() != expected {
        return Err(Error::shape(expected, values.len()));
    }
    let data = data_path(path);
    let head = header_path(path);
    write_bytes(&data, &f64s_to_bytes(values))?;
    write_json(&head, header)?;
    Ok([data, head])
}

pub fn read_raw(path: &Path) -> Result<(RawHeader, Vec<f64>)> {
    let head = header_path(path);
    let header: RawHeader = read_json(&head)?;
    let data = data_path(path);
    let values = bytes_to_f64s(&read_bytes(&data)?, &data)?;
    let expected = header.nx * header.ny * header.components;
    if values.len() != expected {
        return Err(Error::format(
            &data,
            format!("header announces {expected} values, file holds {}", values.len()),
        ));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(&data, format!("non-finite value at index {k}")));
    }
    Ok((header, values))
}

pub fn field_header(grid: &Grid, kind: &str) -> RawHeader {
    RawHeader {
        nx: grid.nx,
        ny: grid.ny,
        dx: grid.dx,
        dy: grid.dy,
        kind: kind.to_string(),
        components: 1,
    }
}

pub fn write_field(path: &Path, field: &DensityField, grid: &Grid, kind: &str) -> Result<[PathBuf; 2]> {
    field.check_shape(grid)?;
    write_raw(path, &field_header(grid, kind), &field.values)
}

pub fn read_field(path: &Path) -> Result<(RawHeader, DensityField)> {
    let (header, values) = read_raw(path)?;
    if header.components != 1 {
        return Err(Error::format(path, "expected a scalar field"));
    }
    let field = DensityField {
        nx: header.nx,
        ny: header.ny,
        values,
    };
    Ok((header, field))
}

/// Receiver data as a raw array: `nx` is the step count, `ny` the receiver count.
pub fn write_receiver_raw(path: &Path, data: &ReceiverData) -> Result<[PathBuf; 2]> {
    let header = RawHeader {
        nx: data.nt,
        ny: data.n_receivers,
        dx: data.dt,
        dy: 1.0,
        kind: "receiver_data".into(),
        components: 1,
    };
    write_raw(path, &header, &data.samples)
}

pub fn read_receiver_raw(path: &Path) -> Result<ReceiverData> {
    let (header, values) = read_raw(path)?;
    if header.kind != "receiver_data" {
        return Err(Error::format(path, format!("kind '{}' is not receiver_data", header.kind)));
    }
    Ok(ReceiverData {
        n_receivers: header.ny,
        nt: header.nx,
        dt: header.dx,
        samples: values,
    })
}

/// CSV with a time column followed by one column per receiver.
pub fn receiver_csv(data: &ReceiverData) -> String {
    let mut out = String::from("time");
    for r in 0..data.n_receivers {
        out.push_str(&format!(",r{r}"));
    }
    out.push('\n');
    for k in 0..data.nt {
        out.push_str(&format!("{:e}", (k + 1) as f64 * data.dt));
        for r in 0..data.n_receivers {
            out.push_str(&format!(",{:e}", data.get(r, k)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_receiver_csv(text: &str, path: &Path) -> Result<ReceiverData> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    let n_receivers = header.split(',').count().saturating_sub(1);
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_receivers];
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| Error::format(path, format!("line {}: missing column", ln + 2)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", ln + 2)))
        };
        times.push(parse(cells.next())?);
        for col in columns.iter_mut() {
            col.push(parse(cells.next())?);
        }
    }
    let nt = times.len();
    let dt = times.first().copied().unwrap_or(0.0);
    let mut data = ReceiverData::zeros(n_receivers, nt, dt);
    for (r, col) in columns.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            data.set(r, k, *v);
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridConfig};

    #[test]
    fn field_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_grid(&GridConfig {
            nx: 7,
            ny: 5,
            ..GridConfig::default()
        })
        .unwrap();
        let values: Vec<f64> = (0..35).map(|k| (k as f64 * 0.37).sin() / 3.0).collect();
        let f = DensityField::from_values(&g, values).unwrap();
        let path = dir.path().join("f");
        write_field(&path, &f, &g, "density").unwrap();
        let (h, back) = read_field(&path).unwrap();
        assert_eq!(h.kind, "density");
        assert_eq!((h.nx, h.ny), (7, 5));
        assert_eq!(back, f);
        let raw = read_bytes(&data_path(&path)).unwrap();
        assert_eq!(raw.len(), 35 * 8);
        assert_eq!(&raw[8..16], &f.values[1].to_le_bytes());
    }

    #[test]
    fn receiver_csv_and_raw() {
        let mut d = ReceiverData::zeros(3, 4, 1e-6);
        for r in 0..3 {
            for k in 0..4 {
                d.set(r, k, (r * 10 + k) as f64 * 0.125);
            }
        }
        let text = receiver_csv(&d);
        assert!(text.starts_with("time,r0,r1,r2\n1e-6,"));
        let back = parse_receiver_csv(&text, Path::new("x.csv")).unwrap();
        assert_eq!(back.samples, d.samples);
        assert_eq!(back.dt, d.dt);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d");
        write_receiver_raw(&p, &d).unwrap();
        assert_eq!(read_receiver_raw(&p).unwrap(), d);
    }

    #[test]
    fn raw_rejects_bad_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        let header = RawHeader {
            nx: 2,
            ny: 2,
            dx: 1.0,
            dy: 1.0,
            kind: "density".into(),
            components: 1,
        };
        assert!(write_raw(&p, &header, &[1.0]).is_err());
        write_raw(&p, &header, &[1.0; 4]).unwrap();
        write_bytes(&data_path(&p), &[0u8; 24]).unwrap();
        assert!(matches!(read_raw(&p), Err(Error::Format { .. })));
    }
}
