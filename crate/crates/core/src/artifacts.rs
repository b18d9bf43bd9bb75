//! Collecting experiment outputs in memory and writing them with a
//! checksummed manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid, ReceiverData, ReceiverLayout};
use crate::io::{f64s_to_bytes, field_header, read_bytes, write_bytes, RawHeader};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    bytes: Vec<u8>,
    numeric: bool,
}

/// Files keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactSet {
    entries: BTreeMap<String, Entry>,
}

impl ArtifactSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.entries.get(name).map(|e| e.bytes.as_slice())
    }

    /// Numeric artifacts only (raw arrays, their headers and CSVs): the part
    /// that must be identical across reruns.
    pub fn numeric(&self) -> BTreeMap<&str, &[u8]> {
        self.entries
            .iter()
            .filter(|(_, e)| e.numeric)
            .map(|(k, e)| (k.as_str(), e.bytes.as_slice()))
            .collect()
    }

    fn insert(&mut self, name: impl Into<String>, bytes: Vec<u8>, numeric: bool) {
        self.entries.insert(name.into(), Entry { bytes, numeric });
    }

    /// Pretty JSON; not part of the numeric set since reports carry timings.
    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_vec_pretty(value)
            .map_err(|e| Error::format(name, format!("JSON encoding failed: {e}")))?;
        self.insert(name, text, false);
        Ok(())
    }

    pub fn add_csv(&mut self, name: &str, text: String) {
        self.insert(name, text.into_bytes(), true);
    }

    pub fn add_raw(&mut self, stem: &str, header: &RawHeader, values: &[f64]) -> Result<()> {
        let head = serde_json::to_vec_pretty(header)
            .map_err(|e| Error::format(stem, format!("JSON encoding failed: {e}")))?;
        self.insert(format!("{stem}.json"), head, true);
        self.insert(format!("{stem}.f64"), f64s_to_bytes(values), true);
        Ok(())
    }

    pub fn add_field(&mut self, stem: &str, field: &DensityField, grid: &Grid, kind: &str) -> Result<()> {
        self.add_raw(stem, &field_header(grid, kind), &field.values)
    }

    pub fn add_receiver_data(&mut self, stem: &str, data: &ReceiverData) -> Result<()> {
        let header = RawHeader {
            nx: data.nt,
            ny: data.n_receivers,
            dx: data.dt,
            dy: 1.0,
            kind: "receiver_data".into(),
            components: 1,
        };
        self.add_raw(stem, &header, &data.samples)
    }

    pub fn add_png(&mut self, name: &str, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
        let bytes = encode_png(width, height, rgb).map_err(|reason| Error::Image {
            path: name.into(),
            reason,
        })?;
        self.insert(name, bytes, false);
        Ok(())
    }
}

fn encode_png(width: usize, height: usize, rgb: &[u8]) -> std::result::Result<Vec<u8>, String> {
    if rgb.len() != width * height * 3 {
        return Err(format!("expected {} bytes of RGB, got {}", width * height * 3, rgb.len()));
    }
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(rgb, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub numeric: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes every artifact under `outdir` plus `manifest.json`.
pub fn emit_artifacts(set: &ArtifactSet, outdir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut manifest = Manifest::default();
    for (name, e) in &set.entries {
        write_bytes(&outdir.join(name), &e.bytes)?;
        manifest.entries.push(ManifestEntry {
            path: name.clone(),
            sha256: sha256_hex(&e.bytes),
            bytes: e.bytes.len() as u64,
            numeric: e.numeric,
        });
    }
    let text = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::format(outdir.join(MANIFEST_NAME), e.to_string()))?;
    write_bytes(&outdir.join(MANIFEST_NAME), &text)?;
    Ok(manifest)
}

/// Re-reads every listed file and checks its size and checksum.
pub fn verify_manifest(outdir: &Path) -> Result<Manifest> {
    let path = outdir.join(MANIFEST_NAME);
    let manifest: Manifest = serde_json::from_slice(&read_bytes(&path)?)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    for e in &manifest.entries {
        let p: PathBuf = outdir.join(&e.path);
        let bytes = read_bytes(&p)?;
        if bytes.len() as u64 != e.bytes || sha256_hex(&bytes) != e.sha256 {
            return Err(Error::format(p, "checksum does not match the manifest"));
        }
    }
    Ok(manifest)
}

const COLORMAP: [[f64; 3]; 5] = [
    [0.267, 0.005, 0.329],
    [0.230, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
];

/// Fixed five-stop colormap on `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (COLORMAP.len() - 1) as f64;
    let k = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - k as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = COLORMAP[k][c] + f * (COLORMAP[k + 1][c] - COLORMAP[k][c]);
        out[c] = (v * 255.0).round() as u8;
    }
    out
}

/// Heat map of `field` scaled to `[min, max]`, receivers drawn red, row 0 at
/// the top of the image.
pub fn field_to_rgb(field: &DensityField, layout: Option<&ReceiverLayout>) -> Vec<u8> {
    let lo = field.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut px: Vec<[u8; 3]> = field.values.iter().map(|v| colormap((v - lo) / span)).collect();
    if let Some(l) = layout {
        for &(i, j) in &l.positions {
            px[j * field.nx + i] = [255, 0, 0];
        }
    }
    let mut out = Vec::with_capacity(px.len() * 3);
    for j in (0..field.ny).rev() {
        for i in 0..field.nx {
            out.extend_from_slice(&px[j * field.nx + i]);
        }
    }
    out
}

pub fn add_field_png(set: &mut ArtifactSet, name: &str, field: &DensityField, layout: Option<&ReceiverLayout>) -> Result<()> {
    set.add_png(name, field.nx, field.ny, &field_to_rgb(field, layout))
}

/// Receiver traces as an image: time across, receivers down.
pub fn add_receiver_png(set: &mut ArtifactSet, name: &str, data: &ReceiverData) -> Result<()> {
    let m = data.max_abs();
    let scale = if m > 0.0 { m } else { 1.0 };
    let mut rgb = Vec::with_capacity(data.samples.len() * 3);
    for r in 0..data.n_receivers {
        for k in 0..data.nt {
            rgb.extend_from_slice(&colormap(0.5 + 0.5 * data.get(r, k) / scale));
        }
    }
    set.add_png(name, data.nt, data.n_receivers, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ArtifactSet {
        let mut s = ArtifactSet::new();
        let f = DensityField {
            nx: 3,
            ny: 2,
            values: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        };
        s.add_raw("fields/f", &RawHeader { nx: 3, ny: 2, dx: 0.1, dy: 0.1, kind: "density".into(), components: 1 }, &f.values)
            .unwrap();
        s.add_csv("a.csv", "x,y\n1,2\n".into());
        s.add_json("report.json", &serde_json::json!({"err": 0.5})).unwrap();
        add_field_png(&mut s, "f.png", &f, None).unwrap();
        s
    }

    #[test]
    fn empty_set_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = emit_artifacts(&ArtifactSet::new(), dir.path()).unwrap();
        assert!(m.entries.is_empty());
        assert_eq!(verify_manifest(dir.path()).unwrap(), m);
    }

    #[test]
    fn rerun_has_identical_checksums_and_verifies() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = emit_artifacts(&sample(), d1.path()).unwrap();
        let m2 = emit_artifacts(&sample(), d2.path()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.entries.len(), 5);
        verify_manifest(d1.path()).unwrap();
        std::fs::write(d1.path().join("a.csv"), "tampered").unwrap();
        assert!(verify_manifest(d1.path()).is_err());
    }

    #[test]
    fn numeric_subset_excludes_reports_and_images() {
        let s = sample();
        let names: Vec<&str> = s.numeric().keys().copied().collect();
        assert_eq!(names, ["a.csv", "fields/f.f64", "fields/f.json"]);
    }

    #[test]
    fn png_size_is_checked() {
        assert!(ArtifactSet::new().add_png("x.png", 2, 2, &[0; 5]).is_err());
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), [68, 1, 84]);
        assert_eq!(colormap(1.0), [253, 231, 37]);
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }
}
