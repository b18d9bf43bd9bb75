//! Particle and flow velocities from a sequence of reconstructed frames:
//! blob detection, nearest-point matching and Horn–Schunck optical flow.

use std::collections::VecDeque;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::grid::{DensityField, Grid};

/// Blobs found in one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectedParticles {
    pub centroids: Vec<[f64; 2]>,
    pub masses: Vec<f64>,
    /// Cell indices of each blob.
    #[serde(skip)]
    pub components: Vec<Vec<usize>>,
    pub threshold: f64,
}

impl DetectedParticles {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// 4-connected components of cells at or above `threshold * max`, with
/// value-weighted centroids.
pub fn detect_particles(frame: &DensityField, grid: &Grid, threshold: f64) -> Result<DetectedParticles> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!("detection threshold must lie in (0, 1), got {threshold}")));
    }
    frame.check_shape(grid)?;
    let mut out = DetectedParticles {
        centroids: Vec::new(),
        masses: Vec::new(),
        components: Vec::new(),
        threshold,
    };
    let peak = frame.max();
    if !(peak > 0.0) {
        return Ok(out);
    }
    let level = threshold * peak;
    let (nx, ny) = (grid.nx, grid.ny);
    let mut seen = vec![false; frame.values.len()];
    let mut queue = VecDeque::new();
    for start in 0..frame.values.len() {
        if seen[start] || frame.values[start] < level {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut cells = Vec::new();
        while let Some(k) = queue.pop_front() {
            cells.push(k);
            let (i, j) = (k % nx, k / nx);
            let mut visit = |n: usize| {
                if !seen[n] && frame.values[n] >= level {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < nx {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - nx);
            }
            if j + 1 < ny {
                visit(k + nx);
            }
        }
        cells.sort_unstable();
        let mass: f64 = cells.iter().map(|&k| frame.values[k]).sum();
        let mut c = [0.0; 2];
        for &k in &cells {
            let p = grid.cell_center(k % nx, k / nx);
            c[0] += frame.values[k] * p[0];
            c[1] += frame.values[k] * p[1];
        }
        out.centroids.push([c[0] / mass, c[1] / mass]);
        out.masses.push(mass * grid.cell_area());
        out.components.push(cells);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparseVector {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

/// Dense per-cell velocities (m/s); `mask` marks cells where flow is observable.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlow {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowEstimate {
    Sparse { vectors: Vec<SparseVector>, frame_period: f64 },
    Dense { flow: DenseFlow, frame_period: f64 },
}

impl FlowEstimate {
    pub fn frame_period(&self) -> f64 {
        match self {
            FlowEstimate::Sparse { frame_period, .. } | FlowEstimate::Dense { frame_period, .. } => *frame_period,
        }
    }

    /// `(position, velocity)` pairs; dense estimates contribute masked cell centers.
    pub fn samples(&self, grid: &Grid) -> Vec<SparseVector> {
        match self {
            FlowEstimate::Sparse { vectors, .. } => vectors.clone(),
            FlowEstimate::Dense { flow, .. } => (0..flow.u.len())
                .filter(|&k| flow.mask[k])
                .map(|k| SparseVector {
                    position: grid.cell_center(k % flow.nx, k / flow.nx),
                    velocity: [flow.u[k], flow.v[k]],
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            FlowEstimate::Sparse { vectors, .. } => vectors
                .iter()
                .all(|s| s.position.iter().chain(&s.velocity).all(|v| v.is_finite())),
            FlowEstimate::Dense { flow, .. } => flow.u.iter().chain(&flow.v).all(|v| v.is_finite()),
        }
    }

    /// CSV `x,y,u,v`.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut out = String::from("x,y,u,v\n");
        for s in self.samples(grid) {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e}\n",
                s.position[0], s.position[1], s.velocity[0], s.velocity[1]
            ));
        }
        out
    }
}

fn nearest(from: [f64; 2], candidates: &[[f64; 2]]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in candidates.iter().enumerate() {
        let d = (c[0] - from[0]).hypot(c[1] - from[1]);
        // strict comparison keeps the smallest index on ties
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best
}

fn min_spacing(points: &[[f64; 2]]) -> f64 {
    let mut m = f64::INFINITY;
    for (a, p) in points.iter().enumerate() {
        for q in &points[a + 1..] {
            m = m.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    m
}

/// Mutual-nearest matches between consecutive frames; each velocity is the
/// displacement over `frame_period`, placed at the displacement midpoint.
pub fn nearest_point_velocities(frames: &[DetectedParticles], frame_period: f64) -> Result<FlowEstimate> {
    if frames.len() < 2 {
        return Err(Error::config("nearest-point matching needs at least two frames"));
    }
    if !(frame_period > 0.0) {
        return Err(Error::config("frame period must be positive"));
    }
    let mut vectors = Vec::new();
    for (k, pair) in frames.windows(2).enumerate() {
        let (a, b) = (&pair[0].centroids, &pair[1].centroids);
        if a.is_empty() || b.is_empty() {
            warn!("frame pair {k} has an empty frame; skipped");
            continue;
        }
        let spacing = min_spacing(a).min(min_spacing(b));
        for (m, p) in a.iter().enumerate() {
            let Some((n, d)) = nearest(*p, b) else { continue };
            if nearest(b[n], a).map(|(back, _)| back) != Some(m) {
                continue;
            }
            if d >= 0.5 * spacing {
                warn!("frame pair {k}: displacement {d:.4} m is not below half the particle spacing {spacing:.4} m");
            }
            let q = b[n];
            vectors.push(SparseVector {
                position: [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])],
                velocity: [(q[0] - p[0]) / frame_period, (q[1] - p[1]) / frame_period],
            });
        }
    }
    Ok(FlowEstimate::Sparse { vectors, frame_period })
}

/// Raw Horn–Schunck output in cells per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HornSchunck {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Energy before the first sweep and after each sweep.
    pub energy: Vec<f64>,
}

const EDGE_WEIGHT: f64 = 1.0 / 6.0;
const CORNER_WEIGHT: f64 = 1.0 / 12.0;

fn neighbors(i: usize, j: usize, nx: usize, ny: usize) -> impl Iterator<Item = (usize, f64)> {
    let offsets: [(i64, i64, f64); 8] = [
        (-1, 0, EDGE_WEIGHT),
        (1, 0, EDGE_WEIGHT),
        (0, -1, EDGE_WEIGHT),
        (0, 1, EDGE_WEIGHT),
        (-1, -1, CORNER_WEIGHT),
        (1, -1, CORNER_WEIGHT),
        (-1, 1, CORNER_WEIGHT),
        (1, 1, CORNER_WEIGHT),
    ];
    offsets.into_iter().filter_map(move |(di, dj, w)| {
        let (a, b) = (i as i64 + di, j as i64 + dj);
        (a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny).then(|| (b as usize * nx + a as usize, w))
    })
}

struct Gradients {
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
}

fn image_gradients(a: &DensityField, b: &DensityField) -> Gradients {
    let (nx, ny) = (a.nx, a.ny);
    let mean: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    let at = |i: usize, j: usize| mean[j * nx + i];
    let mut ix = vec![0.0; nx * ny];
    let mut iy = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            ix[k] = match (i > 0, i + 1 < nx) {
                (true, true) => 0.5 * (at(i + 1, j) - at(i - 1, j)),
                (false, true) => at(i + 1, j) - at(i, j),
                (true, false) => at(i, j) - at(i - 1, j),
                _ => 0.0,
            };
            iy[k] = match (j > 0, j + 1 < ny) {
                (true, true) => 0.5 * (at(i, j + 1) - at(i, j - 1)),
                (false, true) => at(i, j + 1) - at(i, j),
                (true, false) => at(i, j) - at(i, j - 1),
                _ => 0.0,
            };
        }
    }
    let it = b.values.iter().zip(&a.values).map(|(y, x)| y - x).collect();
    Gradients { ix, iy, it }
}

fn hs_energy(g: &Gradients, u: &[f64], v: &[f64], alpha: f64, nx: usize, ny: usize) -> f64 {
    let mut data = 0.0;
    let mut smooth = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let r = g.ix[k] * u[k] + g.iy[k] * v[k] + g.it[k];
            data += r * r;
            for (n, w) in neighbors(i, j, nx, ny) {
                // each undirected edge once
                if n > k {
                    smooth += w * ((u[k] - u[n]).powi(2) + (v[k] - v[n]).powi(2));
                }
            }
        }
    }
    data + alpha * alpha * smooth
}

/// Horn–Schunck flow from `a` to `b` by block-Jacobi sweeps on
/// `sum (Ix u + Iy v + It)^2 + alpha^2 sum_edges w |grad|^2`.
pub fn horn_schunck(a: &DensityField, b: &DensityField, alpha: f64, iterations: usize) -> Result<HornSchunck> {
    if (a.nx, a.ny) != (b.nx, b.ny) {
        return Err(Error::shape(format!("{}x{}", a.nx, a.ny), format!("{}x{}", b.nx, b.ny)));
    }
    if !(alpha > 0.0) {
        return Err(Error::config(format!("smoothness weight must be positive, got {alpha}")));
    }
    let (nx, ny) = (a.nx, a.ny);
    let g = image_gradients(a, b);
    let a2 = alpha * alpha;
    let mut u = vec![0.0; nx * ny];
    let mut v = vec![0.0; nx * ny];
    let mut un = u.clone();
    let mut vn = v.clone();
    let mut energy = vec![hs_energy(&g, &u, &v, alpha, nx, ny)];
    for _ in 0..iterations {
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let (mut su, mut sv, mut kappa) = (0.0, 0.0, 0.0);
                for (n, w) in neighbors(i, j, nx, ny) {
                    su += w * u[n];
                    sv += w * v[n];
                    kappa += w;
                }
                let (ub, vb) = (su / kappa, sv / kappa);
                let (ix, iy) = (g.ix[k], g.iy[k]);
                let t = (ix * ub + iy * vb + g.it[k]) / (a2 * kappa + ix * ix + iy * iy);
                un[k] = ub - ix * t;
                vn[k] = vb - iy * t;
            }
        }
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut v, &mut vn);
        energy.push(hs_energy(&g, &u, &v, alpha, nx, ny));
    }
    Ok(HornSchunck { nx, ny, u, v, energy })
}

/// Separable Gaussian blur with edge renormalization.
pub fn gaussian_smooth(field: &DensityField, sigma_cells: f64) -> DensityField {
    if !(sigma_cells > 0.0) {
        return field.clone();
    }
    let radius = (3.0 * sigma_cells).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let (nx, ny) = (field.nx, field.ny);
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (t, w) in kernel.iter().enumerate() {
                    let d = t as i64 - radius;
                    let (a, b) = if along_x { (i as i64 + d, j as i64) } else { (i as i64, j as i64 + d) };
                    if a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny {
                        acc += w * src[b as usize * nx + a as usize];
                        wsum += w;
                    }
                }
                out[j * nx + i] = acc / wsum;
            }
        }
        out
    };
    let tmp = pass(&field.values, true);
    DensityField {
        nx,
        ny,
        values: pass(&tmp, false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpticalFlowParams {
    pub alpha: f64,
    pub iterations: usize,
    /// Gaussian pre-smoothing width in cells (0 disables).
    pub smoothing: f64,
    /// Dense flow is reported where intensity exceeds this fraction of the max.
    pub mask_fraction: f64,
}

impl Default for OpticalFlowParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            iterations: 500,
            smoothing: 1.5,
            mask_fraction: 0.01,
        }
    }
}

/// Clamps negatives, normalizes both frames by their common max and blurs.
pub fn prepare_frames(a: &DensityField, b: &DensityField, smoothing: f64) -> (DensityField, DensityField) {
    let peak = a.max().max(b.max());
    let norm = |f: &DensityField| {
        let values = f
            .values
            .iter()
            .map(|v| if peak > 0.0 { v.max(0.0) / peak } else { 0.0 })
            .collect();
        gaussian_smooth(&DensityField { nx: f.nx, ny: f.ny, values }, smoothing)
    };
    (norm(a), norm(b))
}

/// Dense flow between two frames in m/s.
pub fn dense_flow(
    a: &DensityField,
    b: &DensityField,
    grid: &Grid,
    frame_period: f64,
    params: &OpticalFlowParams,
) -> Result<FlowEstimate> {
    a.check_shape(grid)?;
    b.check_shape(grid)?;
    if !(frame_period > 0.0) {
        return Err(Error::config("frame period must be positive"));
    }
    let (pa, pb) = prepare_frames(a, b, params.smoothing);
    let hs = horn_schunck(&pa, &pb, params.alpha, params.iterations)?;
    let peak = pa.max().max(pb.max());
    let mask = pa
        .values
        .iter()
        .zip(&pb.values)
        .map(|(x, y)| peak > 0.0 && x.max(*y) > params.mask_fraction * peak)
        .collect();
    let flow = DenseFlow {
        nx: grid.nx,
        ny: grid.ny,
        u: hs.u.iter().map(|d| d * grid.dx / frame_period).collect(),
        v: hs.v.iter().map(|d| d * grid.dy / frame_period).collect(),
        mask,
    };
    Ok(FlowEstimate::Dense { flow, frame_period })
}

/// Dense flow averaged over each detected blob (weighted by `frame`) and
/// placed half a frame along its motion from the blob centroid.
pub fn blob_velocities(
    flow: &DenseFlow,
    frame: &DensityField,
    detected: &DetectedParticles,
    frame_period: f64,
) -> Vec<SparseVector> {
    detected
        .components
        .iter()
        .zip(&detected.centroids)
        .map(|(cells, c)| {
            let (mut u, mut v, mut w) = (0.0, 0.0, 0.0);
            for &k in cells {
                let m = frame.values[k].max(0.0);
                u += m * flow.u[k];
                v += m * flow.v[k];
                w += m;
            }
            let vel = if w > 0.0 { [u / w, v / w] } else { [0.0, 0.0] };
            SparseVector {
                position: [c[0] + 0.5 * frame_period * vel[0], c[1] + 0.5 * frame_period * vel[1]],
                velocity: vel,
            }
        })
        .collect()
}

/// `||est - truth|| / ||truth||` over paired vectors.
pub fn relative_vector_error(estimate: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::shape(truth.len(), estimate.len()));
    }
    let den: f64 = truth.iter().map(|t| t[0] * t[0] + t[1] * t[1]).sum();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e[0] - t[0]).powi(2) + (e[1] - t[1]).powi(2))
        .sum();
    Ok((num / den).sqrt())
}

/// Relative error of an estimate against the true field at time `t`. Sparse
/// estimates are compared at their positions; dense ones on masked cells,
/// further restricted by `mask` when given.
pub fn velocity_error(
    estimate: &FlowEstimate,
    truth: &VelocityField,
    t: f64,
    grid: &Grid,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let samples: Vec<SparseVector> = match (estimate, mask) {
        (FlowEstimate::Dense { flow, .. }, Some(m)) => {
            if m.len() != flow.u.len() {
                return Err(Error::shape(flow.u.len(), m.len()));
            }
            (0..flow.u.len())
                .filter(|&k| m[k] && flow.mask[k])
                .map(|k| SparseVector {
                    position: grid.cell_center(k % flow.nx, k / flow.nx),
                    velocity: [flow.u[k], flow.v[k]],
                })
                .collect()
        }
        _ => estimate.samples(grid),
    };
    if samples.is_empty() {
        return Err(Error::config("velocity comparison mask is empty"));
    }
    let est: Vec<[f64; 2]> = samples.iter().map(|s| s.velocity).collect();
    let tru: Vec<[f64; 2]> = samples.iter().map(|s| truth.eval(s.position, t)).collect();
    relative_vector_error(&est, &tru)
}

/// HSV coding of a dense flow: hue is direction, saturation is magnitude
/// relative to `max_speed`, value is 1. Returns RGB bytes, row 0 at the top.
pub fn flow_to_rgb(flow: &DenseFlow, max_speed: Option<f64>) -> Vec<u8> {
    let peak = max_speed.unwrap_or_else(|| {
        flow.u
            .iter()
            .zip(&flow.v)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    });
    let mut out = Vec::with_capacity(flow.nx * flow.ny * 3);
    for row in (0..flow.ny).rev() {
        for i in 0..flow.nx {
            let k = row * flow.nx + i;
            let (u, v) = (flow.u[k], flow.v[k]);
            let hue = (v.atan2(u).to_degrees() + 360.0) % 360.0;
            let sat = if peak > 0.0 { (u.hypot(v) / peak).min(1.0) } else { 0.0 };
            out.extend_from_slice(&hsv_to_rgb(hue, sat, 1.0));
        }
    }
    out
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, rasterize_particles, GridConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        build_grid(&GridConfig {
            nx: 80,
            ny: 40,
            lx: 1.6,
            ly: 0.8,
            ..GridConfig::default()
        })
        .unwrap()
    }

    fn blob(g: &Grid, c: [f64; 2], sigma: f64) -> DensityField {
        let mut f = DensityField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let p = g.cell_center(i, j);
                let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                f.set(i, j, (-r2 / (2.0 * sigma * sigma)).exp());
            }
        }
        f
    }

    #[test]
    fn single_disk_centroid() {
        let g = grid();
        let c = [0.613, 0.347];
        let f = rasterize_particles(&[c], 0.14, &g).unwrap();
        let d = detect_particles(&f, &g, 0.5).unwrap();
        assert_eq!(d.len(), 1);
        let e = d.centroids[0];
        assert!((e[0] - c[0]).hypot(e[1] - c[1]) < g.dx);
        assert!(detect_particles(&DensityField::zeros(&g), &g, 0.5).unwrap().is_empty());
        assert!(detect_particles(&f, &g, 1.0).is_err());
    }

    #[test]
    fn two_disks_two_components() {
        let g = grid();
        let f = rasterize_particles(&[[0.3, 0.3], [1.1, 0.5]], 0.14, &g).unwrap();
        assert_eq!(detect_particles(&f, &g, 0.5).unwrap().len(), 2);
    }

    #[test]
    fn raising_threshold_never_adds_mass() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut f = blob(&g, [0.5, 0.4], 0.1);
        f.axpy(0.7, &blob(&g, [1.2, 0.3], 0.06));
        f.values.iter_mut().for_each(|v| *v += 0.05 * rng.gen_range(-1.0..1.0));
        let mut last = f64::INFINITY;
        for t in [0.1, 0.2, 0.3, 0.5, 0.7, 0.9] {
            let m = detect_particles(&f, &g, t).unwrap().total_mass();
            assert!(m <= last);
            last = m;
        }
    }

    fn detections(points: &[[f64; 2]]) -> DetectedParticles {
        DetectedParticles {
            centroids: points.to_vec(),
            masses: vec![1.0; points.len()],
            components: vec![Vec::new(); points.len()],
            threshold: 0.5,
        }
    }

    #[test]
    fn identical_frames_zero_velocity() {
        let pts = [[0.2, 0.3], [0.9, 0.1], [1.3, 0.6]];
        let est = nearest_point_velocities(&[detections(&pts), detections(&pts)], 0.1).unwrap();
        let FlowEstimate::Sparse { vectors, .. } = est else { panic!() };
        assert_eq!(vectors.len(), 3);
        assert!(vectors.iter().all(|s| s.velocity == [0.0, 0.0]));
    }

    #[test]
    fn single_shift_velocity() {
        let g = grid();
        let a = rasterize_particles(&[[0.5, 0.4]], 0.14, &g).unwrap();
        let b = rasterize_particles(&[[0.56, 0.4]], 0.14, &g).unwrap();
        let frames = [detect_particles(&a, &g, 0.5).unwrap(), detect_particles(&b, &g, 0.5).unwrap()];
        let dt = 0.05;
        let FlowEstimate::Sparse { vectors, .. } = nearest_point_velocities(&frames, dt).unwrap() else { panic!() };
        assert_eq!(vectors.len(), 1);
        assert!((vectors[0].velocity[0] - 0.06 / dt).abs() <= g.dx / dt);
        assert!(vectors[0].velocity[1].abs() <= g.dx / dt);
    }

    #[test]
    fn empty_frames_are_skipped() {
        let pts = [[0.2, 0.3]];
        let est = nearest_point_velocities(&[detections(&pts), detections(&[]), detections(&pts)], 0.1).unwrap();
        let FlowEstimate::Sparse { vectors, .. } = est else { panic!() };
        assert!(vectors.is_empty());
        assert!(nearest_point_velocities(&[detections(&pts)], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn matching_ignores_listing_order(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<[f64; 2]> = (0..8).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..2.0)]).collect();
            let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + rng.gen_range(-0.05..0.05), p[1] + rng.gen_range(-0.05..0.05)]).collect();
            let mut pa = a.clone();
            let mut pb = b.clone();
            pa.reverse();
            pb.rotate_left(3);
            let key = |e: FlowEstimate| {
                let FlowEstimate::Sparse { mut vectors, .. } = e else { unreachable!() };
                vectors.sort_by(|x, y| x.position.partial_cmp(&y.position).unwrap());
                vectors
            };
            let e1 = key(nearest_point_velocities(&[detections(&a), detections(&b)], 0.1).unwrap());
            let e2 = key(nearest_point_velocities(&[detections(&pa), detections(&pb)], 0.1).unwrap());
            prop_assert_eq!(e1, e2);
        }
    }

    #[test]
    fn hs_identical_frames_zero_flow() {
        let g = grid();
        let f = blob(&g, [0.8, 0.4], 0.08);
        let hs = horn_schunck(&f, &f, 0.5, 50).unwrap();
        assert!(hs.u.iter().chain(&hs.v).all(|v| *v == 0.0));
    }

    #[test]
    fn hs_recovers_one_cell_shift() {
        let g = grid();
        let a = blob(&g, [0.8, 0.4], 0.05);
        let b = blob(&g, [0.8 + g.dx, 0.4], 0.05);
        let hs = horn_schunck(&a, &b, 0.5, 200).unwrap();
        let mut us: Vec<f64> = Vec::new();
        let mut vs: Vec<f64> = Vec::new();
        let peak = a.max();
        for k in 0..a.values.len() {
            if a.values[k].max(b.values[k]) > 0.1 * peak {
                us.push(hs.u[k]);
                vs.push(hs.v[k]);
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|x, y| x.partial_cmp(y).unwrap());
            v[v.len() / 2]
        };
        let mu = median(&mut us);
        let mv = median(&mut vs);
        assert!((0.7..=1.3).contains(&mu), "{mu}");
        assert!(mv.abs() < 0.3, "{mv}");
    }

    #[test]
    fn hs_scaling_invariance() {
        let g = grid();
        let a = blob(&g, [0.8, 0.4], 0.08);
        let b = blob(&g, [0.83, 0.41], 0.08);
        let h1 = horn_schunck(&a, &b, 0.4, 100).unwrap();
        let h2 = horn_schunck(&a.scaled(2.0), &b.scaled(2.0), 0.8, 100).unwrap();
        for (x, y) in h1.u.iter().chain(&h1.v).zip(h2.u.iter().chain(&h2.v)) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn hs_energy_non_increasing() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = blob(&g, [0.6, 0.4], 0.07);
        a.axpy(0.5, &blob(&g, [1.1, 0.3], 0.05));
        let mut b = blob(&g, [0.63, 0.42], 0.07);
        b.axpy(0.5, &blob(&g, [1.08, 0.33], 0.05));
        b.values.iter_mut().for_each(|v| *v += 0.02 * rng.gen_range(-1.0..1.0));
        let hs = horn_schunck(&a, &b, 0.3, 100).unwrap();
        for w in hs.energy.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
    }

    #[test]
    fn velocity_error_examples() {
        let g = grid();
        let field = VelocityField::taylor_green(g.lx, g.ly);
        let pts: Vec<[f64; 2]> = (0..10).map(|k| [0.1 + 0.13 * k as f64, 0.05 + 0.07 * k as f64]).collect();
        let truth: Vec<[f64; 2]> = pts.iter().map(|p| field.eval(*p, 0.0)).collect();
        let exact = FlowEstimate::Sparse {
            vectors: pts.iter().zip(&truth).map(|(p, t)| SparseVector { position: *p, velocity: *t }).collect(),
            frame_period: 0.1,
        };
        assert_eq!(velocity_error(&exact, &field, 0.0, &g, None).unwrap(), 0.0);
        let scaled: Vec<[f64; 2]> = truth.iter().map(|t| [1.05 * t[0], 1.05 * t[1]]).collect();
        assert!((relative_vector_error(&scaled, &truth).unwrap() - 0.05).abs() < 1e-12);
        // perturbation of prescribed relative size
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dir: Vec<[f64; 2]> = truth.iter().map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let dn: f64 = dir.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>().sqrt();
        let tn: f64 = truth.iter().map(|t| t[0] * t[0] + t[1] * t[1]).sum::<f64>().sqrt();
        let eps = 0.037;
        dir.iter_mut().for_each(|d| {
            d[0] *= eps * tn / dn;
            d[1] *= eps * tn / dn;
        });
        let pert: Vec<[f64; 2]> = truth.iter().zip(&dir).map(|(t, d)| [t[0] + d[0], t[1] + d[1]]).collect();
        assert!((relative_vector_error(&pert, &truth).unwrap() - eps).abs() < 1e-12);
        assert!(relative_vector_error(&pert, &vec![[0.0, 0.0]; pert.len()]).is_err());
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(77.0, 0.0, 1.0), [255, 255, 255]);
    }
}
