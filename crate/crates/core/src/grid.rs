//! Discretization of the measurement domain and the containers shared by
//! every other module.
//!
//! The physical domain is `[0, lx] x [0, ly]`, split into `nx * ny` cells.
//! Field arrays are row-major with `x` fastest: `values[j * nx + i]` is the
//! cell whose center is `((i + 0.5) dx, (j + 0.5) dy)`. The absorbing layer
//! (`pml_width` cells on every side) lives outside this array; it is owned by
//! the wave solver and never appears in fields, receivers or norms.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters from which a [`Grid`] is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Sound speed in m/s.
    pub c: f64,
    /// Fraction of the CFL limit used when `dt` is derived.
    pub cfl_safety: f64,
    /// Explicit timestep; checked against the CFL limit when present.
    pub dt: Option<f64>,
    pub nt: usize,
    pub pml_width: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 236,
            ny: 108,
            lx: 4.71,
            ly: 2.15,
            c: 1500.0,
            cfl_safety: 0.5,
            dt: None,
            nt: 1,
            pml_width: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub lx: f64,
    pub ly: f64,
    pub c: f64,
    pub dt: f64,
    pub nt: usize,
    pub pml_width: usize,
}

/// Largest stable leapfrog timestep scaled by `safety`:
/// `c dt sqrt(1/dx^2 + 1/dy^2) = safety`.
pub fn cfl_timestep(dx: f64, dy: f64, c: f64, safety: f64) -> Result<f64> {
    if !(dx > 0.0 && dy > 0.0 && c > 0.0) {
        return Err(Error::config(format!(
            "spacing and sound speed must be positive (dx={dx}, dy={dy}, c={c})"
        )));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::config(format!(
            "CFL safety factor must lie in (0, 1], got {safety}"
        )));
    }
    Ok(safety / (c * (1.0 / (dx * dx) + 1.0 / (dy * dy)).sqrt()))
}

pub fn build_grid(cfg: &GridConfig) -> Result<Grid> {
    if cfg.nx == 0 || cfg.ny == 0 || cfg.nt == 0 {
        return Err(Error::config(format!(
            "cell and step counts must be positive (nx={}, ny={}, nt={})",
            cfg.nx, cfg.ny, cfg.nt
        )));
    }
    if !(cfg.lx > 0.0 && cfg.ly > 0.0) {
        return Err(Error::config(format!(
            "domain extents must be positive (lx={}, ly={})",
            cfg.lx, cfg.ly
        )));
    }
    let dx = cfg.lx / cfg.nx as f64;
    let dy = cfg.ly / cfg.ny as f64;
    let dt = match cfg.dt {
        None => cfl_timestep(dx, dy, cfg.c, cfg.cfl_safety)?,
        Some(dt) => {
            // validates c as a side effect
            let limit = cfl_timestep(dx, dy, cfg.c, 1.0)?;
            if !(dt > 0.0) {
                return Err(Error::config(format!("timestep must be positive, got {dt}")));
            }
            if dt > limit * (1.0 + 1e-12) {
                return Err(Error::config(format!(
                    "timestep {dt:e} s violates the CFL limit {limit:e} s"
                )));
            }
            dt
        }
    };
    Ok(Grid {
        nx: cfg.nx,
        ny: cfg.ny,
        dx,
        dy,
        lx: cfg.lx,
        ly: cfg.ly,
        c: cfg.c,
        dt,
        nt: cfg.nt,
        pml_width: cfg.pml_width,
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy]
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Record length `T = nt dt`.
    pub fn duration(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    pub fn diagonal(&self) -> f64 {
        self.lx.hypot(self.ly)
    }

    pub fn courant_number(&self) -> f64 {
        self.c * self.dt * (1.0 / (self.dx * self.dx) + 1.0 / (self.dy * self.dy)).sqrt()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[0] <= self.lx && p[1] >= 0.0 && p[1] <= self.ly
    }

    /// Cell containing `p`, if any.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let i = ((p[0] / self.dx) as usize).min(self.nx - 1);
        let j = ((p[1] / self.dy) as usize).min(self.ny - 1);
        Some((i, j))
    }

    /// Same grid with a different step count.
    pub fn with_nt(&self, nt: usize) -> Grid {
        Grid {
            nt: nt.max(1),
            ..self.clone()
        }
    }

    /// Same grid with `nt` chosen to cover `duration` seconds.
    pub fn with_duration(&self, duration: f64) -> Grid {
        self.with_nt((duration / self.dt).ceil() as usize)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

/// Scalar field on the cells of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::zeros_shape(grid.nx, grid.ny)
    }

    pub fn zeros_shape(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            values: vec![0.0; nx * ny],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(grid.len(), values.len()));
        }
        Ok(Self {
            nx: grid.nx,
            ny: grid.ny,
            values,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.nx + i] = v;
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        if self.nx != grid.nx || self.ny != grid.ny {
            return Err(Error::shape(
                format!("{}x{}", grid.nx, grid.ny),
                format!("{}x{}", self.nx, self.ny),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &DensityField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    /// Area-weighted inner product `sum f g dx dy`.
    pub fn inner(&self, other: &DensityField, grid: &Grid) -> f64 {
        dot(&self.values, &other.values) * grid.cell_area()
    }

    pub fn norm(&self, grid: &Grid) -> f64 {
        self.inner(self, grid).sqrt()
    }

    /// Number of cells with a nonzero value.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||a - b||_2 / ||b||_2`; any uniform quadrature weight cancels.
pub fn relative_l2_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(b.len(), a.len()));
    }
    let den = dot(b, b).sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// How a disk is turned into cell values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rasterization {
    /// Cell value counts the disks covering the cell center.
    #[default]
    CellCenter,
    /// Disk area deposited with bilinear (cloud-in-cell) weights from a fine
    /// center-aligned sample lattice. Mass and first moment track sub-cell
    /// motion continuously, so moving particles do not jump between cells.
    AreaWeighted,
}

/// Disks of a common diameter; inactive particles are skipped when rasterizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub centers: Vec<[f64; 2]>,
    pub diameter: f64,
    pub active: Vec<bool>,
    #[serde(default)]
    pub rasterization: Rasterization,
}

impl ParticleSet {
    pub fn new(centers: Vec<[f64; 2]>, diameter: f64) -> Self {
        let active = vec![true; centers.len()];
        Self {
            centers,
            diameter,
            active,
            rasterization: Rasterization::CellCenter,
        }
    }

    pub fn with_rasterization(mut self, rasterization: Rasterization) -> Self {
        self.rasterization = rasterization;
        self
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn active_centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.centers
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|(c, _)| *c)
    }

    pub fn rasterize(&self, grid: &Grid) -> Result<DensityField> {
        let centers: Vec<[f64; 2]> = self.active_centers().collect();
        match self.rasterization {
            Rasterization::CellCenter => rasterize_particles(&centers, self.diameter, grid),
            Rasterization::AreaWeighted => rasterize_area_weighted(&centers, self.diameter, grid),
        }
    }
}

fn check_disks(centers: &[[f64; 2]], diameter: f64, grid: &Grid) -> Result<()> {
    if !(diameter > 0.0) {
        return Err(Error::config(format!(
            "particle diameter must be positive, got {diameter}"
        )));
    }
    let r = 0.5 * diameter;
    for (k, c) in centers.iter().enumerate() {
        if !grid.contains(*c) {
            return Err(Error::config(format!(
                "particle {k} at ({:.4}, {:.4}) lies outside the domain",
                c[0], c[1]
            )));
        }
        if c[0] - r < 0.0 || c[0] + r > grid.lx || c[1] - r < 0.0 || c[1] + r > grid.ly {
            warn!(
                "particle {k} at ({:.4}, {:.4}) reaches into the absorbing layer",
                c[0], c[1]
            );
        }
    }
    Ok(())
}

/// `f(x) = sum_m chi(2|x - s_m| <= D)` evaluated at cell centers.
pub fn rasterize_particles(centers: &[[f64; 2]], diameter: f64, grid: &Grid) -> Result<DensityField> {
    check_disks(centers, diameter, grid)?;
    let mut field = DensityField::zeros(grid);
    let r = 0.5 * diameter;
    for c in centers {
        // inclusion tested in cell units so whole-cell shifts permute values exactly
        let (cx, cy) = (c[0] / grid.dx, c[1] / grid.dy);
        let (rx, ry) = (r / grid.dx, r / grid.dy);
        let i0 = (cx - rx - 0.5).floor().max(0.0) as usize;
        let i1 = ((cx + rx - 0.5).ceil().max(0.0) as usize).min(grid.nx - 1);
        let j0 = (cy - ry - 0.5).floor().max(0.0) as usize;
        let j1 = ((cy + ry - 0.5).ceil().max(0.0) as usize).min(grid.ny - 1);
        for j in j0..=j1 {
            let ey = (j as f64 + 0.5 - cy) * grid.dy;
            for i in i0..=i1 {
                let ex = (i as f64 + 0.5 - cx) * grid.dx;
                if ex * ex + ey * ey <= r * r {
                    field.values[j * grid.nx + i] += 1.0;
                }
            }
        }
    }
    Ok(field)
}

/// Area-weighted rasterization; see [`Rasterization::AreaWeighted`].
pub fn rasterize_area_weighted(
    centers: &[[f64; 2]],
    diameter: f64,
    grid: &Grid,
) -> Result<DensityField> {
    check_disks(centers, diameter, grid)?;
    let mut field = DensityField::zeros(grid);
    let r = 0.5 * diameter;
    let h = (grid.dx.min(grid.dy) / 8.0).min(diameter / 16.0);
    let n = (r / h).ceil() as i64;
    let w = h * h / grid.cell_area();
    for c in centers {
        for b in -n..=n {
            let oy = b as f64 * h;
            for a in -n..=n {
                let ox = a as f64 * h;
                if ox * ox + oy * oy <= r * r {
                    deposit_bilinear(&mut field, grid, [c[0] + ox, c[1] + oy], w);
                }
            }
        }
    }
    Ok(field)
}

fn deposit_bilinear(field: &mut DensityField, grid: &Grid, p: [f64; 2], w: f64) {
    let gx = p[0] / grid.dx - 0.5;
    let gy = p[1] / grid.dy - 0.5;
    let i0 = gx.floor();
    let j0 = gy.floor();
    let (fx, fy) = (gx - i0, gy - j0);
    let (i0, j0) = (i0 as i64, j0 as i64);
    for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
            let (i, j) = (i0 + di, j0 + dj);
            if i >= 0 && j >= 0 && (i as usize) < grid.nx && (j as usize) < grid.ny {
                field.values[j as usize * grid.nx + i as usize] += w * wx * wy;
            }
        }
    }
}

/// Where receivers sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Top,
    TopBottom,
    AllAround,
    Lateral,
    Custom,
}

impl LayoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutKind::Top => "top",
            LayoutKind::TopBottom => "top_bottom",
            LayoutKind::AllAround => "all_around",
            LayoutKind::Lateral => "lateral",
            LayoutKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for LayoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(LayoutKind::Top),
            "top_bottom" | "top-bottom" => Ok(LayoutKind::TopBottom),
            "all_around" | "all-around" => Ok(LayoutKind::AllAround),
            "lateral" => Ok(LayoutKind::Lateral),
            "custom" => Ok(LayoutKind::Custom),
            other => Err(Error::config(format!("unknown receiver layout '{other}'"))),
        }
    }
}

/// Receiver cells `(i, j)` inside the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverLayout {
    pub kind: LayoutKind,
    pub positions: Vec<(usize, usize)>,
}

fn spread(count: usize, cells: usize) -> Vec<usize> {
    (0..count)
        .map(|k| {
            let x = (k as f64 + 0.5) * cells as f64 / count as f64 - 0.5;
            (x.round().max(0.0) as usize).min(cells - 1)
        })
        .collect()
}

impl ReceiverLayout {
    pub fn custom(positions: Vec<(usize, usize)>, grid: &Grid) -> Result<Self> {
        let layout = Self {
            kind: LayoutKind::Custom,
            positions,
        };
        layout.validate(grid)?;
        Ok(layout)
    }

    /// Evenly spaced receivers on the boundary rows/columns of the domain.
    /// `per_horizontal` applies to the top and bottom edges, `per_vertical`
    /// to the left and right edges.
    pub fn preset(
        kind: LayoutKind,
        grid: &Grid,
        per_horizontal: usize,
        per_vertical: usize,
    ) -> Result<Self> {
        let mut positions = Vec::new();
        let top = grid.ny - 1;
        let right = grid.nx - 1;
        let horizontal = |row: usize, out: &mut Vec<(usize, usize)>| {
            out.extend(spread(per_horizontal, grid.nx).into_iter().map(|i| (i, row)))
        };
        let vertical = |col: usize, out: &mut Vec<(usize, usize)>| {
            out.extend(spread(per_vertical, grid.ny).into_iter().map(|j| (col, j)))
        };
        match kind {
            LayoutKind::Top => horizontal(top, &mut positions),
            LayoutKind::TopBottom => {
                horizontal(top, &mut positions);
                horizontal(0, &mut positions);
            }
            LayoutKind::AllAround => {
                horizontal(top, &mut positions);
                horizontal(0, &mut positions);
                vertical(0, &mut positions);
                vertical(right, &mut positions);
            }
            LayoutKind::Lateral => {
                vertical(0, &mut positions);
                vertical(right, &mut positions);
            }
            LayoutKind::Custom => {
                return Err(Error::config("custom layouts need explicit positions"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        positions.retain(|p| seen.insert(*p));
        if positions.is_empty() {
            return Err(Error::config(format!(
                "layout {} has no receivers",
                kind.as_str()
            )));
        }
        Ok(Self { kind, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &self.positions {
            if i >= grid.nx || j >= grid.ny {
                return Err(Error::config(format!(
                    "receiver ({i}, {j}) outside the {}x{} grid",
                    grid.nx, grid.ny
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::config(format!("duplicate receiver at ({i}, {j})")));
            }
        }
        Ok(())
    }

    pub fn position(&self, k: usize, grid: &Grid) -> [f64; 2] {
        let (i, j) = self.positions[k];
        grid.cell_center(i, j)
    }

    /// Largest distance from any domain corner to any receiver.
    pub fn max_distance(&self, grid: &Grid) -> f64 {
        let corners = [[0.0, 0.0], [grid.lx, 0.0], [0.0, grid.ly], [grid.lx, grid.ly]];
        (0..self.len())
            .flat_map(|k| {
                let p = self.position(k, grid);
                corners.map(|c| (p[0] - c[0]).hypot(p[1] - c[1]))
            })
            .fold(0.0, f64::max)
    }
}

/// Pressure traces, `samples[r * nt + k]` is receiver `r` at time `(k + 1) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverData {
    pub n_receivers: usize,
    pub nt: usize,
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl ReceiverData {
    pub fn zeros(n_receivers: usize, nt: usize, dt: f64) -> Self {
        Self {
            n_receivers,
            nt,
            dt,
            samples: vec![0.0; n_receivers * nt],
        }
    }

    pub fn for_layout(layout: &ReceiverLayout, grid: &Grid) -> Self {
        Self::zeros(layout.len(), grid.nt, grid.dt)
    }

    #[inline]
    pub fn get(&self, r: usize, k: usize) -> f64 {
        self.samples[r * self.nt + k]
    }

    #[inline]
    pub fn set(&mut self, r: usize, k: usize, v: f64) {
        self.samples[r * self.nt + k] = v;
    }

    pub fn trace(&self, r: usize) -> &[f64] {
        &self.samples[r * self.nt..(r + 1) * self.nt]
    }

    pub fn check_shape(&self, layout: &ReceiverLayout, grid: &Grid) -> Result<()> {
        if self.n_receivers != layout.len() || self.nt != grid.nt {
            return Err(Error::shape(
                format!("{} receivers x {} steps", layout.len(), grid.nt),
                format!("{} receivers x {} steps", self.n_receivers, self.nt),
            ));
        }
        Ok(())
    }

    fn same_shape(&self, other: &ReceiverData) -> bool {
        self.n_receivers == other.n_receivers && self.nt == other.nt
    }

    /// Time-weighted inner product `sum U V dt`.
    pub fn inner(&self, other: &ReceiverData) -> f64 {
        debug_assert!(self.same_shape(other));
        dot(&self.samples, &other.samples) * self.dt
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, alpha: f64, other: &ReceiverData) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn difference(&self, other: &ReceiverData) -> Result<ReceiverData> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                format!("{}x{}", self.n_receivers, self.nt),
                format!("{}x{}", other.n_receivers, other.nt),
            ));
        }
        let mut out = self.clone();
        out.axpy(-1.0, other);
        Ok(out)
    }

    /// First step whose absolute value exceeds `fraction` of the trace maximum.
    pub fn first_arrival(&self, r: usize, fraction: f64) -> Option<usize> {
        let trace = self.trace(r);
        let peak = trace.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return None;
        }
        trace.iter().position(|v| v.abs() > fraction * peak)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Grid {
        build_grid(&GridConfig {
            nx,
            ny,
            lx,
            ly,
            ..GridConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn paper_grid_spacing() {
        let g = grid(472, 216, 4.71, 2.15);
        assert!((g.dx - 4.71 / 472.0).abs() < 1e-15);
        assert!((g.dx - 0.009979).abs() < 1e-5);
        assert!((g.dy - 0.009954).abs() < 1e-5);
        assert!(g.courant_number() <= 1.0);
    }

    #[test]
    fn unit_grid() {
        let g = build_grid(&GridConfig {
            nx: 1,
            ny: 1,
            lx: 1.0,
            ly: 1.0,
            c: 1.0,
            cfl_safety: 1.0,
            ..GridConfig::default()
        })
        .unwrap();
        assert_eq!((g.dx, g.dy), (1.0, 1.0));
    }

    #[test]
    fn cfl_examples() {
        let dt = cfl_timestep(0.01, 0.01, 1500.0, 0.3).unwrap();
        assert!((dt - 0.3 / (1500.0 * 2e4f64.sqrt())).abs() < 1e-20);
        assert!((dt - 1.414e-6).abs() < 1e-9);
        let dt = cfl_timestep(0.01, 0.01, 1500.0, 1.0).unwrap();
        assert!((dt - 4.714e-6).abs() < 1e-9);
        let dt = cfl_timestep(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((dt - 0.5f64.sqrt()).abs() < 1e-15);
        let half = cfl_timestep(0.005, 0.005, 1500.0, 1.0).unwrap();
        assert!((half - 0.5 * cfl_timestep(0.01, 0.01, 1500.0, 1.0).unwrap()).abs() < 1e-20);
    }

    #[test]
    fn cfl_rejects_bad_inputs() {
        assert!(cfl_timestep(0.0, 1.0, 1.0, 0.5).is_err());
        assert!(cfl_timestep(1.0, 1.0, -1.0, 0.5).is_err());
        assert!(cfl_timestep(1.0, 1.0, 1.0, 1.5).is_err());
        assert!(cfl_timestep(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn build_grid_rejects() {
        let base = GridConfig::default();
        assert!(build_grid(&GridConfig { nx: 0, ..base.clone() }).is_err());
        assert!(build_grid(&GridConfig { lx: -1.0, ..base.clone() }).is_err());
        assert!(build_grid(&GridConfig { c: 0.0, ..base.clone() }).is_err());
        assert!(build_grid(&GridConfig { dt: Some(1e-3), ..base.clone() }).is_err());
        let ok = build_grid(&GridConfig { dt: Some(1e-6), ..base }).unwrap();
        assert_eq!(ok.dt, 1e-6);
    }

    #[test]
    fn disk_cell_count_matches_brute_force() {
        let g = grid(100, 100, 1.0, 1.0);
        let center = [0.503, 0.497];
        let f = rasterize_particles(&[center], 0.14, &g).unwrap();
        // brute force over every cell center
        let mut count = 0;
        for j in 0..100 {
            for i in 0..100 {
                let p = g.cell_center(i, j);
                if (p[0] - center[0]).hypot(p[1] - center[1]) <= 0.07 {
                    count += 1;
                }
            }
        }
        assert_eq!(f.support_size(), count);
        let disk = std::f64::consts::PI * 49.0;
        assert!((count as f64 - disk).abs() < 0.1 * disk, "{count}");
    }

    #[test]
    fn empty_and_superposed() {
        let g = grid(50, 40, 1.0, 0.8);
        assert_eq!(rasterize_particles(&[], 0.1, &g).unwrap().max_abs(), 0.0);
        let one = rasterize_particles(&[[0.4, 0.3]], 0.1, &g).unwrap();
        let two = rasterize_particles(&[[0.4, 0.3], [0.4, 0.3]], 0.1, &g).unwrap();
        assert_eq!(two.values, one.scaled(2.0).values);
    }

    #[test]
    fn rasterize_rejects() {
        let g = grid(50, 40, 1.0, 0.8);
        assert!(rasterize_particles(&[[0.4, 0.3]], 0.0, &g).is_err());
        assert!(rasterize_particles(&[[1.4, 0.3]], 0.1, &g).is_err());
        // touching the boundary only warns
        assert!(rasterize_particles(&[[0.01, 0.3]], 0.1, &g).is_ok());
    }

    #[test]
    fn area_weighted_moments() {
        let g = grid(60, 40, 1.2, 0.8);
        let c = [0.5123, 0.3871];
        let f = rasterize_area_weighted(&[c], 0.14, &g).unwrap();
        let mass: f64 = f.values.iter().sum::<f64>() * g.cell_area();
        let area = std::f64::consts::PI * 0.07 * 0.07;
        assert!((mass - area).abs() < 0.01 * area);
        let (mut mx, mut my) = (0.0, 0.0);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let p = g.cell_center(i, j);
                mx += f.get(i, j) * p[0];
                my += f.get(i, j) * p[1];
            }
        }
        let total: f64 = f.values.iter().sum();
        assert!((mx / total - c[0]).abs() < 1e-9);
        assert!((my / total - c[1]).abs() < 1e-9);
    }

    #[test]
    fn relative_error_examples() {
        let b = vec![1.0, -2.0, 3.0];
        assert_eq!(relative_l2_error(&b, &b).unwrap(), 0.0);
        assert_eq!(relative_l2_error(&[0.0; 3], &b).unwrap(), 1.0);
        let a: Vec<f64> = b.iter().map(|v| 1.1 * v).collect();
        assert!((relative_l2_error(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(relative_l2_error(&b, &[0.0; 3]), Err(Error::ZeroNorm)));
        assert!(relative_l2_error(&b, &[1.0]).is_err());
    }

    #[test]
    fn layouts() {
        let g = grid(236, 108, 4.71, 2.15);
        let top = ReceiverLayout::preset(LayoutKind::Top, &g, 32, 16).unwrap();
        assert_eq!(top.len(), 32);
        assert!(top.positions.iter().all(|p| p.1 == 107));
        let all = ReceiverLayout::preset(LayoutKind::AllAround, &g, 32, 16).unwrap();
        assert_eq!(all.len(), 96);
        all.validate(&g).unwrap();
        assert!(ReceiverLayout::custom(vec![(0, 0), (0, 0)], &g).is_err());
        assert!(ReceiverLayout::custom(vec![(300, 0)], &g).is_err());
    }

    proptest! {
        #[test]
        fn whole_cell_shift_permutes(cx in 0.3f64..0.7, cy in 0.25f64..0.55, k in -5i64..5, l in -5i64..5) {
            let g = grid(64, 48, 1.0, 0.75);
            let d = 0.12;
            let a = rasterize_particles(&[[cx, cy]], d, &g).unwrap();
            let shifted = [cx + k as f64 * g.dx, cy + l as f64 * g.dy];
            let b = rasterize_particles(&[shifted], d, &g).unwrap();
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let (si, sj) = (i as i64 + k, j as i64 + l);
                    if si >= 0 && sj >= 0 && (si as usize) < g.nx && (sj as usize) < g.ny {
                        prop_assert_eq!(a.get(i, j), b.get(si as usize, sj as usize));
                    }
                }
            }
            let sa: f64 = a.values.iter().sum();
            let sb: f64 = b.values.iter().sum();
            prop_assert_eq!(sa, sb);
        }

        #[test]
        fn relative_error_scale_invariant(v in proptest::collection::vec(-10.0f64..10.0, 8), alpha in 0.1f64..50.0, neg in any::<bool>()) {
            let b: Vec<f64> = v.iter().map(|x| x + 11.0).collect();
            let a: Vec<f64> = v.iter().map(|x| x * 0.5).collect();
            let s = if neg { -alpha } else { alpha };
            let e1 = relative_l2_error(&a, &b).unwrap();
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * s).collect();
            let e2 = relative_l2_error(&sa, &sb).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
        }

        #[test]
        fn built_grid_satisfies_cfl(nx in 1usize..500, ny in 1usize..500, lx in 0.1f64..10.0, ly in 0.1f64..10.0, safety in 0.01f64..1.0) {
            let g = build_grid(&GridConfig { nx, ny, lx, ly, cfl_safety: safety, ..GridConfig::default() }).unwrap();
            prop_assert!(g.courant_number() <= 1.0 + 1e-12);
        }
    }
}
