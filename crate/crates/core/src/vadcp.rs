//! Virtual acoustic Doppler current profiler: two beams at `±phi` from the
//! vertical, each split into range cells, reading the exact cell-averaged
//! projected velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::grid::Grid;
use crate::velocimetry::FlowEstimate;

/// `dq = 2 u sin(phi) q_s / c`.
pub fn doppler_shift(u_hat: f64, phi: f64, c: f64, q_s: f64) -> f64 {
    2.0 * u_hat * phi.sin() * q_s / c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    pub origin: [f64; 2],
    /// Beam tilt from the vertical, radians.
    pub phi: f64,
    /// Half-angle of the beam cone, radians.
    pub cone_half_angle: f64,
    pub n_cells: usize,
    /// First and last range as fractions of the beam length inside the domain.
    pub range_start: f64,
    pub range_end: f64,
    /// Transmit frequency, Hz.
    pub q_s: f64,
}

impl BeamGeometry {
    /// Beams hang from the middle of the top edge.
    pub fn centered(grid: &Grid) -> Self {
        Self {
            origin: [0.5 * grid.lx, grid.ly],
            phi: 20f64.to_radians(),
            cone_half_angle: 2f64.to_radians(),
            n_cells: 10,
            range_start: 0.1,
            range_end: 0.9,
            q_s: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi >= 0.0 && self.phi < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config(format!("beam angle must lie in [0, pi/2), got {}", self.phi)));
        }
        if !(self.cone_half_angle > 0.0 && self.cone_half_angle < std::f64::consts::FRAC_PI_4) {
            return Err(Error::config(format!("cone half-angle must lie in (0, pi/4), got {}", self.cone_half_angle)));
        }
        if self.n_cells == 0 {
            return Err(Error::config("beam needs at least one cell"));
        }
        if !(0.0 <= self.range_start && self.range_start < self.range_end && self.range_end <= 1.0) {
            return Err(Error::config(format!(
                "cell ranges must satisfy 0 <= start < end <= 1, got {}..{}",
                self.range_start, self.range_end
            )));
        }
        if !(self.q_s > 0.0) {
            return Err(Error::config("transmit frequency must be positive"));
        }
        Ok(())
    }

    /// Downward unit vectors of the `+phi` and `-phi` beams.
    pub fn beam_directions(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.phi.sin_cos();
        [[s, -c], [-s, -c]]
    }

    /// Distance from the origin to where `dir` leaves the domain.
    fn length_inside(&self, dir: [f64; 2], grid: &Grid) -> f64 {
        let mut t = f64::INFINITY;
        for (o, d, hi) in [(self.origin[0], dir[0], grid.lx), (self.origin[1], dir[1], grid.ly)] {
            if d > 0.0 {
                t = t.min((hi - o) / d);
            } else if d < 0.0 {
                t = t.min(-o / d);
            }
        }
        t.max(0.0)
    }

    /// Range boundaries (m from the origin) of each beam.
    pub fn ranges(&self, grid: &Grid) -> [Vec<f64>; 2] {
        self.beam_directions().map(|d| {
            let len = self.length_inside(d, grid);
            let (a, b) = (self.range_start * len, self.range_end * len);
            (0..=self.n_cells)
                .map(|k| a + (b - a) * k as f64 / self.n_cells as f64)
                .collect()
        })
    }
}

/// Grid-cell indices of every range cell, `[beam][cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCells {
    pub cells: [Vec<Vec<usize>>; 2],
}

/// A grid cell joins range cell `k` when its center projects into
/// `[r_k, r_{k+1})` along the beam and its lateral offset is within the cone
/// half-width, widened to half the cell's lateral extent so a thin beam still
/// hits the cells its axis crosses.
pub fn build_cells(geom: &BeamGeometry, grid: &Grid) -> Result<BeamCells> {
    geom.validate()?;
    let ranges = geom.ranges(grid);
    let tan = geom.cone_half_angle.tan();
    let mut cells: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    for (b, dir) in geom.beam_directions().into_iter().enumerate() {
        let normal = [-dir[1], dir[0]];
        let reach = 0.5 * (grid.dx * normal[0].abs() + grid.dy * normal[1].abs());
        let r = &ranges[b];
        let mut per_cell = vec![Vec::new(); geom.n_cells];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.cell_center(i, j);
                let rel = [c[0] - geom.origin[0], c[1] - geom.origin[1]];
                let s = rel[0] * dir[0] + rel[1] * dir[1];
                if s < r[0] || s >= r[geom.n_cells] {
                    continue;
                }
                let lateral = (rel[0] * normal[0] + rel[1] * normal[1]).abs();
                if lateral > (s * tan).max(reach) {
                    continue;
                }
                let k = r.partition_point(|&x| x <= s) - 1;
                per_cell[k.min(geom.n_cells - 1)].push(grid.index(i, j));
            }
        }
        if let Some(k) = per_cell.iter().position(|c| c.is_empty()) {
            let name = if b == 0 { "+phi" } else { "-phi" };
            return Err(Error::config(format!("beam {name} cell {k} does not intersect the grid")));
        }
        cells[b] = per_cell;
    }
    Ok(BeamCells { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VadcpReading {
    /// Cell-averaged velocity projected on each beam, `[beam][cell]`.
    pub projected: [Vec<f64>; 2],
    /// Doppler shift of each cell, Hz.
    pub doppler: [Vec<f64>; 2],
    /// Mean projected velocity of each beam.
    pub beam_means: [f64; 2],
    /// Beam means recombined into a planar velocity.
    pub velocity: [f64; 2],
}

fn mean_over(cells: &[usize], grid: &Grid, field: &VelocityField, t: f64) -> [f64; 2] {
    let mut s = [0.0; 2];
    for &k in cells {
        let v = field.eval(grid.cell_center(k % grid.nx, k / grid.nx), t);
        s[0] += v[0];
        s[1] += v[1];
    }
    let n = cells.len() as f64;
    [s[0] / n, s[1] / n]
}

/// Exact cell averages of the field at time `t`, recombined with
/// `u = (a+ - a-) / (2 sin phi)`, `v = -(a+ + a-) / (2 cos phi)`.
pub fn vadcp_measure(field: &VelocityField, geom: &BeamGeometry, cells: &BeamCells, grid: &Grid, t: f64) -> Result<VadcpReading> {
    geom.validate()?;
    if geom.phi == 0.0 {
        return Err(Error::config("two vertical beams cannot resolve the horizontal velocity"));
    }
    let dirs = geom.beam_directions();
    let mut projected: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut doppler: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for b in 0..2 {
        for cell in &cells.cells[b] {
            let m = mean_over(cell, grid, field, t);
            let u_hat = m[0] * dirs[b][0] + m[1] * dirs[b][1];
            projected[b].push(u_hat);
            doppler[b].push(doppler_shift(u_hat, geom.phi, grid.c, geom.q_s));
        }
    }
    let beam_means = [0, 1].map(|b| projected[b].iter().sum::<f64>() / projected[b].len() as f64);
    let (s, c) = geom.phi.sin_cos();
    let velocity = [
        (beam_means[0] - beam_means[1]) / (2.0 * s),
        -(beam_means[0] + beam_means[1]) / (2.0 * c),
    ];
    Ok(VadcpReading {
        projected,
        doppler,
        beam_means,
        velocity,
    })
}

/// Cells whose centers lie in the quadrilateral spanned by the two beam axes
/// between the first and last range boundaries: the water both beams look at.
pub fn beam_region(geom: &BeamGeometry, grid: &Grid) -> Result<Vec<bool>> {
    geom.validate()?;
    let ranges = geom.ranges(grid);
    let dirs = geom.beam_directions();
    let at = |b: usize, s: f64| [geom.origin[0] + s * dirs[b][0], geom.origin[1] + s * dirs[b][1]];
    let n = geom.n_cells;
    // counter-clockwise: near -phi, far -phi, far +phi, near +phi
    let poly = [at(1, ranges[1][0]), at(1, ranges[1][n]), at(0, ranges[0][n]), at(0, ranges[0][0])];
    let inside = |p: [f64; 2]| {
        (0..4).all(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % 4]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
        })
    };
    let mask: Vec<bool> = (0..grid.len())
        .map(|k| inside(grid.cell_center(k % grid.nx, k / grid.nx)))
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::config("beam region contains no grid cell"));
    }
    Ok(mask)
}

/// Spatial averages over a region and the relative errors of both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub exact_avg: [f64; 2],
    pub vadcp_avg: [f64; 2],
    pub inverse_avg: [f64; 2],
    pub vadcp_rel_err: f64,
    pub inverse_rel_err: f64,
    pub region_cells: usize,
    pub inverse_samples: usize,
}

fn rel_err(est: [f64; 2], exact: [f64; 2]) -> Result<f64> {
    let n = exact[0].hypot(exact[1]);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((est[0] - exact[0]).hypot(est[1] - exact[1]) / n)
}

/// Averages the estimate over samples in `region` (sparse vectors by
/// position, dense cells through their mask) and compares it and the V-ADCP
/// reading against the exact region average at time `t`.
pub fn compare_methods(
    field: &VelocityField,
    estimate: &FlowEstimate,
    geom: &BeamGeometry,
    region: &[bool],
    grid: &Grid,
    t: f64,
) -> Result<ComparisonReport> {
    if region.len() != grid.len() {
        return Err(Error::shape(grid.len(), region.len()));
    }
    let region_cells: Vec<usize> = (0..region.len()).filter(|&k| region[k]).collect();
    if region_cells.is_empty() {
        return Err(Error::config("comparison region is empty"));
    }
    let exact_avg = mean_over(&region_cells, grid, field, t);
    let cells = build_cells(geom, grid)?;
    let reading = vadcp_measure(field, geom, &cells, grid, t)?;
    let in_region = |p: [f64; 2]| grid.locate(p).map_or(false, |(i, j)| region[grid.index(i, j)]);
    let samples: Vec<[f64; 2]> = estimate
        .samples(grid)
        .into_iter()
        .filter(|s| in_region(s.position))
        .map(|s| s.velocity)
        .collect();
    if samples.is_empty() {
        return Err(Error::config("the flow estimate has no samples inside the comparison region"));
    }
    let n = samples.len() as f64;
    let inverse_avg = [
        samples.iter().map(|v| v[0]).sum::<f64>() / n,
        samples.iter().map(|v| v[1]).sum::<f64>() / n,
    ];
    Ok(ComparisonReport {
        exact_avg,
        vadcp_avg: reading.velocity,
        inverse_avg,
        vadcp_rel_err: rel_err(reading.velocity, exact_avg)?,
        inverse_rel_err: rel_err(inverse_avg, exact_avg)?,
        region_cells: region_cells.len(),
        inverse_samples: samples.len(),
    })
}

/// RGB overlay of the beam cells (alternating shades per cell) on black,
/// row 0 at the top.
pub fn cells_to_rgb(cells: &BeamCells, grid: &Grid) -> Vec<u8> {
    let mut color = vec![[0u8; 3]; grid.len()];
    for (b, beam) in cells.cells.iter().enumerate() {
        for (k, cell) in beam.iter().enumerate() {
            let shade = if k % 2 == 0 { 255 } else { 150 };
            let c = if b == 0 { [shade, 80, 0] } else { [0, 80, shade] };
            for &idx in cell {
                color[idx] = c;
            }
        }
    }
    let mut out = Vec::with_capacity(grid.len() * 3);
    for j in (0..grid.ny).rev() {
        for i in 0..grid.nx {
            out.extend_from_slice(&color[grid.index(i, j)]);
        }
    }
    out
}
