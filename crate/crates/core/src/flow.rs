//! Velocity fields, particle advection and frame bookkeeping.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ParticleSet, Rasterization};
use crate::io;

/// Steady Taylor–Green vortex on `[0, l1] x [0, l2]`.
pub fn eval_taylor_green(x: [f64; 2], l1: f64, l2: f64) -> [f64; 2] {
    let a = 2.0 * PI * x[0] / l1;
    let b = 2.0 * PI * x[1] / l2;
    [a.cos() * b.sin(), -a.sin() * b.cos()]
}

/// Velocity samples on nodes `(i lx / (nx - 1), j ly / (ny - 1))` for
/// `time_steps` instants spaced by `dt`, stored `[t][y][x][2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub time_steps: usize,
    pub dt: f64,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldHeader {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    components: usize,
    time_steps: usize,
    #[serde(default = "unit_dt")]
    dt: f64,
}

fn unit_dt() -> f64 {
    1.0
}

impl SampledField {
    pub fn new(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        time_steps: usize,
        dt: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 || time_steps == 0 {
            return Err(Error::config(format!(
                "sampled field needs at least 2x2 nodes and one time step (got {nx}x{ny}x{time_steps})"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && dt > 0.0) {
            return Err(Error::config("sampled field extents and dt must be positive"));
        }
        let expected = nx * ny * time_steps * 2;
        if data.len() != expected {
            return Err(Error::shape(expected, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sampled field has non-finite entries"));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            time_steps,
            dt,
            data,
        })
    }

    /// Samples `f(x, t)` on the node lattice.
    pub fn from_fn(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        time_steps: usize,
        dt: f64,
        f: impl Fn([f64; 2], f64) -> [f64; 2],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(nx * ny * time_steps * 2);
        for t in 0..time_steps {
            for j in 0..ny {
                for i in 0..nx {
                    let x = [
                        i as f64 * lx / (nx - 1).max(1) as f64,
                        j as f64 * ly / (ny - 1).max(1) as f64,
                    ];
                    let v = f(x, t as f64 * dt);
                    data.extend_from_slice(&v);
                }
            }
        }
        Self::new(nx, ny, lx, ly, time_steps, dt, data)
    }

    #[inline]
    fn node(&self, t: usize, i: usize, j: usize) -> [f64; 2] {
        let k = ((t * self.ny + j) * self.nx + i) * 2;
        [self.data[k], self.data[k + 1]]
    }

    fn eval_slice(&self, t: usize, x: [f64; 2]) -> [f64; 2] {
        let gx = lattice_coord(x[0], self.lx, self.nx);
        let gy = lattice_coord(x[1], self.ly, self.ny);
        let i0 = (gx.floor() as usize).min(self.nx - 2);
        let j0 = (gy.floor() as usize).min(self.ny - 2);
        let (fx, fy) = (gx - i0 as f64, gy - j0 as f64);
        let v00 = self.node(t, i0, j0);
        let v10 = self.node(t, i0 + 1, j0);
        let v01 = self.node(t, i0, j0 + 1);
        let v11 = self.node(t, i0 + 1, j0 + 1);
        let mut out = [0.0; 2];
        for c in 0..2 {
            let lo = lerp(v00[c], v10[c], fx);
            let hi = lerp(v01[c], v11[c], fx);
            out[c] = lerp(lo, hi, fy);
        }
        out
    }

    /// Bilinear in space, linear in time, clamped at the ends.
    pub fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        if self.time_steps == 1 {
            return self.eval_slice(0, x);
        }
        let s = (t / self.dt).clamp(0.0, (self.time_steps - 1) as f64);
        let k = (s.floor() as usize).min(self.time_steps - 2);
        let w = s - k as f64;
        let a = self.eval_slice(k, x);
        if w == 0.0 {
            return a;
        }
        let b = self.eval_slice(k + 1, x);
        [lerp(a[0], b[0], w), lerp(a[1], b[1], w)]
    }
}

/// Exact for equal endpoints, unlike the weighted-sum form.
#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if a == b {
        a
    } else {
        a + w * (b - a)
    }
}

/// Fractional node index of `x`, snapped onto nodes it misses only by rounding.
fn lattice_coord(x: f64, extent: f64, n: usize) -> f64 {
    let g = (x / extent * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
    let r = g.round();
    if (g - r).abs() < 1e-9 {
        r
    } else {
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VelocityField {
    TaylorGreen { lx: f64, ly: f64, amplitude: f64 },
    Uniform { velocity: [f64; 2] },
    Sampled(SampledField),
}

impl VelocityField {
    pub fn taylor_green(lx: f64, ly: f64) -> Self {
        VelocityField::TaylorGreen {
            lx,
            ly,
            amplitude: 1.0,
        }
    }

    pub fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            VelocityField::TaylorGreen { lx, ly, amplitude } => {
                let v = eval_taylor_green(x, *lx, *ly);
                [amplitude * v[0], amplitude * v[1]]
            }
            VelocityField::Uniform { velocity } => *velocity,
            VelocityField::Sampled(s) => s.eval(x, t),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, VelocityField::Sampled(s) if s.time_steps > 1)
    }

    /// Same field with velocities multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            VelocityField::TaylorGreen { lx, ly, amplitude } => VelocityField::TaylorGreen {
                lx: *lx,
                ly: *ly,
                amplitude: amplitude * factor,
            },
            VelocityField::Uniform { velocity } => VelocityField::Uniform {
                velocity: [velocity[0] * factor, velocity[1] * factor],
            },
            VelocityField::Sampled(s) => {
                let mut s = s.clone();
                s.data.iter_mut().for_each(|v| *v *= factor);
                VelocityField::Sampled(s)
            }
        }
    }
}

/// Writes `path` (`.f64` data) and its `.json` header.
pub fn save_velocity_field(path: &Path, field: &SampledField) -> Result<[PathBuf; 2]> {
    let header = FieldHeader {
        nx: field.nx,
        ny: field.ny,
        lx: field.lx,
        ly: field.ly,
        components: 2,
        time_steps: field.time_steps,
        dt: field.dt,
    };
    let data = io::data_path(path);
    let head = io::header_path(path);
    io::write_bytes(&data, &io::f64s_to_bytes(&field.data))?;
    io::write_json(&head, &header)?;
    Ok([data, head])
}

/// Reads a field saved by [`save_velocity_field`]; `path` may name either file.
pub fn load_velocity_field(path: &Path) -> Result<VelocityField> {
    let head = io::header_path(path);
    let header: FieldHeader = io::read_json(&head)?;
    if header.components != 2 {
        return Err(Error::format(
            &head,
            format!("expected 2 components, header says {}", header.components),
        ));
    }
    let data_file = io::data_path(path);
    let data = io::bytes_to_f64s(&io::read_bytes(&data_file)?, &data_file)?;
    let expected = header.nx * header.ny * header.time_steps * 2;
    if data.len() != expected {
        return Err(Error::format(
            &data_file,
            format!("header announces {expected} values, file holds {}", data.len()),
        ));
    }
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(&data_file, format!("non-finite value at index {k}")));
    }
    SampledField::new(
        header.nx,
        header.ny,
        header.lx,
        header.ly,
        header.time_steps,
        header.dt,
        data,
    )
    .map(VelocityField::Sampled)
    .map_err(|e| Error::format(&head, e.to_string()))
}

/// Parameters of the synthetic vortex street written by
/// [`synthetic_vortex_street`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexStreetSpec {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub time_steps: usize,
    pub dt: f64,
    /// Free-stream speed (m/s, along +x).
    pub inflow: f64,
    /// Streamwise spacing between same-signed vortices.
    pub spacing: f64,
    /// Lateral distance between the two rows.
    pub row_gap: f64,
    /// Lamb–Oseen core radius.
    pub core_radius: f64,
    pub circulation: f64,
    /// Convection speed of the vortex pattern as a fraction of `inflow`.
    pub convection: f64,
}

impl Default for VortexStreetSpec {
    fn default() -> Self {
        Self {
            lx: 4.71,
            ly: 2.15,
            nx: 237,
            ny: 109,
            time_steps: 41,
            dt: 0.01,
            inflow: 1.0,
            spacing: 1.2,
            row_gap: 0.34,
            core_radius: 0.18,
            circulation: 1.2,
            convection: 0.8,
        }
    }
}

/// Two staggered rows of opposite-signed Lamb–Oseen vortices in a uniform
/// stream, convected downstream. Stand-in for an externally computed wake.
pub fn synthetic_vortex_street(spec: &VortexStreetSpec) -> Result<SampledField> {
    let s = spec.clone();
    let mid = 0.5 * s.ly;
    let n_vort = (s.lx / s.spacing).ceil() as i64 + 4;
    let velocity = move |x: [f64; 2], t: f64| -> [f64; 2] {
        let shift = s.convection * s.inflow * t;
        let mut v = [s.inflow, 0.0];
        for k in -2..n_vort {
            for (row, sign, offset) in [(1.0, 1.0, 0.0), (-1.0, -1.0, 0.5)] {
                let cx = (k as f64 + offset) * s.spacing + shift.rem_euclid(s.spacing);
                let cy = mid + row * 0.5 * s.row_gap;
                let (ex, ey) = (x[0] - cx, x[1] - cy);
                let r2 = ex * ex + ey * ey;
                if r2 < 1e-18 {
                    continue;
                }
                // Lamb–Oseen tangential profile
                let g = sign * s.circulation / (2.0 * PI * r2)
                    * (1.0 - (-r2 / (s.core_radius * s.core_radius)).exp());
                v[0] -= g * ey;
                v[1] += g * ex;
            }
        }
        v
    };
    SampledField::from_fn(spec.nx, spec.ny, spec.lx, spec.ly, spec.time_steps, spec.dt, velocity)
}

/// Positions of every particle at every advection node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    /// `positions[k][m]` is particle `m` at time `k dt`.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub in_domain: Vec<Vec<bool>>,
    pub dt: f64,
    pub diameter: f64,
    #[serde(default)]
    pub rasterization: Rasterization,
}

impl TrajectorySet {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn n_particles(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        (self.n_nodes().saturating_sub(1)) as f64 * self.dt
    }

    pub fn particles_at_node(&self, k: usize) -> ParticleSet {
        ParticleSet {
            centers: self.positions[k].clone(),
            diameter: self.diameter,
            active: self.in_domain[k].clone(),
            rasterization: self.rasterization,
        }
    }

    /// Positions linearly interpolated between advection nodes.
    pub fn particles_at_time(&self, t: f64) -> ParticleSet {
        let last = self.n_nodes() - 1;
        let s = (t / self.dt).clamp(0.0, last as f64);
        let k = (s.floor() as usize).min(last.saturating_sub(1));
        let w = s - k as f64;
        if last == 0 || w == 0.0 {
            return self.particles_at_node(k);
        }
        let centers = self.positions[k]
            .iter()
            .zip(&self.positions[k + 1])
            .map(|(a, b)| [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
            .collect();
        let active = self.in_domain[k]
            .iter()
            .zip(&self.in_domain[k + 1])
            .map(|(a, b)| *a && *b)
            .collect();
        ParticleSet {
            centers,
            diameter: self.diameter,
            active,
            rasterization: self.rasterization,
        }
    }

    /// Particle sets at `T_j = j dT`, `j = 0..=floor(duration / dT)`.
    pub fn frame_positions(&self, frame_period: f64) -> Result<Vec<ParticleSet>> {
        let stride = frame_stride(frame_period, self.dt)?;
        Ok((0..self.n_nodes())
            .step_by(stride)
            .map(|k| self.particles_at_node(k))
            .collect())
    }

    /// CSV rows `frame,particle_id,x,y` at the given frame period.
    pub fn to_csv(&self, frame_period: f64) -> Result<String> {
        let mut out = String::from("frame,particle_id,x,y\n");
        for (f, set) in self.frame_positions(frame_period)?.iter().enumerate() {
            for (m, c) in set.centers.iter().enumerate() {
                out.push_str(&format!("{f},{m},{:e},{:e}\n", c[0], c[1]));
            }
        }
        Ok(out)
    }
}

fn frame_stride(frame_period: f64, dt: f64) -> Result<usize> {
    if !(frame_period > 0.0) {
        return Err(Error::config("frame period must be positive"));
    }
    let ratio = frame_period / dt;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::config(format!(
            "frame period {frame_period:e} s is not a multiple of the advection step {dt:e} s"
        )));
    }
    Ok(stride as usize)
}

/// Free-function form of [`TrajectorySet::frame_positions`].
pub fn frame_positions(traj: &TrajectorySet, frame_period: f64) -> Result<Vec<ParticleSet>> {
    traj.frame_positions(frame_period)
}

/// Forward Euler integration `C[k+1] = C[k] + dt r(C[k], t_k)`. Particles
/// that leave `[0, extent[0]] x [0, extent[1]]` are frozen at their last
/// in-domain position and flagged.
pub fn advect(
    initial: &[[f64; 2]],
    field: &VelocityField,
    dt: f64,
    steps: usize,
    extent: [f64; 2],
    diameter: f64,
) -> Result<TrajectorySet> {
    advect_from(initial, field, 0.0, dt, steps, extent, diameter)
}

/// [`advect`] with the field clock starting at `t0`; node `k` of the result
/// is field time `t0 + k dt`.
pub fn advect_from(
    initial: &[[f64; 2]],
    field: &VelocityField,
    t0: f64,
    dt: f64,
    steps: usize,
    extent: [f64; 2],
    diameter: f64,
) -> Result<TrajectorySet> {
    if !(dt > 0.0) {
        return Err(Error::config(format!("advection step must be positive, got {dt}")));
    }
    let inside = |p: [f64; 2]| p[0] >= 0.0 && p[0] <= extent[0] && p[1] >= 0.0 && p[1] <= extent[1];
    if let Some(k) = initial.iter().position(|p| !inside(*p)) {
        return Err(Error::config(format!("particle {k} starts outside the domain")));
    }
    let mut positions = Vec::with_capacity(steps + 1);
    let mut in_domain = Vec::with_capacity(steps + 1);
    positions.push(initial.to_vec());
    in_domain.push(vec![true; initial.len()]);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let (prev, flags) = (&positions[k], &in_domain[k]);
        let mut next = Vec::with_capacity(prev.len());
        let mut next_flags = Vec::with_capacity(prev.len());
        for (p, &ok) in prev.iter().zip(flags) {
            if !ok {
                next.push(*p);
                next_flags.push(false);
                continue;
            }
            let v = field.eval(*p, t);
            let q = [p[0] + dt * v[0], p[1] + dt * v[1]];
            if q[0].is_finite() && q[1].is_finite() && inside(q) {
                next.push(q);
                next_flags.push(true);
            } else {
                warn!("particle left the domain at t = {:.4e} s", t + dt);
                next.push(*p);
                next_flags.push(false);
            }
        }
        positions.push(next);
        in_domain.push(next_flags);
    }
    Ok(TrajectorySet {
        positions,
        in_domain,
        dt,
        diameter,
        rasterization: Rasterization::CellCenter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const L1: f64 = 4.71;
    const L2: f64 = 2.15;

    #[test]
    fn taylor_green_values() {
        let v = eval_taylor_green([0.0, L2 / 4.0], L1, L2);
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
        let v = eval_taylor_green([L1 / 4.0, L2 / 4.0], L1, L2);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
    }

    fn fd_divergence(x: [f64; 2], l1: f64, l2: f64) -> f64 {
        let h = 1e-6 * l1;
        let dudx = (eval_taylor_green([x[0] + h, x[1]], l1, l2)[0]
            - eval_taylor_green([x[0] - h, x[1]], l1, l2)[0])
            / (2.0 * h);
        let dvdy = (eval_taylor_green([x[0], x[1] + h], l1, l2)[1]
            - eval_taylor_green([x[0], x[1] - h], l1, l2)[1])
            / (2.0 * h);
        dudx + dvdy
    }

    #[test]
    fn taylor_green_divergence_free_on_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = [rng.gen_range(0.0..L1), rng.gen_range(0.0..L1)];
            let div = fd_divergence(x, L1, L1);
            assert!(div.abs() < 1e-10, "{div}");
        }
    }

    #[test]
    fn taylor_green_divergence_on_rectangle() {
        // with unequal periods the field has divergence
        // 2 pi (1/L2 - 1/L1) sin(2 pi x/L1) sin(2 pi y/L2)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = [rng.gen_range(0.0..L1), rng.gen_range(0.0..L2)];
            let exact = 2.0 * PI * (1.0 / L2 - 1.0 / L1)
                * (2.0 * PI * x[0] / L1).sin()
                * (2.0 * PI * x[1] / L2).sin();
            assert!((fd_divergence(x, L1, L2) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_and_uniform_fields() {
        let starts = [[1.0, 1.0], [2.0, 0.5]];
        let still = advect(&starts, &VelocityField::Uniform { velocity: [0.0, 0.0] }, 0.01, 10, [L1, L2], 0.1).unwrap();
        assert!(still.positions.iter().all(|p| p == &starts.to_vec()));
        let moved = advect(&starts, &VelocityField::Uniform { velocity: [1.0, 0.0] }, 0.01, 10, [L1, L2], 0.1).unwrap();
        for (a, b) in starts.iter().zip(&moved.positions[10]) {
            assert!((b[0] - a[0] - 0.1).abs() < 1e-14);
            assert_eq!(b[1], a[1]);
        }
        assert_eq!(moved.n_nodes(), 11);
        assert_eq!(moved.positions[0], starts.to_vec());
    }

    #[test]
    fn taylor_green_step_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let starts: Vec<[f64; 2]> = (0..30)
            .map(|_| [rng.gen_range(0.5..4.2), rng.gen_range(0.5..1.6)])
            .collect();
        let dt = 0.01;
        let traj = advect(&starts, &VelocityField::taylor_green(L1, L2), dt, 50, [L1, L2], 0.14).unwrap();
        for w in traj.positions.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!((b[0] - a[0]).hypot(b[1] - a[1]) <= dt * 2f64.sqrt() + 1e-15);
            }
        }
    }

    #[test]
    fn euler_converges_first_order() {
        let field = VelocityField::taylor_green(L1, L2);
        let start = [[1.0, 0.7]];
        let horizon = 0.4;
        let endpoint = |dt: f64| {
            let n = (horizon / dt).round() as usize;
            *advect(&start, &field, dt, n, [L1, L2], 0.1).unwrap().positions[n].first().unwrap()
        };
        let mut errors = Vec::new();
        let mut dt = 0.02;
        for _ in 0..4 {
            let coarse = endpoint(dt);
            let fine = endpoint(dt / 2.0);
            errors.push((coarse[0] - fine[0]).hypot(coarse[1] - fine[1]));
            dt /= 2.0;
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 0.9, "order {order}");
        }
    }

    #[test]
    fn reversed_uniform_field_returns() {
        let starts = [[1.0, 1.0], [3.3, 0.2]];
        let v = [0.7, -0.3];
        let fwd = advect(&starts, &VelocityField::Uniform { velocity: v }, 0.01, 25, [L1, L2], 0.1).unwrap();
        let back = advect(
            &fwd.positions[25],
            &VelocityField::Uniform { velocity: [-v[0], -v[1]] },
            0.01,
            25,
            [L1, L2],
            0.1,
        )
        .unwrap();
        for (a, b) in starts.iter().zip(&back.positions[25]) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn leaving_particles_are_frozen_and_flagged() {
        let traj = advect(&[[4.6, 1.0]], &VelocityField::Uniform { velocity: [1.0, 0.0] }, 0.05, 10, [L1, L2], 0.1).unwrap();
        assert_eq!(traj.n_particles(), 1);
        assert!(!traj.in_domain[10][0]);
        assert!(traj.positions[10][0][0] <= L1);
        let set = traj.particles_at_node(10);
        assert_eq!(set.active_centers().count(), 0);
        assert!(advect(&[[5.0, 1.0]], &VelocityField::Uniform { velocity: [0.0, 0.0] }, 0.1, 1, [L1, L2], 0.1).is_err());
        assert!(advect(&[[1.0, 1.0]], &VelocityField::Uniform { velocity: [0.0, 0.0] }, 0.0, 1, [L1, L2], 0.1).is_err());
    }

    #[test]
    fn frame_counts() {
        let traj = advect(&[[1.0, 1.0]], &VelocityField::taylor_green(L1, L2), 0.01, 20, [L1, L2], 0.1).unwrap();
        assert_eq!(traj.frame_positions(0.01).unwrap().len(), 21);
        assert_eq!(traj.frame_positions(0.2).unwrap().len(), 2);
        assert_eq!(traj.frame_positions(0.03).unwrap().len(), (0.2f64 / 0.03).floor() as usize + 1);
        assert!(traj.frame_positions(0.015).is_err());
        let frames = traj.frame_positions(0.05).unwrap();
        assert!(frames.iter().all(|f| f.len() == 1));
        assert_eq!(frames[1].centers[0], traj.positions[5][0]);
    }

    #[test]
    fn sampled_field_bilinear() {
        let data = vec![
            1.0, 2.0, 3.0, 4.0, // (0,0), (1,0)
            5.0, 6.0, 7.0, 8.0, // (0,1), (1,1)
        ];
        let f = SampledField::new(2, 2, 1.0, 1.0, 1, 1.0, data).unwrap();
        let mid = f.eval([0.5, 0.5], 0.0);
        assert!((mid[0] - 4.0).abs() < 1e-15 && (mid[1] - 5.0).abs() < 1e-15);
        assert_eq!(f.eval([1.0, 0.0], 0.0), [3.0, 4.0]);
        assert_eq!(f.eval([0.0, 1.0], 0.0), [5.0, 6.0]);
    }

    #[test]
    fn constant_file_evaluates_constant() {
        let dir = tempfile::tempdir().unwrap();
        let f = SampledField::from_fn(5, 4, 2.0, 1.0, 3, 0.1, |_, _| [0.3, -0.2]).unwrap();
        let p = dir.path().join("const");
        save_velocity_field(&p, &f).unwrap();
        let loaded = load_velocity_field(&p.with_extension("json")).unwrap();
        for x in [[0.0, 0.0], [1.234, 0.77], [2.0, 1.0]] {
            for t in [0.0, 0.05, 0.3] {
                assert_eq!(loaded.eval(x, t), [0.3, -0.2]);
            }
        }
    }

    #[test]
    fn save_load_save_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = VortexStreetSpec {
            nx: 30,
            ny: 14,
            time_steps: 3,
            ..VortexStreetSpec::default()
        };
        let f = synthetic_vortex_street(&spec).unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save_velocity_field(&a, &f).unwrap();
        let VelocityField::Sampled(back) = load_velocity_field(&a).unwrap() else {
            panic!("expected sampled field");
        };
        save_velocity_field(&b, &back).unwrap();
        for ext in ["f64", "json"] {
            assert_eq!(
                std::fs::read(a.with_extension(ext)).unwrap(),
                std::fs::read(b.with_extension(ext)).unwrap()
            );
        }
        // nodes are reproduced exactly
        let VelocityField::Sampled(s) = load_velocity_field(&a).unwrap() else { unreachable!() };
        let x = [3.0 * spec.lx / 29.0, 5.0 * spec.ly / 13.0];
        assert_eq!(s.eval(x, spec.dt), s.node(1, 3, 5));
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        io::write_bytes(&p.with_extension("json"), b"{\"nx\": 2}").unwrap();
        assert!(load_velocity_field(&p).is_err());
        let f = SampledField::from_fn(3, 3, 1.0, 1.0, 1, 1.0, |_, _| [1.0, 0.0]).unwrap();
        save_velocity_field(&p, &f).unwrap();
        io::write_bytes(&p.with_extension("f64"), &[0u8; 16]).unwrap();
        assert!(load_velocity_field(&p).is_err());
        let mut nan = f.data.clone();
        nan[3] = f64::NAN;
        io::write_bytes(&p.with_extension("f64"), &io::f64s_to_bytes(&nan)).unwrap();
        assert!(load_velocity_field(&p).is_err());
    }

    #[test]
    fn vortex_street_has_alternating_vortices() {
        let f = synthetic_vortex_street(&VortexStreetSpec::default()).unwrap();
        // cross-stream velocity changes sign along the centerline
        let vs: Vec<f64> = (0..40).map(|k| f.eval([0.1 * k as f64 + 0.2, 1.075], 0.0)[1]).collect();
        let changes = vs.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(changes >= 4, "{changes}");
    }
}
