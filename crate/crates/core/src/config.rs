//! Experiment configuration, read from and written to TOML.
//!
//! Every section has defaults, so a file only needs the keys it changes.
//! Two profiles exist: `desk` (236 x 108, what the test suite runs) and
//! `paper` (472 x 216).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, GridConfig, LayoutKind, Rasterization, ReceiverLayout};
use crate::signal::{default_frame_duration, SourceSignal};
use crate::vadcp::BeamGeometry;
use crate::velocimetry::OpticalFlowParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub c: f64,
    pub cfl_safety: f64,
    pub pml_width: usize,
    /// Record length as a multiple of the pulse-plus-crossing time.
    pub record_factor: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 236,
            ny: 108,
            lx: 4.71,
            ly: 2.15,
            c: 1500.0,
            cfl_safety: 0.95,
            pml_width: 20,
            record_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    /// Central frequency of the Gaussian pulse, Hz.
    pub q0: f64,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self { q0: 1e5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSection {
    pub layout: LayoutKind,
    /// Receivers per horizontal edge; every boundary cell when absent.
    pub per_horizontal: Option<usize>,
    /// Receivers per vertical edge; every boundary cell when absent.
    pub per_vertical: Option<usize>,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        Self {
            layout: LayoutKind::AllAround,
            per_horizontal: None,
            per_vertical: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleSection {
    pub count: usize,
    pub diameter: f64,
    /// Explicit centers; drawn from the seed when empty.
    pub centers: Vec<[f64; 2]>,
    /// Minimum gap between drawn disks and from the domain edge, m.
    pub gap: f64,
    pub rasterization: Rasterization,
}

impl Default for ParticleSection {
    fn default() -> Self {
        Self {
            count: 10,
            diameter: 0.14,
            centers: Vec::new(),
            gap: 0.1,
            rasterization: Rasterization::CellCenter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            iterations: crate::inverse::DEFAULT_MAX_ITERATIONS,
            tolerance: crate::inverse::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocimetrySection {
    /// Detection threshold as a fraction of the frame maximum.
    pub threshold: f64,
    pub alpha: f64,
    pub hs_iterations: usize,
    /// Gaussian pre-smoothing in cells.
    pub smoothing: f64,
    pub mask_fraction: f64,
}

impl Default for VelocimetrySection {
    fn default() -> Self {
        let of = OpticalFlowParams::default();
        Self {
            threshold: 0.3,
            alpha: of.alpha,
            hs_iterations: of.iterations,
            smoothing: of.smoothing,
            mask_fraction: of.mask_fraction,
        }
    }
}

impl VelocimetrySection {
    pub fn optical_flow(&self) -> OpticalFlowParams {
        OpticalFlowParams {
            alpha: self.alpha,
            iterations: self.hs_iterations,
            smoothing: self.smoothing,
            mask_fraction: self.mask_fraction,
        }
    }
}

/// Taylor-Green run: few large particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VortexSection {
    pub particles: usize,
    pub diameter: f64,
    /// Time between acquisitions, s.
    pub frame_period: f64,
    pub frames: usize,
    /// Forward Euler step of the trajectory integration, s.
    pub advect_dt: f64,
    /// Multiplies the field; 0 freezes the particles.
    pub speed_scale: f64,
}

impl Default for VortexSection {
    fn default() -> Self {
        Self {
            particles: 13,
            diameter: 0.14,
            frame_period: 0.04,
            frames: 4,
            advect_dt: 0.001,
            speed_scale: 1.0,
        }
    }
}

/// Imported vortex street: many small particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KarmanSection {
    pub particles: usize,
    /// Particle count for the V-ADCP comparison, seeded inside the beams.
    pub vadcp_particles: usize,
    pub diameter: f64,
    pub frame_period: f64,
    pub frames: usize,
    /// Field time of the first acquisition, s.
    pub start_time: f64,
    pub advect_dt: f64,
    /// Detection threshold for these sub-cell particles. A particle straddling
    /// four cells peaks at a quarter of a centered one, so this sits well
    /// below the velocimetry default.
    pub threshold: f64,
    /// Detection threshold for the denser beam seeding, where neighbours sit
    /// two cells apart and a low threshold merges them.
    pub vadcp_threshold: f64,
}

impl Default for KarmanSection {
    fn default() -> Self {
        Self {
            particles: 150,
            vadcp_particles: 450,
            diameter: 0.01,
            // just above the 3x record at 100 kHz
            frame_period: 0.012,
            frames: 2,
            start_time: 0.1,
            advect_dt: 0.001,
            threshold: 0.1,
            vadcp_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadcpSection {
    pub phi_deg: f64,
    pub cone_half_angle_deg: f64,
    pub n_cells: usize,
    pub range_start: f64,
    pub range_end: f64,
    pub q_s: f64,
}

impl Default for VadcpSection {
    fn default() -> Self {
        Self {
            phi_deg: 20.0,
            cone_half_angle_deg: 2.0,
            n_cells: 10,
            range_start: 0.1,
            range_end: 0.9,
            q_s: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output: PathBuf,
    /// Relative noise level added to the receiver data.
    pub noise_sigma: f64,
    pub grid: GridSection,
    pub signal: SignalSection,
    pub receivers: ReceiverSection,
    pub particles: ParticleSection,
    pub solver: SolverSection,
    pub velocimetry: VelocimetrySection,
    pub vortex: VortexSection,
    pub karman: KarmanSection,
    pub vadcp: VadcpSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 1,
            output: PathBuf::from("out"),
            noise_sigma: 0.0,
            grid: GridSection::default(),
            signal: SignalSection::default(),
            receivers: ReceiverSection::default(),
            particles: ParticleSection::default(),
            solver: SolverSection::default(),
            velocimetry: VelocimetrySection::default(),
            vortex: VortexSection::default(),
            karman: KarmanSection::default(),
            vadcp: VadcpSection::default(),
        }
    }

    /// Full resolution with 32 / 16 receivers per edge.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.profile = Profile::Paper;
        cfg.grid.nx = 472;
        cfg.grid.ny = 216;
        cfg.grid.pml_width = 40;
        cfg.receivers.per_horizontal = Some(32);
        cfg.receivers.per_vertical = Some(16);
        cfg
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Parses a config file over the defaults of the profile it names (desk
    /// when it names none), then validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_or(text, Profile::Desk)
    }

    /// Like [`ExperimentConfig::from_toml`], with `fallback` as the profile
    /// when the file does not name one.
    pub fn from_toml_or(text: &str, fallback: Profile) -> Result<Self> {
        let cfg = Self::parse_layered(text, fallback).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_layered(text: &str, fallback: Profile) -> std::result::Result<Self, String> {
        let file: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let profile = match file.get("profile") {
            Some(v) => v.clone().try_into::<Profile>().map_err(|e| e.to_string())?,
            None => fallback,
        };
        let mut merged = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| e.to_string())?;
        merge_tables(&mut merged, file);
        merged.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config serialization failed: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_or(path, Profile::Desk)
    }

    /// Reads a file; syntax and schema errors are reported against the path.
    pub fn load_or(path: &Path, fallback: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse_layered(&text, fallback).map_err(|e| Error::format(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without running a solver.
    pub fn validate(&self) -> Result<()> {
        let g = self.base_grid()?;
        self.signal()?;
        if !(self.grid.record_factor >= 1.0) {
            return Err(Error::config(format!("record_factor must be at least 1, got {}", self.grid.record_factor)));
        }
        self.layout(&g)?;
        if !(self.particles.diameter > 0.0) || !(self.particles.gap >= 0.0) {
            return Err(Error::config("particle diameter must be positive and the gap non-negative"));
        }
        if self.particles.centers.is_empty() && self.particles.count == 0 {
            return Err(Error::config("particle count must be positive"));
        }
        for c in &self.particles.centers {
            if !g.contains(*c) {
                return Err(Error::config(format!("particle center ({}, {}) lies outside the domain", c[0], c[1])));
            }
        }
        if self.solver.iterations == 0 || !(self.solver.tolerance >= 0.0) {
            return Err(Error::config("solver needs at least one iteration and a non-negative tolerance"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("noise level must be non-negative, got {}", self.noise_sigma)));
        }
        let v = &self.velocimetry;
        check_threshold(v.threshold)?;
        if !(v.alpha > 0.0) || v.hs_iterations == 0 || !(v.smoothing >= 0.0) || !(v.mask_fraction >= 0.0 && v.mask_fraction < 1.0) {
            return Err(Error::config("optical flow needs alpha > 0, at least one sweep, smoothing >= 0 and mask_fraction in [0, 1)"));
        }
        let vx = &self.vortex;
        check_schedule("vortex", vx.frame_period, vx.frames, vx.advect_dt)?;
        if vx.particles == 0 || !(vx.diameter > 0.0) || !vx.speed_scale.is_finite() {
            return Err(Error::config("vortex run needs particles, a positive diameter and a finite speed scale"));
        }
        let k = &self.karman;
        check_schedule("karman", k.frame_period, k.frames, k.advect_dt)?;
        if k.particles == 0 || k.vadcp_particles == 0 || !(k.diameter > 0.0) || !(k.start_time >= 0.0) {
            return Err(Error::config("karman run needs particles, a positive diameter and a non-negative start time"));
        }
        check_threshold(k.threshold)?;
        check_threshold(k.vadcp_threshold)?;
        self.beam_geometry(&g)?.validate()?;
        Ok(())
    }

    /// Grid with a one-step record; see [`ExperimentConfig::grid`].
    pub fn base_grid(&self) -> Result<Grid> {
        let s = &self.grid;
        build_grid(&GridConfig {
            nx: s.nx,
            ny: s.ny,
            lx: s.lx,
            ly: s.ly,
            c: s.c,
            cfl_safety: s.cfl_safety,
            dt: None,
            nt: 1,
            pml_width: s.pml_width,
        })
    }

    /// Grid whose record covers `record_factor` times the pulse plus the
    /// farthest crossing.
    pub fn grid(&self) -> Result<Grid> {
        let g = self.base_grid()?;
        let sig = self.signal()?;
        Ok(g.with_duration(self.grid.record_factor * default_frame_duration(&sig, &g)))
    }

    pub fn signal(&self) -> Result<SourceSignal> {
        let sig = SourceSignal::gaussian(self.signal.q0);
        sig.validate()?;
        Ok(sig)
    }

    pub fn layout(&self, grid: &Grid) -> Result<ReceiverLayout> {
        self.layout_of(self.receivers.layout, grid)
    }

    pub fn layout_of(&self, kind: LayoutKind, grid: &Grid) -> Result<ReceiverLayout> {
        ReceiverLayout::preset(
            kind,
            grid,
            self.receivers.per_horizontal.unwrap_or(grid.nx),
            self.receivers.per_vertical.unwrap_or(grid.ny),
        )
    }

    pub fn beam_geometry(&self, grid: &Grid) -> Result<BeamGeometry> {
        let v = &self.vadcp;
        let geom = BeamGeometry {
            phi: v.phi_deg.to_radians(),
            cone_half_angle: v.cone_half_angle_deg.to_radians(),
            n_cells: v.n_cells,
            range_start: v.range_start,
            range_end: v.range_end,
            q_s: v.q_s,
            ..BeamGeometry::centered(grid)
        };
        geom.validate()?;
        Ok(geom)
    }
}

/// Recursive merge: tables merge key by key, anything else replaces.
fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("detection threshold must lie in (0, 1), got {t}")))
    }
}

fn check_schedule(name: &str, frame_period: f64, frames: usize, advect_dt: f64) -> Result<()> {
    if frames < 2 || !(frame_period > 0.0) || !(advect_dt > 0.0) {
        return Err(Error::config(format!(
            "{name}: need at least two frames and positive frame period and advection step"
        )));
    }
    let ratio = frame_period / advect_dt;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::config(format!(
            "{name}: frame period {frame_period} is not a multiple of the advection step {advect_dt}"
        )));
    }
    Ok(())
}
