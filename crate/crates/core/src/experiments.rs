//! The preset experiments: static reconstructions under varying frequency,
//! receiver layout and noise, velocimetry in a Taylor-Green vortex, and an
//! imported vortex street compared against the virtual ADCP.
//!
//! Every run validates its configuration first, draws all randomness from the
//! configured seed and returns a typed report together with its artifacts.

use std::path::Path;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acoustics::{forward_with_solver, simulate_moving, WaveSolver};
use crate::artifacts::{add_field_png, add_receiver_png, ArtifactSet};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::flow::{advect_from, load_velocity_field, VelocityField};
use crate::grid::{relative_l2_error, DensityField, Grid, LayoutKind, ParticleSet, Rasterization, ReceiverLayout};
use crate::inverse::{add_noise, cgls_solve, InverseProblem, ReconstructionReport, ReportSummary};
use crate::io::field_header;
use crate::signal::{min_resolvable_frequency, SourceSignal};
use crate::vadcp::{beam_region, build_cells, cells_to_rgb, compare_methods, ComparisonReport};
use crate::velocimetry::{
    blob_velocities, dense_flow, detect_particles, flow_to_rgb, nearest_point_velocities, velocity_error, DenseFlow,
    DetectedParticles, FlowEstimate, SparseVector,
};

/// Offsets the configured seed per random stream so streams stay independent.
const NOISE_STREAM: u64 = 0x6e6f_6973_65;
const VORTEX_STREAM: u64 = 0x766f_7274;
const KARMAN_STREAM: u64 = 0x6b61_726d;

pub struct RunOutput<R> {
    pub report: R,
    pub artifacts: ArtifactSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub nt: usize,
    pub pml_width: usize,
}

impl From<&Grid> for GridInfo {
    fn from(g: &Grid) -> Self {
        Self {
            nx: g.nx,
            ny: g.ny,
            dx: g.dx,
            dy: g.dy,
            dt: g.dt,
            nt: g.nt,
            pml_width: g.pml_width,
        }
    }
}

/// Receiver provenance recorded in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceiverInfo {
    pub layout: LayoutKind,
    pub count: usize,
    pub per_horizontal: usize,
    pub per_vertical: usize,
}

fn receiver_info(cfg: &ExperimentConfig, layout: &ReceiverLayout, grid: &Grid) -> ReceiverInfo {
    ReceiverInfo {
        layout: layout.kind,
        count: layout.len(),
        per_horizontal: cfg.receivers.per_horizontal.unwrap_or(grid.nx),
        per_vertical: cfg.receivers.per_vertical.unwrap_or(grid.ny),
    }
}

/// Draws `count` centers inside `[lo, hi]` accepted by `accept`, at least
/// `min_distance` apart, by rejection sampling.
pub fn scatter_points(
    rng: &mut ChaCha8Rng,
    count: usize,
    min_distance: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    accept: impl Fn([f64; 2]) -> bool,
) -> Result<Vec<[f64; 2]>> {
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return Err(Error::config("placement box is empty"));
    }
    let budget = 2000 * count.max(1);
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        if tries > budget {
            return Err(Error::config(format!(
                "could only place {} of {count} particles {min_distance} m apart",
                out.len()
            )));
        }
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if accept(p) && out.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_distance) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Static particle centers: the configured list, or a seeded draw keeping
/// every disk `gap` away from its neighbours and from the domain edge.
pub fn particle_centers(cfg: &ExperimentConfig, grid: &Grid) -> Result<Vec<[f64; 2]>> {
    let p = &cfg.particles;
    if !p.centers.is_empty() {
        return Ok(p.centers.clone());
    }
    let margin = 0.5 * p.diameter + p.gap;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    scatter_points(
        &mut rng,
        p.count,
        p.diameter + p.gap,
        [margin, margin],
        [grid.lx - margin, grid.ly - margin],
        |_| true,
    )
}

fn residuals_monotone(rep: &ReconstructionReport) -> bool {
    rep.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
}

/// Relative error over the rows `rows` only.
fn band_error(est: &DensityField, truth: &DensityField, rows: std::ops::Range<usize>) -> Option<f64> {
    let nx = truth.nx;
    let a: Vec<f64> = rows.clone().flat_map(|j| est.values[j * nx..(j + 1) * nx].to_vec()).collect();
    let b: Vec<f64> = rows.flat_map(|j| truth.values[j * nx..(j + 1) * nx].to_vec()).collect();
    relative_l2_error(&a, &b).ok()
}

/// Distance from each true center to the nearest of the `truth.len()`
/// heaviest detected blobs. Noise blobs are light, so they cannot stand in
/// for a missed particle.
fn centroid_errors(truth: &[[f64; 2]], found: &DetectedParticles) -> Vec<f64> {
    let mut order: Vec<usize> = (0..found.len()).collect();
    order.sort_by(|&a, &b| found.masses[b].total_cmp(&found.masses[a]));
    order.truncate(truth.len());
    truth
        .iter()
        .map(|t| {
            order
                .iter()
                .map(|&k| found.centroids[k])
                .map(|c| (c[0] - t[0]).hypot(c[1] - t[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct StaticReport {
    pub experiment: String,
    pub seed: u64,
    pub q0: f64,
    pub noise_sigma: f64,
    pub min_resolvable_frequency_hz: f64,
    pub grid: GridInfo,
    pub receivers: ReceiverInfo,
    pub particles: usize,
    pub diameter: f64,
    pub summary: ReportSummary,
    pub rel_error: f64,
    pub top_half_error: Option<f64>,
    pub bottom_half_error: Option<f64>,
    pub residuals: Vec<f64>,
    pub residuals_monotone: bool,
    pub detected: usize,
    pub centroid_errors: Vec<f64>,
    pub max_centroid_error: f64,
}

/// One static acquisition and reconstruction.
pub fn run_static(
    name: &str,
    cfg: &ExperimentConfig,
    q0: f64,
    layout_kind: LayoutKind,
    sigma: f64,
) -> Result<RunOutput<StaticReport>> {
    let mut cfg = cfg.clone();
    cfg.signal.q0 = q0;
    cfg.receivers.layout = layout_kind;
    cfg.noise_sigma = sigma;
    cfg.validate()?;
    let grid = cfg.grid()?;
    let sig = cfg.signal()?;
    let layout = cfg.layout(&grid)?;
    let centers = particle_centers(&cfg, &grid)?;
    let truth = ParticleSet::new(centers.clone(), cfg.particles.diameter)
        .with_rasterization(cfg.particles.rasterization)
        .rasterize(&grid)?;
    info!("{name}: q0 = {q0:e} Hz, layout {}, sigma {sigma}, {} receivers, nt {}", layout_kind.as_str(), layout.len(), grid.nt);
    let solver = WaveSolver::new(&grid)?;
    let clean = forward_with_solver(&solver, &truth, &sig, &layout)?;
    let observed = add_noise(&clean, sigma, cfg.seed ^ NOISE_STREAM)?;
    let problem = InverseProblem::new(&grid, &sig, &layout, observed.clone())?
        .with_iterations(cfg.solver.iterations)
        .with_tolerance(cfg.solver.tolerance);
    let rep = cgls_solve(&problem)?;
    let rel_error = relative_l2_error(&rep.field.values, &truth.values)?;
    let detected = detect_particles(&rep.field, &grid, cfg.velocimetry.threshold)?;
    let errs = centroid_errors(&centers, &detected);
    let half = grid.ny / 2;
    let report = StaticReport {
        experiment: name.to_string(),
        seed: cfg.seed,
        q0,
        noise_sigma: sigma,
        min_resolvable_frequency_hz: min_resolvable_frequency(grid.c, cfg.particles.diameter),
        grid: GridInfo::from(&grid),
        receivers: receiver_info(&cfg, &layout, &grid),
        particles: centers.len(),
        diameter: cfg.particles.diameter,
        summary: rep.summary(Some(&truth)),
        rel_error,
        top_half_error: band_error(&rep.field, &truth, half..grid.ny),
        bottom_half_error: band_error(&rep.field, &truth, 0..half),
        residuals: rep.residuals.clone(),
        residuals_monotone: residuals_monotone(&rep),
        detected: detected.len(),
        max_centroid_error: errs.iter().copied().fold(0.0, f64::max),
        centroid_errors: errs,
    };
    info!("{name}: relative error {rel_error:.4e} after {} iterations", rep.iterations);
    let mut art = ArtifactSet::new();
    art.add_field("truth", &truth, &grid, "density")?;
    art.add_field("reconstruction", &rep.field, &grid, "density")?;
    art.add_receiver_data("receiver_data", &observed)?;
    art.add_csv("residuals.csv", residual_csv(&rep));
    art.add_csv("particles.csv", points_csv(&centers));
    add_field_png(&mut art, "truth.png", &truth, Some(&layout))?;
    add_field_png(&mut art, "reconstruction.png", &rep.field, Some(&layout))?;
    add_receiver_png(&mut art, "receiver_data.png", &observed)?;
    art.add_json("report.json", &report)?;
    Ok(RunOutput { report, artifacts: art })
}

fn residual_csv(rep: &ReconstructionReport) -> String {
    let mut s = String::from("iteration,relative_residual,objective\n");
    for (k, (r, j)) in rep.residuals.iter().zip(&rep.objective).enumerate() {
        s.push_str(&format!("{k},{r:e},{j:e}\n"));
    }
    s
}

fn points_csv(points: &[[f64; 2]]) -> String {
    let mut s = String::from("particle_id,x,y\n");
    for (k, p) in points.iter().enumerate() {
        s.push_str(&format!("{k},{:e},{:e}\n", p[0], p[1]));
    }
    s
}

fn vectors_csv(vectors: &[SparseVector]) -> String {
    let mut s = String::from("x,y,u,v\n");
    for v in vectors {
        s.push_str(&format!("{:e},{:e},{:e},{:e}\n", v.position[0], v.position[1], v.velocity[0], v.velocity[1]));
    }
    s
}

/// Reconstruction accuracy against the source frequency.
pub fn run_example1(q0: f64, cfg: &ExperimentConfig) -> Result<RunOutput<StaticReport>> {
    run_static("example1", cfg, q0, cfg.receivers.layout, cfg.noise_sigma)
}

/// Reconstruction accuracy against the receiver layout, at 100 kHz.
pub fn run_example2(layout: LayoutKind, cfg: &ExperimentConfig) -> Result<RunOutput<StaticReport>> {
    run_static("example2", cfg, 1e5, layout, cfg.noise_sigma)
}

/// Reconstruction from noisy data, at 100 kHz.
pub fn run_example3(sigma: f64, cfg: &ExperimentConfig) -> Result<RunOutput<StaticReport>> {
    run_static("example3", cfg, 1e5, cfg.receivers.layout, sigma)
}

/// Reconstruction of one frozen frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub time: f64,
    pub truth: DensityField,
    pub reconstruction: DensityField,
    pub rel_error: f64,
    pub residuals_monotone: bool,
    pub detected: DetectedParticles,
}

/// Acquires one record per frame with the particles frozen at `T_j`, and
/// reconstructs each frame independently.
fn reconstruct_frames(
    cfg: &ExperimentConfig,
    grid: &Grid,
    sig: &SourceSignal,
    layout: &ReceiverLayout,
    traj: &crate::flow::TrajectorySet,
    frame_period: f64,
    t0: f64,
    threshold: f64,
) -> Result<Vec<FrameResult>> {
    let data = simulate_moving(traj, sig, grid, layout, frame_period)?;
    let sets = traj.frame_positions(frame_period)?;
    let mut out = Vec::with_capacity(sets.len());
    for (k, (set, clean)) in sets.iter().zip(data).enumerate() {
        let truth = set.rasterize(grid)?;
        let observed = add_noise(&clean, cfg.noise_sigma, (cfg.seed ^ NOISE_STREAM).wrapping_add(k as u64))?;
        let problem = InverseProblem::new(grid, sig, layout, observed)?
            .with_iterations(cfg.solver.iterations)
            .with_tolerance(cfg.solver.tolerance);
        let rep = cgls_solve(&problem)?;
        let rel_error = relative_l2_error(&rep.field.values, &truth.values)?;
        info!("frame {k}: relative error {rel_error:.3e}");
        let detected = detect_particles(&rep.field, grid, threshold)?;
        out.push(FrameResult {
            time: t0 + k as f64 * frame_period,
            truth,
            residuals_monotone: residuals_monotone(&rep),
            reconstruction: rep.field,
            rel_error,
            detected,
        });
    }
    Ok(out)
}

/// Dense optical flow between consecutive frames, with each blob of the
/// earlier frame summarised by its intensity-weighted mean flow.
fn optical_flow_frames(
    cfg: &ExperimentConfig,
    grid: &Grid,
    frames: &[FrameResult],
    frame_period: f64,
) -> Result<(Vec<DenseFlow>, Vec<SparseVector>)> {
    let params = cfg.velocimetry.optical_flow();
    let mut dense = Vec::new();
    let mut blobs = Vec::new();
    for pair in frames.windows(2) {
        let est = dense_flow(&pair[0].reconstruction, &pair[1].reconstruction, grid, frame_period, &params)?;
        let FlowEstimate::Dense { flow, .. } = est else { unreachable!() };
        blobs.extend(blob_velocities(&flow, &pair[0].reconstruction, &pair[0].detected, frame_period));
        dense.push(flow);
    }
    Ok((dense, blobs))
}

/// Truth at the time halfway through the pair each vector came from; for a
/// steady field the time does not matter.
fn sparse_error(vectors: &[SparseVector], truth: &VelocityField, t: f64, grid: &Grid, frame_period: f64) -> Result<f64> {
    let est = FlowEstimate::Sparse {
        vectors: vectors.to_vec(),
        frame_period,
    };
    velocity_error(&est, truth, t, grid, None)
}

#[derive(Debug, Clone, Serialize)]
pub struct VortexReport {
    pub seed: u64,
    pub grid: GridInfo,
    pub receivers: ReceiverInfo,
    pub particles: usize,
    pub diameter: f64,
    pub frame_period: f64,
    pub frames: usize,
    pub speed_scale: f64,
    pub frame_errors: Vec<f64>,
    pub detected_per_frame: Vec<usize>,
    pub residuals_monotone: bool,
    pub nearest_point_vectors: usize,
    pub optical_flow_vectors: usize,
    pub nearest_point_error: Option<f64>,
    pub optical_flow_error: Option<f64>,
    pub max_nearest_point_speed: f64,
    pub max_optical_flow_speed: f64,
    pub wall_time_s: f64,
}

fn max_speed(v: &[SparseVector]) -> f64 {
    v.iter().map(|s| s.velocity[0].hypot(s.velocity[1])).fold(0.0, f64::max)
}

/// Velocimetry of a few large particles carried by the Taylor-Green vortex.
pub fn run_vortex(cfg: &ExperimentConfig) -> Result<RunOutput<VortexReport>> {
    cfg.validate()?;
    let start = Instant::now();
    let vc = &cfg.vortex;
    let grid = cfg.grid()?;
    let sig = cfg.signal()?;
    let layout = cfg.layout(&grid)?;
    let field = VelocityField::taylor_green(grid.lx, grid.ly).scaled(vc.speed_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VORTEX_STREAM);
    // keep clear of the walls, where the field has an outflow component
    let margin = 0.25 * grid.ly;
    let initial = scatter_points(
        &mut rng,
        vc.particles,
        3.0 * vc.diameter,
        [margin, margin],
        [grid.lx - margin, grid.ly - margin],
        |_| true,
    )?;
    let steps = ((vc.frames - 1) as f64 * vc.frame_period / vc.advect_dt).round() as usize;
    let mut traj = advect_from(&initial, &field, 0.0, vc.advect_dt, steps, [grid.lx, grid.ly], vc.diameter)?;
    traj.rasterization = Rasterization::AreaWeighted;
    let frames = reconstruct_frames(cfg, &grid, &sig, &layout, &traj, vc.frame_period, 0.0, cfg.velocimetry.threshold)?;
    let detections: Vec<DetectedParticles> = frames.iter().map(|f| f.detected.clone()).collect();
    let FlowEstimate::Sparse { vectors: np, .. } = nearest_point_velocities(&detections, vc.frame_period)? else {
        unreachable!()
    };
    let (dense, of) = optical_flow_frames(cfg, &grid, &frames, vc.frame_period)?;
    let moving = vc.speed_scale != 0.0;
    let np_error = if moving && !np.is_empty() { Some(sparse_error(&np, &field, 0.0, &grid, vc.frame_period)?) } else { None };
    let of_error = if moving && !of.is_empty() { Some(sparse_error(&of, &field, 0.0, &grid, vc.frame_period)?) } else { None };
    let report = VortexReport {
        seed: cfg.seed,
        grid: GridInfo::from(&grid),
        receivers: receiver_info(cfg, &layout, &grid),
        particles: vc.particles,
        diameter: vc.diameter,
        frame_period: vc.frame_period,
        frames: frames.len(),
        speed_scale: vc.speed_scale,
        frame_errors: frames.iter().map(|f| f.rel_error).collect(),
        detected_per_frame: frames.iter().map(|f| f.detected.len()).collect(),
        residuals_monotone: frames.iter().all(|f| f.residuals_monotone),
        nearest_point_vectors: np.len(),
        optical_flow_vectors: of.len(),
        nearest_point_error: np_error,
        optical_flow_error: of_error,
        max_nearest_point_speed: max_speed(&np),
        max_optical_flow_speed: max_speed(&of),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    info!("vortex: nearest-point error {np_error:?}, optical-flow error {of_error:?}");
    let mut art = ArtifactSet::new();
    art.add_csv("trajectories.csv", traj.to_csv(vc.frame_period)?);
    art.add_csv("nearest_point.csv", vectors_csv(&np));
    art.add_csv("optical_flow_blobs.csv", vectors_csv(&of));
    add_frame_artifacts(&mut art, &grid, &layout, &frames, &dense)?;
    art.add_json("report.json", &report)?;
    Ok(RunOutput { report, artifacts: art })
}

fn add_frame_artifacts(
    art: &mut ArtifactSet,
    grid: &Grid,
    layout: &ReceiverLayout,
    frames: &[FrameResult],
    dense: &[DenseFlow],
) -> Result<()> {
    for (k, f) in frames.iter().enumerate() {
        art.add_field(&format!("frames/truth_{k:03}"), &f.truth, grid, "density")?;
        art.add_field(&format!("frames/reconstruction_{k:03}"), &f.reconstruction, grid, "density")?;
        add_field_png(art, &format!("frames/reconstruction_{k:03}.png"), &f.reconstruction, Some(layout))?;
    }
    for (k, flow) in dense.iter().enumerate() {
        let mut values = Vec::with_capacity(2 * flow.u.len());
        for (u, v) in flow.u.iter().zip(&flow.v) {
            values.push(*u);
            values.push(*v);
        }
        let mut header = field_header(grid, "velocity");
        header.components = 2;
        art.add_raw(&format!("flow/dense_{k:03}"), &header, &values)?;
        art.add_png(&format!("flow/dense_{k:03}.png"), flow.nx, flow.ny, &flow_to_rgb(flow, None))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct KarmanReport {
    pub seed: u64,
    pub field_path: String,
    pub grid: GridInfo,
    pub receivers: ReceiverInfo,
    pub particles: usize,
    pub diameter: f64,
    pub placement: String,
    pub frame_period: f64,
    pub frames: usize,
    pub start_time: f64,
    pub frame_errors: Vec<f64>,
    pub detected_per_frame: Vec<usize>,
    /// Particles still inside the domain at each frame.
    pub seeded_per_frame: Vec<usize>,
    pub residuals_monotone: bool,
    pub nearest_point_vectors: usize,
    pub nearest_point_error: Option<f64>,
    /// Masked RMS of (truth - dense optical flow) over the truth RMS, per pair.
    pub dense_difference_ratio: Vec<f64>,
    pub comparison: ComparisonReport,
    pub wall_time_s: f64,
}

/// Where the vortex-street particles are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Domain,
    BeamRegion,
}

/// Imported vortex street: many small particles, dense optical flow and the
/// comparison against the virtual ADCP at the middle of the first pair.
pub fn run_karman(cfg: &ExperimentConfig, field_path: &Path) -> Result<RunOutput<KarmanReport>> {
    let n = cfg.karman.particles;
    run_vortex_street(cfg, field_path, n, Placement::Domain)
}

/// As [`run_karman`] with particles seeded inside the beams' field of view.
pub fn run_vadcp_compare(cfg: &ExperimentConfig, field_path: &Path) -> Result<RunOutput<KarmanReport>> {
    let n = cfg.karman.vadcp_particles;
    run_vortex_street(cfg, field_path, n, Placement::BeamRegion)
}

pub fn run_vortex_street(
    cfg: &ExperimentConfig,
    field_path: &Path,
    particles: usize,
    placement: Placement,
) -> Result<RunOutput<KarmanReport>> {
    cfg.validate()?;
    let start = Instant::now();
    let kc = &cfg.karman;
    let grid = cfg.grid()?;
    let field = load_velocity_field(field_path)?;
    if let VelocityField::Sampled(s) = &field {
        if s.lx + 1e-9 < grid.lx || s.ly + 1e-9 < grid.ly {
            return Err(Error::config(format!(
                "velocity field covers {} x {} m, the domain is {} x {} m",
                s.lx, s.ly, grid.lx, grid.ly
            )));
        }
        let end = kc.start_time + (kc.frames - 1) as f64 * kc.frame_period;
        let span = (s.time_steps - 1) as f64 * s.dt;
        if s.time_steps > 1 && end > span + 1e-9 {
            return Err(Error::config(format!("frames reach t = {end} s, the field stops at {span} s")));
        }
    }
    let sig = cfg.signal()?;
    let layout = cfg.layout(&grid)?;
    let geom = cfg.beam_geometry(&grid)?;
    let region = beam_region(&geom, &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ KARMAN_STREAM);
    let margin = 2.0 * grid.dx.max(grid.dy);
    let spacing = kc_spacing(particles, &grid, &region, placement);
    let in_region = |p: [f64; 2]| grid.locate(p).map_or(false, |(i, j)| region[grid.index(i, j)]);
    let initial = match placement {
        Placement::Domain => scatter_points(&mut rng, particles, spacing, [margin, margin], [grid.lx - margin, grid.ly - margin], |_| true)?,
        Placement::BeamRegion => scatter_points(&mut rng, particles, spacing, [0.0, 0.0], [grid.lx, grid.ly], in_region)?,
    };
    let steps = ((kc.frames - 1) as f64 * kc.frame_period / kc.advect_dt).round() as usize;
    let mut traj = advect_from(&initial, &field, kc.start_time, kc.advect_dt, steps, [grid.lx, grid.ly], kc.diameter)?;
    traj.rasterization = Rasterization::AreaWeighted;
    let threshold = match placement {
        Placement::Domain => kc.threshold,
        Placement::BeamRegion => kc.vadcp_threshold,
    };
    let frames = reconstruct_frames(cfg, &grid, &sig, &layout, &traj, kc.frame_period, kc.start_time, threshold)?;
    let seeded_per_frame = traj
        .frame_positions(kc.frame_period)?
        .iter()
        .map(|s| s.active.iter().filter(|a| **a).count())
        .collect();
    let detections: Vec<DetectedParticles> = frames.iter().map(|f| f.detected.clone()).collect();
    let FlowEstimate::Sparse { vectors: np, .. } = nearest_point_velocities(&detections, kc.frame_period)? else {
        unreachable!()
    };
    let t_mid = kc.start_time + 0.5 * kc.frame_period;
    // vectors from the first pair only, so they all describe t_mid
    let first_pair = nearest_point_velocities(&detections[..2], kc.frame_period)?;
    let np_error = if np.is_empty() {
        None
    } else {
        Some(velocity_error(&first_pair, &field, t_mid, &grid, None)?)
    };
    let (dense, _) = optical_flow_frames(cfg, &grid, &frames, kc.frame_period)?;
    let dense_difference_ratio = dense
        .iter()
        .enumerate()
        .map(|(k, flow)| masked_difference_ratio(flow, &field, &grid, kc.start_time + (k as f64 + 0.5) * kc.frame_period))
        .collect();
    let comparison = compare_methods(&field, &first_pair, &geom, &region, &grid, t_mid)?;
    info!(
        "vortex street: inverse error {:.4}, V-ADCP error {:.4}",
        comparison.inverse_rel_err, comparison.vadcp_rel_err
    );
    let report = KarmanReport {
        seed: cfg.seed,
        field_path: field_path.display().to_string(),
        grid: GridInfo::from(&grid),
        receivers: receiver_info(cfg, &layout, &grid),
        particles,
        diameter: kc.diameter,
        placement: match placement {
            Placement::Domain => "domain".into(),
            Placement::BeamRegion => "beam_region".into(),
        },
        frame_period: kc.frame_period,
        frames: frames.len(),
        start_time: kc.start_time,
        frame_errors: frames.iter().map(|f| f.rel_error).collect(),
        detected_per_frame: frames.iter().map(|f| f.detected.len()).collect(),
        seeded_per_frame,
        residuals_monotone: frames.iter().all(|f| f.residuals_monotone),
        nearest_point_vectors: np.len(),
        nearest_point_error: np_error,
        dense_difference_ratio,
        comparison,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut art = ArtifactSet::new();
    art.add_csv("trajectories.csv", traj.to_csv(kc.frame_period)?);
    art.add_csv("nearest_point.csv", vectors_csv(&np));
    add_frame_artifacts(&mut art, &grid, &layout, &frames, &dense)?;
    let cells = build_cells(&geom, &grid)?;
    art.add_png("vadcp_cells.png", grid.nx, grid.ny, &cells_to_rgb(&cells, &grid))?;
    art.add_json("comparison.json", &report.comparison)?;
    art.add_json("report.json", &report)?;
    Ok(RunOutput { report, artifacts: art })
}

/// Minimum distance between seeded particles: about 60% of the mean spacing
/// of `n` points over the seeding area, never below two cells.
fn kc_spacing(n: usize, grid: &Grid, region: &[bool], placement: Placement) -> f64 {
    let area = match placement {
        Placement::Domain => grid.lx * grid.ly,
        Placement::BeamRegion => region.iter().filter(|r| **r).count() as f64 * grid.cell_area(),
    };
    (0.6 * (area / n.max(1) as f64).sqrt()).max(2.0 * grid.dx.max(grid.dy))
}

/// `||truth - est|| / ||truth||` over cells where the dense flow is defined.
fn masked_difference_ratio(flow: &DenseFlow, truth: &VelocityField, grid: &Grid, t: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..flow.u.len() {
        if !flow.mask[k] {
            continue;
        }
        let v = truth.eval(grid.cell_center(k % grid.nx, k / grid.nx), t);
        num += (v[0] - flow.u[k]).powi(2) + (v[1] - flow.v[k]).powi(2);
        den += v[0] * v[0] + v[1] * v[1];
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        f64::NAN
    }
}
