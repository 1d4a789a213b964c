//! The 2D pressure-wave benchmark: a fluid at rest in a channel with
//! elastic top and bottom walls, driven by a half-period cosine pressure
//! pulse at the inflow. CGS units.

use std::sync::Arc;

use crate::forms::assemble_boundary_pressure_load;
use crate::mesh::{BoundaryTag, Mesh};
use crate::scheme::{
    EnergyReport, FsiProblem, LoadProvider, PhysicalParams, SchemeState, SideBc, StructureEnds,
};
use crate::{Error, Result};

/// Benchmark configuration with the standard physical parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchConfig {
    /// Mesh level: `M + 1` vertices across the channel, `10 M + 1` along it.
    pub m: usize,
    pub tau: f64,
    pub beta: f64,
    pub p_max: f64,
    pub t_max: f64,
    pub snapshot_times: Vec<f64>,
    pub ends: StructureEnds,
    /// Debugging gauge: post-shift the pressure to mean zero each step.
    pub mean_zero_gauge: bool,
}

impl BenchConfig {
    /// Desk-scale defaults: `M = 16`, `tau = 1e-4`, snapshots at the times
    /// used for the pressure contours.
    pub fn standard(m: usize, tau: f64) -> Self {
        BenchConfig {
            m,
            tau,
            beta: 0.5,
            p_max: 1.3333e4,
            t_max: 0.003,
            snapshot_times: vec![0.003, 0.009, 0.016, 0.026],
            ends: StructureEnds::Natural,
            mean_zero_gauge: false,
        }
    }

    /// Channel physical parameters: the wall coefficients derive from the
    /// Young modulus, Poisson ratio, wall thickness and channel radius.
    pub fn physical_params(&self) -> PhysicalParams {
        let young = 0.75e6;
        let poisson = 0.5;
        let eps_s = 0.1;
        let radius = 0.5;
        PhysicalParams {
            rho_f: 1.0,
            mu: 0.035,
            rho_s: 1.1,
            eps_s,
            c0: young * eps_s / (2.0 * (1.0 + poisson)),
            c1: young * eps_s / (radius * radius * (1.0 - poisson * poisson)),
            beta: self.beta,
        }
    }

    pub fn mesh(&self) -> Result<Arc<Mesh>> {
        Ok(Arc::new(Mesh::build_rect_mesh(
            10 * self.m,
            self.m,
            5.0,
            0.5,
            false,
        )?))
    }
}

/// Inflow pressure pulse: half of `p_max (1 - cos(2 pi t / t_max))` up to
/// `t_max`, zero afterward.
pub fn pin(t: f64, p_max: f64, t_max: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "inflow pressure queried at negative time {t}"
        )));
    }
    Ok(if t <= t_max {
        0.5 * p_max * (1.0 - (2.0 * std::f64::consts::PI * t / t_max).cos())
    } else {
        0.0
    })
}

/// Inflow traction loads for the benchmark (outflow pressure is zero).
pub struct BenchLoads {
    unit_left: Vec<f64>,
    p_max: f64,
    t_max: f64,
    n_tr: usize,
}

impl BenchLoads {
    pub fn new(problem: &FsiProblem, cfg: &BenchConfig) -> Result<BenchLoads> {
        Ok(BenchLoads {
            unit_left: assemble_boundary_pressure_load(&problem.v, BoundaryTag::SigmaLeft, 1.0)?,
            p_max: cfg.p_max,
            t_max: cfg.t_max,
            n_tr: problem.n_tr(),
        })
    }
}

impl LoadProvider for BenchLoads {
    fn fluid_load(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.unit_left.len()]
    }
    fn solid_load(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_tr]
    }
    fn boundary_load(&self, t: f64) -> Vec<f64> {
        let p = pin(t, self.p_max, self.t_max).expect("nonnegative step times");
        self.unit_left.iter().map(|v| v * p).collect()
    }
    fn dirichlet_values(&self, _t: f64) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub state: SchemeState,
}

#[derive(Debug, Clone, Copy)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    pub report: EnergyReport,
}

pub struct BenchRun {
    pub cfg: BenchConfig,
    pub problem: FsiProblem,
    pub snapshots: Vec<Snapshot>,
    pub energy: Vec<EnergyRow>,
}

/// Run the benchmark from rest, collecting snapshots at the configured
/// times and the per-step energy trace.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchRun> {
    let mesh = cfg.mesh()?;
    let params = cfg.physical_params();
    let mut problem = FsiProblem::new(
        &mesh,
        crate::scheme::Element::TaylorHood,
        params,
        cfg.tau,
        SideBc::Neumann,
        cfg.ends,
    )?;
    problem.mean_zero_gauge = cfg.mean_zero_gauge;
    let loads = BenchLoads::new(&problem, cfg)?;
    let snapshot_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|t| (t / cfg.tau).round() as usize)
        .collect();
    let n_steps = *snapshot_steps.iter().max().unwrap_or(&0);

    let mut state = problem.initial_state(
        vec![0.0; problem.n_u()],
        vec![0.0; problem.n_p()],
        vec![0.0; problem.n_tr()],
    );
    let mut snapshots = Vec::new();
    let mut energy = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let next = problem.advance(&state, &loads)?;
        let report = problem.energies(&next, &state);
        energy.push(EnergyRow {
            step: next.n,
            t: next.t,
            report,
        });
        if let Some(k) = snapshot_steps.iter().position(|&s| s == next.n) {
            snapshots.push(Snapshot {
                t: cfg.snapshot_times[k],
                step: next.n,
                state: next.clone(),
            });
        }
        state = next;
    }
    Ok(BenchRun {
        cfg: cfg.clone(),
        problem,
        snapshots,
        energy,
    })
}

/// x-location of the largest `|p|` over the pressure DOFs of a snapshot.
pub fn wavefront_x(problem: &FsiProblem, p: &[f64]) -> f64 {
    let mut best = (0.0f64, 0.0f64);
    for (dof, &point) in problem.q.dof_point.iter().enumerate() {
        if p[dof].abs() > best.0 {
            best = (p[dof].abs(), point[0]);
        }
    }
    best.1
}

pub fn min_pressure(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::INFINITY, f64::min)
}
