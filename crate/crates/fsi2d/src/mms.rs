//! Manufactured exact solution, symbolically derived source terms, error
//! norms, and the convergence-study orchestration.
//!
//! The exact fields are trigonometric in space with `sin t` / `cos t` time
//! factors, so every load vector decomposes as `L(0) cos t + L(pi/2) sin t`;
//! the study precomputes those two vectors per load and runs each time step
//! on axpy operations and factored solves only.

use std::sync::Arc;

use crate::fem::FeSpace;
use crate::forms::{
    assemble_trace_load, assemble_vector_load, l2_error_scalar, l2_error_vector, trace_energy_error,
    trace_l2_error, LOAD_RULE_DEGREE,
};
use crate::mesh::Mesh;
use crate::projections::{FlowField, FlowTrajectory, ProjectionContext, TraceField};
use crate::scheme::{
    Element, FsiProblem, LoadProvider, PhysicalParams, SchemeState, SideBc, StructureEnds,
};
use crate::util::pairwise_orders;
use crate::Result;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Closed-form exact solution of the convergence study, with the source
/// terms that make it solve the coupled model.
#[derive(Debug, Clone, Copy)]
pub struct ExactSolution {
    pub params: PhysicalParams,
    /// Channel height (the interface sits at `y = 0` and `y = ly`).
    pub ly: f64,
}

impl ExactSolution {
    pub fn new(params: PhysicalParams) -> Self {
        ExactSolution { params, ly: 1.0 }
    }

    pub fn velocity(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let st = t.sin();
        [
            4.0 * (TWO_PI * p[0]).sin() * (TWO_PI * p[1]).sin() * st,
            4.0 * (TWO_PI * p[0]).cos() * (TWO_PI * p[1]).cos() * st,
        ]
    }

    pub fn velocity_dt(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let v = self.velocity(std::f64::consts::FRAC_PI_2, p);
        [v[0] * t.cos(), v[1] * t.cos()]
    }

    pub fn velocity_grad(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        let st = t.sin();
        let (s2x, c2x) = ((TWO_PI * p[0]).sin(), (TWO_PI * p[0]).cos());
        let (s2y, c2y) = ((TWO_PI * p[1]).sin(), (TWO_PI * p[1]).cos());
        [
            [
                4.0 * TWO_PI * c2x * s2y * st,
                4.0 * TWO_PI * s2x * c2y * st,
            ],
            [
                -4.0 * TWO_PI * s2x * c2y * st,
                -4.0 * TWO_PI * c2x * s2y * st,
            ],
        ]
    }

    pub fn velocity_grad_dt(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        let g = self.velocity_grad(std::f64::consts::FRAC_PI_2, p);
        let ct = t.cos();
        [
            [g[0][0] * ct, g[0][1] * ct],
            [g[1][0] * ct, g[1][1] * ct],
        ]
    }

    pub fn pressure(&self, t: f64, p: [f64; 2]) -> f64 {
        8.0 * ((2.0 * TWO_PI * p[0]).cos() - (2.0 * TWO_PI * p[1]).cos()) * t.sin()
    }

    pub fn pressure_dt(&self, t: f64, p: [f64; 2]) -> f64 {
        self.pressure(std::f64::consts::FRAC_PI_2, p) * t.cos()
    }

    pub fn displacement(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        [0.0, -4.0 * (TWO_PI * p[0]).cos() * t.cos()]
    }

    pub fn displacement_dx(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        [0.0, 4.0 * TWO_PI * (TWO_PI * p[0]).sin() * t.cos()]
    }

    /// Structure velocity `s = d_t eta`.
    pub fn displacement_dt(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        [0.0, 4.0 * (TWO_PI * p[0]).cos() * t.sin()]
    }

    fn displacement_dtt(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        [0.0, 4.0 * (TWO_PI * p[0]).cos() * t.cos()]
    }

    fn displacement_dxx(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        [0.0, 16.0 * TWO_PI * TWO_PI / 4.0 * (TWO_PI * p[0]).cos() * t.cos()]
    }

    /// Fluid stress times a unit normal, `(-p I + 2 mu D(u)) n`.
    pub fn traction(&self, t: f64, p: [f64; 2], n: [f64; 2]) -> [f64; 2] {
        let g = self.velocity_grad(t, p);
        let pr = self.pressure(t, p);
        let d = [
            [g[0][0], 0.5 * (g[0][1] + g[1][0])],
            [0.5 * (g[0][1] + g[1][0]), g[1][1]],
        ];
        [
            -pr * n[0] + 2.0 * self.params.mu * (d[0][0] * n[0] + d[0][1] * n[1]),
            -pr * n[1] + 2.0 * self.params.mu * (d[1][0] * n[0] + d[1][1] * n[1]),
        ]
    }

    /// Outward normal of the interface component containing `p`.
    fn normal_at(&self, p: [f64; 2]) -> [f64; 2] {
        if p[1] > 0.5 * self.ly {
            [0.0, 1.0]
        } else {
            [0.0, -1.0]
        }
    }

    /// Fluid source `f_f = rho_f d_t u + grad p - mu lap u` (the divergence
    /// of the viscous stress reduces to `mu lap u` for this solenoidal
    /// field).
    pub fn f_fluid(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let st = t.sin();
        let ct = t.cos();
        let (s2x, c2x) = ((TWO_PI * p[0]).sin(), (TWO_PI * p[0]).cos());
        let (s2y, c2y) = ((TWO_PI * p[1]).sin(), (TWO_PI * p[1]).cos());
        let (s4x, s4y) = ((2.0 * TWO_PI * p[0]).sin(), (2.0 * TWO_PI * p[1]).sin());
        let dtu = [4.0 * s2x * s2y * ct, 4.0 * c2x * c2y * ct];
        let gradp = [
            -16.0 * TWO_PI * s4x * st,
            16.0 * TWO_PI * s4y * st,
        ];
        let lap = [
            -8.0 * TWO_PI * TWO_PI * s2x * s2y * st,
            -8.0 * TWO_PI * TWO_PI * c2x * c2y * st,
        ];
        [
            self.params.rho_f * dtu[0] + gradp[0] - self.params.mu * lap[0],
            self.params.rho_f * dtu[1] + gradp[1] - self.params.mu * lap[1],
        ]
    }

    /// Structure source
    /// `f_s = rho_s eps_s d_tt eta - (C0 eta_xx - C1 eta) + sigma(u, p) n`
    /// on the interface component containing `p`.
    pub fn f_solid(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let n = self.normal_at(p);
        let rse = self.params.rho_s * self.params.eps_s;
        let dtt = self.displacement_dtt(t, p);
        let dxx = self.displacement_dxx(t, p);
        let eta = self.displacement(t, p);
        let sn = self.traction(t, p, n);
        let mut out = [0.0; 2];
        for c in 0..2 {
            out[c] = rse * dtt[c] - (self.params.c0 * dxx[c] - self.params.c1 * eta[c]) + sn[c];
        }
        out
    }
}

impl FlowTrajectory for ExactSolution {
    fn u(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        self.velocity(t, p)
    }
    fn grad_u(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        self.velocity_grad(t, p)
    }
    fn p(&self, t: f64, p: [f64; 2]) -> f64 {
        self.pressure(t, p)
    }
    fn eta(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        self.displacement(t, p)
    }
    fn eta_dx(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        self.displacement_dx(t, p)
    }
}

/// Separable load provider for the manufactured runs: every load vector is
/// `L(0) cos t + L(pi/2) sin t`.
pub struct MmsLoads {
    f_cos: Vec<f64>,
    f_sin: Vec<f64>,
    s_cos: Vec<f64>,
    s_sin: Vec<f64>,
    g_cos: Vec<f64>,
    g_sin: Vec<f64>,
    n_u: usize,
}

impl MmsLoads {
    pub fn new(
        v: &FeSpace,
        constrained_info: &[([f64; 2], usize)],
        exact: &ExactSolution,
    ) -> MmsLoads {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let f_at = |t: f64| {
            let f = move |p: [f64; 2]| exact.f_fluid(t, p);
            assemble_vector_load(v, &f, LOAD_RULE_DEGREE)
        };
        let s_at = |t: f64| {
            let f = move |p: [f64; 2]| exact.f_solid(t, p);
            assemble_trace_load(&v.trace, &f)
        };
        let g_at = |t: f64| -> Vec<f64> {
            constrained_info
                .iter()
                .map(|&(p, c)| exact.velocity(t, p)[c])
                .collect()
        };
        MmsLoads {
            f_cos: f_at(0.0),
            f_sin: f_at(half_pi),
            s_cos: s_at(0.0),
            s_sin: s_at(half_pi),
            g_cos: g_at(0.0),
            g_sin: g_at(half_pi),
            n_u: v.n_dofs(),
        }
    }

    fn combine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
        let (ct, st) = (t.cos(), t.sin());
        a.iter().zip(b).map(|(x, y)| x * ct + y * st).collect()
    }
}

impl LoadProvider for MmsLoads {
    fn fluid_load(&self, t: f64) -> Vec<f64> {
        Self::combine(&self.f_cos, &self.f_sin, t)
    }
    fn solid_load(&self, t: f64) -> Vec<f64> {
        Self::combine(&self.s_cos, &self.s_sin, t)
    }
    fn boundary_load(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_u]
    }
    fn dirichlet_values(&self, t: f64) -> Vec<f64> {
        Self::combine(&self.g_cos, &self.g_sin, t)
    }
}

/// Error norms of a state against the exact solution at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    pub u_l2: f64,
    pub u_l2_sigma: f64,
    pub p_l2: f64,
    pub eta_l2_sigma: f64,
    pub eta_s: f64,
}

pub fn error_norms(
    v: &FeSpace,
    q: &FeSpace,
    state: &SchemeState,
    t: f64,
    exact: &ExactSolution,
) -> ErrorNorms {
    let u_an = |p: [f64; 2]| exact.velocity(t, p);
    let p_an = |p: [f64; 2]| exact.pressure(t, p);
    let eta_an = |p: [f64; 2]| exact.displacement(t, p);
    let eta_dx_an = |p: [f64; 2]| exact.displacement_dx(t, p);
    ErrorNorms {
        u_l2: l2_error_vector(v, &state.u, &u_an, LOAD_RULE_DEGREE),
        u_l2_sigma: trace_l2_error(&v.trace, &v.trace.restrict(v, &state.u), &u_an),
        p_l2: l2_error_scalar(q, &state.p, &p_an, LOAD_RULE_DEGREE),
        eta_l2_sigma: trace_l2_error(&v.trace, &state.eta, &eta_an),
        eta_s: trace_energy_error(
            &v.trace,
            &state.eta,
            &eta_an,
            &eta_dx_an,
            exact.params.c0,
            exact.params.c1,
        ),
    }
}

/// Time-step selection rule of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TauRule {
    /// `tau = h^3` (the second-order-element setting).
    H3,
    /// `tau = h^2` (the first-order-element setting).
    H2,
    Fixed(f64),
}

impl TauRule {
    pub fn tau(&self, h: f64) -> f64 {
        match self {
            TauRule::H3 => h * h * h,
            TauRule::H2 => h * h,
            TauRule::Fixed(v) => *v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyLevel {
    pub m: usize,
    pub h: f64,
    pub tau: f64,
    pub n_steps: usize,
    pub errors: ErrorNorms,
    /// Max-over-time errors, recorded when `track_max` is on.
    pub max_errors: Option<ErrorNorms>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub levels: Vec<StudyLevel>,
}

impl StudyResult {
    pub fn error_columns(&self) -> [Vec<f64>; 4] {
        let col = |f: fn(&ErrorNorms) -> f64| self.levels.iter().map(|l| f(&l.errors)).collect();
        [
            col(|e| e.u_l2),
            col(|e| e.p_l2),
            col(|e| e.eta_l2_sigma),
            col(|e| e.eta_s),
        ]
    }

    /// Pairwise orders per error column (u, p, eta, eta_s).
    pub fn orders(&self) -> [Vec<f64>; 4] {
        let cols = self.error_columns();
        [
            pairwise_orders(&cols[0]),
            pairwise_orders(&cols[1]),
            pairwise_orders(&cols[2]),
            pairwise_orders(&cols[3]),
        ]
    }

    /// The single per-column order reported by the tables (last pair).
    pub fn table_orders(&self) -> [f64; 4] {
        let o = self.orders();
        [
            *o[0].last().unwrap(),
            *o[1].last().unwrap(),
            *o[2].last().unwrap(),
            *o[3].last().unwrap(),
        ]
    }
}

/// Configuration of one convergence study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub element: Element,
    pub side_bc: SideBc,
    pub m_levels: Vec<usize>,
    pub beta: f64,
    pub t_end: f64,
    pub tau_rule: TauRule,
    pub track_max: bool,
    /// Debugging gauge: post-shift the pressure to mean zero each step
    /// (perturbs the traction history and the energy identity).
    pub mean_zero_gauge: bool,
}

/// Build one level's problem, run it to `t_end`, and return the level row.
pub fn run_study_level(cfg: &StudyConfig, m: usize) -> Result<StudyLevel> {
    let h = 1.0 / m as f64;
    let periodic = cfg.side_bc == SideBc::Periodic;
    let mesh = Arc::new(Mesh::build_rect_mesh(2 * m, m, 2.0, 1.0, periodic)?);
    let params = PhysicalParams {
        beta: cfg.beta,
        ..PhysicalParams::unit()
    };
    let tau_nominal = cfg.tau_rule.tau(h);
    let n_steps = (cfg.t_end / tau_nominal).round().max(1.0) as usize;
    let tau = cfg.t_end / n_steps as f64;
    let mut problem = FsiProblem::new(
        &mesh,
        cfg.element,
        params,
        tau,
        cfg.side_bc,
        StructureEnds::Natural,
    )?;
    problem.mean_zero_gauge = cfg.mean_zero_gauge;
    let exact = ExactSolution::new(params);
    let loads = MmsLoads::new(&problem.v, &problem.constrained_info, &exact);

    // Initial data: nodal interpolation of the exact velocity and pressure,
    // displacement from the interface Ritz construction.
    let u0 = problem.v.interpolate(&|p, c| exact.velocity(0.0, p)[c]);
    let p0 = problem.q.interpolate(&|p, _| exact.pressure(0.0, p));
    let eta0 = {
        let ctx = ProjectionContext::new(
            &mesh,
            cfg.element,
            params.mu,
            params.c0,
            params.c1,
            cfg.side_bc,
        )?;
        let u_at = |p: [f64; 2]| exact.velocity(0.0, p);
        let grad_at = |p: [f64; 2]| exact.velocity_grad(0.0, p);
        let p_at = |p: [f64; 2]| exact.pressure(0.0, p);
        let eta_at = |p: [f64; 2]| exact.displacement(0.0, p);
        let eta_dx_at = |p: [f64; 2]| exact.displacement_dx(0.0, p);
        ctx.initial_rsh_eta(
            &FlowField {
                u: &u_at,
                grad_u: &grad_at,
                p: &p_at,
            },
            &TraceField {
                g: &eta_at,
                dg_dx: &eta_dx_at,
            },
        )?
    };

    let mut state = problem.initial_state(u0, p0, eta0);
    let mut max_errors: Option<ErrorNorms> = None;
    for _ in 0..n_steps {
        state = problem.advance(&state, &loads)?;
        if cfg.track_max {
            let e = error_norms(&problem.v, &problem.q, &state, state.t, &exact);
            max_errors = Some(match max_errors {
                None => e,
                Some(m) => ErrorNorms {
                    u_l2: m.u_l2.max(e.u_l2),
                    u_l2_sigma: m.u_l2_sigma.max(e.u_l2_sigma),
                    p_l2: m.p_l2.max(e.p_l2),
                    eta_l2_sigma: m.eta_l2_sigma.max(e.eta_l2_sigma),
                    eta_s: m.eta_s.max(e.eta_s),
                },
            });
        }
    }
    let errors = error_norms(&problem.v, &problem.q, &state, cfg.t_end, &exact);
    Ok(StudyLevel {
        m,
        h,
        tau,
        n_steps,
        errors,
        max_errors,
    })
}

/// Run the convergence study over all levels.
pub fn convergence_study(cfg: &StudyConfig) -> Result<StudyResult> {
    let mut levels = Vec::with_capacity(cfg.m_levels.len());
    for &m in &cfg.m_levels {
        levels.push(run_study_level(cfg, m)?);
    }
    Ok(StudyResult { levels })
}

/// One step-size level of the partitioned-vs-monolithic comparison.
#[derive(Debug, Clone, Copy)]
pub struct CompareRow {
    pub tau: f64,
    pub n_steps: usize,
    /// `|u_part - u_mono|_{L2(Omega)}` at the final time.
    pub diff_u_l2: f64,
}

/// Run the manufactured problem with both the partitioned scheme and the
/// monolithic backward Euler reference on one mesh, for each step size,
/// and report the L2 distance of the velocities at the final time.
pub fn compare_monolithic(
    m: usize,
    taus: &[f64],
    t_end: f64,
    beta: f64,
) -> Result<Vec<CompareRow>> {
    use crate::scheme::MonolithicProblem;
    let mesh = Arc::new(Mesh::build_rect_mesh(2 * m, m, 2.0, 1.0, true)?);
    let params = PhysicalParams {
        beta,
        ..PhysicalParams::unit()
    };
    let exact = ExactSolution::new(params);
    let mut rows = Vec::new();
    for &tau_nominal in taus {
        let n_steps = (t_end / tau_nominal).round().max(1.0) as usize;
        let tau = t_end / n_steps as f64;
        let part = FsiProblem::new(
            &mesh,
            Element::TaylorHood,
            params,
            tau,
            SideBc::Periodic,
            StructureEnds::Natural,
        )?;
        let mono = MonolithicProblem::new(&mesh, Element::TaylorHood, params, tau, SideBc::Periodic)?;
        let loads = MmsLoads::new(&part.v, &part.constrained_info, &exact);
        let u0 = part.v.interpolate(&|p, c| exact.velocity(0.0, p)[c]);
        let p0 = part.q.interpolate(&|p, _| exact.pressure(0.0, p));
        // Nodal interpolation of the initial displacement is enough here;
        // both schemes share it and the comparison is self-referential.
        let eta0: Vec<f64> = {
            let tr = &part.v.trace;
            let mut out = vec![0.0; tr.n_dofs()];
            for (ts, &pnt) in tr.dof_point.iter().enumerate() {
                let val = exact.displacement(0.0, pnt);
                out[ts] = val[0];
                out[tr.n_scalar + ts] = val[1];
            }
            out
        };
        let mut sp = part.initial_state(u0.clone(), p0.clone(), eta0.clone());
        let mut sm = mono.initial_state(u0, p0, eta0);
        for _ in 0..n_steps {
            sp = part.advance(&sp, &loads)?;
            sm = mono.advance(&sm, &loads)?;
        }
        let d: Vec<f64> = sp.u.iter().zip(&sm.u).map(|(a, b)| a - b).collect();
        let diff = part.mass_v.bilinear(&d, &d).sqrt();
        rows.push(CompareRow {
            tau,
            n_steps,
            diff_u_l2: diff,
        });
    }
    Ok(rows)
}
