//! Discrete projection machinery: the structure Ritz projection on the
//! interface, the Dirichlet Stokes-Ritz projection, the constructed initial
//! values, the coupled non-stationary Ritz projection realized as an ODE in
//! the projected displacement, and the discrete Neumann-to-Dirichlet
//! symmetry check.
//!
//! Every solve reuses one factorization per mesh level: a trace-space
//! elliptic matrix, a Neumann-type coupled Stokes matrix, and a
//! Dirichlet-type coupled Stokes matrix with a pinned pressure mode.

use std::sync::Arc;

use crate::fem::{build_space, FeSpace, SystemMap, SystemMatrixBuilder};
use crate::forms::{
    assemble_af, assemble_af_load, assemble_as, assemble_b, assemble_bdiv_load_v,
    assemble_div_load_q, assemble_integral_vector, assemble_mass, assemble_scalar_load,
    assemble_trace_as_load, assemble_trace_load, assemble_trace_mass, assemble_vector_load,
    edge_rule, l2_error_scalar, l2_error_vector, trace_l2_error, LOAD_RULE_DEGREE,
};
use crate::linalg::{Factorization, SparseMatrix};
use crate::mesh::{BoundaryTag, Mesh};
use crate::scheme::{Element, SideBc};
use crate::util::{axpy, dot, norm2};
use crate::{Error, Result};

/// Analytic flow data `(u, grad u, p)` at one time.
pub struct FlowField<'a> {
    pub u: &'a dyn Fn([f64; 2]) -> [f64; 2],
    pub grad_u: &'a dyn Fn([f64; 2]) -> [[f64; 2]; 2],
    pub p: &'a dyn Fn([f64; 2]) -> f64,
}

/// Analytic interface data with its tangential derivative.
pub struct TraceField<'a> {
    pub g: &'a dyn Fn([f64; 2]) -> [f64; 2],
    pub dg_dx: &'a dyn Fn([f64; 2]) -> [f64; 2],
}

/// Analytic trajectories feeding the non-stationary Ritz projection. The
/// fields must satisfy the kinematic identity `u|_Sigma = d_t eta`. Time
/// derivatives default to five-point finite differences; closed-form
/// trajectories should override them.
pub trait FlowTrajectory {
    fn u(&self, t: f64, p: [f64; 2]) -> [f64; 2];
    fn grad_u(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2];
    fn p(&self, t: f64, p: [f64; 2]) -> f64;
    fn eta(&self, t: f64, p: [f64; 2]) -> [f64; 2];
    fn eta_dx(&self, t: f64, p: [f64; 2]) -> [f64; 2];

    fn u_dt(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let h = 1e-4;
        let f = |s: f64| self.u(s, p);
        [
            fd5(&|s| f(s)[0], t, h),
            fd5(&|s| f(s)[1], t, h),
        ]
    }

    fn grad_u_dt(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        let h = 1e-4;
        let mut out = [[0.0; 2]; 2];
        for c in 0..2 {
            for d in 0..2 {
                out[c][d] = fd5(&|s| self.grad_u(s, p)[c][d], t, h);
            }
        }
        out
    }

    fn p_dt(&self, t: f64, p: [f64; 2]) -> f64 {
        fd5(&|s| self.p(s, p), t, 1e-4)
    }
}

/// Five-point central first derivative.
fn fd5(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// The L2(Sigma) projection of the interface unit normal, with its norm.
#[derive(Debug, Clone)]
pub struct DiscreteNormal {
    pub coeffs: Vec<f64>,
    pub norm2_sigma: f64,
    /// Load vector `(n, w)_Sigma`, used to evaluate `lambda(w)` exactly.
    pub load: Vec<f64>,
}

/// Sampled trajectory of the coupled non-stationary Ritz projection.
#[derive(Debug, Clone)]
pub struct RitzTrajectory {
    pub times: Vec<f64>,
    pub eta_coeffs: Vec<Vec<f64>>,
    pub u_coeffs: Vec<Vec<f64>>,
    pub p_coeffs: Vec<Vec<f64>>,
    /// Per sample: `(|eta - R eta|_Sigma, |u - R u|, |u - R u|_Sigma, |p - R p|)`.
    pub errors: Vec<[f64; 4]>,
    /// Per sample: residual of the discrete divergence constraint.
    pub div_residuals: Vec<f64>,
    pub ode_steps: usize,
}

impl RitzTrajectory {
    /// `max_t (|eta - R eta|_Sigma + |u - R u| + |u - R u|_Sigma + h |p - R p|)`.
    pub fn max_combined_error(&self, h: f64) -> f64 {
        self.errors
            .iter()
            .map(|e| e[0] + e[1] + e[2] + h * e[3])
            .fold(0.0, f64::max)
    }
}

/// Result of the Neumann-to-Dirichlet symmetry check.
#[derive(Debug, Clone, Copy)]
pub struct NtdReport {
    pub max_asymmetry: f64,
    pub min_quadratic_form: f64,
    /// Worst relative mismatch of `(zeta, N zeta)_Sigma` against the
    /// independently recomputed viscous-plus-L2 energy of the lifted field.
    pub max_gram_mismatch: f64,
}

/// Options for the non-stationary Ritz evolution.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    /// Minimum number of RK4 steps; the actual count also honors the
    /// stability bound estimated by power iteration.
    pub min_steps: usize,
    /// Number of error-sampling points along the trajectory.
    pub samples: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            min_steps: 32,
            samples: 25,
        }
    }
}

/// Factorized operators for the projection constructions on one mesh.
pub struct ProjectionContext {
    pub mesh: Arc<Mesh>,
    pub v: FeSpace,
    pub q: FeSpace,
    pub mu: f64,
    pub c0: f64,
    pub c1: f64,
    pub side_bc: SideBc,

    pub mass_v: SparseMatrix,
    pub a_f: SparseMatrix,
    pub b: SparseMatrix,
    pub mass_tr: SparseMatrix,
    pub a_s: SparseMatrix,

    trace_fact: Factorization,
    neumann_map: SystemMap,
    neumann_fact: Factorization,
    dmap: SystemMap,
    d_coupling: SparseMatrix,
    d_fact: Factorization,
    pin_row: usize,

    pub normal: DiscreteNormal,
    p_integral: Vec<f64>,
    area: f64,
    /// Velocity scalar DOF -> trace scalar index, when on the interface.
    tr_of_scalar: Vec<Option<usize>>,
}

impl ProjectionContext {
    pub fn new(
        mesh: &Arc<Mesh>,
        element: Element,
        mu: f64,
        c0: f64,
        c1: f64,
        side_bc: SideBc,
    ) -> Result<ProjectionContext> {
        if (side_bc == SideBc::Periodic) != mesh.is_periodic() {
            return Err(Error::InvalidArgument(
                "periodic side conditions require a periodic mesh (and vice versa)".into(),
            ));
        }
        let (vk, qk) = element.kinds();
        let dirichlet_tags: &[BoundaryTag] = match side_bc {
            SideBc::Dirichlet => &[BoundaryTag::SigmaLeft, BoundaryTag::SigmaRight],
            _ => &[],
        };
        let v = build_space(mesh, vk, 2, dirichlet_tags)?;
        let q = build_space(mesh, qk, 1, &[])?;
        let mass_v = assemble_mass(&v);
        let a_f = assemble_af(&v, mu);
        let b = assemble_b(&v, &q);
        let mass_tr = assemble_trace_mass(&v.trace);
        let a_s = assemble_as(&v.trace, c0, c1)?;

        let trace_lhs = SparseMatrix::scaled_sum(&[(1.0, &a_s), (1.0, &mass_tr)])?;
        let trace_fact = trace_lhs.factorize("interface Ritz system")?;

        // Neumann-type coupled Stokes matrix (no constraints).
        let neumann_map = SystemMap::new(v.n_dofs(), q.n_dofs(), &[]);
        let neumann_fact = {
            let mut bld = SystemMatrixBuilder::new(&neumann_map);
            bld.add_uu_matrix(&a_f, 1.0);
            bld.add_uu_matrix(&mass_v, 1.0);
            for (i, j, val) in b.iter() {
                bld.add_up(i, j, -val);
                bld.add_pu(j, i, val);
            }
            let (lhs, _) = bld.finish()?;
            lhs.factorize("Neumann-type Stokes system")?
        };

        // Dirichlet-type coupled Stokes matrix: interface DOFs (plus side
        // DOFs in Dirichlet mode) constrained, pressure mode pinned.
        let mut constrained: Vec<usize> = v.trace.space_dofs(&v);
        constrained.extend(v.dirichlet.iter().map(|d| d.dof));
        constrained.sort_unstable();
        constrained.dedup();
        let dmap = SystemMap::new(v.n_dofs(), q.n_dofs(), &constrained);
        let pin_row = dmap.sys_of_p(0);
        let (d_lhs, d_coupling) = {
            let mut bld = SystemMatrixBuilder::new(&dmap);
            bld.add_uu_matrix(&a_f, 1.0);
            bld.add_uu_matrix(&mass_v, 1.0);
            for (i, j, val) in b.iter() {
                bld.add_up(i, j, -val);
                bld.add_pu(j, i, val);
            }
            let (raw, coup) = bld.finish()?;
            let mut triplets: Vec<(usize, usize, f64)> = raw
                .iter()
                .filter(|&(r, c, _)| r != pin_row && c != pin_row)
                .collect();
            triplets.push((pin_row, pin_row, 1.0));
            let lhs = SparseMatrix::from_triplets(raw.nrows(), raw.ncols(), &triplets)?;
            let coup_triplets: Vec<(usize, usize, f64)> =
                coup.iter().filter(|&(r, _, _)| r != pin_row).collect();
            let coup = SparseMatrix::from_triplets(coup.nrows(), coup.ncols(), &coup_triplets)?;
            (lhs, coup)
        };
        let d_fact = d_lhs.factorize("Dirichlet-type Stokes system")?;

        // Discrete normal: mass solve against the exact normal load.
        let normal = {
            let rule = edge_rule();
            let tr = &v.trace;
            let mut load = vec![0.0; tr.n_dofs()];
            for edge in &tr.edges {
                for (t, w) in rule.edge_params() {
                    let xref = [
                        edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                        edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
                    ];
                    let bv = crate::fem::eval_basis(
                        tr.kind,
                        [1.0 - xref[0] - xref[1], xref[0], xref[1]],
                    );
                    for &(lb, ts) in &edge.dofs {
                        for c in 0..2 {
                            load[c * tr.n_scalar + ts] +=
                                w * edge.length * bv.values[lb] * edge.normal[c];
                        }
                    }
                }
            }
            let coeffs = mass_tr.factorize("interface mass system")?.solve(&load)?;
            let norm2_sigma = mass_tr.bilinear(&coeffs, &coeffs);
            DiscreteNormal {
                coeffs,
                norm2_sigma,
                load,
            }
        };

        let p_integral = assemble_integral_vector(&q);
        let area = mesh.lx * mesh.ly;
        let mut tr_of_scalar = vec![None; v.n_scalar];
        for (ts, &ss) in v.trace.scalar_to_space.iter().enumerate() {
            tr_of_scalar[ss] = Some(ts);
        }

        Ok(ProjectionContext {
            mesh: Arc::clone(mesh),
            v,
            q,
            mu,
            c0,
            c1,
            side_bc,
            mass_v,
            a_f,
            b,
            mass_tr,
            a_s,
            trace_fact,
            neumann_map,
            neumann_fact,
            dmap,
            d_coupling,
            d_fact,
            pin_row,
            normal,
            p_integral,
            area,
            tr_of_scalar,
        })
    }

    pub fn n_tr(&self) -> usize {
        self.v.trace.n_dofs()
    }

    /// `lambda(w) = (w, n)_Sigma / |n_h|_Sigma^2`.
    pub fn lambda(&self, w: &[f64]) -> f64 {
        dot(w, &self.normal.load) / self.normal.norm2_sigma
    }

    /// Tangential projection `P w = w - lambda(w) n_h`.
    pub fn tilde_p(&self, w: &[f64]) -> Vec<f64> {
        let lam = self.lambda(w);
        w.iter()
            .zip(&self.normal.coeffs)
            .map(|(a, b)| a - lam * b)
            .collect()
    }

    /// Structure Ritz projection of an analytic interface field:
    /// `a_s(R g - g, w) + (R g - g, w)_Sigma = 0`.
    pub fn ritz_rhs(&self, g: &TraceField) -> Result<Vec<f64>> {
        let tr = &self.v.trace;
        let mut rhs = assemble_trace_as_load(tr, g.g, g.dg_dx, self.c0, self.c1);
        axpy(1.0, &assemble_trace_load(tr, g.g), &mut rhs);
        self.trace_fact.solve(&rhs)
    }

    /// Trace restriction of a full velocity vector.
    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.v.trace.restrict(&self.v, u)
    }

    /// Constraint values over `dmap.constrained`: interface DOFs from the
    /// trace coefficients `w_sigma`, side DOFs (Dirichlet mode) from the
    /// analytic velocity.
    fn dirichlet_values(&self, w_sigma: &[f64], u: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let tr = &self.v.trace;
        self.dmap
            .constrained
            .iter()
            .map(|&dof| {
                let comp = dof / self.v.n_scalar;
                let scalar = dof % self.v.n_scalar;
                match self.tr_of_scalar[scalar] {
                    Some(ts) => w_sigma[comp * tr.n_scalar + ts],
                    None => u(self.v.dof_point[scalar])[comp],
                }
            })
            .collect()
    }

    /// Volume load vector of `a_f(u, v) - b(p, v) + (u, v)` for analytic
    /// data.
    fn flow_volume_load(&self, flow: &FlowField) -> Vec<f64> {
        let mut l = assemble_af_load(&self.v, flow.grad_u, self.mu, LOAD_RULE_DEGREE);
        axpy(
            -1.0,
            &assemble_bdiv_load_v(&self.v, flow.p, LOAD_RULE_DEGREE),
            &mut l,
        );
        axpy(
            1.0,
            &assemble_vector_load(&self.v, flow.u, LOAD_RULE_DEGREE),
            &mut l,
        );
        l
    }

    /// `A_f u - B p + M u` applied to FE coefficients (the discrete
    /// counterpart of [`Self::flow_volume_load`]).
    fn flow_apply(&self, u: &[f64], p: &[f64]) -> Vec<f64> {
        let mut l = self.a_f.matvec(u);
        axpy(-1.0, &self.b.matvec(p), &mut l);
        axpy(1.0, &self.mass_v.matvec(u), &mut l);
        l
    }

    /// Dirichlet-type Stokes solve with interface data `w_sigma` and the
    /// run's side conditions; the pressure is pinned then shifted so its
    /// mean matches `p_mean`.
    fn dirichlet_solve(
        &self,
        flow: &FlowField,
        w_sigma: &[f64],
        p_mean: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let rhs_u = self.flow_volume_load(flow);
        let mut rhs_p = assemble_div_load_q(&self.q, flow.grad_u, LOAD_RULE_DEGREE);
        rhs_p[0] = 0.0; // pinned pressure row
        let g = self.dirichlet_values(w_sigma, flow.u);
        let mut reduced = self.dmap.reduce_rhs(&rhs_u, &rhs_p, &self.d_coupling, &g);
        reduced[self.pin_row] = 0.0;
        let x = self.d_fact.solve(&reduced)?;
        let (u, mut p) = self.dmap.expand(&x, &g);
        let shift = p_mean - dot(&self.p_integral, &p) / self.area;
        for v in p.iter_mut() {
            *v += shift;
        }
        Ok((u, p))
    }

    fn mean_of(&self, p: &dyn Fn([f64; 2]) -> f64) -> f64 {
        let l = assemble_scalar_load(&self.q, &|_| 1.0, 1);
        // Quadrature of p over the domain via the load machinery.
        let pl = assemble_scalar_load(&self.q, p, LOAD_RULE_DEGREE);
        // sum of pl against the constant-1 coefficient vector equals
        // int p * sum of basis = int p (partition of unity).
        let ones = vec![1.0; self.q.n_dofs()];
        let _ = l;
        dot(&pl, &ones) / self.area
    }

    /// Dirichlet Stokes-Ritz projection of analytic `(u, p)`: interface
    /// data `P R_s(u|_Sigma)`, discrete divergence matched for all pressure
    /// tests, mean of the projected pressure matched to the mean of `p`.
    pub fn ritz_rhd(&self, flow: &FlowField) -> Result<(Vec<f64>, Vec<f64>)> {
        let g_trace = TraceField {
            g: flow.u,
            dg_dx: &|x| {
                let g = (flow.grad_u)(x);
                [g[0][0], g[1][0]]
            },
        };
        let rs = self.ritz_rhs(&g_trace)?;
        let w_sigma = self.tilde_p(&rs);
        self.dirichlet_solve(flow, &w_sigma, self.mean_of(flow.p))
    }

    /// Initial displacement of the coupled projection, built from the time
    /// derivative data: the three-stage construction.
    pub fn initial_rh_eta(
        &self,
        flow0: &FlowField,
        dflow0: &FlowField,
        eta0: &TraceField,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        // Stage 1: Dirichlet Stokes-Ritz projection of the time derivative.
        let (rdu, rdp) = self.ritz_rhd(dflow0)?;
        // Stage 2: interface solve for R_s u(0).
        let tr = &self.v.trace;
        let u_trace = TraceField {
            g: flow0.u,
            dg_dx: &|x| {
                let g = (flow0.grad_u)(x);
                [g[0][0], g[1][0]]
            },
        };
        let mut rhs = assemble_trace_as_load(tr, u_trace.g, u_trace.dg_dx, self.c0, self.c1);
        axpy(1.0, &assemble_trace_load(tr, u_trace.g), &mut rhs);
        let vol = self.flow_volume_load(dflow0);
        axpy(1.0, &self.restrict(&vol), &mut rhs);
        let fe = self.flow_apply(&rdu, &rdp);
        axpy(-1.0, &self.restrict(&fe), &mut rhs);
        let rsh_u0 = self.trace_fact.solve(&rhs)?;
        // Stage 3: Dirichlet-type solve with boundary data P R_s u(0).
        let w_sigma = self.tilde_p(&rsh_u0);
        let (ru0, rp0) = self.dirichlet_solve(flow0, &w_sigma, self.mean_of(flow0.p))?;
        // Stage 4: interface solve for R eta(0).
        let mut rhs = assemble_trace_as_load(tr, eta0.g, eta0.dg_dx, self.c0, self.c1);
        axpy(1.0, &assemble_trace_load(tr, eta0.g), &mut rhs);
        let vol = self.flow_volume_load(flow0);
        axpy(1.0, &self.restrict(&vol), &mut rhs);
        let fe = self.flow_apply(&ru0, &rp0);
        axpy(-1.0, &self.restrict(&fe), &mut rhs);
        let rh_eta0 = self.trace_fact.solve(&rhs)?;
        Ok((rh_eta0, ru0, rp0))
    }

    /// Alternative initial displacement that needs no time-derivative data.
    pub fn initial_rsh_eta(&self, flow0: &FlowField, eta0: &TraceField) -> Result<Vec<f64>> {
        let (rdu, rdp) = self.ritz_rhd(flow0)?;
        self.initial_rsh_eta_from(flow0, eta0, &rdu, &rdp)
    }

    /// Same as [`Self::initial_rsh_eta`] with the Dirichlet Stokes-Ritz
    /// projection of `(u(0), p(0))` supplied by the caller.
    pub fn initial_rsh_eta_from(
        &self,
        flow0: &FlowField,
        eta0: &TraceField,
        rdu: &[f64],
        rdp: &[f64],
    ) -> Result<Vec<f64>> {
        let tr = &self.v.trace;
        let mut rhs = assemble_trace_as_load(tr, eta0.g, eta0.dg_dx, self.c0, self.c1);
        axpy(1.0, &assemble_trace_load(tr, eta0.g), &mut rhs);
        let vol = self.flow_volume_load(flow0);
        axpy(1.0, &self.restrict(&vol), &mut rhs);
        let fe = self.flow_apply(rdu, rdp);
        axpy(-1.0, &self.restrict(&fe), &mut rhs);
        self.trace_fact.solve(&rhs)
    }

    /// Solve the Neumann-type discrete Stokes system for a velocity-row
    /// load and pressure-row load.
    fn neumann_solve(&self, rhs_u: &[f64], rhs_p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let reduced = self.neumann_map.reduce_rhs(
            rhs_u,
            rhs_p,
            &SparseMatrix::from_triplets(0, 0, &[]).unwrap(),
            &[],
        );
        let x = self.neumann_fact.solve_refined(&reduced)?;
        Ok(self.neumann_map.expand(&x, &[]))
    }

    /// Right-hand side of the displacement ODE at time `t` for the current
    /// projected displacement, together with the solved `(R u, R p)`.
    fn evolve_rhs(
        &self,
        traj: &dyn FlowTrajectory,
        t: f64,
        eta: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let u = |x: [f64; 2]| traj.u(t, x);
        let grad_u = |x: [f64; 2]| traj.grad_u(t, x);
        let p = |x: [f64; 2]| traj.p(t, x);
        let eta_an = |x: [f64; 2]| traj.eta(t, x);
        let eta_dx = |x: [f64; 2]| traj.eta_dx(t, x);
        let flow = FlowField {
            u: &u,
            grad_u: &grad_u,
            p: &p,
        };
        let mut rhs_u = self.flow_volume_load(&flow);
        let tr = &self.v.trace;
        let mut tr_load = assemble_trace_as_load(tr, &eta_an, &eta_dx, self.c0, self.c1);
        axpy(1.0, &assemble_trace_load(tr, &eta_an), &mut tr_load);
        let mut eta_apply = self.a_s.matvec(eta);
        axpy(1.0, &self.mass_tr.matvec(eta), &mut eta_apply);
        axpy(-1.0, &eta_apply, &mut tr_load);
        axpy(1.0, &self.v.trace.extend_by_zero(&self.v, &tr_load), &mut rhs_u);
        let rhs_p = assemble_div_load_q(&self.q, &grad_u, LOAD_RULE_DEGREE);
        let (ru, rp) = self.neumann_solve(&rhs_u, &rhs_p)?;
        let deta = self.restrict(&ru);
        Ok((deta, ru, rp))
    }

    /// Spectral-radius estimate of the linear part of the displacement ODE
    /// (power iteration; each application is one factored solve).
    fn evolve_spectral_radius(&self) -> Result<f64> {
        use rand::prelude::*;
        let n = self.n_tr();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..20 {
            let nw = norm2(&w).max(1e-300);
            for v in w.iter_mut() {
                *v /= nw;
            }
            let mut apply = self.a_s.matvec(&w);
            axpy(1.0, &self.mass_tr.matvec(&w), &mut apply);
            let lifted = self.v.trace.extend_by_zero(&self.v, &apply);
            let zero_p = vec![0.0; self.q.n_dofs()];
            let (ru, _) = self.neumann_solve(&lifted, &zero_p)?;
            w = self.restrict(&ru);
            lambda = norm2(&w);
        }
        Ok(lambda)
    }

    /// Integrate the coupled non-stationary Ritz projection with classical
    /// RK4 from the constructed initial value `eta0`.
    pub fn ritz_evolve(
        &self,
        traj: &dyn FlowTrajectory,
        eta0: Vec<f64>,
        t_end: f64,
        opts: EvolveOptions,
    ) -> Result<RitzTrajectory> {
        let lambda = self.evolve_spectral_radius()?;
        let stability_steps = (t_end * lambda / 2.0).ceil() as usize;
        let steps = stability_steps.max(opts.min_steps).max(1);
        let dt = t_end / steps as f64;
        let stride = (steps / opts.samples.max(1)).max(1);

        let mut eta = eta0;
        let mut out = RitzTrajectory {
            times: Vec::new(),
            eta_coeffs: Vec::new(),
            u_coeffs: Vec::new(),
            p_coeffs: Vec::new(),
            errors: Vec::new(),
            div_residuals: Vec::new(),
            ode_steps: steps,
        };
        let mut sample = |t: f64, eta: &[f64], this: &Self| -> Result<()> {
            let (_, ru, rp) = this.evolve_rhs(traj, t, eta)?;
            let u_an = |x: [f64; 2]| traj.u(t, x);
            let grad_an = |x: [f64; 2]| traj.grad_u(t, x);
            let p_an = |x: [f64; 2]| traj.p(t, x);
            let eta_an = |x: [f64; 2]| traj.eta(t, x);
            let e_eta = trace_l2_error(&this.v.trace, eta, &eta_an);
            let e_u = l2_error_vector(&this.v, &ru, &u_an, LOAD_RULE_DEGREE);
            let e_u_sig = trace_l2_error(&this.v.trace, &this.restrict(&ru), &u_an);
            let e_p = l2_error_scalar(&this.q, &rp, &p_an, LOAD_RULE_DEGREE);
            // Divergence constraint: b(q, R u) = b(q, u) for all q.
            let mut resid = this.b.transpose_matvec(&ru);
            axpy(
                -1.0,
                &assemble_div_load_q(&this.q, &grad_an, LOAD_RULE_DEGREE),
                &mut resid,
            );
            let div_res = resid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            out.times.push(t);
            out.eta_coeffs.push(eta.to_vec());
            out.u_coeffs.push(ru);
            out.p_coeffs.push(rp);
            out.errors.push([e_eta, e_u, e_u_sig, e_p]);
            out.div_residuals.push(div_res);
            Ok(())
        };
        sample(0.0, &eta, self)?;
        for k in 0..steps {
            let t = k as f64 * dt;
            let (k1, _, _) = self.evolve_rhs(traj, t, &eta)?;
            let mut e2 = eta.clone();
            axpy(0.5 * dt, &k1, &mut e2);
            let (k2, _, _) = self.evolve_rhs(traj, t + 0.5 * dt, &e2)?;
            let mut e3 = eta.clone();
            axpy(0.5 * dt, &k2, &mut e3);
            let (k3, _, _) = self.evolve_rhs(traj, t + 0.5 * dt, &e3)?;
            let mut e4 = eta.clone();
            axpy(dt, &k3, &mut e4);
            let (k4, _, _) = self.evolve_rhs(traj, t + dt, &e4)?;
            for i in 0..eta.len() {
                eta[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if (k + 1) % stride == 0 || k + 1 == steps {
                sample((k + 1) as f64 * dt, &eta, self)?;
            }
        }
        Ok(out)
    }

    /// Discrete Neumann-to-Dirichlet application: trace of the velocity
    /// solving the Neumann-type Stokes system with interface load `zeta`.
    pub fn ntd_apply(&self, zeta: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let load = self.mass_tr.matvec(zeta);
        let lifted = self.v.trace.extend_by_zero(&self.v, &load);
        let zero_p = vec![0.0; self.q.n_dofs()];
        let (u, p) = self.neumann_solve(&lifted, &zero_p)?;
        let trace = self.restrict(&u);
        Ok((trace, u, p))
    }

    /// Symmetry, positivity and energy-identity check of the discrete
    /// Neumann-to-Dirichlet map over random interface load pairs.
    pub fn ntd_symmetry_check(&self, trials: usize, seed: u64) -> Result<NtdReport> {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = self.n_tr();
        let mut report = NtdReport {
            max_asymmetry: 0.0,
            min_quadratic_form: f64::INFINITY,
            max_gram_mismatch: 0.0,
        };
        for _ in 0..trials {
            let zeta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (nz_tr, nz_u, _) = self.ntd_apply(&zeta)?;
            let (nphi_tr, _, _) = self.ntd_apply(&phi)?;
            let a = self.mass_tr.bilinear(&zeta, &nphi_tr);
            let b = self.mass_tr.bilinear(&phi, &nz_tr);
            let asym = (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            report.max_asymmetry = report.max_asymmetry.max(asym);
            let quad = self.mass_tr.bilinear(&zeta, &nz_tr);
            report.min_quadratic_form = report.min_quadratic_form.min(quad);
            // Independent recomputation of 2 mu |D(N zeta)|^2 + |N zeta|^2
            // by direct quadrature of the coefficient field.
            let energy = self.brute_force_energy(&nz_u);
            let mism = (quad - energy).abs() / quad.abs().max(1e-300);
            report.max_gram_mismatch = report.max_gram_mismatch.max(mism);
        }
        Ok(report)
    }

    /// `2 mu |D(u_h)|^2 + |u_h|^2` by direct element-by-element quadrature,
    /// bypassing the assembled matrices.
    fn brute_force_energy(&self, u: &[f64]) -> f64 {
        let rule = crate::fem::quad_rule(crate::fem::QuadDomain::Triangle, 6).unwrap();
        let mut acc = 0.0;
        for tri in 0..self.mesh.triangles.len() {
            let geo = crate::fem::ElementGeometry::new(&self.mesh, tri);
            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                let val = self.v.eval(u, tri, *pt);
                let g = self.v.eval_gradient(u, tri, *pt);
                let d = [
                    [g[0][0], 0.5 * (g[0][1] + g[1][0])],
                    [0.5 * (g[0][1] + g[1][0]), g[1][1]],
                ];
                let d2 = d[0][0] * d[0][0] + 2.0 * d[0][1] * d[0][1] + d[1][1] * d[1][1];
                acc += w * geo.detj
                    * (2.0 * self.mu * d2 + val[0] * val[0] + val[1] * val[1]);
            }
        }
        acc
    }
}

/// One mesh level of a projection rate study.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub m: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

/// A smooth periodic divergence-free trajectory without the x-parity and
/// top/bottom symmetries of the convergence-study solution; used by the
/// projection rate studies, where symmetric data can superconverge past
/// the generic order.
///
/// Stream function `psi = (sin(pi x) + 0.4 cos(2 pi x)) sin(pi y)` with a
/// `sin t` factor; the displacement integrates the interface velocity
/// exactly, so the kinematic identity holds by construction.
pub struct VerificationFlow;

impl VerificationFlow {
    fn f(x: f64) -> f64 {
        let pi = std::f64::consts::PI;
        (pi * x).sin() + 0.4 * (2.0 * pi * x).cos()
    }

    fn df(x: f64) -> f64 {
        let pi = std::f64::consts::PI;
        pi * (pi * x).cos() - 0.8 * pi * (2.0 * pi * x).sin()
    }

    fn ddf(x: f64) -> f64 {
        let pi = std::f64::consts::PI;
        -pi * pi * (pi * x).sin() - 1.6 * pi * pi * (2.0 * pi * x).cos()
    }

    fn spatial_u(p: [f64; 2]) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        [
            pi * Self::f(p[0]) * (pi * p[1]).cos(),
            -Self::df(p[0]) * (pi * p[1]).sin(),
        ]
    }

    fn spatial_grad(p: [f64; 2]) -> [[f64; 2]; 2] {
        let pi = std::f64::consts::PI;
        let (sy, cy) = ((pi * p[1]).sin(), (pi * p[1]).cos());
        [
            [pi * Self::df(p[0]) * cy, -pi * pi * Self::f(p[0]) * sy],
            [-Self::ddf(p[0]) * sy, -pi * Self::df(p[0]) * cy],
        ]
    }

    fn eta0(p: [f64; 2]) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        if p[1] > 0.5 {
            [0.2 * (pi * p[0]).cos(), 0.3 * (pi * p[0]).sin()]
        } else {
            [-0.1 * (2.0 * pi * p[0]).sin(), 0.15 * (2.0 * pi * p[0]).cos()]
        }
    }

    fn eta0_dx(p: [f64; 2]) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        if p[1] > 0.5 {
            [-0.2 * pi * (pi * p[0]).sin(), 0.3 * pi * (pi * p[0]).cos()]
        } else {
            [
                -0.2 * pi * (2.0 * pi * p[0]).cos(),
                -0.3 * pi * (2.0 * pi * p[0]).sin(),
            ]
        }
    }
}

impl FlowTrajectory for VerificationFlow {
    fn u(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let s = Self::spatial_u(p);
        [s[0] * t.sin(), s[1] * t.sin()]
    }

    fn grad_u(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        let g = Self::spatial_grad(p);
        let st = t.sin();
        [
            [g[0][0] * st, g[0][1] * st],
            [g[1][0] * st, g[1][1] * st],
        ]
    }

    fn p(&self, t: f64, p: [f64; 2]) -> f64 {
        let pi = std::f64::consts::PI;
        ((2.0 * pi * p[0]).cos() * (1.0 + 0.3 * p[1]) + 0.7 * (pi * p[0]).sin() * p[1] * p[1])
            * t.sin()
    }

    fn eta(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let base = Self::eta0(p);
        let s = Self::spatial_u(p);
        let a = 1.0 - t.cos();
        [base[0] + s[0] * a, base[1] + s[1] * a]
    }

    fn eta_dx(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let base = Self::eta0_dx(p);
        let g = Self::spatial_grad(p);
        let a = 1.0 - t.cos();
        [base[0] + g[0][0] * a, base[1] + g[1][0] * a]
    }

    fn u_dt(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let s = Self::spatial_u(p);
        [s[0] * t.cos(), s[1] * t.cos()]
    }

    fn grad_u_dt(&self, t: f64, p: [f64; 2]) -> [[f64; 2]; 2] {
        let g = Self::spatial_grad(p);
        let ct = t.cos();
        [
            [g[0][0] * ct, g[0][1] * ct],
            [g[1][0] * ct, g[1][1] * ct],
        ]
    }

    fn p_dt(&self, t: f64, p: [f64; 2]) -> f64 {
        self.p(std::f64::consts::FRAC_PI_2, p) * t.cos()
    }
}

fn level_mesh(m: usize, side_bc: SideBc) -> Result<Arc<Mesh>> {
    Ok(Arc::new(Mesh::build_rect_mesh(
        2 * m,
        m,
        2.0,
        1.0,
        side_bc == SideBc::Periodic,
    )?))
}

/// Build the `FlowField`/`TraceField` closures of a trajectory at one time
/// and hand them to `body`.
fn with_fields_at<R>(
    traj: &dyn FlowTrajectory,
    t: f64,
    body: &mut dyn FnMut(&FlowField, &FlowField, &TraceField) -> Result<R>,
) -> Result<R> {
    let u = |p: [f64; 2]| traj.u(t, p);
    let gu = |p: [f64; 2]| traj.grad_u(t, p);
    let pp = |p: [f64; 2]| traj.p(t, p);
    let du = |p: [f64; 2]| traj.u_dt(t, p);
    let dgu = |p: [f64; 2]| traj.grad_u_dt(t, p);
    let dp = |p: [f64; 2]| traj.p_dt(t, p);
    let eta = |p: [f64; 2]| traj.eta(t, p);
    let etax = |p: [f64; 2]| traj.eta_dx(t, p);
    let flow = FlowField {
        u: &u,
        grad_u: &gu,
        p: &pp,
    };
    let dflow = FlowField {
        u: &du,
        grad_u: &dgu,
        p: &dp,
    };
    let etaf = TraceField {
        g: &eta,
        dg_dx: &etax,
    };
    body(&flow, &dflow, &etaf)
}

/// Rates of the coupled non-stationary Ritz projection: per level the
/// maximal combined error of the trajectory on `[0, t_end]`.
pub fn ritz_rate_study(
    element: Element,
    ms: &[usize],
    traj: &dyn FlowTrajectory,
    t_end: f64,
    opts: EvolveOptions,
    side_bc: SideBc,
) -> Result<Vec<RateRow>> {
    let mut rows = Vec::new();
    for &m in ms {
        let mesh = level_mesh(m, side_bc)?;
        let ctx = ProjectionContext::new(&mesh, element, 1.0, 1.0, 1.0, side_bc)?;
        let eta0 = with_fields_at(traj, 0.0, &mut |flow, dflow, eta| {
            ctx.initial_rh_eta(flow, dflow, eta).map(|r| r.0)
        })?;
        let out = ctx.ritz_evolve(traj, eta0, t_end, opts)?;
        let h = 1.0 / m as f64;
        rows.push(RateRow {
            m,
            h,
            values: vec![out.max_combined_error(h), out.ode_steps as f64],
        });
    }
    Ok(rows)
}

/// Rates of the Dirichlet Stokes-Ritz projection at a fixed evaluation
/// time: per level `(|u - R u|, |u - R u|_H1 + |p - R p|)`.
pub fn rhd_rate_study(
    element: Element,
    ms: &[usize],
    traj: &dyn FlowTrajectory,
    t_eval: f64,
    side_bc: SideBc,
) -> Result<Vec<RateRow>> {
    let mut rows = Vec::new();
    for &m in ms {
        let mesh = level_mesh(m, side_bc)?;
        let ctx = ProjectionContext::new(&mesh, element, 1.0, 1.0, 1.0, side_bc)?;
        let u = |p: [f64; 2]| traj.u(t_eval, p);
        let gu = |p: [f64; 2]| traj.grad_u(t_eval, p);
        let pp = |p: [f64; 2]| traj.p(t_eval, p);
        let flow = FlowField {
            u: &u,
            grad_u: &gu,
            p: &pp,
        };
        let (ru, rp) = ctx.ritz_rhd(&flow)?;
        let l2 = l2_error_vector(&ctx.v, &ru, &u, LOAD_RULE_DEGREE);
        let h1p = crate::forms::h1_error_vector(&ctx.v, &ru, &u, &gu, LOAD_RULE_DEGREE)
            + l2_error_scalar(&ctx.q, &rp, &pp, LOAD_RULE_DEGREE);
        rows.push(RateRow {
            m,
            h: 1.0 / m as f64,
            values: vec![l2, h1p],
        });
    }
    Ok(rows)
}

/// Super-approximation of the two initial-displacement constructions: per
/// level the `H1(Sigma)` norm of their difference, with the trajectory
/// snapshot at `t0` taken as the initial data.
pub fn super_approx_study(
    element: Element,
    ms: &[usize],
    traj: &dyn FlowTrajectory,
    t0: f64,
    side_bc: SideBc,
) -> Result<Vec<RateRow>> {
    let mut rows = Vec::new();
    for &m in ms {
        let mesh = level_mesh(m, side_bc)?;
        let ctx = ProjectionContext::new(&mesh, element, 1.0, 1.0, 1.0, side_bc)?;
        let diff = with_fields_at(traj, t0, &mut |flow, dflow, eta| {
            let (rh, _, _) = ctx.initial_rh_eta(flow, dflow, eta)?;
            let rsh = ctx.initial_rsh_eta(flow, eta)?;
            Ok(rh.iter().zip(&rsh).map(|(a, b)| a - b).collect::<Vec<f64>>())
        })?;
        rows.push(RateRow {
            m,
            h: 1.0 / m as f64,
            values: vec![crate::forms::trace_h1_norm(&ctx.v.trace, &diff)],
        });
    }
    Ok(rows)
}
