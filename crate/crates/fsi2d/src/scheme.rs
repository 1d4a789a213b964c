//! The fully discrete kinematically coupled stepper (structure step then
//! fluid step), a monolithic backward Euler reference stepper, and the
//! per-step energy monitor.
//!
//! The fluid step is assembled in the rewritten form in which the interface
//! traction terms `+-(sigma^n n, v)_Sigma` cancel analytically, leaving the
//! previous traction on the right-hand side and the traction Gram
//! stabilization on the left.

use std::sync::Arc;

use crate::fem::{build_space, ElementKind, FeSpace, SystemMap, SystemMatrixBuilder};
use crate::forms::{
    assemble_af, assemble_as, assemble_b, assemble_integral_vector, assemble_mass,
    assemble_trace_mass, assemble_traction_couplings, traction_trace, TractionCouplings,
    TractionTraceOperator,
};
use crate::linalg::{Factorization, SparseMatrix};
use crate::mesh::{BoundaryTag, Mesh};
use crate::util::{axpy, hash_f64_slices};
use crate::{Error, Result};

/// Physical parameters of the coupled model.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PhysicalParams {
    pub rho_f: f64,
    pub mu: f64,
    pub rho_s: f64,
    pub eps_s: f64,
    /// Structure stiffness coefficient (second-derivative term).
    pub c0: f64,
    /// Structure reaction coefficient.
    pub c1: f64,
    /// Stabilization parameter `beta >= 0`.
    pub beta: f64,
}

impl PhysicalParams {
    /// All parameters one, `beta = 0.5` (the convergence-study setting).
    pub fn unit() -> Self {
        PhysicalParams {
            rho_f: 1.0,
            mu: 1.0,
            rho_s: 1.0,
            eps_s: 1.0,
            c0: 1.0,
            c1: 1.0,
            beta: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rho_f, self.mu, self.rho_s, self.eps_s, self.c0, self.c1, self.beta,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "physical parameters must be finite and nonnegative: {self:?}"
            )));
        }
        if self.mu <= 0.0 {
            return Err(Error::InvalidArgument("viscosity must be positive".into()));
        }
        if self.rho_s * self.eps_s <= 0.0 {
            return Err(Error::InvalidArgument(
                "structure mass rho_s * eps_s must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `beta0 = 1 - (sqrt(4 + beta^2) - beta) / 2`, the stabilization constant
/// entering the dissipation functional.
pub fn beta0(beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    Ok(1.0 - ((4.0 + beta * beta).sqrt() - beta) / 2.0)
}

/// Mixed element pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Element {
    /// P2 velocity / P1 pressure.
    TaylorHood,
    /// P1+bubble velocity / P1 pressure.
    Mini,
}

impl Element {
    pub fn kinds(self) -> (ElementKind, ElementKind) {
        match self {
            Element::TaylorHood => (ElementKind::P2, ElementKind::P1),
            Element::Mini => (ElementKind::P1Bubble, ElementKind::P1),
        }
    }

    /// Velocity polynomial order `r` of the pairing.
    pub fn order(self) -> usize {
        match self {
            Element::TaylorHood => 2,
            Element::Mini => 1,
        }
    }
}

/// Side conditions on the inflow/outflow boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SideBc {
    /// Left/right DOF identification (requires a periodic mesh).
    Periodic,
    /// Strong velocity constraints on both sides.
    Dirichlet,
    /// Natural (traction) side conditions.
    Neumann,
}

/// End conditions of the structure displacement at the interface ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StructureEnds {
    Natural,
    Pinned,
}

/// Discrete fields of one time level plus the cached interface tractions.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub n: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub eta: Vec<f64>,
    pub s: Vec<f64>,
    /// `sigma(u, p) n` at the interface quadrature points.
    pub tractions: Vec<[f64; 2]>,
    /// Step index the traction cache was computed at.
    pub cache_step: usize,
}

impl SchemeState {
    pub fn fingerprint(&self) -> u64 {
        hash_f64_slices(&[&self.u, &self.p, &self.eta, &self.s])
    }
}

/// Per-step energy monitor quantities.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub e0: f64,
    pub e1: f64,
    pub beta0: f64,
    /// `E0^n - E0^{n-1} + tau E1^n`; nonpositive up to roundoff for
    /// zero-source runs.
    pub per_step_residual: f64,
}

/// Time-dependent load data for a run.
pub trait LoadProvider {
    /// `(f_f(t), v)` over velocity DOFs.
    fn fluid_load(&self, t: f64) -> Vec<f64>;
    /// `(f_s(t), w)_Sigma` over trace DOFs.
    fn solid_load(&self, t: f64) -> Vec<f64>;
    /// Natural boundary loads (inflow/outflow pressure) over velocity DOFs.
    fn boundary_load(&self, t: f64) -> Vec<f64>;
    /// Dirichlet boundary values, ordered like `SystemMap::constrained`.
    fn dirichlet_values(&self, t: f64) -> Vec<f64>;
}

/// No sources, no boundary data.
pub struct ZeroLoads {
    pub n_u: usize,
    pub n_tr: usize,
    pub n_constrained: usize,
}

impl LoadProvider for ZeroLoads {
    fn fluid_load(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_u]
    }
    fn solid_load(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_tr]
    }
    fn boundary_load(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_u]
    }
    fn dirichlet_values(&self, _t: f64) -> Vec<f64> {
        vec![0.0; self.n_constrained]
    }
}

/// Assembled operators and factorizations of the partitioned scheme on one
/// mesh level. Built once per run; owns no mutable state.
pub struct FsiProblem {
    pub params: PhysicalParams,
    pub tau: f64,
    pub mesh: Arc<Mesh>,
    pub v: FeSpace,
    pub q: FeSpace,
    pub side_bc: SideBc,
    pub ends: StructureEnds,
    /// Post-shift the pressure to mean zero after each fluid solve
    /// (debugging gauge; perturbs the energy identity).
    pub mean_zero_gauge: bool,

    pub mass_v: SparseMatrix,
    pub a_f: SparseMatrix,
    pub b: SparseMatrix,
    pub mass_tr: SparseMatrix,
    pub a_s: SparseMatrix,
    pub traction: TractionTraceOperator,
    pub couplings: TractionCouplings,
    pub map: SystemMap,
    /// `(point, component)` of each constrained DOF, aligned with
    /// `map.constrained`.
    pub constrained_info: Vec<([f64; 2], usize)>,
    pub p_integral: Vec<f64>,
    pub area: f64,

    pinned_trace_dofs: Vec<usize>,
    pub solid_lhs: SparseMatrix,
    solid_fact: Factorization,
    pub fluid_lhs: SparseMatrix,
    fluid_coupling: SparseMatrix,
    fluid_fact: Factorization,
}

impl FsiProblem {
    pub fn new(
        mesh: &Arc<Mesh>,
        element: Element,
        params: PhysicalParams,
        tau: f64,
        side_bc: SideBc,
        ends: StructureEnds,
    ) -> Result<FsiProblem> {
        params.validate()?;
        beta0(params.beta)?;
        if tau <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {tau}"
            )));
        }
        if (side_bc == SideBc::Periodic) != mesh.is_periodic() {
            return Err(Error::InvalidArgument(
                "periodic side conditions require a periodic mesh (and vice versa)".into(),
            ));
        }
        if side_bc == SideBc::Periodic && ends == StructureEnds::Pinned {
            return Err(Error::InvalidArgument(
                "pinned structure ends contradict periodic identification".into(),
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
        let a_f = assemble_af(&v, params.mu);
        let b = assemble_b(&v, &q);
        let mass_tr = assemble_trace_mass(&v.trace);
        let a_s = assemble_as(&v.trace, params.c0, params.c1)?;
        let traction = traction_trace(&v, &q, params.mu);
        let couplings = assemble_traction_couplings(&traction);

        let constrained_dofs: Vec<usize> = v.dirichlet.iter().map(|d| d.dof).collect();
        let map = SystemMap::new(v.n_dofs(), q.n_dofs(), &constrained_dofs);
        let mut constrained_info = vec![([0.0; 2], 0usize); map.constrained.len()];
        for d in &v.dirichlet {
            let k = map.constrained.binary_search(&d.dof).unwrap();
            constrained_info[k] = (d.point, d.component);
        }

        // Pinned structure ends: trace DOFs at x = 0 or x = lx, both
        // components, eliminated with zero values.
        let pinned_trace_dofs: Vec<usize> = match ends {
            StructureEnds::Natural => Vec::new(),
            StructureEnds::Pinned => {
                let tr = &v.trace;
                let mut out = Vec::new();
                for (ts, p) in tr.dof_point.iter().enumerate() {
                    if p[0].abs() < 1e-12 || (p[0] - mesh.lx).abs() < 1e-12 {
                        out.push(ts);
                        out.push(tr.n_scalar + ts);
                    }
                }
                out.sort_unstable();
                out
            }
        };

        // Structure step matrix: (rho_s eps_s / tau) M_Sigma + tau A_s.
        let rse = params.rho_s * params.eps_s;
        let solid_lhs = {
            let raw = SparseMatrix::scaled_sum(&[(rse / tau, &mass_tr), (tau, &a_s)])?;
            if pinned_trace_dofs.is_empty() {
                raw
            } else {
                let mut triplets: Vec<(usize, usize, f64)> = raw
                    .iter()
                    .filter(|(i, j, _)| {
                        pinned_trace_dofs.binary_search(i).is_err()
                            && pinned_trace_dofs.binary_search(j).is_err()
                    })
                    .collect();
                for &d in &pinned_trace_dofs {
                    triplets.push((d, d, 1.0));
                }
                SparseMatrix::from_triplets(raw.nrows(), raw.ncols(), &triplets)?
            }
        };
        let solid_fact = solid_lhs.factorize("structure step system")?;

        // Fluid step matrix on the coupled [u; p] unknowns.
        let n_u = v.n_dofs();
        let mut bld = SystemMatrixBuilder::new(&map);
        bld.add_uu_matrix(&mass_v, params.rho_f / tau);
        bld.add_uu_matrix(&a_f, 1.0);
        for (i, j, val) in b.iter() {
            bld.add_up(i, j, -val);
            bld.add_pu(j, i, val);
        }
        let lift = |c_tr: usize| -> usize {
            let comp = c_tr / v.trace.n_scalar;
            let ts = c_tr % v.trace.n_scalar;
            comp * v.n_scalar + v.trace.scalar_to_space[ts]
        };
        for (i, j, val) in mass_tr.iter() {
            bld.add_uu(lift(i), lift(j), (rse / tau) * val);
        }
        for (r, cu, val) in couplings.k_usig.iter() {
            if r < n_u {
                bld.add_uu(r, cu, val);
            } else {
                bld.add_pu(r - n_u, cu, val);
            }
        }
        let sig_scale = tau * (1.0 + params.beta) / rse;
        for (r, c, val) in couplings.k_sigsig.iter() {
            match (r < n_u, c < n_u) {
                (true, true) => bld.add_uu(r, c, sig_scale * val),
                (true, false) => bld.add_up(r, c - n_u, sig_scale * val),
                (false, true) => bld.add_pu(r - n_u, c, sig_scale * val),
                (false, false) => bld.add_pp(r - n_u, c - n_u, sig_scale * val),
            }
        }
        let (fluid_lhs, fluid_coupling) = bld.finish()?;
        let fluid_fact = fluid_lhs.factorize("fluid step system")?;

        let p_integral = assemble_integral_vector(&q);
        let area = mesh.lx * mesh.ly;

        Ok(FsiProblem {
            params,
            tau,
            mesh: Arc::clone(mesh),
            v,
            q,
            side_bc,
            ends,
            mean_zero_gauge: false,
            mass_v,
            a_f,
            b,
            mass_tr,
            a_s,
            traction,
            couplings,
            map,
            constrained_info,
            p_integral,
            area,
            pinned_trace_dofs,
            solid_lhs,
            solid_fact,
            fluid_lhs,
            fluid_coupling,
            fluid_fact,
        })
    }

    pub fn n_u(&self) -> usize {
        self.v.n_dofs()
    }

    pub fn n_p(&self) -> usize {
        self.q.n_dofs()
    }

    pub fn n_tr(&self) -> usize {
        self.v.trace.n_dofs()
    }

    pub fn zero_loads(&self) -> ZeroLoads {
        ZeroLoads {
            n_u: self.n_u(),
            n_tr: self.n_tr(),
            n_constrained: self.map.constrained.len(),
        }
    }

    pub fn restrict(&self, u: &[f64]) -> Vec<f64> {
        self.v.trace.restrict(&self.v, u)
    }

    pub fn lift(&self, w: &[f64]) -> Vec<f64> {
        self.v.trace.extend_by_zero(&self.v, w)
    }

    /// Initial state from full coefficient vectors; the traction cache is
    /// computed from `(u, p)`.
    pub fn initial_state(&self, u: Vec<f64>, p: Vec<f64>, eta: Vec<f64>) -> SchemeState {
        assert_eq!(u.len(), self.n_u());
        assert_eq!(p.len(), self.n_p());
        assert_eq!(eta.len(), self.n_tr());
        let tractions = self.traction.eval(&u, &p);
        let s = self.restrict(&u);
        SchemeState {
            n: 0,
            t: 0.0,
            u,
            p,
            eta,
            s,
            tractions,
            cache_step: 0,
        }
    }

    /// Random initial data with a fixed seed (for stability runs).
    pub fn random_state(&self, seed: u64) -> SchemeState {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..self.n_u()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..self.n_p()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eta: Vec<f64> = (0..self.n_tr()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        self.initial_state(u, p, eta)
    }

    /// Structure step: solve for the new interface velocity.
    pub fn step_solid(&self, state: &SchemeState, loads: &dyn LoadProvider) -> Result<Vec<f64>> {
        if state.cache_step != state.n {
            return Err(Error::InternalConsistency(format!(
                "traction cache from step {} used at step {}",
                state.cache_step, state.n
            )));
        }
        let rse = self.params.rho_s * self.params.eps_s;
        let t_new = (state.n + 1) as f64 * self.tau;
        let u_tr = self.restrict(&state.u);
        let mut rhs = self.mass_tr.matvec(&u_tr);
        for v in rhs.iter_mut() {
            *v *= rse / self.tau;
        }
        axpy(-1.0, &self.a_s.matvec(&state.eta), &mut rhs);
        self.traction
            .add_load_trace(&state.tractions, -1.0, &mut rhs);
        axpy(1.0, &loads.solid_load(t_new), &mut rhs);
        for &d in &self.pinned_trace_dofs {
            rhs[d] = 0.0;
        }
        self.solid_fact.solve(&rhs)
    }

    /// Fluid step: solve for the new velocity and pressure given the
    /// structure step output.
    pub fn step_fluid(
        &self,
        state: &SchemeState,
        s_new: &[f64],
        loads: &dyn LoadProvider,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let rse = self.params.rho_s * self.params.eps_s;
        let t_new = (state.n + 1) as f64 * self.tau;
        let n_u = self.n_u();

        let mut rhs_u = self.mass_v.matvec(&state.u);
        for v in rhs_u.iter_mut() {
            *v *= self.params.rho_f / self.tau;
        }
        // (rho_s eps_s / tau)(s^n, v)_Sigma
        let ms = self.mass_tr.matvec(s_new);
        let lifted = self.v.trace.extend_by_zero(&self.v, &ms);
        axpy(rse / self.tau, &lifted, &mut rhs_u);
        // (sigma^{n-1} n, v)_Sigma
        self.traction.add_load_v(&state.tractions, 1.0, &mut rhs_u);
        let mut rhs_p = vec![0.0; self.n_p()];
        // (s^n, sigma(v, q) n)_Sigma
        let kw = self.couplings.k_wsig.matvec(s_new);
        axpy(1.0, &kw[..n_u], &mut rhs_u);
        axpy(1.0, &kw[n_u..], &mut rhs_p);
        // (tau (1 + beta) / rho_s eps_s) (sigma^{n-1} n, sigma(v, q) n)_Sigma
        let sig_scale = self.tau * (1.0 + self.params.beta) / rse;
        self.traction
            .add_load_sigma(&state.tractions, sig_scale, &mut rhs_u, &mut rhs_p);
        // Sources and boundary loads.
        axpy(1.0, &loads.fluid_load(t_new), &mut rhs_u);
        axpy(1.0, &loads.boundary_load(t_new), &mut rhs_u);

        let g = loads.dirichlet_values(t_new);
        let reduced = self
            .map
            .reduce_rhs(&rhs_u, &rhs_p, &self.fluid_coupling, &g);
        let x = self.fluid_fact.solve(&reduced)?;
        let (u, mut p) = self.map.expand(&x, &g);
        if self.mean_zero_gauge {
            let mean = crate::util::dot(&self.p_integral, &p) / self.area;
            for v in p.iter_mut() {
                *v -= mean;
            }
        }
        Ok((u, p))
    }

    /// One step of the partitioned scheme: structure step, kinematic
    /// update, fluid step, traction cache refresh.
    pub fn advance(&self, state: &SchemeState, loads: &dyn LoadProvider) -> Result<SchemeState> {
        let s_new = self.step_solid(state, loads)?;
        let mut eta = state.eta.clone();
        for (e, s) in eta.iter_mut().zip(&s_new) {
            *e += self.tau * s;
        }
        let (u, p) = self.step_fluid(state, &s_new, loads)?;
        let tractions = self.traction.eval(&u, &p);
        Ok(SchemeState {
            n: state.n + 1,
            t: (state.n + 1) as f64 * self.tau,
            u,
            p,
            eta,
            s: s_new,
            tractions,
            cache_step: state.n + 1,
        })
    }

    /// Squared interface norm of a trace-DOF vector.
    fn tr_norm2(&self, w: &[f64]) -> f64 {
        self.mass_tr.bilinear(w, w)
    }

    /// Energy `E0` of a state.
    pub fn e0(&self, state: &SchemeState) -> f64 {
        let rse = self.params.rho_s * self.params.eps_s;
        let u_tr = self.restrict(&state.u);
        0.5 * self.params.rho_f * self.mass_v.bilinear(&state.u, &state.u)
            + 0.5 * self.a_s.bilinear(&state.eta, &state.eta)
            + self.tau * self.tau * (1.0 + self.params.beta) / (2.0 * rse)
                * self.traction.norm2_sigma(&state.tractions)
            + 0.5 * rse * self.tr_norm2(&u_tr)
    }

    /// Energy monitor for two consecutive states.
    pub fn energies(&self, state: &SchemeState, prev: &SchemeState) -> EnergyReport {
        assert_eq!(state.n, prev.n + 1, "states must be consecutive");
        let rse = self.params.rho_s * self.params.eps_s;
        let b0 = beta0(self.params.beta).expect("validated");
        let du: Vec<f64> = state.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        let u_tr_prev = self.restrict(&prev.u);
        let u_tr = self.restrict(&state.u);
        let s_minus_uprev: Vec<f64> = state
            .s
            .iter()
            .zip(&u_tr_prev)
            .map(|(a, b)| a - b)
            .collect();
        let s_minus_u: Vec<f64> = state.s.iter().zip(&u_tr).map(|(a, b)| a - b).collect();
        let dsig: Vec<[f64; 2]> = state
            .tractions
            .iter()
            .zip(&prev.tractions)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
            .collect();
        let e1 = self.a_f.bilinear(&state.u, &state.u)
            + self.params.rho_f / (2.0 * self.tau) * self.mass_v.bilinear(&du, &du)
            + rse / (2.0 * self.tau) * self.tr_norm2(&s_minus_uprev)
            + rse * b0 / (2.0 * self.tau) * self.tr_norm2(&s_minus_u)
            + self.tau * b0 / (2.0 * rse) * self.traction.norm2_sigma(&dsig)
            + 0.5 * self.tau * self.a_s.bilinear(&state.s, &state.s);
        let e0 = self.e0(state);
        let e0_prev = self.e0(prev);
        EnergyReport {
            e0,
            e1,
            beta0: b0,
            per_step_residual: e0 - e0_prev + self.tau * e1,
        }
    }
}

/// Monolithic backward Euler reference: one coupled solve per step with the
/// structure advanced by the implicit interface velocity.
pub struct MonolithicProblem {
    pub params: PhysicalParams,
    pub tau: f64,
    pub v: FeSpace,
    pub q: FeSpace,
    pub mass_v: SparseMatrix,
    pub mass_tr: SparseMatrix,
    pub a_s: SparseMatrix,
    pub map: SystemMap,
    pub constrained_info: Vec<([f64; 2], usize)>,
    pub lhs: SparseMatrix,
    coupling: SparseMatrix,
    fact: Factorization,
}

impl MonolithicProblem {
    pub fn new(
        mesh: &Arc<Mesh>,
        element: Element,
        params: PhysicalParams,
        tau: f64,
        side_bc: SideBc,
    ) -> Result<MonolithicProblem> {
        params.validate()?;
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
        let a_f = assemble_af(&v, params.mu);
        let b = assemble_b(&v, &q);
        let mass_tr = assemble_trace_mass(&v.trace);
        let a_s = assemble_as(&v.trace, params.c0, params.c1)?;

        let constrained_dofs: Vec<usize> = v.dirichlet.iter().map(|d| d.dof).collect();
        let map = SystemMap::new(v.n_dofs(), q.n_dofs(), &constrained_dofs);
        let mut constrained_info = vec![([0.0; 2], 0usize); map.constrained.len()];
        for d in &v.dirichlet {
            let k = map.constrained.binary_search(&d.dof).unwrap();
            constrained_info[k] = (d.point, d.component);
        }

        let rse = params.rho_s * params.eps_s;
        let mut bld = SystemMatrixBuilder::new(&map);
        bld.add_uu_matrix(&mass_v, params.rho_f / tau);
        bld.add_uu_matrix(&a_f, 1.0);
        for (i, j, val) in b.iter() {
            bld.add_up(i, j, -val);
            bld.add_pu(j, i, val);
        }
        let lift = |c_tr: usize| -> usize {
            let comp = c_tr / v.trace.n_scalar;
            let ts = c_tr % v.trace.n_scalar;
            comp * v.n_scalar + v.trace.scalar_to_space[ts]
        };
        for (i, j, val) in mass_tr.iter() {
            bld.add_uu(lift(i), lift(j), (rse / tau) * val);
        }
        for (i, j, val) in a_s.iter() {
            bld.add_uu(lift(i), lift(j), tau * val);
        }
        let (lhs, coupling) = bld.finish()?;
        let fact = lhs.factorize("monolithic system")?;
        Ok(MonolithicProblem {
            params,
            tau,
            v,
            q,
            mass_v,
            mass_tr,
            a_s,
            map,
            constrained_info,
            lhs,
            coupling,
            fact,
        })
    }

    pub fn initial_state(&self, u: Vec<f64>, p: Vec<f64>, eta: Vec<f64>) -> SchemeState {
        let s = self.v.trace.restrict(&self.v, &u);
        SchemeState {
            n: 0,
            t: 0.0,
            u,
            p,
            eta,
            s,
            tractions: Vec::new(),
            cache_step: 0,
        }
    }

    pub fn advance(&self, state: &SchemeState, loads: &dyn LoadProvider) -> Result<SchemeState> {
        let rse = self.params.rho_s * self.params.eps_s;
        let t_new = (state.n + 1) as f64 * self.tau;
        let mut rhs_u = self.mass_v.matvec(&state.u);
        for v in rhs_u.iter_mut() {
            *v *= self.params.rho_f / self.tau;
        }
        let u_tr = self.v.trace.restrict(&self.v, &state.u);
        let mut tr_rhs = self.mass_tr.matvec(&u_tr);
        for v in tr_rhs.iter_mut() {
            *v *= rse / self.tau;
        }
        axpy(-1.0, &self.a_s.matvec(&state.eta), &mut tr_rhs);
        axpy(1.0, &loads.solid_load(t_new), &mut tr_rhs);
        let lifted = self.v.trace.extend_by_zero(&self.v, &tr_rhs);
        axpy(1.0, &lifted, &mut rhs_u);
        axpy(1.0, &loads.fluid_load(t_new), &mut rhs_u);
        axpy(1.0, &loads.boundary_load(t_new), &mut rhs_u);
        let rhs_p = vec![0.0; self.q.n_dofs()];
        let g = loads.dirichlet_values(t_new);
        let reduced = self.map.reduce_rhs(&rhs_u, &rhs_p, &self.coupling, &g);
        let x = self.fact.solve(&reduced)?;
        let (u, p) = self.map.expand(&x, &g);
        let s = self.v.trace.restrict(&self.v, &u);
        let mut eta = state.eta.clone();
        for (e, sv) in eta.iter_mut().zip(&s) {
            *e += self.tau * sv;
        }
        Ok(SchemeState {
            n: state.n + 1,
            t: t_new,
            u,
            p,
            eta,
            s,
            tractions: Vec::new(),
            cache_step: state.n + 1,
        })
    }

    /// `(rho_f / 2) |u|^2 + (1/2) |eta|_s^2`, the monolithic energy.
    pub fn energy(&self, state: &SchemeState) -> f64 {
        0.5 * self.params.rho_f * self.mass_v.bilinear(&state.u, &state.u)
            + 0.5 * self.a_s.bilinear(&state.eta, &state.eta)
    }
}
