//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line with the measured quantities (run with `--nocapture` to see the
//! lines for passing criteria too).

use std::sync::Arc;

use fsi2d::fem::{build_space, quad_rule, QuadDomain};
use fsi2d::forms;
use fsi2d::linalg::SparseMatrix;
use fsi2d::mesh::Mesh;
use fsi2d::mms::{
    compare_monolithic, convergence_study, ExactSolution, StudyConfig, TauRule,
};
use fsi2d::projections::{
    rhd_rate_study, ritz_rate_study, super_approx_study, EvolveOptions, ProjectionContext,
    VerificationFlow,
};
use fsi2d::scheme::{Element, FsiProblem, PhysicalParams, SideBc, StructureEnds};
use fsi2d::util::fit_rate;

fn criterion(id: u32, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {id}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_01_table1_periodic_taylor_hood() {
    let cfg = StudyConfig {
        element: Element::TaylorHood,
        side_bc: SideBc::Periodic,
        m_levels: vec![8, 16, 32],
        beta: 0.5,
        t_end: 0.1,
        tau_rule: TauRule::H3,
        track_max: false,
        mean_zero_gauge: false,
    };
    let out = convergence_study(&cfg).unwrap();
    let orders = out.table_orders();
    let target = [3.10, 2.10, 3.00, 2.00];
    let reference = [6.852e-3, 1.403e-1, 1.324e-2, 8.075e-1];
    let l8 = &out.levels[0].errors;
    let got = [l8.u_l2, l8.p_l2, l8.eta_l2_sigma, l8.eta_s];
    let orders_ok = (0..4).all(|k| (orders[k] - target[k]).abs() <= 0.25);
    let magnitudes_ok = (0..4).all(|k| {
        let r = got[k] / reference[k];
        (0.5..=2.0).contains(&r)
    });
    criterion(
        1,
        orders_ok && magnitudes_ok,
        &format!(
            "periodic Taylor-Hood orders {orders:?} vs {target:?}; h=1/8 errors {got:?} \
             within x2 of {reference:?}"
        ),
    );
}

#[test]
fn criterion_02_table2_dirichlet_taylor_hood_and_mini() {
    let th = convergence_study(&StudyConfig {
        element: Element::TaylorHood,
        side_bc: SideBc::Dirichlet,
        m_levels: vec![8, 16, 32],
        beta: 0.5,
        t_end: 0.1,
        tau_rule: TauRule::H3,
        track_max: false,
        mean_zero_gauge: false,
    })
    .unwrap();
    let mini = convergence_study(&StudyConfig {
        element: Element::Mini,
        side_bc: SideBc::Dirichlet,
        m_levels: vec![16, 32, 64],
        beta: 0.5,
        t_end: 0.1,
        tau_rule: TauRule::H2,
        track_max: false,
        mean_zero_gauge: false,
    })
    .unwrap();
    let th_orders = th.table_orders();
    let mini_orders = mini.table_orders();
    let th_target = [2.97, 2.10, 3.00, 2.00];
    let mini_target = [2.00, 1.36, 2.00, 1.00];
    let th_ok = (0..4).all(|k| (th_orders[k] - th_target[k]).abs() <= 0.25);
    let mini_ok = (mini_orders[0] - mini_target[0]).abs() <= 0.25
        && (1.0..=1.7).contains(&mini_orders[1])
        && (mini_orders[2] - mini_target[2]).abs() <= 0.25
        && (mini_orders[3] - mini_target[3]).abs() <= 0.25;
    criterion(
        2,
        th_ok && mini_ok,
        &format!(
            "Dirichlet Taylor-Hood orders {th_orders:?} vs {th_target:?}; \
             MINI orders {mini_orders:?} vs {mini_target:?} (pressure in [1.0, 1.7])"
        ),
    );
}

#[test]
fn criterion_03_unconditional_stability() {
    let mesh = Arc::new(Mesh::build_rect_mesh(32, 16, 2.0, 1.0, true).unwrap());
    let mut worst: f64 = f64::NEG_INFINITY;
    for beta in [0.0, 0.5, 2.0] {
        for tau in [0.1, 0.01] {
            let params = PhysicalParams {
                beta,
                ..PhysicalParams::unit()
            };
            let problem = FsiProblem::new(
                &mesh,
                Element::TaylorHood,
                params,
                tau,
                SideBc::Periodic,
                StructureEnds::Natural,
            )
            .unwrap();
            let loads = problem.zero_loads();
            let mut state = problem.random_state(42);
            let e00 = problem.e0(&state);
            for _ in 0..200 {
                let next = problem.advance(&state, &loads).unwrap();
                let rep = problem.energies(&next, &state);
                worst = worst.max(rep.per_step_residual / e00);
                state = next;
            }
        }
    }
    criterion(
        3,
        worst <= 1e-10,
        &format!(
            "per-step energy residual / E0(0) <= {worst:.3e} over 200 steps, \
             beta in {{0, 0.5, 2}}, tau in {{0.1, 0.01}}, h = 1/16 (bound 1e-10)"
        ),
    );
}

#[test]
fn criterion_04_nonstationary_ritz_rates() {
    let exact = ExactSolution::new(PhysicalParams::unit());
    let rows = ritz_rate_study(
        Element::TaylorHood,
        &[4, 8, 16],
        &exact,
        0.5,
        EvolveOptions::default(),
        SideBc::Periodic,
    )
    .unwrap();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.values[0]).collect();
    let (rate, _) = fit_rate(&hs, &errs);
    criterion(
        4,
        (rate - 3.0).abs() <= 0.3,
        &format!("coupled Ritz trajectory rate {rate:.3} (errors {errs:?}), target 3 +- 0.3"),
    );
}

#[test]
fn criterion_05_super_approximation() {
    // Dirichlet side mode: the fully periodic structured mesh superconverges
    // one order past the h^{r+1} bound (translation invariance), so the
    // generic rate is observed with the invariance broken at the sides.
    let rows = super_approx_study(
        Element::TaylorHood,
        &[4, 8, 16],
        &VerificationFlow,
        1.0,
        SideBc::Dirichlet,
    )
    .unwrap();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.values[0]).collect();
    let (rate, _) = fit_rate(&hs, &errs);
    criterion(
        5,
        (rate - 3.0).abs() <= 0.4,
        &format!(
            "initial-value super-approximation H1(Sigma) rate {rate:.3} \
             (diffs {errs:?}), target 3 +- 0.4"
        ),
    );
}

#[test]
fn criterion_06_dirichlet_stokes_ritz_rates() {
    let exact = ExactSolution::new(PhysicalParams::unit());
    let rows = rhd_rate_study(
        Element::TaylorHood,
        &[4, 8, 16],
        &exact,
        std::f64::consts::FRAC_PI_2,
        SideBc::Periodic,
    )
    .unwrap();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.values[0]).collect();
    let h1p: Vec<f64> = rows.iter().map(|r| r.values[1]).collect();
    let (l2_rate, _) = fit_rate(&hs, &l2);
    let (h1_rate, _) = fit_rate(&hs, &h1p);
    criterion(
        6,
        (l2_rate - 3.0).abs() <= 0.3 && (h1_rate - 2.0).abs() <= 0.3,
        &format!(
            "Dirichlet Stokes-Ritz rates: L2 {l2_rate:.3} (target 3 +- 0.3), \
             H1 + pressure {h1_rate:.3} (target 2 +- 0.3)"
        ),
    );
}

#[test]
fn criterion_07_ntd_symmetry() {
    let mesh = Arc::new(Mesh::build_rect_mesh(8, 4, 2.0, 1.0, true).unwrap());
    let ctx =
        ProjectionContext::new(&mesh, Element::TaylorHood, 1.0, 1.0, 1.0, SideBc::Periodic)
            .unwrap();
    let rep = ctx.ntd_symmetry_check(20, 2024).unwrap();
    criterion(
        7,
        rep.max_asymmetry <= 1e-12 && rep.min_quadratic_form > 0.0,
        &format!(
            "Neumann-to-Dirichlet asymmetry {:.2e} (bound 1e-12), \
             smallest quadratic form {:.3e} (> 0)",
            rep.max_asymmetry, rep.min_quadratic_form
        ),
    );
}

#[test]
fn criterion_08_partitioned_vs_monolithic() {
    let rows = compare_monolithic(16, &[1e-2, 5e-3, 2.5e-3], 0.1, 0.5).unwrap();
    let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
    let diffs: Vec<f64> = rows.iter().map(|r| r.diff_u_l2).collect();
    let (rate, _) = fit_rate(&taus, &diffs);
    criterion(
        8,
        (rate - 1.0).abs() <= 0.4,
        &format!(
            "partitioned vs monolithic velocity gap decays at tau-order {rate:.3} \
             (gaps {diffs:?}), target 1 +- 0.4"
        ),
    );
}

#[test]
fn criterion_09_benchmark_wave() {
    use fsi2d::bench::{min_pressure, run_bench, wavefront_x, BenchConfig};
    let cfg = BenchConfig::standard(16, 1e-4);
    let run = run_bench(&cfg).unwrap();
    let fronts: Vec<f64> = run
        .snapshots
        .iter()
        .map(|s| wavefront_x(&run.problem, &s.state.p))
        .collect();
    let turn = fronts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let monotone = fronts[..=turn].windows(2).all(|w| w[1] > w[0]) && turn >= 1;
    let reflected = turn + 1 < run.snapshots.len();
    let min_after = run.snapshots[turn + 1..]
        .iter()
        .map(|s| min_pressure(&s.state.p))
        .fold(f64::INFINITY, f64::min);
    let forward_max = run.snapshots[0]
        .state
        .p
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    criterion(
        9,
        monotone && reflected && min_after < -0.05 * forward_max,
        &format!(
            "wavefront positions {fronts:?} strictly increasing up to reflection; \
             min pressure after reflection {min_after:.1} (forward peak {forward_max:.1})"
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 10: dense brute-force assembly oracle and source cross-check.
// The oracle evaluates every bilinear form pairwise on unit coefficient
// fields with high-order quadrature and generic field evaluators, fully
// independent of the element-matrix assembly loops.
// ---------------------------------------------------------------------

struct DenseOracle {
    v: fsi2d::fem::FeSpace,
    q: fsi2d::fem::FeSpace,
    mesh: Arc<Mesh>,
    mu: f64,
}

impl DenseOracle {
    fn unit(space: &fsi2d::fem::FeSpace, dof: usize) -> Vec<f64> {
        let mut e = vec![0.0; space.n_dofs()];
        e[dof] = 1.0;
        e
    }

    fn volume_form(
        &self,
        f: &dyn Fn(&[f64], &[f64], usize, [f64; 3]) -> f64,
        x: &[f64],
        y: &[f64],
    ) -> f64 {
        let rule = quad_rule(QuadDomain::Triangle, 12).unwrap();
        let mut acc = 0.0;
        for tri in 0..self.mesh.triangles.len() {
            let geo = fsi2d::fem::ElementGeometry::new(&self.mesh, tri);
            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                acc += w * geo.detj * f(x, y, tri, *pt);
            }
        }
        acc
    }

    fn mass_vec(&self, x: &[f64], y: &[f64]) -> f64 {
        self.volume_form(
            &|x, y, tri, pt| {
                let a = self.v.eval(x, tri, pt);
                let b = self.v.eval(y, tri, pt);
                a[0] * b[0] + a[1] * b[1]
            },
            x,
            y,
        )
    }

    fn af(&self, x: &[f64], y: &[f64]) -> f64 {
        self.volume_form(
            &|x, y, tri, pt| {
                let ga = self.v.eval_gradient(x, tri, pt);
                let gb = self.v.eval_gradient(y, tri, pt);
                let da = [
                    [ga[0][0], 0.5 * (ga[0][1] + ga[1][0])],
                    [0.5 * (ga[0][1] + ga[1][0]), ga[1][1]],
                ];
                let db = [
                    [gb[0][0], 0.5 * (gb[0][1] + gb[1][0])],
                    [0.5 * (gb[0][1] + gb[1][0]), gb[1][1]],
                ];
                2.0 * self.mu
                    * (da[0][0] * db[0][0]
                        + 2.0 * da[0][1] * db[0][1]
                        + da[1][1] * db[1][1])
            },
            x,
            y,
        )
    }

    fn b_form(&self, vx: &[f64], qy: &[f64]) -> f64 {
        self.volume_form(
            &|x, y, tri, pt| {
                let g = self.v.eval_gradient(x, tri, pt);
                let qv = self.q.eval(y, tri, pt)[0];
                qv * (g[0][0] + g[1][1])
            },
            vx,
            qy,
        )
    }

    /// sigma(v, q) n at the interface edge quadrature points of the shared
    /// rule, for a combined `[u; p]` coefficient vector.
    fn tractions(&self, sys: &[f64]) -> Vec<[f64; 2]> {
        let n_u = self.v.n_dofs();
        let (u, p) = sys.split_at(n_u);
        let rule = forms::edge_rule();
        let mut out = Vec::new();
        for edge in &self.v.trace.edges {
            for (t, _) in rule.edge_params() {
                let xref = [
                    edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                    edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
                ];
                let bary = [1.0 - xref[0] - xref[1], xref[0], xref[1]];
                let g = self.v.eval_gradient(u, edge.tri, bary);
                let pv = self.q.eval(p, edge.tri, bary)[0];
                let n = edge.normal;
                let d = [
                    [g[0][0], 0.5 * (g[0][1] + g[1][0])],
                    [0.5 * (g[0][1] + g[1][0]), g[1][1]],
                ];
                out.push([
                    -pv * n[0] + 2.0 * self.mu * (d[0][0] * n[0] + d[0][1] * n[1]),
                    -pv * n[1] + 2.0 * self.mu * (d[1][0] * n[0] + d[1][1] * n[1]),
                ]);
            }
        }
        out
    }

    fn sigma_dot(&self, f: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
        let rule = forms::edge_rule();
        let mut acc = 0.0;
        let mut k = 0;
        for edge in &self.v.trace.edges {
            for (_, w) in rule.edge_params() {
                acc += w * edge.length * (f[k][0] * g[k][0] + f[k][1] * g[k][1]);
                k += 1;
            }
        }
        acc
    }

    fn trace_values(&self, w: &[f64]) -> Vec<[f64; 2]> {
        let rule = forms::edge_rule();
        let mut out = Vec::new();
        for (e, _) in self.v.trace.edges.iter().enumerate() {
            for (t, _) in rule.edge_params() {
                out.push(self.v.trace.eval(e, t, w).0);
            }
        }
        out
    }

    fn trace_form(&self, c0: f64, c1: f64, x: &[f64], y: &[f64]) -> f64 {
        let rule = quad_rule(QuadDomain::Edge, 15).unwrap();
        let mut acc = 0.0;
        for (e, edge) in self.v.trace.edges.iter().enumerate() {
            for (t, w) in rule.edge_params() {
                let (a, da) = self.v.trace.eval(e, t, x);
                let (b, db) = self.v.trace.eval(e, t, y);
                acc += w
                    * edge.length
                    * (c0 * (da[0] * db[0] + da[1] * db[1]) + c1 * (a[0] * b[0] + a[1] * b[1]));
            }
        }
        acc
    }
}

fn max_entry_diff(assembled: &SparseMatrix, oracle: impl Fn(usize, usize) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..assembled.nrows() {
        for j in 0..assembled.ncols() {
            let d = (assembled.get(i, j) - oracle(i, j)).abs();
            worst = worst.max(d);
        }
    }
    worst
}

#[test]
fn criterion_10_oracle_equivalence() {
    let mut worst_all = 0.0f64;
    for element in [Element::TaylorHood, Element::Mini] {
        let mesh = Arc::new(Mesh::build_rect_mesh(1, 1, 1.0, 1.0, false).unwrap());
        let (vk, qk) = element.kinds();
        let v = build_space(&mesh, vk, 2, &[]).unwrap();
        let q = build_space(&mesh, qk, 1, &[]).unwrap();
        let mu = 0.7;
        let oracle = DenseOracle {
            v: v.clone(),
            q: q.clone(),
            mesh: Arc::clone(&mesh),
            mu,
        };
        let n_u = v.n_dofs();
        let n_p = q.n_dofs();
        let n_tr = v.trace.n_dofs();

        let mass = forms::assemble_mass(&v);
        let af = forms::assemble_af(&v, mu);
        let b = forms::assemble_b(&v, &q);
        let a_s = forms::assemble_as(&v.trace, 2.0, 3.0).unwrap();
        let m_tr = forms::assemble_trace_mass(&v.trace);
        let op = forms::traction_trace(&v, &q, mu);
        let coup = forms::assemble_traction_couplings(&op);

        let unit_v = |i: usize| DenseOracle::unit(&v, i);
        let unit_q = |j: usize| DenseOracle::unit(&q, j);
        let unit_sys = |k: usize| {
            let mut e = vec![0.0; n_u + n_p];
            e[k] = 1.0;
            e
        };
        let unit_tr = |k: usize| {
            let mut e = vec![0.0; n_tr];
            e[k] = 1.0;
            e
        };

        let mut worst = 0.0f64;
        worst = worst.max(max_entry_diff(&mass, |i, j| {
            oracle.mass_vec(&unit_v(i), &unit_v(j))
        }));
        worst = worst.max(max_entry_diff(&af, |i, j| {
            oracle.af(&unit_v(i), &unit_v(j))
        }));
        worst = worst.max(max_entry_diff(&b, |i, j| {
            oracle.b_form(&unit_v(i), &unit_q(j))
        }));
        worst = worst.max(max_entry_diff(&a_s, |i, j| {
            oracle.trace_form(2.0, 3.0, &unit_tr(i), &unit_tr(j))
        }));
        worst = worst.max(max_entry_diff(&m_tr, |i, j| {
            oracle.trace_form(0.0, 1.0, &unit_tr(i), &unit_tr(j))
        }));
        // Traction Gram, trace pairing and volume-velocity pairing.
        let sys_tractions: Vec<Vec<[f64; 2]>> =
            (0..n_u + n_p).map(|k| oracle.tractions(&unit_sys(k))).collect();
        worst = worst.max(max_entry_diff(&coup.k_sigsig, |i, j| {
            oracle.sigma_dot(&sys_tractions[i], &sys_tractions[j])
        }));
        let tr_values: Vec<Vec<[f64; 2]>> =
            (0..n_tr).map(|k| oracle.trace_values(&unit_tr(k))).collect();
        worst = worst.max(max_entry_diff(&coup.k_wsig, |i, j| {
            oracle.sigma_dot(&tr_values[j], &sys_tractions[i])
        }));
        let vel_values: Vec<Vec<[f64; 2]>> = (0..n_u)
            .map(|k| {
                let w = v.trace.restrict(&v, &unit_v(k));
                oracle.trace_values(&w)
            })
            .collect();
        worst = worst.max(max_entry_diff(&coup.k_usig, |i, j| {
            oracle.sigma_dot(&vel_values[j], &sys_tractions[i])
        }));
        worst_all = worst_all.max(worst);
    }

    // Finite-difference cross-check of the manufactured sources.
    let exact = ExactSolution::new(PhysicalParams::unit());
    let mut rng_state = 0x9e3779b97f4a7c15u64;
    let mut rand01 = move || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    let h = 1e-3;
    let d1 = |f: &dyn Fn(f64) -> f64, x: f64| {
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    };
    let d2 = |f: &dyn Fn(f64) -> f64, x: f64| {
        (-f(x - 2.0 * h) + 16.0 * f(x - h) - 30.0 * f(x) + 16.0 * f(x + h) - f(x + 2.0 * h))
            / (12.0 * h * h)
    };
    let mut worst_fd = 0.0f64;
    for _ in 0..100 {
        let t = 0.1 + 2.9 * rand01();
        let x = 2.0 * rand01();
        let y = rand01();
        for c in 0..2 {
            let dtu = d1(&|s| exact.velocity(s, [x, y])[c], t);
            let dp = if c == 0 {
                d1(&|s| exact.pressure(t, [s, y]), x)
            } else {
                d1(&|s| exact.pressure(t, [x, s]), y)
            };
            let lap = d2(&|s| exact.velocity(t, [s, y])[c], x)
                + d2(&|s| exact.velocity(t, [x, s])[c], y);
            let resid = dtu + dp - lap - exact.f_fluid(t, [x, y])[c];
            worst_fd = worst_fd.max(resid.abs());
        }
        for ypos in [0.0, 1.0] {
            let q = [x, ypos];
            let n = if ypos > 0.5 { [0.0, 1.0] } else { [0.0, -1.0] };
            for c in 0..2 {
                let dtt = d2(&|s| exact.displacement(s, q)[c], t);
                let dxx = d2(&|s| exact.displacement(t, [s, ypos])[c], x);
                let eta = exact.displacement(t, q)[c];
                let sn = exact.traction(t, q, n)[c];
                let resid = dtt - (dxx - eta) + sn - exact.f_solid(t, q)[c];
                worst_fd = worst_fd.max(resid.abs());
            }
        }
    }

    criterion(
        10,
        worst_all <= 1e-12 && worst_fd <= 1e-6,
        &format!(
            "dense oracle max entry mismatch {worst_all:.3e} (bound 1e-12); \
             finite-difference source residual {worst_fd:.3e} (bound 1e-6)"
        ),
    );
}
