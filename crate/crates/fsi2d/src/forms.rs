//! Assembly of the bilinear forms and load vectors of the weak formulation:
//! the viscous form `a_f`, the pressure-divergence form `b`, volume and
//! interface mass, the structure form `a_s`, the traction-trace couplings
//! involving `sigma(v, q) n` on the interface, and boundary pressure loads.
//!
//! Volume quadrature is chosen exact for each integrand from the element
//! degrees; every interface integral shares one fixed 5-point Gauss edge
//! rule so that the traction couplings form an exact Gram family.

use crate::fem::{
    eval_basis, quad_rule, BasisEval, ElementGeometry, ElementKind, FeSpace, QuadDomain, QuadRule,
    TraceSpace,
};
use crate::linalg::SparseMatrix;
use crate::mesh::{BoundaryEdge, BoundaryTag};
use crate::{Error, Result};

/// Exactness degree of the shared interface edge rule (5 Gauss points).
pub const EDGE_RULE_DEGREE: usize = 9;

/// Default exactness degree for analytic (manufactured) load vectors.
pub const LOAD_RULE_DEGREE: usize = 7;

fn tri_rule_exact(degree: usize) -> QuadRule {
    quad_rule(QuadDomain::Triangle, degree.max(1)).expect("triangle rule")
}

pub fn edge_rule() -> QuadRule {
    quad_rule(QuadDomain::Edge, EDGE_RULE_DEGREE).expect("edge rule")
}

fn basis_table(kind: ElementKind, rule: &QuadRule) -> Vec<BasisEval> {
    rule.points.iter().map(|&p| eval_basis(kind, p)).collect()
}

/// Volume mass matrix `(u, v)` over all components of `space`.
pub fn assemble_mass(space: &FeSpace) -> SparseMatrix {
    let rule = tri_rule_exact(2 * space.kind.degree());
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut triplets = Vec::new();
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        let mut local = vec![0.0; nb * nb];
        for (q, w) in rule.weights.iter().enumerate() {
            let vals = table[q].values();
            let scale = w * geo.detj;
            for i in 0..nb {
                for j in 0..nb {
                    local[i * nb + j] += scale * vals[i] * vals[j];
                }
            }
        }
        for c in 0..space.components {
            for i in 0..nb {
                for j in 0..nb {
                    triplets.push((
                        space.global_dof(c, dofs[i]),
                        space.global_dof(c, dofs[j]),
                        local[i * nb + j],
                    ));
                }
            }
        }
    }
    SparseMatrix::from_triplets(space.n_dofs(), space.n_dofs(), &triplets).unwrap()
}

/// Viscous form `a_f(u, v) = 2 mu (D(u), D(v))` on a vector space.
pub fn assemble_af(space: &FeSpace, mu: f64) -> SparseMatrix {
    assert_eq!(space.components, 2, "a_f needs a vector space");
    let rule = tri_rule_exact(2 * (space.kind.degree().saturating_sub(1)));
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut triplets = Vec::new();
    let mut grads = vec![[0.0f64; 2]; nb];
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        // local[((c*2+d)*nb+i)*nb+j] holds the (phi_i e_c, phi_j e_d) entry.
        let mut local = vec![0.0; 4 * nb * nb];
        for (q, w) in rule.weights.iter().enumerate() {
            for (g, &gr) in grads.iter_mut().zip(table[q].gradients()) {
                *g = geo.phys_grad(gr);
            }
            let scale = w * geo.detj * mu;
            for i in 0..nb {
                for j in 0..nb {
                    let dot = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                    for c in 0..2 {
                        for d in 0..2 {
                            let mut v = grads[i][d] * grads[j][c];
                            if c == d {
                                v += dot;
                            }
                            local[((c * 2 + d) * nb + i) * nb + j] += scale * v;
                        }
                    }
                }
            }
        }
        for c in 0..2 {
            for d in 0..2 {
                for i in 0..nb {
                    for j in 0..nb {
                        triplets.push((
                            space.global_dof(c, dofs[i]),
                            space.global_dof(d, dofs[j]),
                            local[((c * 2 + d) * nb + i) * nb + j],
                        ));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(space.n_dofs(), space.n_dofs(), &triplets).unwrap()
}

/// Pressure-divergence form: entry `[(c, i), j] = (psi_j, d_c phi_i)`, so
/// `B p` realizes `b(p, v)` against velocity tests and `B^T u` realizes
/// `b(q, u)` against pressure tests.
pub fn assemble_b(v_space: &FeSpace, q_space: &FeSpace) -> SparseMatrix {
    assert_eq!(v_space.components, 2);
    assert_eq!(q_space.components, 1);
    let degree = q_space.kind.degree() + v_space.kind.degree().saturating_sub(1);
    let rule = tri_rule_exact(degree);
    let vt = basis_table(v_space.kind, &rule);
    let qt = basis_table(q_space.kind, &rule);
    let (nbv, nbq) = (v_space.kind.n_basis(), q_space.kind.n_basis());
    let mut triplets = Vec::new();
    for tri in 0..v_space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&v_space.mesh, tri);
        let vdofs = v_space.cell_scalar_dofs(tri);
        let qdofs = q_space.cell_scalar_dofs(tri);
        let mut local = vec![0.0; 2 * nbv * nbq];
        for (q, w) in rule.weights.iter().enumerate() {
            let scale = w * geo.detj;
            let qvals = qt[q].values();
            for i in 0..nbv {
                let g = geo.phys_grad(vt[q].gradients[i]);
                for j in 0..nbq {
                    for c in 0..2 {
                        local[(c * nbv + i) * nbq + j] += scale * qvals[j] * g[c];
                    }
                }
            }
        }
        for c in 0..2 {
            for i in 0..nbv {
                for j in 0..nbq {
                    triplets.push((
                        v_space.global_dof(c, vdofs[i]),
                        qdofs[j],
                        local[(c * nbv + i) * nbq + j],
                    ));
                }
            }
        }
    }
    SparseMatrix::from_triplets(v_space.n_dofs(), q_space.n_dofs(), &triplets).unwrap()
}

/// Interface mass matrix `(w, xi)_Sigma` on the trace space (both
/// components).
pub fn assemble_trace_mass(tr: &TraceSpace) -> SparseMatrix {
    trace_form(tr, 0.0, 1.0).unwrap()
}

/// Structure form `a_s(eta, w) = C0 (dx eta, dx w)_Sigma + C1 (eta, w)_Sigma`
/// applied componentwise to the vector displacement.
pub fn assemble_as(tr: &TraceSpace, c0: f64, c1: f64) -> Result<SparseMatrix> {
    if c0 < 0.0 || c1 < 0.0 || (c0 == 0.0 && c1 == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "structure coefficients must be nonnegative and not both zero, got C0={c0}, C1={c1}"
        )));
    }
    trace_form(tr, c0, c1)
}

fn trace_form(tr: &TraceSpace, c_stiff: f64, c_mass: f64) -> Result<SparseMatrix> {
    let rule = edge_rule();
    let n_tr = tr.n_scalar;
    let mut triplets = Vec::new();
    for edge in &tr.edges {
        let geo = ElementGeometry::new(&tr.mesh, edge.tri);
        let nd = edge.dofs.len();
        let mut local = vec![0.0; nd * nd];
        for (t, w) in rule.edge_params() {
            let xref = [
                edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
            ];
            let b = eval_basis(tr.kind, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
            let scale = w * edge.length;
            for (i, &(li, _)) in edge.dofs.iter().enumerate() {
                let gi = geo.phys_grad(b.gradients[li]);
                let di = gi[0] * edge.tangent[0] + gi[1] * edge.tangent[1];
                for (j, &(lj, _)) in edge.dofs.iter().enumerate() {
                    let gj = geo.phys_grad(b.gradients[lj]);
                    let dj = gj[0] * edge.tangent[0] + gj[1] * edge.tangent[1];
                    local[i * nd + j] +=
                        scale * (c_stiff * di * dj + c_mass * b.values[li] * b.values[lj]);
                }
            }
        }
        for c in 0..2 {
            for (i, &(_, ti)) in edge.dofs.iter().enumerate() {
                for (j, &(_, tj)) in edge.dofs.iter().enumerate() {
                    triplets.push((c * n_tr + ti, c * n_tr + tj, local[i * nd + j]));
                }
            }
        }
    }
    SparseMatrix::from_triplets(2 * n_tr, 2 * n_tr, &triplets)
}

/// One interface quadrature point of the traction-trace operator.
#[derive(Debug, Clone)]
pub struct TractionQuadPoint {
    pub point: [f64; 2],
    /// Quadrature weight times edge length.
    pub w: f64,
    /// Traction of velocity basis `phi_l e_c` at this point, indexed
    /// `c * nb_v + l`.
    pub vel_coef: Vec<[f64; 2]>,
    /// Traction of pressure basis `psi_j` (equals `-psi_j n`).
    pub p_coef: Vec<[f64; 2]>,
    /// Velocity basis values (for pairings with trace fields).
    pub basis_vals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TractionEdge {
    pub tri: usize,
    pub tag: BoundaryTag,
    pub normal: [f64; 2],
    pub length: f64,
    pub vel_scalar_dofs: Vec<usize>,
    pub p_scalar_dofs: Vec<usize>,
    /// `(local velocity basis index, trace scalar index)` of the DOFs with
    /// nonzero trace on this edge.
    pub trace_dofs: Vec<(usize, usize)>,
    pub qpoints: Vec<TractionQuadPoint>,
}

/// Pointwise linear map from `(velocity, pressure)` coefficients to the
/// traction `sigma(v, q) n = (-q I + 2 mu D(v)) n` at the shared interface
/// quadrature points, evaluated one-sided from the owning triangle.
#[derive(Debug, Clone)]
pub struct TractionTraceOperator {
    pub n_scalar_v: usize,
    pub n_scalar_p: usize,
    pub n_tr_scalar: usize,
    pub nb_v: usize,
    pub nb_p: usize,
    pub mu: f64,
    pub edges: Vec<TractionEdge>,
}

/// Build the traction-trace operator of a velocity/pressure pair.
pub fn traction_trace(v_space: &FeSpace, q_space: &FeSpace, mu: f64) -> TractionTraceOperator {
    assert!(
        std::sync::Arc::ptr_eq(&v_space.mesh, &q_space.mesh),
        "spaces must share a mesh"
    );
    let rule = edge_rule();
    let (nb_v, nb_p) = (v_space.kind.n_basis(), q_space.kind.n_basis());
    let mut edges = Vec::with_capacity(v_space.trace.edges.len());
    for tredge in &v_space.trace.edges {
        let tri = tredge.tri;
        let geo = ElementGeometry::new(&v_space.mesh, tri);
        let n = tredge.normal;
        let mut qpoints = Vec::new();
        for (t, w) in rule.edge_params() {
            let xref = [
                tredge.ref_ends[0][0] * (1.0 - t) + tredge.ref_ends[1][0] * t,
                tredge.ref_ends[0][1] * (1.0 - t) + tredge.ref_ends[1][1] * t,
            ];
            let bary = [1.0 - xref[0] - xref[1], xref[0], xref[1]];
            let bv = eval_basis(v_space.kind, bary);
            let bq = eval_basis(q_space.kind, bary);
            let mut vel_coef = vec![[0.0; 2]; 2 * nb_v];
            for l in 0..nb_v {
                let g = geo.phys_grad(bv.gradients[l]);
                let gn = g[0] * n[0] + g[1] * n[1];
                for c in 0..2 {
                    for a in 0..2 {
                        let mut v = n[c] * g[a];
                        if a == c {
                            v += gn;
                        }
                        vel_coef[c * nb_v + l][a] = mu * v;
                    }
                }
            }
            let p_coef = (0..nb_p)
                .map(|j| [-bq.values[j] * n[0], -bq.values[j] * n[1]])
                .collect();
            qpoints.push(TractionQuadPoint {
                point: geo.to_physical(xref),
                w: w * tredge.length,
                vel_coef,
                p_coef,
                basis_vals: bv.values()[..nb_v].to_vec(),
            });
        }
        edges.push(TractionEdge {
            tri,
            tag: tredge.tag,
            normal: n,
            length: tredge.length,
            vel_scalar_dofs: v_space.cell_scalar_dofs(tri).to_vec(),
            p_scalar_dofs: q_space.cell_scalar_dofs(tri).to_vec(),
            trace_dofs: tredge.dofs.clone(),
            qpoints,
        });
    }
    TractionTraceOperator {
        n_scalar_v: v_space.n_scalar,
        n_scalar_p: q_space.n_scalar,
        n_tr_scalar: v_space.trace.n_scalar,
        nb_v,
        nb_p,
        mu,
        edges,
    }
}

impl TractionTraceOperator {
    pub fn n_points(&self) -> usize {
        self.edges.iter().map(|e| e.qpoints.len()).sum()
    }

    pub fn n_u(&self) -> usize {
        2 * self.n_scalar_v
    }

    pub fn n_sys(&self) -> usize {
        2 * self.n_scalar_v + self.n_scalar_p
    }

    /// Evaluate tractions at every interface quadrature point for given
    /// velocity and pressure coefficients.
    pub fn eval(&self, u: &[f64], p: &[f64]) -> Vec<[f64; 2]> {
        assert_eq!(u.len(), 2 * self.n_scalar_v);
        assert_eq!(p.len(), self.n_scalar_p);
        let mut out = Vec::with_capacity(self.n_points());
        for edge in &self.edges {
            for qp in &edge.qpoints {
                let mut t = [0.0f64; 2];
                for (l, &s) in edge.vel_scalar_dofs.iter().enumerate() {
                    for c in 0..2 {
                        let w = u[c * self.n_scalar_v + s];
                        if w != 0.0 {
                            t[0] += w * qp.vel_coef[c * self.nb_v + l][0];
                            t[1] += w * qp.vel_coef[c * self.nb_v + l][1];
                        }
                    }
                }
                for (j, &s) in edge.p_scalar_dofs.iter().enumerate() {
                    let w = p[s];
                    if w != 0.0 {
                        t[0] += w * qp.p_coef[j][0];
                        t[1] += w * qp.p_coef[j][1];
                    }
                }
                out.push(t);
            }
        }
        out
    }

    /// Evaluate a trace field (coefficients over the trace space) at every
    /// interface quadrature point.
    pub fn eval_trace_field(&self, w: &[f64]) -> Vec<[f64; 2]> {
        assert_eq!(w.len(), 2 * self.n_tr_scalar);
        let mut out = Vec::with_capacity(self.n_points());
        for edge in &self.edges {
            for qp in &edge.qpoints {
                let mut v = [0.0f64; 2];
                for &(lb, ts) in &edge.trace_dofs {
                    for c in 0..2 {
                        v[c] += w[c * self.n_tr_scalar + ts] * qp.basis_vals[lb];
                    }
                }
                out.push(v);
            }
        }
        out
    }

    /// `int_Sigma f . g` for two point-value arrays.
    pub fn dot_sigma(&self, f: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
        let mut acc = 0.0;
        let mut k = 0;
        for edge in &self.edges {
            for qp in &edge.qpoints {
                acc += qp.w * (f[k][0] * g[k][0] + f[k][1] * g[k][1]);
                k += 1;
            }
        }
        acc
    }

    /// `|f|_Sigma^2` for a point-value array.
    pub fn norm2_sigma(&self, f: &[[f64; 2]]) -> f64 {
        self.dot_sigma(f, f)
    }

    /// Accumulate `scale * (f, v)_Sigma` into a velocity load vector, for
    /// point values `f` (for example cached tractions).
    pub fn add_load_v(&self, f: &[[f64; 2]], scale: f64, out: &mut [f64]) {
        assert_eq!(out.len(), 2 * self.n_scalar_v);
        let mut k = 0;
        for edge in &self.edges {
            for qp in &edge.qpoints {
                for &(lb, _) in &edge.trace_dofs {
                    let s = edge.vel_scalar_dofs[lb];
                    for c in 0..2 {
                        out[c * self.n_scalar_v + s] += scale * qp.w * qp.basis_vals[lb] * f[k][c];
                    }
                }
                k += 1;
            }
        }
    }

    /// Accumulate `scale * (f, w)_Sigma` into a trace-space load vector.
    pub fn add_load_trace(&self, f: &[[f64; 2]], scale: f64, out: &mut [f64]) {
        assert_eq!(out.len(), 2 * self.n_tr_scalar);
        let mut k = 0;
        for edge in &self.edges {
            for qp in &edge.qpoints {
                for &(lb, ts) in &edge.trace_dofs {
                    for c in 0..2 {
                        out[c * self.n_tr_scalar + ts] +=
                            scale * qp.w * qp.basis_vals[lb] * f[k][c];
                    }
                }
                k += 1;
            }
        }
    }

    /// Accumulate `scale * (f, sigma(v, q) n)_Sigma` into `(velocity,
    /// pressure)` load vectors, for point values `f`.
    pub fn add_load_sigma(&self, f: &[[f64; 2]], scale: f64, out_u: &mut [f64], out_p: &mut [f64]) {
        assert_eq!(out_u.len(), 2 * self.n_scalar_v);
        assert_eq!(out_p.len(), self.n_scalar_p);
        let mut k = 0;
        for edge in &self.edges {
            for qp in &edge.qpoints {
                let scale = scale * qp.w;
                for (l, &s) in edge.vel_scalar_dofs.iter().enumerate() {
                    for c in 0..2 {
                        let t = qp.vel_coef[c * self.nb_v + l];
                        out_u[c * self.n_scalar_v + s] +=
                            scale * (t[0] * f[k][0] + t[1] * f[k][1]);
                    }
                }
                for (j, &s) in edge.p_scalar_dofs.iter().enumerate() {
                    let t = qp.p_coef[j];
                    out_p[s] += scale * (t[0] * f[k][0] + t[1] * f[k][1]);
                }
                k += 1;
            }
        }
    }
}

/// Assembled traction-trace couplings.
pub struct TractionCouplings {
    /// `(w, sigma(v, q) n)_Sigma`: rows over the coupled `[u; p]` system,
    /// columns over the trace space.
    pub k_wsig: SparseMatrix,
    /// `(u, sigma(v, q) n)_Sigma` with a volume velocity as trial: rows over
    /// `[u; p]`, columns over velocity DOFs.
    pub k_usig: SparseMatrix,
    /// Gram matrix `(sigma(u, p) n, sigma(v, q) n)_Sigma` over `[u; p]`.
    pub k_sigsig: SparseMatrix,
}

/// Assemble the interface couplings of the traction-trace operator.
pub fn assemble_traction_couplings(op: &TractionTraceOperator) -> TractionCouplings {
    let n_sys = op.n_sys();
    let n_u = op.n_u();
    let n_tr = 2 * op.n_tr_scalar;
    let mut t_wsig = Vec::new();
    let mut t_usig = Vec::new();
    let mut t_sigsig = Vec::new();
    for edge in &op.edges {
        // Combined traction coefficient list: velocity entries then pressure.
        let n_vel = 2 * op.nb_v;
        let n_all = n_vel + op.nb_p;
        let sys_dof = |idx: usize| -> usize {
            if idx < n_vel {
                let c = idx / op.nb_v;
                let l = idx % op.nb_v;
                c * op.n_scalar_v + edge.vel_scalar_dofs[l]
            } else {
                n_u + edge.p_scalar_dofs[idx - n_vel]
            }
        };
        for qp in &edge.qpoints {
            let coef = |idx: usize| -> [f64; 2] {
                if idx < n_vel {
                    qp.vel_coef[idx]
                } else {
                    qp.p_coef[idx - n_vel]
                }
            };
            for i in 0..n_all {
                let ti = coef(i);
                if ti == [0.0; 2] {
                    continue;
                }
                let row = sys_dof(i);
                for j in 0..n_all {
                    let tj = coef(j);
                    let v = qp.w * (ti[0] * tj[0] + ti[1] * tj[1]);
                    if v != 0.0 {
                        t_sigsig.push((row, sys_dof(j), v));
                    }
                }
                for &(lb, ts) in &edge.trace_dofs {
                    let bval = qp.basis_vals[lb];
                    for c in 0..2 {
                        let v = qp.w * bval * ti[c];
                        if v != 0.0 {
                            t_wsig.push((row, c * op.n_tr_scalar + ts, v));
                            t_usig.push((row, c * op.n_scalar_v + edge.vel_scalar_dofs[lb], v));
                        }
                    }
                }
            }
        }
    }
    TractionCouplings {
        k_wsig: SparseMatrix::from_triplets(n_sys, n_tr, &t_wsig).unwrap(),
        k_usig: SparseMatrix::from_triplets(n_sys, n_u, &t_usig).unwrap(),
        k_sigsig: SparseMatrix::from_triplets(n_sys, n_sys, &t_sigsig).unwrap(),
    }
}

/// Local DOFs with nonzero trace on a boundary edge, plus the reference
/// coordinates of the edge endpoints in the owning triangle.
pub fn edge_dofs_on(space: &FeSpace, be: &BoundaryEdge) -> (Vec<(usize, usize)>, [[f64; 2]; 2]) {
    const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let tv = space.mesh.triangles[be.triangle];
    let local_of = |v: usize| tv.iter().position(|&w| w == v).unwrap();
    let (la, lb) = (local_of(be.vertices[0]), local_of(be.vertices[1]));
    let dofs = space.cell_scalar_dofs(be.triangle);
    let mut out = vec![(la, dofs[la]), (lb, dofs[lb])];
    if space.kind.has_edge_dofs() {
        let lc = 3 - la - lb;
        out.push((3 + lc, dofs[3 + lc]));
    }
    (out, [REF[la], REF[lb]])
}

/// Natural boundary pressure load `-pval (n, v)_tag` on an inflow/outflow
/// side.
pub fn assemble_boundary_pressure_load(
    space: &FeSpace,
    tag: BoundaryTag,
    pval: f64,
) -> Result<Vec<f64>> {
    if tag.is_interface() {
        return Err(Error::InvalidArgument(
            "pressure loads apply to inflow/outflow sides only".into(),
        ));
    }
    let rule = edge_rule();
    let mut out = vec![0.0; space.n_dofs()];
    for be in &space.mesh.boundary_edges {
        if be.tag != tag {
            continue;
        }
        let (dofs, ref_ends) = edge_dofs_on(space, be);
        for (t, w) in rule.edge_params() {
            let xref = [
                ref_ends[0][0] * (1.0 - t) + ref_ends[1][0] * t,
                ref_ends[0][1] * (1.0 - t) + ref_ends[1][1] * t,
            ];
            let b = eval_basis(space.kind, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
            let scale = -pval * w * be.length;
            for &(lb, s) in &dofs {
                for c in 0..2 {
                    out[space.global_dof(c, s)] += scale * be.normal[c] * b.values[lb];
                }
            }
        }
    }
    Ok(out)
}

/// Volume load `(f, v)` for a vector field.
pub fn assemble_vector_load(
    space: &FeSpace,
    f: &dyn Fn([f64; 2]) -> [f64; 2],
    degree: usize,
) -> Vec<f64> {
    assert_eq!(space.components, 2);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut out = vec![0.0; space.n_dofs()];
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let fv = f(x);
            let scale = w * geo.detj;
            for l in 0..nb {
                let bv = table[q].values[l];
                for c in 0..2 {
                    out[space.global_dof(c, dofs[l])] += scale * bv * fv[c];
                }
            }
        }
    }
    out
}

/// Volume load `(f, q)` for a scalar field.
pub fn assemble_scalar_load(
    space: &FeSpace,
    f: &dyn Fn([f64; 2]) -> f64,
    degree: usize,
) -> Vec<f64> {
    assert_eq!(space.components, 1);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut out = vec![0.0; space.n_dofs()];
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let fv = f(x);
            let scale = w * geo.detj;
            for l in 0..nb {
                out[dofs[l]] += scale * table[q].values[l] * fv;
            }
        }
    }
    out
}

/// Load `a_f(u, v) = 2 mu (D(u), D(v))` for an analytic `u` given its
/// gradient `grad[c][d] = d u_c / d x_d`.
pub fn assemble_af_load(
    space: &FeSpace,
    grad: &dyn Fn([f64; 2]) -> [[f64; 2]; 2],
    mu: f64,
    degree: usize,
) -> Vec<f64> {
    assert_eq!(space.components, 2);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut out = vec![0.0; space.n_dofs()];
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let g = grad(x);
            let d = [
                [g[0][0], 0.5 * (g[0][1] + g[1][0])],
                [0.5 * (g[0][1] + g[1][0]), g[1][1]],
            ];
            let scale = w * geo.detj * 2.0 * mu;
            for l in 0..nb {
                let gb = geo.phys_grad(table[q].gradients[l]);
                for c in 0..2 {
                    // D(phi e_c) : D(u) = grad(phi) . D(u)[c]
                    out[space.global_dof(c, dofs[l])] +=
                        scale * (gb[0] * d[c][0] + gb[1] * d[c][1]);
                }
            }
        }
    }
    out
}

/// Load `b(p, v) = (p, div v)` for an analytic pressure, over velocity DOFs.
pub fn assemble_bdiv_load_v(
    space: &FeSpace,
    p: &dyn Fn([f64; 2]) -> f64,
    degree: usize,
) -> Vec<f64> {
    assert_eq!(space.components, 2);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut out = vec![0.0; space.n_dofs()];
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let scale = w * geo.detj * p(x);
            for l in 0..nb {
                let gb = geo.phys_grad(table[q].gradients[l]);
                for c in 0..2 {
                    out[space.global_dof(c, dofs[l])] += scale * gb[c];
                }
            }
        }
    }
    out
}

/// Load `b(q, u) = (q, div u)` for an analytic velocity gradient, over
/// pressure DOFs.
pub fn assemble_div_load_q(
    space: &FeSpace,
    grad: &dyn Fn([f64; 2]) -> [[f64; 2]; 2],
    degree: usize,
) -> Vec<f64> {
    assert_eq!(space.components, 1);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut out = vec![0.0; space.n_dofs()];
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let g = grad(x);
            let scale = w * geo.detj * (g[0][0] + g[1][1]);
            for l in 0..nb {
                out[dofs[l]] += scale * table[q].values[l];
            }
        }
    }
    out
}

/// Interface load `(g, w)_Sigma` for an analytic vector field on Sigma.
pub fn assemble_trace_load(tr: &TraceSpace, g: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let rule = edge_rule();
    let mut out = vec![0.0; tr.n_dofs()];
    for edge in &tr.edges {
        let geo = ElementGeometry::new(&tr.mesh, edge.tri);
        for (t, w) in rule.edge_params() {
            let xref = [
                edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
            ];
            let b = eval_basis(tr.kind, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
            let x = geo.to_physical(xref);
            let gv = g(x);
            let scale = w * edge.length;
            for &(lb, ts) in &edge.dofs {
                for c in 0..2 {
                    out[c * tr.n_scalar + ts] += scale * b.values[lb] * gv[c];
                }
            }
        }
    }
    out
}

/// Interface load `a_s(g, w)` for an analytic field with tangential
/// derivative `dgdx`.
pub fn assemble_trace_as_load(
    tr: &TraceSpace,
    g: &dyn Fn([f64; 2]) -> [f64; 2],
    dgdx: &dyn Fn([f64; 2]) -> [f64; 2],
    c0: f64,
    c1: f64,
) -> Vec<f64> {
    let rule = edge_rule();
    let mut out = vec![0.0; tr.n_dofs()];
    for edge in &tr.edges {
        let geo = ElementGeometry::new(&tr.mesh, edge.tri);
        for (t, w) in rule.edge_params() {
            let xref = [
                edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
            ];
            let b = eval_basis(tr.kind, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
            let x = geo.to_physical(xref);
            let gv = g(x);
            let dgv = dgdx(x);
            let scale = w * edge.length;
            for &(lb, ts) in &edge.dofs {
                let gb = geo.phys_grad(b.gradients[lb]);
                let db = gb[0] * edge.tangent[0] + gb[1] * edge.tangent[1];
                for c in 0..2 {
                    out[c * tr.n_scalar + ts] +=
                        scale * (c0 * db * dgv[c] + c1 * b.values[lb] * gv[c]);
                }
            }
        }
    }
    out
}

/// Integral of each basis function (for mean-value gauges) on a scalar
/// space.
pub fn assemble_integral_vector(space: &FeSpace) -> Vec<f64> {
    assert_eq!(space.components, 1);
    assemble_scalar_load(space, &|_| 1.0, space.kind.degree())
}

/// `|u_h - f|_{L2(Omega)}` for a vector FE field against an analytic field.
pub fn l2_error_vector(
    space: &FeSpace,
    coeffs: &[f64],
    f: &dyn Fn([f64; 2]) -> [f64; 2],
    degree: usize,
) -> f64 {
    assert_eq!(space.components, 2);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut err2 = 0.0;
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let fv = f(x);
            let mut val = [0.0f64; 2];
            for l in 0..nb {
                let bv = table[q].values[l];
                for c in 0..2 {
                    val[c] += coeffs[space.global_dof(c, dofs[l])] * bv;
                }
            }
            let d = [val[0] - fv[0], val[1] - fv[1]];
            err2 += w * geo.detj * (d[0] * d[0] + d[1] * d[1]);
        }
    }
    err2.sqrt()
}

/// `|u_h - f|_{H1(Omega)}` seminorm-plus-L2 error for a vector FE field.
pub fn h1_error_vector(
    space: &FeSpace,
    coeffs: &[f64],
    f: &dyn Fn([f64; 2]) -> [f64; 2],
    grad: &dyn Fn([f64; 2]) -> [[f64; 2]; 2],
    degree: usize,
) -> f64 {
    assert_eq!(space.components, 2);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut err2 = 0.0;
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let fv = f(x);
            let gv = grad(x);
            let mut val = [0.0f64; 2];
            let mut gval = [[0.0f64; 2]; 2];
            for l in 0..nb {
                let bv = table[q].values[l];
                let gb = geo.phys_grad(table[q].gradients[l]);
                for c in 0..2 {
                    let wc = coeffs[space.global_dof(c, dofs[l])];
                    val[c] += wc * bv;
                    gval[c][0] += wc * gb[0];
                    gval[c][1] += wc * gb[1];
                }
            }
            let mut local = 0.0;
            for c in 0..2 {
                local += (val[c] - fv[c]) * (val[c] - fv[c]);
                for d in 0..2 {
                    local += (gval[c][d] - gv[c][d]) * (gval[c][d] - gv[c][d]);
                }
            }
            err2 += w * geo.detj * local;
        }
    }
    err2.sqrt()
}

/// `|p_h - f|_{L2(Omega)}` for a scalar FE field.
pub fn l2_error_scalar(
    space: &FeSpace,
    coeffs: &[f64],
    f: &dyn Fn([f64; 2]) -> f64,
    degree: usize,
) -> f64 {
    assert_eq!(space.components, 1);
    let rule = tri_rule_exact(degree);
    let table = basis_table(space.kind, &rule);
    let nb = space.kind.n_basis();
    let mut err2 = 0.0;
    for tri in 0..space.mesh.triangles.len() {
        let geo = ElementGeometry::new(&space.mesh, tri);
        let dofs = space.cell_scalar_dofs(tri);
        for (q, w) in rule.weights.iter().enumerate() {
            let x = geo.to_physical([rule.points[q][1], rule.points[q][2]]);
            let mut val = 0.0;
            for l in 0..nb {
                val += coeffs[dofs[l]] * table[q].values[l];
            }
            let d = val - f(x);
            err2 += w * geo.detj * d * d;
        }
    }
    err2.sqrt()
}

/// `|w_h - g|_{L2(Sigma)}` for a trace field.
pub fn trace_l2_error(tr: &TraceSpace, coeffs: &[f64], g: &dyn Fn([f64; 2]) -> [f64; 2]) -> f64 {
    let rule = edge_rule();
    let mut err2 = 0.0;
    for (e, edge) in tr.edges.iter().enumerate() {
        let geo = ElementGeometry::new(&tr.mesh, edge.tri);
        for (t, w) in rule.edge_params() {
            let (val, _) = tr.eval(e, t, coeffs);
            let xref = [
                edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
            ];
            let gv = g(geo.to_physical(xref));
            let d = [val[0] - gv[0], val[1] - gv[1]];
            err2 += w * edge.length * (d[0] * d[0] + d[1] * d[1]);
        }
    }
    err2.sqrt()
}

/// Structure energy-norm error `sqrt(a_s(e, e))` of a trace field against an
/// analytic field with tangential derivative `dgdx`.
pub fn trace_energy_error(
    tr: &TraceSpace,
    coeffs: &[f64],
    g: &dyn Fn([f64; 2]) -> [f64; 2],
    dgdx: &dyn Fn([f64; 2]) -> [f64; 2],
    c0: f64,
    c1: f64,
) -> f64 {
    let rule = edge_rule();
    let mut err2 = 0.0;
    for (e, edge) in tr.edges.iter().enumerate() {
        let geo = ElementGeometry::new(&tr.mesh, edge.tri);
        for (t, w) in rule.edge_params() {
            let (val, dval) = tr.eval(e, t, coeffs);
            let xref = [
                edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
            ];
            let x = geo.to_physical(xref);
            let gv = g(x);
            let dgv = dgdx(x);
            let mut local = 0.0;
            for c in 0..2 {
                let d = val[c] - gv[c];
                let dd = dval[c] - dgv[c];
                local += c0 * dd * dd + c1 * d * d;
            }
            err2 += w * edge.length * local;
        }
    }
    err2.sqrt()
}

/// `H1(Sigma)` norm of an FE trace field (values plus tangential
/// derivatives).
pub fn trace_h1_norm(tr: &TraceSpace, coeffs: &[f64]) -> f64 {
    trace_energy_error(tr, coeffs, &|_| [0.0; 2], &|_| [0.0; 2], 1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_space;
    use crate::mesh::Mesh;
    use crate::util::dot;
    use std::sync::Arc;

    fn unit_square() -> Arc<Mesh> {
        Arc::new(Mesh::build_rect_mesh(1, 1, 1.0, 1.0, false).unwrap())
    }

    fn grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Arc<Mesh> {
        Arc::new(Mesh::build_rect_mesh(nx, ny, lx, ly, false).unwrap())
    }

    #[test]
    fn af_vanishes_on_rigid_motions() {
        let mesh = grid(3, 2, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let af = assemble_af(&v, 1.0);
        let translation = v.interpolate(&|_p, c| if c == 0 { 1.0 } else { 0.0 });
        assert!(af.bilinear(&translation, &translation).abs() < 1e-12);
        let rotation = v.interpolate(&|p, c| if c == 0 { -p[1] } else { p[0] });
        assert!(af.bilinear(&rotation, &rotation).abs() < 1e-12);
    }

    #[test]
    fn af_element_matrix_matches_symbolic_p1() {
        // On the reference triangle with mu = 1 the P1 gradients are
        // constant, so each entry is area times a closed-form expression.
        let mesh = Arc::new(Mesh::single_reference_triangle());
        let v = build_space(&mesh, ElementKind::P1, 2, &[]).unwrap();
        let af = assemble_af(&v, 1.0);
        let grads = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let area = 0.5;
        for c in 0..2 {
            for d in 0..2 {
                for i in 0..3 {
                    for j in 0..3 {
                        let dotg = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                        let mut expect = grads[i][d] * grads[j][c];
                        if c == d {
                            expect += dotg;
                        }
                        expect *= area;
                        let got = af.get(v.global_dof(c, i), v.global_dof(d, j));
                        assert!(
                            (got - expect).abs() < 1e-14,
                            "entry ({c},{i})x({d},{j}): {got} vs {expect}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn b_form_on_linear_field_gives_area() {
        // v = (x, 0) on [0,1]^2, q = 1: b(q, v) = int div v = 1.
        let mesh = grid(2, 2, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let b = assemble_b(&v, &q);
        let vf = v.interpolate(&|p, c| if c == 0 { p[0] } else { 0.0 });
        let ones = vec![1.0; q.n_dofs()];
        assert!((b.bilinear(&vf, &ones) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn b_vanishes_on_divergence_free_interpolant() {
        let mesh = grid(3, 3, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let b = assemble_b(&v, &q);
        let vf = v.interpolate(&|p, c| if c == 0 { p[1] } else { 0.0 });
        let bt_v = b.transpose_matvec(&vf);
        for (j, val) in bt_v.iter().enumerate() {
            assert!(val.abs() < 1e-12, "pressure dof {j}: {val}");
        }
    }

    #[test]
    fn discrete_divergence_theorem() {
        // For q = 1: b(1, v) equals the boundary integral of v . n.
        let mesh = grid(3, 2, 2.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let b = assemble_b(&v, &q);
        let vf = v.interpolate(&|p, c| {
            if c == 0 {
                0.3 * p[0] * p[0] - p[1]
            } else {
                p[0] * p[1] + 0.5
            }
        });
        let ones = vec![1.0; q.n_dofs()];
        let lhs = b.bilinear(&vf, &ones);
        let rule = edge_rule();
        let mut rhs = 0.0;
        for be in &mesh.boundary_edges {
            let (dofs, ref_ends) = edge_dofs_on(&v, be);
            for (t, w) in rule.edge_params() {
                let xref = [
                    ref_ends[0][0] * (1.0 - t) + ref_ends[1][0] * t,
                    ref_ends[0][1] * (1.0 - t) + ref_ends[1][1] * t,
                ];
                let bv = eval_basis(v.kind, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
                let mut val = [0.0f64; 2];
                for &(lb, s) in &dofs {
                    for c in 0..2 {
                        val[c] += vf[v.global_dof(c, s)] * bv.values[lb];
                    }
                }
                rhs += w * be.length * (val[0] * be.normal[0] + val[1] * be.normal[1]);
            }
        }
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn as_constants_and_mass() {
        let mesh = grid(4, 2, 2.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let tr = &v.trace;
        let a = assemble_as(tr, 1.0, 0.0).unwrap();
        let c = vec![1.0; tr.n_dofs()];
        assert!(a.bilinear(&c, &c).abs() < 1e-12);
        let m = assemble_as(tr, 0.0, 1.0).unwrap();
        let total_len = tr.total_length();
        let mut cvec = vec![0.0; tr.n_dofs()];
        for i in 0..tr.n_scalar {
            cvec[i] = 2.0;
            cvec[tr.n_scalar + i] = -1.0;
        }
        let expect = total_len * (4.0 + 1.0);
        assert!((m.bilinear(&cvec, &cvec) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn as_rejects_invalid_coefficients() {
        let mesh = unit_square();
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        assert!(assemble_as(&v.trace, 0.0, 0.0).is_err());
        assert!(assemble_as(&v.trace, -1.0, 1.0).is_err());
    }

    /// Interpolate an analytic vector field on the trace space by nodal
    /// values.
    fn interp_trace(v: &FeSpace, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let tr = &v.trace;
        let mut out = vec![0.0; tr.n_dofs()];
        for (ts, &p) in tr.dof_point.iter().enumerate() {
            let val = f(p);
            out[ts] = val[0];
            out[tr.n_scalar + ts] = val[1];
        }
        out
    }

    #[test]
    fn as_converges_to_analytic_energy() {
        // eta = (0, sin(pi x)) on Sigma of [0,2] x [0,1], C0 = C1 = 1:
        // per Sigma component: int_0^2 pi^2 cos^2(pi x) + sin^2(pi x) dx
        // = pi^2 + 1.
        let mut errs = Vec::new();
        for m in [8usize, 16] {
            let mesh = grid(2 * m, m, 2.0, 1.0);
            let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
            let a = assemble_as(&v.trace, 1.0, 1.0).unwrap();
            let eta = interp_trace(&v, &|p| [0.0, (std::f64::consts::PI * p[0]).sin()]);
            let got = a.bilinear(&eta, &eta);
            let expect = 2.0 * (std::f64::consts::PI.powi(2) + 1.0);
            errs.push((got - expect).abs());
        }
        assert!(errs[1] < errs[0] / 12.0, "errors {errs:?}");
    }

    #[test]
    fn traction_of_constant_pressure_is_minus_normal() {
        let mesh = grid(3, 2, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let op = traction_trace(&v, &q, 1.0);
        let u0 = vec![0.0; v.n_dofs()];
        let p1 = vec![1.0; q.n_dofs()];
        let tr = op.eval(&u0, &p1);
        let mut k = 0;
        for edge in &op.edges {
            for _ in &edge.qpoints {
                assert!((tr[k][0] + edge.normal[0]).abs() < 1e-14);
                assert!((tr[k][1] + edge.normal[1]).abs() < 1e-14);
                k += 1;
            }
        }
    }

    #[test]
    fn traction_of_linear_shear() {
        // v = (y, 0), q = 0, mu = 1: on the top edge 2 mu D(v) n = (1, 0).
        let mesh = grid(2, 2, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let op = traction_trace(&v, &q, 1.0);
        let shear = v.interpolate(&|p, c| if c == 0 { p[1] } else { 0.0 });
        let p0 = vec![0.0; q.n_dofs()];
        let tr = op.eval(&shear, &p0);
        let mut k = 0;
        for edge in &op.edges {
            for _ in &edge.qpoints {
                if edge.tag == BoundaryTag::SigmaTop {
                    assert!((tr[k][0] - 1.0).abs() < 1e-13 && tr[k][1].abs() < 1e-13);
                }
                k += 1;
            }
        }
        let z = op.eval(&vec![0.0; v.n_dofs()], &p0);
        assert!(z.iter().all(|t| t[0] == 0.0 && t[1] == 0.0));
    }

    #[test]
    fn gram_quadratic_form_of_constant_pressure_is_interface_length() {
        let mesh = grid(4, 2, 2.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let op = traction_trace(&v, &q, 1.0);
        let k = assemble_traction_couplings(&op);
        let mut sys = vec![0.0; op.n_sys()];
        for j in 0..q.n_dofs() {
            sys[op.n_u() + j] = 1.0;
        }
        let got = k.k_sigsig.bilinear(&sys, &sys);
        let expect = v.trace.total_length();
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
    }

    #[test]
    fn gram_is_positive_semidefinite_on_random_vectors() {
        use rand::prelude::*;
        let mesh = grid(3, 2, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let op = traction_trace(&v, &q, 0.7);
        let k = assemble_traction_couplings(&op);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: Vec<f64> = (0..op.n_sys()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(k.k_sigsig.bilinear(&x, &x) >= -1e-12);
        }
    }

    #[test]
    fn k_wsig_matches_brute_force_quadrature() {
        use rand::prelude::*;
        let mesh = grid(3, 2, 1.5, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        let op = traction_trace(&v, &q, 1.3);
        let k = assemble_traction_couplings(&op);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let w: Vec<f64> = (0..v.trace.n_dofs())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let uv: Vec<f64> = (0..v.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pv: Vec<f64> = (0..q.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut sys = vec![0.0; op.n_sys()];
            sys[..v.n_dofs()].copy_from_slice(&uv);
            sys[v.n_dofs()..].copy_from_slice(&pv);
            let kw = k.k_wsig.matvec(&w);
            let assembled = dot(&sys, &kw);
            // Brute force: pointwise w . sigma(v, q) n over the edge rule.
            let tractions = op.eval(&uv, &pv);
            let wvals = op.eval_trace_field(&w);
            let brute = op.dot_sigma(&wvals, &tractions);
            assert!(
                (assembled - brute).abs() < 1e-12 * brute.abs().max(1.0),
                "{assembled} vs {brute}"
            );
        }
    }

    #[test]
    fn boundary_pressure_load_inward_push() {
        // pval = 1 on the left side of the unit square with v = (1, 0):
        // load . v = -1 * (n . v) * |side| = 1.
        let mesh = unit_square();
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let load = assemble_boundary_pressure_load(&v, BoundaryTag::SigmaLeft, 1.0).unwrap();
        let vf = v.interpolate(&|_p, c| if c == 0 { 1.0 } else { 0.0 });
        assert!((dot(&load, &vf) - 1.0).abs() < 1e-13);
        let load2 = assemble_boundary_pressure_load(&v, BoundaryTag::SigmaLeft, 2.0).unwrap();
        for (a, b) in load.iter().zip(&load2) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
        let z = assemble_boundary_pressure_load(&v, BoundaryTag::SigmaRight, 0.0).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn korn_positive_definite_af_plus_mass() {
        // Dense Cholesky of a_f + mass succeeds only if positive definite.
        let mesh = grid(2, 2, 1.0, 1.0);
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let a =
            SparseMatrix::scaled_sum(&[(1.0, &assemble_af(&v, 1.0)), (1.0, &assemble_mass(&v))])
                .unwrap();
        let n = a.nrows();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, j, val) in a.iter() {
            dense[i][j] += val;
        }
        for k in 0..n {
            let mut d = dense[k][k];
            for j in 0..k {
                d -= dense[k][j] * dense[k][j];
            }
            assert!(d > 0.0, "pivot {k} is {d}");
            let d = d.sqrt();
            dense[k][k] = d;
            for i in k + 1..n {
                let mut s = dense[i][k];
                for j in 0..k {
                    s -= dense[i][j] * dense[k][j];
                }
                dense[i][k] = s / d;
            }
        }
    }

    #[test]
    fn traction_inverse_estimate_scaling() {
        // |sigma(v,q) n|_Sigma <= C h^{-1/2} (|v|_H1 + |q|): the worst
        // observed ratio grows no faster than sqrt(2) per halving (with
        // slack).
        use rand::prelude::*;
        let mut worst = Vec::new();
        for m in [4usize, 8] {
            let mesh = grid(2 * m, m, 2.0, 1.0);
            let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
            let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
            let op = traction_trace(&v, &q, 1.0);
            let af = assemble_af(&v, 0.5);
            let mv = assemble_mass(&v);
            let mq = assemble_mass(&q);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
            let mut w: f64 = 0.0;
            for _ in 0..40 {
                let uv: Vec<f64> = (0..v.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let pv: Vec<f64> = (0..q.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t = op.eval(&uv, &pv);
                let num = op.norm2_sigma(&t).sqrt();
                let den = (af.bilinear(&uv, &uv) + mv.bilinear(&uv, &uv)).sqrt()
                    + mq.bilinear(&pv, &pv).sqrt();
                w = w.max(num / den);
            }
            worst.push(w);
        }
        assert!(
            worst[1] / worst[0] < 1.8,
            "inverse-estimate ratio grew too fast: {worst:?}"
        );
    }
}
