//! Finite element spaces with periodic DOF identification, Dirichlet
//! constraint bookkeeping and the interface trace space.
//!
//! Scalar DOFs are numbered vertices first, then edges (P2), then cell
//! bubbles (MINI), with left/right entities merged in periodic mode.
//! Vector DOF ordering is component-major: the global index of component
//! `c` of scalar DOF `i` is `c * n_scalar + i`.

use std::collections::HashMap;
use std::sync::Arc;

use super::basis::{eval_basis, ElementKind};
use super::ElementGeometry;
use crate::linalg::SparseMatrix;
use crate::mesh::{BoundaryTag, Mesh};
use crate::{Error, Result};

/// A Dirichlet-constrained global DOF with its nodal point and component,
/// so that any boundary-value provider can be evaluated for it.
#[derive(Debug, Clone)]
pub struct DirichletDof {
    pub dof: usize,
    pub point: [f64; 2],
    pub component: usize,
}

/// One interface edge of the trace space, with everything needed to
/// evaluate traces and tractions one-sided from the owning triangle.
#[derive(Debug, Clone)]
pub struct TraceEdge {
    pub tri: usize,
    pub tag: BoundaryTag,
    pub normal: [f64; 2],
    pub tangent: [f64; 2],
    pub length: f64,
    /// Reference coordinates (in the owning triangle) of the two endpoints.
    pub ref_ends: [[f64; 2]; 2],
    /// Physical endpoints.
    pub ends: [[f64; 2]; 2],
    /// `(local basis index in owner, trace scalar index)` for each scalar
    /// DOF living on this edge, endpoints first.
    pub dofs: Vec<(usize, usize)>,
}

/// The trace space `S_h` on the interface: the restriction of the velocity
/// space to the top/bottom boundary, with its own scalar numbering.
/// Vector trace DOFs are component-major like the parent space.
#[derive(Debug, Clone)]
pub struct TraceSpace {
    pub mesh: Arc<Mesh>,
    pub kind: ElementKind,
    pub n_scalar: usize,
    /// Trace scalar DOF -> parent-space scalar DOF.
    pub scalar_to_space: Vec<usize>,
    pub dof_point: Vec<[f64; 2]>,
    pub edges: Vec<TraceEdge>,
}

impl TraceSpace {
    pub fn n_dofs(&self) -> usize {
        2 * self.n_scalar
    }

    /// Total interface length.
    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// Evaluate a trace field (coefficients over `n_dofs`) at parameter
    /// `t in [0,1]` along edge `e`. Returns `(value, tangential derivative)`.
    pub fn eval(&self, e: usize, t: f64, coeffs: &[f64]) -> ([f64; 2], [f64; 2]) {
        let edge = &self.edges[e];
        let xref = [
            edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
            edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
        ];
        let b = eval_basis(self.kind, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
        let geo = ElementGeometry::new(&self.mesh, edge.tri);
        let mut val = [0.0f64; 2];
        let mut dval = [0.0f64; 2];
        for &(lb, ts) in &edge.dofs {
            let g = geo.phys_grad(b.gradients[lb]);
            let dtang = g[0] * edge.tangent[0] + g[1] * edge.tangent[1];
            for c in 0..2 {
                let w = coeffs[c * self.n_scalar + ts];
                val[c] += w * b.values[lb];
                dval[c] += w * dtang;
            }
        }
        (val, dval)
    }

    /// Restrict a parent-space coefficient vector to trace coefficients.
    pub fn restrict(&self, space: &FeSpace, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), space.n_dofs());
        let mut out = vec![0.0; self.n_dofs()];
        for (ts, &ss) in self.scalar_to_space.iter().enumerate() {
            for c in 0..2 {
                out[c * self.n_scalar + ts] = coeffs[c * space.n_scalar + ss];
            }
        }
        out
    }

    /// Scatter trace coefficients into a zero parent-space vector (the
    /// discrete extension that sets interface DOFs and zeroes the interior).
    pub fn extend_by_zero(&self, space: &FeSpace, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_dofs());
        let mut out = vec![0.0; space.n_dofs()];
        for (ts, &ss) in self.scalar_to_space.iter().enumerate() {
            for c in 0..2 {
                out[c * space.n_scalar + ss] = coeffs[c * self.n_scalar + ts];
            }
        }
        out
    }

    /// Parent-space global DOFs (component-major) of the trace DOFs.
    pub fn space_dofs(&self, space: &FeSpace) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_dofs());
        for c in 0..2 {
            for &ss in &self.scalar_to_space {
                out.push(c * space.n_scalar + ss);
            }
        }
        out
    }
}

/// A finite element space over a shared mesh.
#[derive(Debug, Clone)]
pub struct FeSpace {
    pub mesh: Arc<Mesh>,
    pub kind: ElementKind,
    pub components: usize,
    pub n_scalar: usize,
    /// Scalar DOF ids per triangle, in local basis order.
    cell_dofs: Vec<Vec<usize>>,
    /// Nodal point of each scalar DOF (barycenter for bubbles).
    pub dof_point: Vec<[f64; 2]>,
    /// Scalar DOF of each mesh vertex (periodic vertices share a DOF).
    pub vertex_dof: Vec<usize>,
    pub dirichlet: Vec<DirichletDof>,
    pub trace: TraceSpace,
}

impl FeSpace {
    pub fn n_dofs(&self) -> usize {
        self.components * self.n_scalar
    }

    pub fn cell_scalar_dofs(&self, tri: usize) -> &[usize] {
        &self.cell_dofs[tri]
    }

    /// Global DOF of component `c` of scalar DOF `s`.
    pub fn global_dof(&self, c: usize, s: usize) -> usize {
        c * self.n_scalar + s
    }

    /// Nodal interpolation. `f(point, component)` supplies nodal values;
    /// bubble coefficients are set so the interpolant matches `f` at the
    /// barycenter.
    pub fn interpolate(&self, f: &dyn Fn([f64; 2], usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        let n_nodal = match self.kind {
            ElementKind::P1 | ElementKind::P1Bubble => 3,
            ElementKind::P2 => 6,
        };
        for tri in 0..self.mesh.triangles.len() {
            let dofs = &self.cell_dofs[tri];
            for &s in dofs.iter().take(n_nodal) {
                for c in 0..self.components {
                    out[self.global_dof(c, s)] = f(self.dof_point[s], c);
                }
            }
            if self.kind == ElementKind::P1Bubble {
                let geo = ElementGeometry::new(&self.mesh, tri);
                let bary_pt = geo.to_physical([1.0 / 3.0, 1.0 / 3.0]);
                for c in 0..self.components {
                    let nodal_mean = (0..3)
                        .map(|l| f(self.dof_point[dofs[l]], c))
                        .sum::<f64>()
                        / 3.0;
                    out[self.global_dof(c, dofs[3])] = f(bary_pt, c) - nodal_mean;
                }
            }
        }
        out
    }

    /// Evaluate all components of a coefficient vector at a point of a
    /// triangle given by barycentric coordinates.
    pub fn eval(&self, coeffs: &[f64], tri: usize, bary: [f64; 3]) -> Vec<f64> {
        let b = eval_basis(self.kind, bary);
        let dofs = &self.cell_dofs[tri];
        let mut out = vec![0.0; self.components];
        for c in 0..self.components {
            for (l, &s) in dofs.iter().enumerate() {
                out[c] += coeffs[self.global_dof(c, s)] * b.values[l];
            }
        }
        out
    }

    /// Physical gradient of each component at a point: `out[c][d] = d u_c / d x_d`.
    pub fn eval_gradient(&self, coeffs: &[f64], tri: usize, bary: [f64; 3]) -> Vec<[f64; 2]> {
        let b = eval_basis(self.kind, bary);
        let geo = ElementGeometry::new(&self.mesh, tri);
        let dofs = &self.cell_dofs[tri];
        let mut out = vec![[0.0; 2]; self.components];
        for (l, &s) in dofs.iter().enumerate() {
            let g = geo.phys_grad(b.gradients[l]);
            for c in 0..self.components {
                let w = coeffs[self.global_dof(c, s)];
                out[c][0] += w * g[0];
                out[c][1] += w * g[1];
            }
        }
        out
    }
}

/// Build a space over `mesh`. `dirichlet_tags` lists the sides carrying
/// strong constraints; interface tags are rejected since the interface
/// carries the coupling.
pub fn build_space(
    mesh: &Arc<Mesh>,
    kind: ElementKind,
    components: usize,
    dirichlet_tags: &[BoundaryTag],
) -> Result<FeSpace> {
    if !(components == 1 || components == 2) {
        return Err(Error::InvalidArgument(format!(
            "components must be 1 or 2, got {components}"
        )));
    }
    for t in dirichlet_tags {
        if t.is_interface() {
            return Err(Error::InvalidArgument(
                "Dirichlet constraints on interface tags are not allowed; \
                 the interface carries the coupling"
                    .into(),
            ));
        }
    }
    if mesh.is_periodic()
        && dirichlet_tags
            .iter()
            .any(|t| matches!(t, BoundaryTag::SigmaLeft | BoundaryTag::SigmaRight))
    {
        return Err(Error::InvalidArgument(
            "cannot combine periodic identification with Dirichlet side constraints".into(),
        ));
    }

    // Vertex representative map for periodic identification.
    let nv = mesh.vertices.len();
    let mut rep: Vec<usize> = (0..nv).collect();
    for &(l, r) in &mesh.periodic_pairs {
        rep[r] = l;
    }

    let mut vertex_dof = vec![usize::MAX; nv];
    let mut n_scalar = 0usize;
    for v in 0..nv {
        if rep[v] == v {
            vertex_dof[v] = n_scalar;
            n_scalar += 1;
        }
    }
    for v in 0..nv {
        if rep[v] != v {
            vertex_dof[v] = vertex_dof[rep[v]];
        }
    }

    let mut dof_point: Vec<[f64; 2]> = Vec::new();
    dof_point.resize(n_scalar, [0.0; 2]);
    for v in 0..nv {
        if rep[v] == v {
            dof_point[vertex_dof[v]] = mesh.vertices[v];
        }
    }

    // Edge DOFs (P2), numbered first-seen over triangles; periodic merging
    // happens through the representative-mapped key.
    let mut edge_dof: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edge_owners: HashMap<(usize, usize), usize> = HashMap::new();
    let mut cell_dofs: Vec<Vec<usize>> = Vec::with_capacity(mesh.triangles.len());
    for tri in &mesh.triangles {
        let mut dofs: Vec<usize> = tri.iter().map(|&v| vertex_dof[v]).collect();
        if kind.has_edge_dofs() {
            // Local edges opposite each vertex: (v1,v2), (v2,v0), (v0,v1).
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let (ra, rb) = (rep[a], rep[b]);
                let key = (ra.min(rb), ra.max(rb));
                let id = *edge_dof.entry(key).or_insert_with(|| {
                    let id = n_scalar;
                    n_scalar += 1;
                    dof_point.push([
                        0.5 * (mesh.vertices[a][0] + mesh.vertices[b][0]),
                        0.5 * (mesh.vertices[a][1] + mesh.vertices[b][1]),
                    ]);
                    id
                });
                *edge_owners.entry(key).or_insert(0) += 1;
                dofs.push(id);
            }
        }
        if kind.has_cell_dofs() {
            let id = n_scalar;
            n_scalar += 1;
            let pts = [
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            ];
            dof_point.push([
                (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
                (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
            ]);
            dofs.push(id);
        }
        cell_dofs.push(dofs);
    }
    if edge_owners.values().any(|&c| c > 2) {
        return Err(Error::InvalidArgument(
            "periodic identification collapsed distinct edges; the mesh is too \
             coarse in x for periodic mode (need at least 3 cells)"
                .into(),
        ));
    }

    // Trace space over the interface edges, in boundary-edge order.
    let mut tr_scalar_of: HashMap<usize, usize> = HashMap::new();
    let mut scalar_to_space = Vec::new();
    let mut tr_dof_point = Vec::new();
    let mut edges = Vec::new();
    for be in mesh
        .boundary_edges
        .iter()
        .filter(|e| e.tag.is_interface())
    {
        let tri = be.triangle;
        let tv = mesh.triangles[tri];
        let local_of = |v: usize| tv.iter().position(|&w| w == v).unwrap();
        let (la, lb) = (local_of(be.vertices[0]), local_of(be.vertices[1]));
        const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let p0 = mesh.vertices[be.vertices[0]];
        let p1 = mesh.vertices[be.vertices[1]];
        let tangent = [(p1[0] - p0[0]) / be.length, (p1[1] - p0[1]) / be.length];

        let mut tr_dofs: Vec<(usize, usize)> = Vec::new();
        let mut push = |local_basis: usize, space_scalar: usize, point: [f64; 2]| {
            let next = tr_scalar_of.len();
            let ts = *tr_scalar_of.entry(space_scalar).or_insert_with(|| {
                scalar_to_space.push(space_scalar);
                tr_dof_point.push(point);
                next
            });
            tr_dofs.push((local_basis, ts));
        };
        push(la, cell_dofs[tri][la], p0);
        push(lb, cell_dofs[tri][lb], p1);
        if kind.has_edge_dofs() {
            let lc = 3 - la - lb; // local vertex opposite the edge
            push(
                3 + lc,
                cell_dofs[tri][3 + lc],
                [0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1])],
            );
        }
        edges.push(TraceEdge {
            tri,
            tag: be.tag,
            normal: be.normal,
            tangent,
            length: be.length,
            ref_ends: [REF[la], REF[lb]],
            ends: [p0, p1],
            dofs: tr_dofs,
        });
    }
    let trace = TraceSpace {
        mesh: Arc::clone(mesh),
        kind,
        n_scalar: scalar_to_space.len(),
        scalar_to_space,
        dof_point: tr_dof_point,
        edges,
    };

    // Dirichlet DOFs per requested side, for every component.
    let mut side_scalars: Vec<usize> = Vec::new();
    for be in &mesh.boundary_edges {
        if !dirichlet_tags.contains(&be.tag) {
            continue;
        }
        side_scalars.push(vertex_dof[be.vertices[0]]);
        side_scalars.push(vertex_dof[be.vertices[1]]);
        if kind.has_edge_dofs() {
            let (ra, rb) = (rep[be.vertices[0]], rep[be.vertices[1]]);
            let key = (ra.min(rb), ra.max(rb));
            side_scalars.push(edge_dof[&key]);
        }
    }
    side_scalars.sort_unstable();
    side_scalars.dedup();
    let mut dirichlet = Vec::new();
    for c in 0..components {
        for &s in &side_scalars {
            dirichlet.push(DirichletDof {
                dof: c * n_scalar + s,
                point: dof_point[s],
                component: c,
            });
        }
    }

    Ok(FeSpace {
        mesh: Arc::clone(mesh),
        kind,
        components,
        n_scalar,
        cell_dofs,
        dof_point,
        vertex_dof,
        dirichlet,
        trace,
    })
}

/// Velocity DOF classification for a coupled `[u; p]` system after
/// Dirichlet elimination. Pressure DOFs are appended after the free
/// velocity DOFs and are never constrained.
#[derive(Debug, Clone)]
pub struct SystemMap {
    pub n_u: usize,
    pub n_p: usize,
    pub n_free_u: usize,
    /// Constrained velocity DOFs, sorted; position defines the ordering of
    /// boundary-value vectors.
    pub constrained: Vec<usize>,
    vel_sys: Vec<isize>, // free index, or -(k+1) for constrained slot k
}

impl SystemMap {
    pub fn new(n_u: usize, n_p: usize, constrained_dofs: &[usize]) -> Self {
        let mut constrained = constrained_dofs.to_vec();
        constrained.sort_unstable();
        constrained.dedup();
        let mut vel_sys = vec![0isize; n_u];
        for (k, &d) in constrained.iter().enumerate() {
            vel_sys[d] = -(k as isize + 1);
        }
        let mut n_free_u = 0;
        for d in 0..n_u {
            if vel_sys[d] >= 0 {
                vel_sys[d] = n_free_u as isize;
                n_free_u += 1;
            }
        }
        SystemMap {
            n_u,
            n_p,
            n_free_u,
            constrained,
            vel_sys,
        }
    }

    pub fn n_sys(&self) -> usize {
        self.n_free_u + self.n_p
    }

    /// System index of a velocity DOF, or `Err(slot)` if constrained.
    pub fn sys_of_vel(&self, dof: usize) -> std::result::Result<usize, usize> {
        let v = self.vel_sys[dof];
        if v >= 0 {
            Ok(v as usize)
        } else {
            Err((-v - 1) as usize)
        }
    }

    pub fn sys_of_p(&self, pdof: usize) -> usize {
        self.n_free_u + pdof
    }

    /// Gather `[u; p]` full vectors into a reduced system RHS, applying the
    /// boundary correction `- C g`.
    pub fn reduce_rhs(
        &self,
        rhs_u: &[f64],
        rhs_p: &[f64],
        coupling: &SparseMatrix,
        g: &[f64],
    ) -> Vec<f64> {
        assert_eq!(g.len(), self.constrained.len());
        let mut out = vec![0.0; self.n_sys()];
        for d in 0..self.n_u {
            if let Ok(i) = self.sys_of_vel(d) {
                out[i] = rhs_u[d];
            }
        }
        for j in 0..self.n_p {
            out[self.sys_of_p(j)] = rhs_p[j];
        }
        if !g.is_empty() {
            let cg = coupling.matvec(g);
            for (o, c) in out.iter_mut().zip(&cg) {
                *o -= c;
            }
        }
        out
    }

    /// Expand a system solution into full `(u, p)` vectors, filling
    /// constrained DOFs from `g`.
    pub fn expand(&self, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![0.0; self.n_u];
        for d in 0..self.n_u {
            match self.sys_of_vel(d) {
                Ok(i) => u[d] = x[i],
                Err(k) => u[d] = g[k],
            }
        }
        let p = x[self.n_free_u..].to_vec();
        (u, p)
    }
}

/// Accumulates coupled-system triplets in full `[u; p]` indexing and
/// produces the reduced matrix plus the Dirichlet coupling block.
pub struct SystemMatrixBuilder<'a> {
    pub map: &'a SystemMap,
    triplets: Vec<(usize, usize, f64)>,
    coupling: Vec<(usize, usize, f64)>,
}

impl<'a> SystemMatrixBuilder<'a> {
    pub fn new(map: &'a SystemMap) -> Self {
        SystemMatrixBuilder {
            map,
            triplets: Vec::new(),
            coupling: Vec::new(),
        }
    }

    /// Add `v` at velocity row `i`, velocity column `j`.
    pub fn add_uu(&mut self, i: usize, j: usize, v: f64) {
        if let Ok(r) = self.map.sys_of_vel(i) {
            match self.map.sys_of_vel(j) {
                Ok(c) => self.triplets.push((r, c, v)),
                Err(k) => self.coupling.push((r, k, v)),
            }
        }
    }

    /// Add `v` at velocity row `i`, pressure column `j`.
    pub fn add_up(&mut self, i: usize, j: usize, v: f64) {
        if let Ok(r) = self.map.sys_of_vel(i) {
            self.triplets.push((r, self.map.sys_of_p(j), v));
        }
    }

    /// Add `v` at pressure row `i`, velocity column `j`.
    pub fn add_pu(&mut self, i: usize, j: usize, v: f64) {
        let r = self.map.sys_of_p(i);
        match self.map.sys_of_vel(j) {
            Ok(c) => self.triplets.push((r, c, v)),
            Err(k) => self.coupling.push((r, k, v)),
        }
    }

    pub fn add_pp(&mut self, i: usize, j: usize, v: f64) {
        self.triplets
            .push((self.map.sys_of_p(i), self.map.sys_of_p(j), v));
    }

    /// Add a whole matrix acting between velocity DOFs, scaled.
    pub fn add_uu_matrix(&mut self, m: &SparseMatrix, scale: f64) {
        for (i, j, v) in m.iter() {
            self.add_uu(i, j, scale * v);
        }
    }

    /// Finish, returning `(A, C)` where `A` is the reduced system matrix and
    /// `C` the `n_sys x n_constrained` Dirichlet coupling block.
    pub fn finish(self) -> Result<(SparseMatrix, SparseMatrix)> {
        let n = self.map.n_sys();
        let a = SparseMatrix::from_triplets(n, n, &self.triplets)?;
        let c = SparseMatrix::from_triplets(n, self.map.constrained.len(), &self.coupling)?;
        Ok((a, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::quad::{quad_rule, QuadDomain};

    fn arc(m: Mesh) -> Arc<Mesh> {
        Arc::new(m)
    }

    #[test]
    fn p2_dof_count_on_two_cell_mesh() {
        let mesh = arc(Mesh::build_rect_mesh(2, 1, 1.0, 1.0, false).unwrap());
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        assert_eq!(v.n_dofs(), 30); // 2 * (6 vertices + 9 edges)
        let q = build_space(&mesh, ElementKind::P1, 1, &[]).unwrap();
        assert_eq!(q.n_dofs(), 6);
    }

    #[test]
    fn mini_dof_count_on_single_triangle() {
        let mesh = arc(Mesh::single_reference_triangle());
        let v = build_space(&mesh, ElementKind::P1Bubble, 2, &[]).unwrap();
        assert_eq!(v.n_dofs(), 8); // 2 * (3 vertices + 1 bubble)
    }

    #[test]
    fn periodic_identification_merges_side_dofs() {
        let mesh = arc(Mesh::build_rect_mesh(4, 2, 2.0, 1.0, true).unwrap());
        let v = build_space(&mesh, ElementKind::P2, 1, &[]).unwrap();
        // Non-periodic counts: 15 vertices, 4*3 + 5*2 + 8 = 30 edges.
        // Periodic merges 3 vertices and 2 vertical edges.
        let vp = build_space(
            &arc(Mesh::build_rect_mesh(4, 2, 2.0, 1.0, false).unwrap()),
            ElementKind::P2,
            1,
            &[],
        )
        .unwrap();
        assert_eq!(vp.n_scalar - v.n_scalar, 5);
    }

    #[test]
    fn dirichlet_on_interface_rejected() {
        let mesh = arc(Mesh::build_rect_mesh(2, 2, 1.0, 1.0, false).unwrap());
        let err = build_space(&mesh, ElementKind::P2, 2, &[BoundaryTag::SigmaTop]);
        assert!(err.is_err());
    }

    #[test]
    fn periodic_fields_match_at_paired_points() {
        let mesh = arc(Mesh::build_rect_mesh(8, 4, 2.0, 1.0, true).unwrap());
        let v = build_space(&mesh, ElementKind::P2, 2, &[]).unwrap();
        let coeffs = v.interpolate(&|p, c| {
            let k = if c == 0 { 1.0 } else { 2.0 };
            (k * std::f64::consts::PI * p[0]).sin() + p[1] * k
        });
        // Evaluate at (0, y) through a left triangle and (lx, y) through a
        // right triangle; values must agree because the DOFs are shared.
        // Left boundary of cell (0,1) upper triangle; param y in [0.25, 0.5].
        let left_val = v.eval(&coeffs, 1 + 2 * 8, [1.0 - 0.3, 0.0, 0.3]);
        // Right: lower triangle of cell (7,1): ref edge v10-v11 is x=1 edge.
        let right_val = v.eval(&coeffs, 2 * (8 + 7), [0.0, 1.0 - 0.3, 0.3]);
        // Those two points share y only by construction of the reference
        // edges; check the actual physical points coincide modulo lx.
        for c in 0..2 {
            assert!(
                (left_val[c] - right_val[c]).abs() < 1e-12,
                "component {c}: {left_val:?} vs {right_val:?}"
            );
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let mesh = arc(Mesh::build_rect_mesh(3, 2, 1.0, 1.0, false).unwrap());
        let cases: [(ElementKind, Box<dyn Fn([f64; 2], usize) -> f64>); 2] = [
            (
                ElementKind::P1,
                Box::new(|p: [f64; 2], _c: usize| 1.0 + 2.0 * p[0] - p[1]),
            ),
            (
                ElementKind::P2,
                Box::new(|p: [f64; 2], _c: usize| 0.5 + p[0] * p[1] - 3.0 * p[1] * p[1]),
            ),
        ];
        for (kind, f) in cases {
            let v = build_space(&mesh, kind, 1, &[]).unwrap();
            let coeffs = v.interpolate(f.as_ref());
            let rule = quad_rule(QuadDomain::Triangle, 4).unwrap();
            for tri in 0..mesh.triangles.len() {
                let geo = ElementGeometry::new(&mesh, tri);
                for pt in &rule.points {
                    let x = geo.to_physical([pt[1], pt[2]]);
                    let got = v.eval(&coeffs, tri, *pt)[0];
                    assert!((got - f(x, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_interpolation_has_zero_bubble() {
        let mesh = arc(Mesh::build_rect_mesh(2, 2, 1.0, 1.0, false).unwrap());
        let v = build_space(&mesh, ElementKind::P1Bubble, 2, &[]).unwrap();
        let coeffs = v.interpolate(&|_p, c| if c == 0 { 3.0 } else { -1.0 });
        for tri in 0..mesh.triangles.len() {
            let dofs = v.cell_scalar_dofs(tri);
            for c in 0..2 {
                assert_eq!(coeffs[v.global_dof(c, dofs[3])], 0.0);
            }
        }
    }

    #[test]
    fn trace_restriction_matches_volume_evaluation() {
        let mesh = arc(Mesh::build_rect_mesh(4, 2, 2.0, 1.0, false).unwrap());
        for kind in [ElementKind::P2, ElementKind::P1Bubble] {
            let v = build_space(&mesh, kind, 2, &[]).unwrap();
            let coeffs = v.interpolate(&|p, c| {
                (1.3 * p[0] + 0.4 * c as f64).sin() * (0.7 + p[1])
            });
            let tr_coeffs = v.trace.restrict(&v, &coeffs);
            let rule = quad_rule(QuadDomain::Edge, 9).unwrap();
            for (e, edge) in v.trace.edges.iter().enumerate() {
                for (t, _) in rule.edge_params() {
                    let (tr_val, _) = v.trace.eval(e, t, &tr_coeffs);
                    let xref = [
                        edge.ref_ends[0][0] * (1.0 - t) + edge.ref_ends[1][0] * t,
                        edge.ref_ends[0][1] * (1.0 - t) + edge.ref_ends[1][1] * t,
                    ];
                    let vol_val =
                        v.eval(&coeffs, edge.tri, [1.0 - xref[0] - xref[1], xref[0], xref[1]]);
                    for c in 0..2 {
                        assert!((tr_val[c] - vol_val[c]).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn bubble_dofs_never_in_trace() {
        let mesh = arc(Mesh::build_rect_mesh(3, 2, 1.0, 1.0, false).unwrap());
        let v = build_space(&mesh, ElementKind::P1Bubble, 2, &[]).unwrap();
        // Bubble scalar DOFs are those beyond the vertex block.
        let n_vertices_merged = mesh.vertices.len();
        for &s in &v.trace.scalar_to_space {
            assert!(s < n_vertices_merged, "bubble DOF {s} appeared in trace");
        }
    }

    #[test]
    fn interpolation_error_ratio_for_p2_is_cubic() {
        let f = |p: [f64; 2], _c: usize| (2.0 * std::f64::consts::PI * p[0]).sin();
        let mut errs = Vec::new();
        for m in [4usize, 8] {
            let mesh = arc(Mesh::build_rect_mesh(2 * m, m, 2.0, 1.0, false).unwrap());
            let v = build_space(&mesh, ElementKind::P2, 1, &[]).unwrap();
            let coeffs = v.interpolate(&f);
            let rule = quad_rule(QuadDomain::Triangle, 7).unwrap();
            let mut err2 = 0.0;
            for tri in 0..mesh.triangles.len() {
                let geo = ElementGeometry::new(&mesh, tri);
                for (pt, w) in rule.points.iter().zip(&rule.weights) {
                    let x = geo.to_physical([pt[1], pt[2]]);
                    let d = v.eval(&coeffs, tri, *pt)[0] - f(x, 0);
                    err2 += w * geo.detj * d * d;
                }
            }
            errs.push(err2.sqrt());
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (ratio - 8.0).abs() < 1.0,
            "expected ratio near 8, got {ratio}"
        );
    }

    #[test]
    fn system_map_partitions_dofs() {
        let map = SystemMap::new(10, 4, &[2, 7]);
        assert_eq!(map.n_free_u, 8);
        assert_eq!(map.n_sys(), 12);
        assert_eq!(map.sys_of_vel(2), Err(0));
        assert_eq!(map.sys_of_vel(7), Err(1));
        assert_eq!(map.sys_of_vel(0), Ok(0));
        assert_eq!(map.sys_of_vel(3), Ok(2));
        assert_eq!(map.sys_of_p(0), 8);
    }
}
