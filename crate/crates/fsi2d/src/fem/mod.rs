//! Finite element spaces, DOF maps, reference bases and quadrature.

pub mod basis;
pub mod quad;
mod space;

pub use basis::{eval_basis, BasisEval, ElementKind};
pub use quad::{quad_rule, QuadDomain, QuadRule};
pub use space::{
    build_space, DirichletDof, FeSpace, SystemMap, SystemMatrixBuilder, TraceEdge, TraceSpace,
};

/// Affine geometry of one triangle: Jacobian, its inverse transpose and the
/// determinant (twice the area).
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub j: [[f64; 2]; 2],
    pub jinv_t: [[f64; 2]; 2],
    pub detj: f64,
    pub origin: [f64; 2],
}

impl ElementGeometry {
    pub fn new(mesh: &crate::mesh::Mesh, tri: usize) -> Self {
        let [p0, p1, p2] = mesh.triangle_points(tri);
        let j = [
            [p1[0] - p0[0], p2[0] - p0[0]],
            [p1[1] - p0[1], p2[1] - p0[1]],
        ];
        let detj = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv = [
            [j[1][1] / detj, -j[0][1] / detj],
            [-j[1][0] / detj, j[0][0] / detj],
        ];
        // Inverse transpose maps reference gradients to physical gradients.
        let jinv_t = [[inv[0][0], inv[1][0]], [inv[0][1], inv[1][1]]];
        ElementGeometry {
            j,
            jinv_t,
            detj,
            origin: p0,
        }
    }

    /// Map reference coordinates to physical coordinates.
    pub fn to_physical(&self, xref: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.j[0][0] * xref[0] + self.j[0][1] * xref[1],
            self.origin[1] + self.j[1][0] * xref[0] + self.j[1][1] * xref[1],
        ]
    }

    /// Map a reference gradient to a physical gradient.
    pub fn phys_grad(&self, gref: [f64; 2]) -> [f64; 2] {
        [
            self.jinv_t[0][0] * gref[0] + self.jinv_t[0][1] * gref[1],
            self.jinv_t[1][0] * gref[0] + self.jinv_t[1][1] * gref[1],
        ]
    }
}
