//! Reference-element basis functions.
//!
//! All elements live on the reference triangle with vertices
//! `(0,0), (1,0), (0,1)` and barycentric coordinates
//! `l1 = 1 - x - y, l2 = x, l3 = y`.
//!
//! Local DOF orderings:
//! - `P1`: `[v0, v1, v2]`
//! - `P2`: `[v0, v1, v2, e0, e1, e2]` where edge `e_i` is opposite vertex
//!   `v_i` (`e0 = (v1,v2)`, `e1 = (v2,v0)`, `e2 = (v0,v1)`)
//! - `P1Bubble`: `[v0, v1, v2, bubble]` with the cubic bubble `27 l1 l2 l3`

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    P1,
    P2,
    /// MINI velocity component: P1 enriched with the interior cubic bubble.
    P1Bubble,
}

impl ElementKind {
    /// Polynomial degree of the basis (the bubble is cubic).
    pub fn degree(self) -> usize {
        match self {
            ElementKind::P1 => 1,
            ElementKind::P2 => 2,
            ElementKind::P1Bubble => 3,
        }
    }

    /// Nodal degree reproduced exactly by interpolation.
    pub fn nodal_degree(self) -> usize {
        match self {
            ElementKind::P1 | ElementKind::P1Bubble => 1,
            ElementKind::P2 => 2,
        }
    }

    /// Scalar DOFs per triangle.
    pub fn n_basis(self) -> usize {
        match self {
            ElementKind::P1 => 3,
            ElementKind::P2 => 6,
            ElementKind::P1Bubble => 4,
        }
    }

    pub fn has_edge_dofs(self) -> bool {
        matches!(self, ElementKind::P2)
    }

    pub fn has_cell_dofs(self) -> bool {
        matches!(self, ElementKind::P1Bubble)
    }
}

/// Basis values and reference gradients at one point.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: [f64; 6],
    pub gradients: [[f64; 2]; 6],
    pub n: usize,
}

impl BasisEval {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.n]
    }

    pub fn gradients(&self) -> &[[f64; 2]] {
        &self.gradients[..self.n]
    }
}

/// Evaluate all basis functions of `kind` at barycentric coordinates `l`.
/// Gradients are with respect to the reference coordinates `(x, y)`.
pub fn eval_basis(kind: ElementKind, l: [f64; 3]) -> BasisEval {
    let [l1, l2, l3] = l;
    // Reference gradients of the barycentric coordinates.
    const G1: [f64; 2] = [-1.0, -1.0];
    const G2: [f64; 2] = [1.0, 0.0];
    const G3: [f64; 2] = [0.0, 1.0];
    let mut out = BasisEval {
        values: [0.0; 6],
        gradients: [[0.0; 2]; 6],
        n: kind.n_basis(),
    };
    match kind {
        ElementKind::P1 => {
            out.values[..3].copy_from_slice(&[l1, l2, l3]);
            out.gradients[..3].copy_from_slice(&[G1, G2, G3]);
        }
        ElementKind::P2 => {
            out.values[..6].copy_from_slice(&[
                l1 * (2.0 * l1 - 1.0),
                l2 * (2.0 * l2 - 1.0),
                l3 * (2.0 * l3 - 1.0),
                4.0 * l2 * l3,
                4.0 * l3 * l1,
                4.0 * l1 * l2,
            ]);
            let scale = |g: [f64; 2], s: f64| [g[0] * s, g[1] * s];
            let add = |a: [f64; 2], b: [f64; 2]| [a[0] + b[0], a[1] + b[1]];
            out.gradients[0] = scale(G1, 4.0 * l1 - 1.0);
            out.gradients[1] = scale(G2, 4.0 * l2 - 1.0);
            out.gradients[2] = scale(G3, 4.0 * l3 - 1.0);
            out.gradients[3] = add(scale(G2, 4.0 * l3), scale(G3, 4.0 * l2));
            out.gradients[4] = add(scale(G3, 4.0 * l1), scale(G1, 4.0 * l3));
            out.gradients[5] = add(scale(G1, 4.0 * l2), scale(G2, 4.0 * l1));
        }
        ElementKind::P1Bubble => {
            out.values[..4].copy_from_slice(&[l1, l2, l3, 27.0 * l1 * l2 * l3]);
            out.gradients[0] = G1;
            out.gradients[1] = G2;
            out.gradients[2] = G3;
            out.gradients[3] = [
                27.0 * (l2 * l3 * G1[0] + l1 * l3 * G2[0] + l1 * l2 * G3[0]),
                27.0 * (l2 * l3 * G1[1] + l1 * l3 * G2[1] + l1 * l2 * G3[1]),
            ];
        }
    }
    out
}
