//! Structured triangular meshes of axis-aligned rectangles.
//!
//! The channel geometry has the fluid-structure interface `Sigma` on the top
//! and bottom sides and the inflow/outflow sides `Sigma_l` (left) and
//! `Sigma_r` (right). Each rectangular cell is split along the fixed
//! lower-left to upper-right diagonal so that meshes are deterministic.

use crate::{Error, Result};

/// Boundary side tags. `SigmaTop`/`SigmaBottom` form the interface Sigma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BoundaryTag {
    SigmaTop,
    SigmaBottom,
    SigmaLeft,
    SigmaRight,
}

impl BoundaryTag {
    /// True for the two interface sides.
    pub fn is_interface(self) -> bool {
        matches!(self, BoundaryTag::SigmaTop | BoundaryTag::SigmaBottom)
    }
}

/// A tagged boundary edge with its unique owning triangle and outward normal.
#[derive(Debug, Clone)]
pub struct BoundaryEdge {
    /// Endpoint vertex indices, ordered counterclockwise around the domain
    /// (so the owning triangle lies to the left).
    pub vertices: [usize; 2],
    /// Index of the unique triangle containing this edge.
    pub triangle: usize,
    pub tag: BoundaryTag,
    /// Outward unit normal (constant along the edge).
    pub normal: [f64; 2],
    pub length: f64,
}

/// Triangulation of a rectangle `[0, lx] x [0, ly]`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex-index triples with counterclockwise orientation.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Left/right vertex identification `(left, right)`, populated only in
    /// periodic mode. Identification itself happens at the DOF level.
    pub periodic_pairs: Vec<(usize, usize)>,
    /// Nominal mesh size (largest cell side).
    pub h: f64,
    pub lx: f64,
    pub ly: f64,
}

impl Mesh {
    /// Build a structured triangulation with `nx * ny` cells, each split
    /// along the lower-left to upper-right diagonal.
    pub fn build_rect_mesh(nx: usize, ny: usize, lx: f64, ly: f64, periodic: bool) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "cell counts must be positive, got nx={nx}, ny={ny}"
            )));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain dimensions must be positive, got lx={lx}, ly={ly}"
            )));
        }
        let dx = lx / nx as f64;
        let dy = ly / ny as f64;
        let vid = |i: usize, j: usize| j * (nx + 1) + i;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([i as f64 * dx, j as f64 * dy]);
            }
        }

        // Per cell: lower triangle (v00, v10, v11), upper triangle (v00, v11, v01).
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10) = (vid(i, j), vid(i + 1, j));
                let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let tri_lower = |i: usize, j: usize| 2 * (j * nx + i);
        let tri_upper = |i: usize, j: usize| 2 * (j * nx + i) + 1;

        let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
        // Bottom (y = 0), left to right; owner is the lower triangle of row 0.
        for i in 0..nx {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(i, 0), vid(i + 1, 0)],
                triangle: tri_lower(i, 0),
                tag: BoundaryTag::SigmaBottom,
                normal: [0.0, -1.0],
                length: dx,
            });
        }
        // Top (y = ly), left to right; owner is the upper triangle of the last row.
        for i in 0..nx {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(i, ny), vid(i + 1, ny)],
                triangle: tri_upper(i, ny - 1),
                tag: BoundaryTag::SigmaTop,
                normal: [0.0, 1.0],
                length: dx,
            });
        }
        // Left (x = 0), bottom to top; owner is the upper triangle of column 0.
        for j in 0..ny {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(0, j), vid(0, j + 1)],
                triangle: tri_upper(0, j),
                tag: BoundaryTag::SigmaLeft,
                normal: [-1.0, 0.0],
                length: dy,
            });
        }
        // Right (x = lx), bottom to top; owner is the lower triangle of the last column.
        for j in 0..ny {
            boundary_edges.push(BoundaryEdge {
                vertices: [vid(nx, j), vid(nx, j + 1)],
                triangle: tri_lower(nx - 1, j),
                tag: BoundaryTag::SigmaRight,
                normal: [1.0, 0.0],
                length: dy,
            });
        }

        let periodic_pairs = if periodic {
            (0..=ny).map(|j| (vid(0, j), vid(nx, j))).collect()
        } else {
            Vec::new()
        };

        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            periodic_pairs,
            h: dx.max(dy),
            lx,
            ly,
        })
    }

    /// A single reference triangle `(0,0), (1,0), (0,1)`, used by element-level
    /// oracle tests. The hypotenuse carries the `SigmaRight` tag.
    pub fn single_reference_triangle() -> Mesh {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let triangles = vec![[0usize, 1, 2]];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let boundary_edges = vec![
            BoundaryEdge {
                vertices: [0, 1],
                triangle: 0,
                tag: BoundaryTag::SigmaBottom,
                normal: [0.0, -1.0],
                length: 1.0,
            },
            BoundaryEdge {
                vertices: [1, 2],
                triangle: 0,
                tag: BoundaryTag::SigmaRight,
                normal: [s, s],
                length: std::f64::consts::SQRT_2,
            },
            BoundaryEdge {
                vertices: [2, 0],
                triangle: 0,
                tag: BoundaryTag::SigmaLeft,
                normal: [-1.0, 0.0],
                length: 1.0,
            },
        ];
        Mesh {
            vertices,
            triangles,
            boundary_edges,
            periodic_pairs: Vec::new(),
            h: 1.0,
            lx: 1.0,
            ly: 1.0,
        }
    }

    pub fn boundary_edges_by_tag(&self, tag: BoundaryTag) -> Vec<&BoundaryEdge> {
        self.boundary_edges.iter().filter(|e| e.tag == tag).collect()
    }

    pub fn triangle_points(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_points(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn is_periodic(&self) -> bool {
        !self.periodic_pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn single_cell_split() {
        let m = Mesh::build_rect_mesh(1, 1, 1.0, 1.0, false).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
        assert_eq!(m.boundary_edges.len(), 4);
    }

    #[test]
    fn counts_match_formulas_for_example_mesh() {
        // M = 8 on [0,2] x [0,1]: (2M+1)(M+1) vertices and 2*(2M)*M triangles.
        let m = Mesh::build_rect_mesh(16, 8, 2.0, 1.0, false).unwrap();
        assert_eq!(m.vertices.len(), 153);
        assert_eq!(m.triangles.len(), 256);
    }

    #[test]
    fn periodic_pairs_one_per_y_level() {
        let m = Mesh::build_rect_mesh(2, 2, 1.0, 1.0, true).unwrap();
        assert_eq!(m.periodic_pairs.len(), 3);
        for &(l, r) in &m.periodic_pairs {
            assert!((m.vertices[l][1] - m.vertices[r][1]).abs() < 1e-15);
            assert_eq!(m.vertices[l][0], 0.0);
            assert_eq!(m.vertices[r][0], 1.0);
        }
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(Mesh::build_rect_mesh(0, 1, 1.0, 1.0, false).is_err());
        assert!(Mesh::build_rect_mesh(1, 1, -1.0, 1.0, false).is_err());
        assert!(Mesh::build_rect_mesh(1, 0, 1.0, 0.0, false).is_err());
    }

    #[test]
    fn tagged_edges_and_normals() {
        let m = Mesh::build_rect_mesh(4, 2, 1.0, 1.0, false).unwrap();
        let top = m.boundary_edges_by_tag(BoundaryTag::SigmaTop);
        assert_eq!(top.len(), 4);
        for e in &top {
            assert_eq!(e.normal, [0.0, 1.0]);
        }
        for e in m.boundary_edges_by_tag(BoundaryTag::SigmaBottom) {
            assert_eq!(e.normal, [0.0, -1.0]);
        }
    }

    #[test]
    fn periodic_tagging_is_independent_of_identification() {
        let m = Mesh::build_rect_mesh(4, 2, 1.0, 1.0, true).unwrap();
        assert_eq!(m.boundary_edges_by_tag(BoundaryTag::SigmaLeft).len(), 2);
        assert_eq!(m.boundary_edges_by_tag(BoundaryTag::SigmaRight).len(), 2);
    }

    #[test]
    fn areas_and_orientation() {
        let m = Mesh::build_rect_mesh(7, 3, 2.0, 1.0, false).unwrap();
        let mut total = 0.0;
        for t in 0..m.triangles.len() {
            let a = m.signed_area(t);
            assert!(a > 0.0, "triangle {t} has non-positive signed area");
            total += a;
        }
        assert!((total - 2.0).abs() < 1e-12 * 2.0);
    }

    #[test]
    fn closed_boundary_identity() {
        let m = Mesh::build_rect_mesh(5, 4, 1.5, 0.5, false).unwrap();
        let mut sum = [0.0f64; 2];
        for e in &m.boundary_edges {
            sum[0] += e.length * e.normal[0];
            sum[1] += e.length * e.normal[1];
        }
        assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
    }

    #[test]
    fn boundary_edges_belong_to_their_triangle() {
        let m = Mesh::build_rect_mesh(6, 3, 2.0, 1.0, false).unwrap();
        for e in &m.boundary_edges {
            let tri = m.triangles[e.triangle];
            for v in e.vertices {
                assert!(tri.contains(&v));
            }
        }
    }

    #[test]
    fn edge_ownership_counts() {
        // Every boundary edge has exactly one owner, every interior edge two.
        let m = Mesh::build_rect_mesh(5, 3, 1.0, 1.0, false).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let boundary: std::collections::HashSet<(usize, usize)> = m
            .boundary_edges
            .iter()
            .map(|e| {
                let [a, b] = e.vertices;
                (a.min(b), a.max(b))
            })
            .collect();
        for (edge, c) in &count {
            if boundary.contains(edge) {
                assert_eq!(*c, 1, "boundary edge {edge:?} owned by {c} triangles");
            } else {
                assert_eq!(*c, 2, "interior edge {edge:?} owned by {c} triangles");
            }
        }
    }
}
