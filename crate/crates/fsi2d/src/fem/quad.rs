//! Quadrature rules on the reference triangle and the unit edge.
//!
//! Triangle rules are collapsed Gauss-Legendre product rules (Duffy map),
//! which have strictly positive weights at every exactness degree. Edge
//! rules are plain Gauss-Legendre on `[0, 1]`.

use crate::{Error, Result};

pub const MAX_DEGREE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadDomain {
    Triangle,
    Edge,
}

/// A quadrature rule with its requested exactness degree.
///
/// For triangle rules `points` are barycentric coordinates on the reference
/// triangle `(0,0), (1,0), (0,1)`; for edge rules the point is
/// `(1 - t, t, 0)` with `t` the coordinate on the unit edge.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub domain: QuadDomain,
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// Edge-rule points as parameters on `[0, 1]`.
    pub fn edge_params(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        debug_assert_eq!(self.domain, QuadDomain::Edge);
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| (p[1], w))
    }
}

/// Build a rule exact for all polynomials up to `degree` on the requested
/// domain.
pub fn quad_rule(domain: QuadDomain, degree: usize) -> Result<QuadRule> {
    if degree == 0 || degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree {
            requested: degree,
            max: MAX_DEGREE,
        });
    }
    Ok(match domain {
        QuadDomain::Edge => {
            let n = degree / 2 + 1; // Gauss with n points is exact to 2n-1 >= degree
            let (ts, ws) = gauss_legendre_unit(n);
            QuadRule {
                domain,
                degree,
                points: ts.iter().map(|&t| [1.0 - t, t, 0.0]).collect(),
                weights: ws,
            }
        }
        QuadDomain::Triangle => {
            // f(x, y) of total degree d becomes, under x = xi, y = eta*(1 - xi),
            // a polynomial of degree d+1 in xi (including the Jacobian 1 - xi)
            // and d in eta.
            let n_xi = (degree + 1) / 2 + 1;
            let n_eta = degree / 2 + 1;
            let (xis, wxs) = gauss_legendre_unit(n_xi);
            let (etas, wes) = gauss_legendre_unit(n_eta);
            let mut points = Vec::with_capacity(n_xi * n_eta);
            let mut weights = Vec::with_capacity(n_xi * n_eta);
            for (&xi, &wx) in xis.iter().zip(&wxs) {
                for (&eta, &we) in etas.iter().zip(&wes) {
                    let x = xi;
                    let y = eta * (1.0 - xi);
                    points.push([1.0 - x - y, x, y]);
                    weights.push(wx * we * (1.0 - xi));
                }
            }
            QuadRule {
                domain,
                degree,
                points,
                weights,
            }
        }
    })
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[i] = 0.5 * (1.0 - x); // descending cos order -> ascending t
        ws[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    xs.reverse();
    ws.reverse();
    (xs, ws)
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
