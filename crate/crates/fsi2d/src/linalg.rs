//! Sparse matrices and direct factorization with reuse across time steps.
//!
//! Storage is compressed sparse row. Factorization is a sparse LU with
//! partial pivoting and fill-reducing ordering (provided by `faer`), built
//! once per run and reused for every solve. Solves are verified against the
//! residual bound `|Ax - b| <= 1e-10 (|A| |x| + |b|)` in infinity norms.

use crate::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};

/// Residual tolerance of [`Factorization::solve`].
pub const SOLVE_RTOL: f64 = 1e-10;

/// Compressed sparse row matrix. Column indices are sorted and unique per
/// row; duplicate triplet entries are summed on construction.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<SparseMatrix> {
        for &(r, c, _) in entries {
            if r >= nrows || c >= ncols {
                return Err(Error::IndexOutOfRange {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            if let (Some(&lc), Some(lv)) = (indices.last(), values.last_mut()) {
                if indptr[r + 1] > 0 && lc == c && indptr[r + 1] == indices.len() {
                    *lv += v;
                    continue;
                }
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] = indices.len();
        }
        // Forward-fill row offsets for empty rows.
        for r in 0..nrows {
            if indptr[r + 1] < indptr[r] {
                indptr[r + 1] = indptr[r];
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Weighted sum of matrices with identical shape.
    pub fn scaled_sum(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        assert!(!terms.is_empty());
        let (nrows, ncols) = (terms[0].1.nrows, terms[0].1.ncols);
        let mut triplets = Vec::new();
        for &(s, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols), "shape mismatch");
            for (i, j, v) in m.iter() {
                triplets.push((i, j, s * v));
            }
        }
        SparseMatrix::from_triplets(nrows, ncols, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let xr = x[r];
            if xr != 0.0 {
                for k in self.indptr[r]..self.indptr[r + 1] {
                    y[self.indices[k]] += self.values[k] * xr;
                }
            }
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for r in 0..self.nrows {
            if x[r] != 0.0 {
                let mut row = 0.0;
                for k in self.indptr[r]..self.indptr[r + 1] {
                    row += self.values[k] * y[self.indices[k]];
                }
                acc += x[r] * row;
            }
        }
        acc
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<_> = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.ncols, self.nrows, &triplets).unwrap()
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| {
                self.values[self.indptr[r]..self.indptr[r + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// 64-bit content fingerprint of structure and values.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.nrows as u64).to_le_bytes());
        h.update((self.ncols as u64).to_le_bytes());
        for &i in &self.indptr {
            h.update((i as u64).to_le_bytes());
        }
        for &i in &self.indices {
            h.update((i as u64).to_le_bytes());
        }
        for &v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }

    /// Factorize a square matrix for repeated solves. `context` names the
    /// step that produced the matrix, for diagnostics.
    pub fn factorize(&self, context: &str) -> Result<Factorization> {
        init_serial();
        if self.nrows != self.ncols {
            return Err(Error::InvalidArgument(format!(
                "cannot factorize a {}x{} matrix",
                self.nrows, self.ncols
            )));
        }
        let triplets: Vec<Triplet<usize, usize, f64>> = self
            .iter()
            .map(|(r, c, v)| Triplet { row: r, col: c, val: v })
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::InternalConsistency(format!("sparse conversion failed: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|_| Error::SingularSystem {
            context: context.to_string(),
        })?;
        let fact = Factorization {
            a: self.clone(),
            lu,
            norm_inf: self.norm_inf(),
            fingerprint: self.fingerprint(),
            context: context.to_string(),
        };
        // A structurally nonsingular but numerically singular matrix factors
        // with tiny pivots; reject it via a probe solve.
        let ones = vec![1.0; self.nrows];
        let b = self.matvec(&ones);
        fact.solve(&b).map_err(|_| Error::SingularSystem {
            context: context.to_string(),
        })?;
        Ok(fact)
    }
}

/// A reusable LU factorization. Solves are read-only and safe to share
/// across threads.
pub struct Factorization {
    a: SparseMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    norm_inf: f64,
    pub fingerprint: u64,
    context: String,
}

impl Factorization {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_inner(b, 0)
    }

    /// Solve with one step of iterative refinement, for checks that need
    /// residuals at the roundoff floor.
    pub fn solve_refined(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_inner(b, 1)
    }

    fn solve_inner(&self, b: &[f64], refinements: usize) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.a.nrows);
        let rhs = faer::Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let mut x: Vec<f64> = (0..b.len()).map(|i| x[(i, 0)]).collect();
        for _ in 0..refinements {
            let ax = self.a.matvec(&x);
            let r = faer::Mat::from_fn(b.len(), 1, |i, _| b[i] - ax[i]);
            let dx = self.lu.solve(&r);
            for (i, v) in x.iter_mut().enumerate() {
                *v += dx[(i, 0)];
            }
        }
        let ax = self.a.matvec(&x);
        let mut resid: f64 = 0.0;
        let mut xmax: f64 = 0.0;
        let mut bmax: f64 = 0.0;
        let mut finite = true;
        for i in 0..b.len() {
            finite &= x[i].is_finite() && ax[i].is_finite();
            resid = resid.max((ax[i] - b[i]).abs());
            xmax = xmax.max(x[i].abs());
            bmax = bmax.max(b[i].abs());
        }
        if !finite || resid > SOLVE_RTOL * (self.norm_inf * xmax + bmax) {
            return Err(Error::SingularSystem {
                context: format!("{} (solve residual {resid:.3e})", self.context),
            });
        }
        Ok(x)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows
    }
}

fn init_serial() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    // Deterministic single-threaded factorization and solves.
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}
