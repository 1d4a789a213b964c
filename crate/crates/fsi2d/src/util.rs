//! Small numeric helpers shared across modules.

/// Least-squares slope of log(err) against log(h), i.e. the observed
/// convergence order over all levels, together with the RMS residual of
/// the fit in log space.
pub fn fit_rate(hs: &[f64], errs: &[f64]) -> (f64, f64) {
    assert_eq!(hs.len(), errs.len());
    assert!(hs.len() >= 2, "need at least two levels for a rate fit");
    let n = hs.len() as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let res2: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred = ym + slope * (x - xm);
            (y - pred) * (y - pred)
        })
        .sum::<f64>()
        / n;
    (slope, res2.sqrt())
}

/// Orders per refinement pair, `log2(e_h / e_{h/2})` assuming each level
/// halves h (the table convention).
pub fn pairwise_orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Content hash of a sequence of f64 slices, used for determinism checks
/// and output fingerprints.
pub fn hash_f64_slices(slices: &[&[f64]]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in slices {
        for v in *s {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Format a float with six significant digits (CSV convention).
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.000000".to_string();
    }
    let a = v.abs();
    if (1e-3..1e7).contains(&a) {
        let digits = a.log10().floor() as i32;
        let decimals = (5 - digits).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_fit_recovers_exact_slope() {
        let hs = [0.25f64, 0.125, 0.0625];
        let errs: Vec<f64> = hs.iter().map(|h| 3.0 * h.powi(3)).collect();
        let (slope, resid) = fit_rate(&hs, &errs);
        assert!((slope - 3.0).abs() < 1e-12);
        assert!(resid < 1e-12);
    }

    #[test]
    fn pairwise_orders_match_table_convention() {
        let errs = [8.0, 1.0, 0.125];
        let orders = pairwise_orders(&errs);
        assert_eq!(orders.len(), 2);
        assert!((orders[0] - 3.0).abs() < 1e-14);
        assert!((orders[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(6.852e-3), "0.00685200");
        assert_eq!(fmt_sig6(0.140300), "0.140300");
        assert_eq!(fmt_sig6(12.3456789), "12.3457");
        assert_eq!(fmt_sig6(7.937e-5), "7.93700e-5");
    }
}
