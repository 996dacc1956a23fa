//! Weighted regression primitives shared by the density and outcome fits.
//!
//! Two solvers: weighted least squares, and logistic IRLS with row
//! weights and an offset. Both operate on caller-built design rows.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative Bernoulli log-likelihood contribution for one row.
pub fn bernoulli_nll(y: f64, p: f64) -> f64 {
    let p = clamp_prob(p, 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn design(x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, d, |i, j| x[i][j])
}

/// Solves `(X'diag(w)X + ridge I) beta = X'diag(w)y` by Cholesky, falling
/// back to an SVD minimum-norm solution for singular systems.
fn solve_normal(xtx: DMatrix<f64>, xty: DVector<f64>, ridge: f64) -> Result<Vec<f64>> {
    let d = xtx.nrows();
    let mut m = xtx;
    if ridge > 0.0 {
        for i in 0..d {
            m[(i, i)] += ridge;
        }
    }
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch.solve(&xty).iter().copied().collect());
    }
    let svd = m.svd(true, true);
    let sol = svd
        .solve(&xty, 1e-12)
        .map_err(|e| Error::NonConvergence(format!("singular system: {e}")))?;
    Ok(sol.iter().copied().collect())
}

/// Weighted least squares. Zero ridge; singular designs fall back to the
/// minimum-norm solution.
pub fn fit_wls(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch("wls inputs".into()));
    }
    let d = x[0].len();
    let mut xtx = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    for i in 0..n {
        let wi = w[i];
        for a in 0..d {
            let xa = x[i][a];
            xty[a] += wi * xa * y[i];
            for b in a..d {
                xtx[(a, b)] += wi * xa * x[i][b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    solve_normal(xtx, xty, 0.0)
}

pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: f64,
    pub coef_cap: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { max_iter: 100, tol: 1e-12, ridge: 1e-10, coef_cap: 50.0 }
    }
}

/// Logistic IRLS maximizing `sum_i w_i [y_i log p_i + (1-y_i) log(1-p_i)]`
/// with `p_i = expit(offset_i + x_i'beta)`.
pub fn fit_logistic(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
    opts: &LogisticOptions,
) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch("logistic inputs".into()));
    }
    let d = x[0].len();
    let xm = design(x);
    let mut beta = DVector::zeros(d);
    let total_w: f64 = w.iter().sum();
    if total_w <= 0.0 {
        return Err(Error::InsufficientData("zero total weight".into()));
    }

    let mut converged = false;
    for _ in 0..opts.max_iter {
        let eta = &xm * &beta;
        let mut xtwx = DMatrix::zeros(d, d);
        let mut score = DVector::zeros(d);
        for i in 0..n {
            let o = offset.map_or(0.0, |of| of[i]);
            let p = expit(eta[i] + o);
            let v = (p * (1.0 - p)).max(1e-10);
            let wi = w[i];
            let r = wi * (y[i] - p);
            let wv = wi * v;
            for a in 0..d {
                let xa = x[i][a];
                score[a] += r * xa;
                for b in a..d {
                    xtwx[(a, b)] += wv * xa * x[i][b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        // Penalized score keeps the ridge-adjusted problem consistent.
        for a in 0..d {
            score[a] -= opts.ridge * beta[a];
        }
        let max_score = score.iter().fold(0.0f64, |m, s: &f64| m.max(s.abs()));
        if max_score <= opts.tol * total_w.max(1.0) {
            converged = true;
            break;
        }
        let step = DVector::from_vec(solve_normal(xtwx, score, opts.ridge)?);
        beta += step;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Separation("non-finite coefficients".into()));
        }
        if beta.iter().any(|b| b.abs() > opts.coef_cap) {
            return Err(Error::Separation(format!(
                "coefficient beyond {} (quasi-separation)",
                opts.coef_cap
            )));
        }
    }
    if !converged {
        let max_coef = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if max_coef > 10.0 {
            return Err(Error::Separation(format!(
                "score not closed after {} iterations, |coef| up to {max_coef:.1}",
                opts.max_iter
            )));
        }
        return Err(Error::NonConvergence(format!(
            "logistic score not closed after {} iterations",
            opts.max_iter
        )));
    }
    Ok(beta.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_logistic_equals_proportion() {
        // 7 ones out of 10
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 7 { 1.0 } else { 0.0 }).collect();
        let w = vec![1.0; 10];
        let beta = fit_logistic(&x, &y, &w, None, &LogisticOptions::default()).unwrap();
        assert_abs_diff_eq!(expit(beta[0]), 0.7, epsilon = 1e-10);
    }

    #[test]
    fn wls_recovers_line() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..50).map(|i| 2.0 + 3.0 * i as f64).collect();
        let w = vec![1.0; 50];
        let beta = fit_wls(&x, &y, &w).unwrap();
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(beta[1], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn wls_singular_falls_back_to_min_norm() {
        // duplicated column
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| 1.0 + 2.0 * i as f64).collect();
        let w = vec![1.0; 20];
        let beta = fit_wls(&x, &y, &w).unwrap();
        // predictions are still exact
        for i in 0..20 {
            let pred = beta[0] + (beta[1] + beta[2]) * i as f64;
            assert_abs_diff_eq!(pred, y[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn logistic_with_offset_shifts_intercept() {
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![1.0]).collect();
        let y: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let w = vec![1.0; 200];
        let off = vec![0.7; 200];
        let beta = fit_logistic(&x, &y, &w, Some(&off), &LogisticOptions::default()).unwrap();
        assert_abs_diff_eq!(beta[0], -0.7, epsilon = 1e-9);
    }

    #[test]
    fn separation_is_reported() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64 - 20.0]).collect();
        let y: Vec<f64> = (0..40).map(|i| if i >= 20 { 1.0 } else { 0.0 }).collect();
        let w = vec![1.0; 40];
        assert!(matches!(
            fit_logistic(&x, &y, &w, None, &LogisticOptions::default()),
            Err(Error::Separation(_))
        ));
    }
}
