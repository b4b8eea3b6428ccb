//! Linear probes for the analysis suite: closed-form ridge regression with
//! an unregularized intercept, r² scoring, and a one-vs-rest linear SVM
//! trained by deterministic subgradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PgnError, Result};

/// Row-major feature matrix.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(PgnError::dim(
                "matrix",
                format!("{}x{} != {} elements", rows, cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// In-place Cholesky solve of A x = b for symmetric positive-definite A.
fn cholesky_solve(a: &mut [f64], n: usize, b: &mut [f64]) -> Result<()> {
    // factor A = L Lᵀ, L stored in the lower triangle
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(PgnError::Numeric(format!(
                "system not positive definite at pivot {} (d = {})",
                j, d
            )));
        }
        let dj = d.sqrt();
        a[j * n + j] = dj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / dj;
        }
    }
    // forward substitution L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    // back substitution Lᵀ x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// Gram matrix X̃ᵀX̃ and X̃ᵀy for the design X̃ = [X | 1].
pub struct RidgeWorkspace {
    gram: Vec<f64>,
    d1: usize,
}

impl RidgeWorkspace {
    pub fn new(x: &Matrix) -> Self {
        let d1 = x.cols + 1;
        let mut gram = vec![0.0; d1 * d1];
        for r in 0..x.rows {
            let row = x.row(r);
            for i in 0..x.cols {
                let xi = row[i];
                for j in i..x.cols {
                    gram[i * d1 + j] += xi * row[j];
                }
                gram[i * d1 + x.cols] += xi;
            }
            gram[x.cols * d1 + x.cols] += 1.0;
        }
        for i in 0..d1 {
            for j in 0..i {
                gram[i * d1 + j] = gram[j * d1 + i];
            }
        }
        RidgeWorkspace { gram, d1 }
    }

    /// Solve (X̃ᵀX̃ + αI')β = X̃ᵀy with the intercept entry of I' zeroed.
    pub fn solve(&self, x: &Matrix, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
        if alpha <= 0.0 {
            return Err(PgnError::Arg(format!("ridge alpha must be > 0, got {}", alpha)));
        }
        if y.len() != x.rows {
            return Err(PgnError::dim("ridge_fit", "y length != number of rows"));
        }
        let d1 = self.d1;
        let mut a = self.gram.clone();
        for i in 0..d1 - 1 {
            a[i * d1 + i] += alpha;
        }
        let mut rhs = vec![0.0; d1];
        for r in 0..x.rows {
            let row = x.row(r);
            let yr = y[r];
            for i in 0..x.cols {
                rhs[i] += row[i] * yr;
            }
            rhs[x.cols] += yr;
        }
        cholesky_solve(&mut a, d1, &mut rhs)?;
        Ok(rhs)
    }
}

/// Closed-form ridge fit; returns d+1 coefficients, intercept last.
pub fn ridge_fit(x: &Matrix, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if x.rows == 0 {
        return Err(PgnError::Arg("ridge_fit: empty design".into()));
    }
    RidgeWorkspace::new(x).solve(x, y, alpha)
}

pub fn ridge_predict(coef: &[f64], x: &Matrix) -> Vec<f64> {
    let d = x.cols;
    (0..x.rows)
        .map(|r| {
            let row = x.row(r);
            coef[d] + row.iter().zip(&coef[..d]).map(|(&a, &b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Pick alpha from a log grid by validation MSE, then refit on train.
pub fn ridge_fit_validated(
    x_train: &Matrix,
    y_train: &[f64],
    x_val: &Matrix,
    y_val: &[f64],
    grid: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if grid.is_empty() {
        return Err(PgnError::Arg("empty alpha grid".into()));
    }
    let ws = RidgeWorkspace::new(x_train);
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for &alpha in grid {
        let coef = ws.solve(x_train, y_train, alpha)?;
        let pred = ridge_predict(&coef, x_val);
        let mse: f64 = pred
            .iter()
            .zip(y_val)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / y_val.len() as f64;
        if best.as_ref().map(|(m, _, _)| mse < *m).unwrap_or(true) {
            best = Some((mse, coef, alpha));
        }
    }
    let (_, coef, alpha) = best.unwrap();
    Ok((coef, alpha))
}

/// Default validation grid for probe fits: 1e-4 … 1e2 by decades.
pub const ALPHA_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

/// 1 − SS_res/SS_tot.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(PgnError::dim("r2_score", "length mismatch or empty"));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|&v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(PgnError::Arg("r2_score: zero variance in y_true".into()));
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(&t, &p)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One-vs-rest linear SVM with hinge loss, trained by epoch-wise
/// subgradient descent with step 1/(λ_reg·t).
#[derive(Debug, Clone)]
pub struct SvmModel {
    pub classes: Vec<usize>,
    /// per-class (weights, bias)
    pub planes: Vec<(Vec<f64>, f64)>,
    pub dim: usize,
}

pub fn svm_fit(
    x: &Matrix,
    labels: &[usize],
    c: f64,
    epochs: usize,
    seed: u64,
) -> Result<SvmModel> {
    if labels.len() != x.rows {
        return Err(PgnError::dim("svm_fit", "labels length != rows"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(PgnError::Arg("svm_fit requires at least 2 classes".into()));
    }
    let n = x.rows;
    let lambda = 1.0 / (c * n as f64);
    let mut order: Vec<usize> = (0..n).collect();
    let mut planes = Vec::with_capacity(classes.len());
    for &cls in &classes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (cls as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let mut w = vec![0.0; x.cols];
        let mut b = 0.0;
        let mut t = 0usize;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &r in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let y = if labels[r] == cls { 1.0 } else { -1.0 };
                let row = x.row(r);
                let margin = y * (w.iter().zip(row).map(|(&a, &v)| a * v).sum::<f64>() + b);
                let shrink = 1.0 - eta * lambda;
                for wv in w.iter_mut() {
                    *wv *= shrink;
                }
                if margin < 1.0 {
                    let s = eta * y / n as f64;
                    for (wv, &v) in w.iter_mut().zip(row) {
                        *wv += s * v;
                    }
                    b += s;
                }
            }
        }
        planes.push((w, b));
    }
    Ok(SvmModel {
        classes,
        planes,
        dim: x.cols,
    })
}

pub fn svm_decision(model: &SvmModel, row: &[f64]) -> Vec<f64> {
    model
        .planes
        .iter()
        .map(|(w, b)| b + w.iter().zip(row).map(|(&a, &v)| a * v).sum::<f64>())
        .collect()
}

/// argmax class score; ties break to the lowest class index.
pub fn svm_predict(model: &SvmModel, x: &Matrix) -> Vec<usize> {
    (0..x.rows)
        .map(|r| {
            let scores = svm_decision(model, x.row(r));
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            model.classes[best]
        })
        .collect()
}
