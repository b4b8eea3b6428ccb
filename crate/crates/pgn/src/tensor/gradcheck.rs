use crate::error::{PgnError, Result};

use super::graph::{Graph, TensorData, TensorRef};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(|analytic|, |numeric|, 1e−8)
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst entry
    pub worst: (usize, usize),
    pub n_coords: usize,
}

/// Central-difference gradient check in 64-bit mode.
///
/// `build` records the forward computation onto a fresh graph, taking the
/// parameter leaves in order, and returns the scalar loss node. The analytic
/// gradients from one backward pass are compared against
/// (f(θ+h) − f(θ−h)) / 2h per coordinate.
pub fn check_gradients<F>(params: &[TensorData<f64>], build: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[TensorRef]) -> Result<TensorRef>,
{
    let eval = |ps: &[TensorData<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let refs: Vec<TensorRef> = ps.iter().map(|p| g.input(p)).collect();
        let loss = build(&mut g, &refs)?;
        Ok(g.value(loss)[0])
    };

    // analytic pass
    let mut g = Graph::new();
    let refs: Vec<TensorRef> = params.iter().map(|p| g.param(p)).collect();
    let loss = build(&mut g, &refs)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = refs
        .iter()
        .map(|&r| g.grad(r).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(r).len()]))
        .collect();

    let mut work: Vec<TensorData<f64>> = params.to_vec();
    let mut max_rel_err = 0.0_f64;
    let mut worst = (0, 0);
    let mut n_coords = 0;
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.data.len() {
            let orig = p.data[ci];
            work[pi].data[ci] = orig + h;
            let fp = eval(&work)?;
            work[pi].data[ci] = orig - h;
            let fm = eval(&work)?;
            work[pi].data[ci] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(PgnError::Numeric(format!(
                    "non-finite perturbation result at param {} coordinate {}",
                    pi, ci
                )));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi][ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = (pi, ci);
            }
            n_coords += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        n_coords,
    })
}
