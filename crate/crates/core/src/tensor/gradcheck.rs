//! Central finite-difference oracle for tape gradients. It only evaluates
//! forward passes, so it stays independent of every backward rule.

use super::array::Tensor;
use super::graph::{Graph, Var};
use crate::error::Result;

/// Relative error with an absolute floor in the denominator, so gradients
/// near zero are compared on an absolute 1e-3 scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares tape gradients of `f` with respect to every input tensor against
/// central differences with step `h`.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let x0 = t.data()[j];
            work[ti].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[ti].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[ti].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[ti].data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        max_rel_err: worst,
        checked,
    })
}
