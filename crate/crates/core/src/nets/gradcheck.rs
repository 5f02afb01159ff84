//! Finite-difference checks of parameter gradients for whole nets.

use rand::Rng;

use super::params::{Ctx, ParamStore};
use crate::error::Result;
use crate::tensor::gradcheck::relative_error;
use crate::tensor::Var;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradReport {
    /// Worst relative error per parameter name.
    pub per_param: Vec<(String, f64)>,
    pub checked: usize,
}

impl ParamGradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|p| p.1).fold(0.0, f64::max)
    }
}

/// Compares tape gradients of the scalar `loss` against central differences
/// for up to `per_param` randomly chosen entries of every parameter.
pub fn check_params<R, F>(store: &ParamStore<f64>, per_param: usize, h: f64, rng: &mut R, loss: F) -> Result<ParamGradReport>
where
    R: Rng,
    F: Fn(&mut Ctx<f64>) -> Result<Var>,
{
    let mut ctx = Ctx::new(store, true);
    let l = loss(&mut ctx)?;
    ctx.g.backward(l)?;
    let analytic = ctx.grads();
    drop(ctx);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut ctx = Ctx::new(s, false);
        let l = loss(&mut ctx)?;
        Ok(ctx.g.value(l).item())
    };

    let mut work = store.clone();
    let mut per = Vec::with_capacity(store.len());
    let mut checked = 0;
    for (pi, p) in store.params().iter().enumerate() {
        let n = p.value.len();
        let picks: Vec<usize> = if n <= per_param { (0..n).collect() } else { (0..per_param).map(|_| rng.gen_range(0..n)).collect() };
        let mut worst = 0.0f64;
        for j in picks {
            let x0 = p.value.data()[j];
            work.params_mut()[pi].value.data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work.params_mut()[pi].value.data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work.params_mut()[pi].value.data_mut()[j] = x0;
            worst = worst.max(relative_error(analytic[pi].data()[j], (up - down) / (2.0 * h)));
            checked += 1;
        }
        per.push((p.name.clone(), worst));
    }
    Ok(ParamGradReport { per_param: per, checked })
}
