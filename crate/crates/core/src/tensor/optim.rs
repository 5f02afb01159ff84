use super::array::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A trainable tensor with its pending gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            value,
            grad: None,
        }
    }

    /// Adds `g` into the pending gradient.
    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::shape("accumulate", self.value.shape(), g.shape()));
        }
        match &mut self.grad {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }
}

/// Plain gradient descent `p ← p − lr·grad`; gradients are cleared afterwards.
pub fn sgd_step<T: Scalar>(params: &mut [Param<T>], lr: T) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    for p in params.iter_mut() {
        let g = p.grad.take().expect("checked above");
        for (v, &d) in p.value.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

/// Stochastic gradient descent with optional heavy-ball momentum. With
/// `momentum == 0` each step is exactly [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Param<T>]) -> Result<()> {
        if self.momentum == T::zero() {
            return sgd_step(params, self.lr);
        }
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        }
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            let g = p.grad.take().expect("checked above");
            for ((v, m), &d) in p.value.data_mut().iter_mut().zip(vel.iter_mut()).zip(g.data()) {
                *m = self.momentum * *m + d;
                *v -= self.lr * *m;
            }
        }
        check_finite(params)
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    /// Per-parameter learning-rate multipliers; missing entries mean 1.
    pub scales: Vec<T>,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            scales: Vec::new(),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [Param<T>]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for (i, ((p, m), v)) in params.iter_mut().zip(&mut self.m).zip(&mut self.v).enumerate() {
            let g = p.grad.take().expect("checked above");
            let lr = self.scales.get(i).map_or(self.lr, |&s| self.lr * s);
            for (((x, m), v), &d) in p.value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (T::one() - self.beta1) * d;
                *v = self.beta2 * *v + (T::one() - self.beta2) * d * d;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        check_finite(params)
    }
}

fn check_finite<T: Scalar>(params: &[Param<T>]) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.value.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("parameter `{}` after update", p.name)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptKind::Sgd => "sgd",
            OptKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptKind::Sgd),
            "adam" => Ok(OptKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Sgd(Sgd<T>),
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    /// `momentum` is ignored by Adam, `scales` by SGD.
    pub fn new(kind: OptKind, lr: T, momentum: T, scales: Vec<T>) -> Self {
        match kind {
            OptKind::Sgd => Optimizer::Sgd(Sgd::new(lr, momentum)),
            OptKind::Adam => Optimizer::Adam(Adam { scales, ..Adam::new(lr) }),
        }
    }

    pub fn set_lr(&mut self, lr: T) {
        match self {
            Optimizer::Sgd(o) => o.lr = lr,
            Optimizer::Adam(o) => o.lr = lr,
        }
    }

    pub fn step(&mut self, params: &mut [Param<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params),
            Optimizer::Adam(o) => o.step(params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: Option<f64>) -> Param<f64> {
        Param {
            name: "p".into(),
            value: Tensor::scalar(v),
            grad: g.map(Tensor::scalar),
        }
    }

    #[test]
    fn step_examples() {
        let mut ps = vec![param(1.0, Some(2.0))];
        sgd_step(&mut ps, 0.1).unwrap();
        assert!((ps[0].value.item() - 0.8).abs() < 1e-15);
        assert!(ps[0].grad.is_none());

        let mut ps = vec![param(1.0, Some(2.0))];
        sgd_step(&mut ps, 0.0).unwrap();
        assert_eq!(ps[0].value.item(), 1.0);

        let mut ps = vec![param(1.0, None)];
        assert!(matches!(sgd_step(&mut ps, 0.1), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn two_steps_decrease_quadratic() {
        // loss = (p − 3)², grad = 2(p − 3)
        let loss = |p: f64| (p - 3.0).powi(2);
        let mut ps = vec![param(0.0, None)];
        let mut last = loss(0.0);
        for _ in 0..2 {
            let p = ps[0].value.item();
            ps[0].grad = Some(Tensor::scalar(2.0 * (p - 3.0)));
            sgd_step(&mut ps, 0.1).unwrap();
            let now = loss(ps[0].value.item());
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn momentum_zero_matches_plain_step() {
        let mut a = vec![param(1.0, Some(2.0))];
        let mut b = a.clone();
        sgd_step(&mut a, 0.1).unwrap();
        Sgd::new(0.1, 0.0).step(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr·sign(g), up to eps
        let mut ps = vec![param(1.0, Some(-4.0))];
        Adam::new(0.01).step(&mut ps).unwrap();
        assert!((ps[0].value.item() - 1.01).abs() < 1e-9);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut ps = vec![param(0.0, None)];
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            let p = ps[0].value.item();
            ps[0].grad = Some(Tensor::scalar(2.0 * (p - 3.0)));
            opt.step(&mut ps).unwrap();
        }
        assert!((ps[0].value.item() - 3.0).abs() < 1e-2);
    }
}
