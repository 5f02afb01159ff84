use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Param, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter table owned by one net.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { params: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Weight drawn uniformly from `±sqrt(6/fan_in)`.
    pub fn add_weight<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter of `src` whose name, after `rename`, exists
    /// here with the same shape. Returns how many were copied.
    pub fn copy_matching(&mut self, src: &ParamStore<T>, rename: impl Fn(&str) -> String) -> usize {
        let mut n = 0;
        for q in &src.params {
            let name = rename(&q.name);
            if let Some(p) = self.params.iter_mut().find(|p| p.name == name && p.value.shape() == q.value.shape()) {
                p.value = q.value.clone();
                n += 1;
            }
        }
        n
    }

    /// Replaces every value from a `(name, tensor)` table. Names and shapes
    /// must match exactly.
    pub fn load(&mut self, table: &[(String, Tensor<T>)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = table
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::shape("load", p.value.shape(), t.shape()));
            }
            p.value = t.clone();
            p.grad = None;
        }
        Ok(())
    }

    pub fn table(&self) -> Vec<(String, Tensor<T>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}

/// One forward pass: a fresh tape plus lazily bound parameter leaves.
pub struct Ctx<'a, T: Scalar> {
    pub g: Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    /// `track` marks parameters as requiring gradients (training).
    pub fn new(store: &'a ParamStore<T>, track: bool) -> Self {
        Ctx {
            g: Graph::new(),
            store,
            bound: vec![None; store.len()],
            track,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.g.leaf(self.store.get(id).clone(), self.track);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.g.constant(t)
    }

    /// Gradients per parameter, aligned with the store; unbound or unreached
    /// parameters get zeros.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.store
            .params()
            .iter()
            .zip(&self.bound)
            .map(|(p, b)| {
                b.and_then(|v| self.g.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }
}
