use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major shaped array. Every element is finite and
/// `data.len() == shape.iter().product()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid_shape("tensor", format!("zero dim in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid_shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Skips the finiteness scan; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of_usize(self.data.len())
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// Channel `c` of a rank-3 `C×H×W` tensor as an `H×W` map.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if self.rank() != 3 || c >= self.shape[0] {
            return Err(Error::invalid_shape(
                "channel",
                format!("channel {c} of {:?}", self.shape),
            ));
        }
        let hw = self.shape[1] * self.shape[2];
        Ok(Tensor {
            shape: vec![self.shape[1], self.shape[2]],
            data: self.data[c * hw..(c + 1) * hw].to_vec(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Bit-level equality, the determinism check used by reruns.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

/// Min-max normalization into `[0, 1]`. A map with `max == min` carries no
/// localization signal and normalizes to all zeros.
pub fn minmax_normalize<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let lo = m.min();
    let hi = m.max();
    let range = hi - lo;
    if !(range > T::zero()) {
        return Tensor::zeros(m.shape());
    }
    m.map(|v| ((v - lo) / range).max(T::zero()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(&[2], vec![0.0, f64::NAN]).is_err());
        assert!(Tensor::<f64>::new(&[1], vec![f64::INFINITY]).is_err());
        assert!(Tensor::<f64>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&t(&[3], &[2.0, 4.0, 6.0])).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&t(&[3], &[-1.0, 0.0, 3.0])).data(), &[0.0, 0.25, 1.0]);
        assert_eq!(minmax_normalize(&t(&[2, 2], &[7.0; 4])).data(), &[0.0; 4]);
    }

    #[test]
    fn minmax_works_in_f32() {
        let m = Tensor::<f32>::from_f64(&[3], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&m).data(), &[0.0f32, 0.5, 1.0]);
    }

    #[test]
    fn reshape_roundtrip() {
        let data: Vec<f64> = (0..28 * 32 * 32).map(|i| i as f64).collect();
        let a = Tensor::new(&[28, 32, 32], data).unwrap();
        let b = a.reshape(&[28, 1024]).unwrap().reshape(&[28, 32, 32]).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.reshape(&[28, 1000]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn minmax_in_unit_range_and_idempotent(v in prop::collection::vec(-1e3f64..1e3, 2..40)) {
                let m = Tensor::new(&[v.len()], v).unwrap();
                let z = minmax_normalize(&m);
                prop_assert!(z.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
                if z.max() > z.min() {
                    let zz = minmax_normalize(&z);
                    for (a, b) in z.data().iter().zip(zz.data()) {
                        prop_assert!((a - b).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
