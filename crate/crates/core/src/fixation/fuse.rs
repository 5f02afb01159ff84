use crate::error::{Error, Result};
use crate::tensor::{minmax_normalize as z, Tensor};

fn check(a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(Error::shape("fuse", a.shape(), if a.shape() != b.shape() { b.shape() } else { c.shape() }));
    }
    Ok(())
}

fn halves(a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    check(a, b, c)?;
    let prod = z(a).zip_map(&z(b), "fuse", |x, y| x * y)?.zip_map(&z(c), "fuse", |x, y| x * y)?;
    let sum = a.zip_map(b, "fuse", |x, y| x + y)?.zip_map(c, "fuse", |x, y| x + y)?;
    Ok((z(&prod), z(&sum)))
}

/// `½·Z(Z(a)⊙Z(b)⊙Z(c)) + ½·Z(a+b+c)`.
pub fn fuse_final(a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (p, s) = halves(a, b, c)?;
    p.zip_map(&s, "fuse_final", |x, y| 0.5 * x + 0.5 * y)
}

/// `½·Z(Z(a)⊙Z(b)⊙Z(c)) ⊙ ½·Z(a+b+c)`.
pub fn fuse_agg(a: &Tensor<f64>, b: &Tensor<f64>, c: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (p, s) = halves(a, b, c)?;
    p.zip_map(&s, "fuse_agg", |x, y| 0.25 * x * y)
}
