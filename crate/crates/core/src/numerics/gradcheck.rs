use crate::error::Result;
use crate::scalar::Scalar;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Fixed projection weights used to reduce a tensor-valued op to a scalar.
fn probe_weights<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let f = ((i as f64 + 1.0) * 0.618_033_988_749_895).fract();
            T::lit(f - 0.37)
        })
        .collect()
}

fn scalarize<T: Scalar>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    if g.value(y).is_scalar() {
        return Ok(y);
    }
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(Tensor::new(shape, probe_weights(g.value(y).len()))?);
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

/// Maximum relative error between the analytic gradient of `op` at `point`
/// and central finite differences with step `eps`.
///
/// Non-scalar outputs are contracted with a fixed weight tensor first, so the
/// whole Jacobian participates. The relative error of each coordinate is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<T, F>(op: F, point: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_at(op, point, eps, &all)
}

/// [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_at<T, F>(op: F, point: &Tensor<T>, eps: T, coords: &[usize]) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if let Some(&bad) = coords.iter().find(|&&i| i >= point.len()) {
        return Err(crate::error::Error::Input(format!("coordinate {bad} outside a tensor of {} values", point.len())));
    }
    let eval = |p: Tensor<T>| -> Result<T> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let y = op(&mut g, x)?;
        let s = scalarize(&mut g, y)?;
        Ok(g.value(s).item())
    };

    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = op(&mut g, x)?;
    let s = scalarize(&mut g, y)?;
    let grads = g.backward(s)?;
    let zeros = Tensor::zeros(point.shape());
    let analytic = grads.get(x).unwrap_or(&zeros);

    let floor = T::lit(1e-8);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] = plus.data()[i] + eps;
        let mut minus = point.clone();
        minus.data_mut()[i] = minus.data()[i] - eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        let err = (a - numeric).abs() / denom;
        worst = if err.is_nan() { T::infinity() } else { worst.max(err) };
    }
    Ok(worst)
}
