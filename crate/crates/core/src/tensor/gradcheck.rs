//! Finite-difference validation of the backward pass.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

/// Relative error between analytic and numeric gradients:
/// `max_i |a_i − n_i| / max(1e-8, |a_i| + |n_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar-valued tape function at `x`.
///
/// `f` must be deterministic: it is re-evaluated `2·numel(x)` times on fresh
/// tapes with perturbed copies of `x`.
pub fn central_diff_grads<F>(f: &F, x: &Tensor, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    let eval = |values: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::new(x.shape().to_vec(), values.to_vec())?);
        let loss = f(&mut tape, leaf)?;
        tape.item(loss)
    };
    let mut grads = Vec::with_capacity(x.numel());
    let mut work = x.values().to_vec();
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = eval(&work)?;
        work[i] = orig - eps;
        let minus = eval(&work)?;
        work[i] = orig;
        grads.push((plus - minus) / (2.0 * eps));
    }
    Ok(grads)
}

/// Compares the backward pass of `f` against central differences at `x`,
/// returning the maximum relative error over the coordinates of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    if !(eps > 1e-8 && eps < 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps {eps} outside (1e-8, 1e-2)"
        )));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone().requiring_grad());
    let loss = f(&mut tape, leaf)?;
    if tape.data(loss).len() != 1 {
        return Err(Error::InvalidShape {
            op: "grad_check",
            shape: tape.shape(loss).to_vec(),
            reason: "f must produce a scalar".into(),
        });
    }
    tape.backward(loss)?;
    let analytic = tape
        .grad(leaf)
        .ok_or_else(|| Error::Numerical("grad_check: no gradient reached x".into()))?
        .to_vec();
    let numeric = central_diff_grads(&f, x, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_gradient_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let err = grad_check(|tape, x| tape.sum(x), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn softmax_pick_index() {
        let x = Tensor::vector(vec![0.1, 1.4, -0.7, 0.2]);
        let err = grad_check(
            |tape, x| {
                let s = tape.softmax(x, 0)?;
                let picked = tape.mul(s, s)?; // smooth pick surrogate keeps all coords live
                let r = tape.reshape(picked, vec![1, 4])?;
                let first = tape.slice_cols(r, 1, 2)?;
                tape.sum(first)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = Tensor::randn(vec![3, 4], 0.0, 1.0, &mut rng).unwrap();
        let b = Tensor::randn(vec![4, 2], 0.0, 1.0, &mut rng).unwrap();

        let b_vals = b.clone();
        let err_a = grad_check(
            move |tape, x| {
                let b = tape.constant(b_vals.clone());
                let c = tape.matmul(x, b)?;
                let t = tape.tanh(c)?;
                tape.sum(t)
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err_a < 1e-6, "dA err = {err_a}");

        let a_vals = a;
        let err_b = grad_check(
            move |tape, x| {
                let a = tape.constant(a_vals.clone());
                let c = tape.matmul(a, x)?;
                let t = tape.tanh(c)?;
                tape.sum(t)
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err_b < 1e-6, "dB err = {err_b}");
    }

    #[test]
    fn concat_splits_gradients_correctly() {
        let x = Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.9, 1.5, -1.1, 0.3]).unwrap();
        let err = grad_check(
            |tape, x| {
                let top = tape.row(x, 0)?;
                let bottom = tape.row(x, 1)?;
                let joined = tape.concat(&[top, bottom, top], 0)?;
                let t = tape.tanh(joined)?;
                tape.sum(t)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn layer_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(vec![3, 5], 0.0, 2.0, &mut rng).unwrap();
        let err = grad_check(
            |tape, x| {
                let g = tape.constant(Tensor::vector(vec![1.2, 0.8, 1.0, -0.5, 0.3]));
                let b = tape.constant(Tensor::vector(vec![0.1, 0.0, -0.2, 0.4, 0.0]));
                let y = tape.layer_norm(x, g, b, 1e-5)?;
                let t = tape.tanh(y)?;
                tape.sum(t)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "err = {err}");
    }

    #[test]
    fn eps_domain_is_enforced() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|tape, x| tape.sum(x), &x, 1e-9).is_err());
        assert!(grad_check(|tape, x| tape.sum(x), &x, 0.5).is_err());
    }

    #[test]
    fn corrupted_backward_is_detected() {
        // Analytic gradients from one function, numeric differences from
        // another: the comparator must flag the mismatch.
        let x = Tensor::vector(vec![0.4, -0.9, 1.3]);
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone().requiring_grad());
        let doubled = tape.scale(leaf, 2.0).unwrap();
        let loss = tape.sum(doubled).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(leaf).unwrap().to_vec();

        let numeric = central_diff_grads(&|tape: &mut Tape, x| tape.sum(x), &x, 1e-5).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err > 1e-4, "corruption went unnoticed: err = {err}");
    }
}
