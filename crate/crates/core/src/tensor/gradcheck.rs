use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// max over coordinates of `|analytic - numeric| / max(1, |analytic|)`
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// A scalar function that can be recorded at any precision.
pub trait ScalarFunction {
    fn eval<T: Real>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

fn evaluate<T: Real, F>(f: &F, xs: &[Tensor<T>]) -> Result<T>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

fn analytic<T: Real, F>(f: &F, inputs: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item();
    tape.backward(out)?;
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).expect("leaf gradient").clone())
        .collect();
    Ok((value, grads))
}

fn ensure_deterministic<T: Real>(recorded: T, again: T) -> Result<()> {
    if recorded == again || (recorded.is_nan() && again.is_nan()) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "function is not deterministic: {recorded} vs {again} at the same point"
        )))
    }
}

fn compare<A: Real, T: Real, F>(f: &F, grads: &[Tensor<A>], inputs: &[Tensor<T>], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + T::of(eps);
            let plus = evaluate(f, &probe)?.as_f64();
            probe[k].data_mut()[i] = orig - T::of(eps);
            let minus = evaluate(f, &probe)?.as_f64();
            probe[k].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i].as_f64();
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err.is_nan() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (k, i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar function of several tensors.
///
/// `f` must rebuild the computation on the tape it is handed; it is called
/// once for the analytic pass and twice per coordinate. A function whose
/// value differs between two evaluations at the same point is rejected.
pub fn finite_diff_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (recorded, grads) = analytic(&f, inputs)?;
    ensure_deterministic(recorded, evaluate(&f, inputs)?)?;
    compare(&f, &grads, inputs, eps)
}

/// Checks `f32` tape gradients against central differences evaluated in
/// `f64`, so the reference is not limited by single-precision rounding.
pub fn finite_diff_check_f32<F: ScalarFunction>(f: &F, inputs: &[Tensor<f32>], eps: f64) -> Result<GradCheck> {
    let narrow = |t: &mut Tape<f32>, v: &[Var]| f.eval(t, v);
    let wide = |t: &mut Tape<f64>, v: &[Var]| f.eval(t, v);
    let (recorded, grads) = analytic(&narrow, inputs)?;
    ensure_deterministic(recorded, evaluate(&narrow, inputs)?)?;
    let inputs64: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    compare(&wide, &grads, &inputs64, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        let x = Tensor::<f64>::from_f64(vec![2, 2], &[0.3, -1.0, 2.5, 0.0]).unwrap();
        let r = finite_diff_check(|t, v| Ok(t.sum(v[0])), &[x], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        use std::sync::atomic::{AtomicU32, Ordering};
        let calls = AtomicU32::new(0);
        let x = Tensor::<f64>::from_f64(vec![1], &[1.0]).unwrap();
        let err = finite_diff_check(
            |t, v| {
                let n = calls.fetch_add(1, Ordering::Relaxed);
                let s = t.sum(v[0]);
                Ok(t.scale(s, 1.0 + n as f64))
            },
            &[x],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
