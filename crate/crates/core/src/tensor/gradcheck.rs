use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |numeric|)` over all
/// components of `x`. `f` must map its input to a scalar and be deterministic;
/// two evaluations at `x` that disagree bitwise are rejected.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Contract(format!("eps {eps} outside (0, 1e-3]")));
    }

    let eval = |input: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(input);
        let out = f(&tape, v)?;
        if out.value().len() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(out.item())
    };

    let tape = Tape::new();
    let xv = tape.param(x);
    let loss = f(&tape, xv)?;
    let base = loss.item();
    let grads = tape.backward(loss)?;
    let analytic = grads.get(xv).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);

    if eval(x)?.to_bits() != base.to_bits() {
        return Err(Error::Contract("function is not deterministic".into()));
    }

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
