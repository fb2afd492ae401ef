//! Central-difference gradient verification.

use super::{Tape, TensorId};
use crate::error::{Error, Result};

/// Compares the analytic gradient of `f` at `x` against central differences.
///
/// `f` receives a fresh tape and the id of the input leaf, and must return a
/// scalar output recorded on that tape. Returns the worst relative error
/// over all coordinates, `|analytic - numeric| / max(1, |numeric|)`.
///
/// Probes step each coordinate by `eps` in both directions, so `f` is
/// evaluated `2 * x.len() + 1` times.
pub fn grad_check<F>(f: F, shape: &[usize], x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    if eps <= 0.0 {
        return Err(Error::Precondition(format!(
            "grad_check step must be positive, got {eps}"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != x.len() {
        return Err(Error::Precondition(format!(
            "grad_check shape {:?} does not match {} values",
            shape,
            x.len()
        )));
    }

    let mut tape = Tape::new();
    let input = tape.leaf(shape, x.to_vec(), true);
    let output = f(&mut tape, input)?;
    if tape.tensor(output).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got output shape {:?}",
            tape.shape(output)
        )));
    }
    let grads = tape.backward(output)?;
    let analytic: Vec<f64> = match grads.get(input) {
        Some(g) => g.to_vec(),
        // Output does not depend on the input at all.
        None => vec![0.0; x.len()],
    };

    let eval = |probe: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let leaf = t.leaf(shape, probe.to_vec(), false);
        let out = f(&mut t, leaf)?;
        Ok(t.values(out)[0])
    };

    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + eps;
        let plus = eval(&probe)?;
        probe[i] = original - eps;
        let minus = eval(&probe)?;
        probe[i] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
