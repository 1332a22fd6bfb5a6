//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Compares tape gradients with central differences for every input element.
///
/// `f` builds a scalar from the supplied inputs, which are bound as trainable
/// leaves. Returns the largest `|a - n| / max(|a|, |n|, 1e-8)` over all elements.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|x| tape.param(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|x| tape.param(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).shape() != [1, 1] {
        return Err(Error::Shape {
            op: "grad_check",
            detail: "function must be scalar-valued".into(),
        });
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads
            .get(*v)
            .map(Tensor::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()]);
        for e in 0..x.len() {
            let [r, c] = x.shape();
            let shifted = |delta: f64| {
                let mut d = x.to_vec();
                d[e] += delta;
                Tensor::new(r, c, d)
            };
            probe[k] = shifted(step)?;
            let plus = eval(&probe)?;
            probe[k] = shifted(-step)?;
            let minus = eval(&probe)?;
            probe[k] = x.clone();
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[e];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
