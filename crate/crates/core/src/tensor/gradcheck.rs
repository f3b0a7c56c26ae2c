//! Central-difference gradient checking in double precision.

use crate::error::{shape_err, Result};

use super::{Tape, Tensor, Var};

/// Which elements of each input are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    All,
    /// At most this many evenly spaced elements per input tensor.
    Spaced(usize),
}

impl Probe {
    fn indices(self, len: usize) -> Vec<usize> {
        match self {
            Probe::Spaced(m) if m < len => (0..m).map(|i| i * len / m).collect(),
            _ => (0..len).collect(),
        }
    }
}

/// Fixed weights used to reduce a non-scalar output to a scalar, so that a
/// wrong gradient cannot hide behind a plain sum.
fn projection(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 + ((i as f64 * 0.618_033_988_75).fract()))
        .collect()
}

fn scalarize(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let t = tape.value(out);
    if t.numel() == 1 {
        return Ok(out);
    }
    let weights = Tensor::new(t.shape(), projection(t.numel()))?;
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let s = scalarize(&mut tape, out)?;
    Ok(tape.value(s).data()[0])
}

/// Maximum over probed elements of `|analytic - numeric| / max(1, |numeric|)`
/// where the numeric derivative is `(f(x + h e) - f(x - h e)) / 2h`.
///
/// `f` builds its graph on the supplied tape from one var per input. Outputs
/// with more than one element are reduced by a fixed weighted sum.
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor<f64>], step: f64, probe: Probe) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(crate::Error::InvalidHyperparameter(format!(
            "gradcheck step {step} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, grads) in analytic.iter().enumerate() {
        for idx in probe.indices(inputs[which].numel()) {
            let orig = inputs[which].data()[idx];
            work[which].data_mut()[idx] = orig + step;
            let plus = evaluate(&f, &work)?;
            work[which].data_mut()[idx] = orig - step;
            let minus = evaluate(&f, &work)?;
            work[which].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (grads[idx] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Err(shape_err!("non-finite gradient at input {which}, element {idx}"));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`gradcheck_many`] probing every element.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    gradcheck_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        step,
        Probe::All,
    )
}
