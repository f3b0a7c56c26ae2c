use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment buffers, one pair per parameter in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, then every gradient is zeroed.
pub fn adam_step<T: Scalar>(params: &mut Parameters<T>, state: &mut OptimizerState<T>, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer holds {} buffers for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    for (i, (name, t)) in params.iter().enumerate() {
        if t.grad().is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
        if state.m[i].len() != t.numel() {
            return Err(Error::ShapeMismatch(format!("optimizer buffer for {name}")));
        }
    }

    state.step += 1;
    let t_step = state.step as i32;
    let b1 = T::from_f64(BETA1);
    let b2 = T::from_f64(BETA2);
    let one_minus_b1 = T::from_f64(1.0 - BETA1);
    let one_minus_b2 = T::from_f64(1.0 - BETA2);
    let bc1 = T::from_f64(1.0 - BETA1.powi(t_step));
    let bc2 = T::from_f64(1.0 - BETA2.powi(t_step));
    let eps = T::from_f64(EPSILON);
    let lr = T::from_f64(lr);

    for (i, (_, t)) in params.iter_mut().enumerate() {
        let g = t.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in t.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + one_minus_b1 * g[j];
            v[j] = b2 * v[j] + one_minus_b2 * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
        t.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f32, g: f32) -> Parameters<f32> {
        let mut t = Tensor::new(&[1], vec![w]).unwrap().with_requires_grad(true);
        t.accumulate_grad(&[g]);
        Parameters::from_entries(vec![("w".into(), t)]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 0.0002;
        let mut p = single(0.0, 1.0);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &mut s, lr).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], -(lr as f32));
        assert_eq!(p.get("w").unwrap().grad().unwrap()[0], 0.0);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = single(0.75, 0.0);
        let mut s = OptimizerState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &mut s, 0.01).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data()[0], 0.75);
    }

    #[test]
    fn missing_gradient() {
        let t = Tensor::new(&[2], vec![1.0f32, 2.0]).unwrap();
        let mut p = Parameters::from_entries(vec![("w".into(), t)]).unwrap();
        let mut s = OptimizerState::new(&p);
        assert!(matches!(adam_step(&mut p, &mut s, 0.1), Err(Error::MissingGradient(n)) if n == "w"));
    }
}
