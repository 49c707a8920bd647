use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over flat parameter/gradient vectors.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam gradients", params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("adam moments", params.len(), state.m.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if g == 0.0 && *m == 0.0 && *v == 0.0 {
            continue;
        }
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_advances_step() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2, 0.1);
        adam_update(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.m, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3, 0.01);
        adam_update(&mut p, &[3.0, -0.2, 1e-3], &mut s).unwrap();
        for (got, want) in p.iter().zip([-0.01, 0.01, -0.01]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn quadratic_descends() {
        let mut w = vec![1.0];
        let mut s = AdamState::new(1, 0.1);
        let mut trace = vec![w[0]];
        for _ in 0..3 {
            let g = vec![2.0 * w[0]];
            adam_update(&mut w, &g, &mut s).unwrap();
            trace.push(w[0]);
        }
        assert!(trace.windows(2).all(|p| p[1] < p[0]), "{trace:?}");
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2, 0.1);
        assert!(adam_update(&mut [0.0; 2], &[0.0; 3], &mut s).is_err());
        assert!(adam_update(&mut [0.0; 3], &[0.0; 3], &mut s).is_err());
    }
}
