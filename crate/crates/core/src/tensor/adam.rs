use super::{Result, TensorError};

/// Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            step_count: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    for (dim, got) in [("grads", grads.len()), ("m", state.m.len()), ("v", state.v.len())] {
        if got != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                dim,
                expected: params.len(),
                got,
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
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
    fn first_step_moves_by_lr() {
        let mut p = [1.0];
        let mut s = AdamState::new(1, 1e-4);
        adam_step(&mut p, &[0.5], &mut s).unwrap();
        // m̂/√v̂ = 0.5/(0.5 + 1e-8)
        assert!((p[0] - (1.0 - 1e-4)).abs() < 1e-11);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_grad_leaves_param() {
        let mut p = [0.3, -2.0];
        let mut s = AdamState::new(2, 1e-4);
        s.m = vec![0.0, 0.0];
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, [0.3, -2.0]);
        assert_eq!(s.m, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_grad_decays_existing_moments() {
        let mut p = [0.0];
        let mut s = AdamState::new(1, 1e-4);
        s.m = vec![1.0];
        s.v = vec![4.0];
        adam_step(&mut p, &[0.0], &mut s).unwrap();
        assert_eq!(s.m, vec![0.9]);
        assert!((s.v[0] - 4.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn constant_grad_matches_scalar_recurrence() {
        // Independent scalar recurrence written out by hand.
        let (lr, g) = (1e-3, 0.7);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 2.0f64);
        let mut expected = Vec::new();
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            expected.push(x);
        }
        let mut p = [2.0];
        let mut s = AdamState::new(1, lr);
        adam_step(&mut p, &[g], &mut s).unwrap();
        assert!((p[0] - expected[0]).abs() < 1e-14);
        adam_step(&mut p, &[g], &mut s).unwrap();
        assert!((p[0] - expected[1]).abs() < 1e-14);
        assert!(expected[1] < expected[0] && expected[0] < 2.0);
        assert_eq!(s.step_count, 2);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut p = [0.0, 1.0];
        let mut s = AdamState::new(2, 1e-4);
        let err = adam_step(&mut p, &[1.0], &mut s).unwrap_err();
        assert!(err.to_string().contains("grads"));
        assert_eq!(s.step_count, 0);
    }
}
