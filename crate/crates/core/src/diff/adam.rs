use super::params::ParamStore;
use crate::error::{CapsError, Result};

/// Bias-corrected Adam moments for every tensor of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        adam_step(params, grads, self, lr)
    }
}

pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(CapsError::dim("adam_step", &[params.len()], &[grads.len()]));
    }
    for ((t, g), m) in params.tensors().iter().zip(grads).zip(&state.first_moment) {
        if t.len() != g.len() || t.len() != m.len() {
            return Err(CapsError::dim("adam_step", t.shape(), &[g.len()]));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.first_moment[i], &mut state.second_moment[i], &grads[i]);
        for (j, p) in tensor.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn store(vals: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::vector(vals));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(vec![1.0, -2.0]);
        let mut st = AdamState::new(&p);
        st.step(&mut p, &[vec![0.0, 0.0]], 0.1).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.0, -2.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_is_lr_sized() {
        // t=1: mhat = g, vhat = g^2, so delta = -lr * g / (|g| + eps).
        let mut p = store(vec![0.0]);
        let mut st = AdamState::new(&p);
        st.step(&mut p, &[vec![1.0]], 0.1).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensors()[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = store(vec![0.3, 0.1, -0.2]);
            let mut st = AdamState::new(&p);
            for k in 0..5 {
                let g = vec![0.1 * k as f64, -0.5, 2.0];
                st.step(&mut p, &[g], 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = store(vec![0.0; 3]);
        let mut st = AdamState::new(&p);
        assert!(st.step(&mut p, &[vec![0.0; 2]], 0.1).is_err());
    }
}
