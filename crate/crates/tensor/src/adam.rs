//! Adam with bias correction, default betas 0.9/0.999 and epsilon 1e-8.

use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.v[index]
    }
}

/// One Adam update over parallel parameter/gradient lists. Gradients with
/// non-finite entries abort before any parameter is touched.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    lr: f32,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::arg(
            "adam_step",
            format!(
                "parameter/gradient/state counts differ: {}/{}/{}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(TensorError::ShapeMismatch {
                axis: "param/grad length",
                expected: p.len(),
                got: g.len(),
            });
        }
        if !g.all_finite() {
            return Err(TensorError::NonFiniteGradient { index: i });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
        {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Tensor::from_fn(vec![4], |i| i as f32);
        let before = p.clone();
        let g = Tensor::zeros(vec![4]);
        let mut state = AdamState::new(&[4]);
        adam_step(&mut [&mut p], &[&g], &mut state, 1e-4).unwrap();
        assert_eq!(p.data(), before.data());
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::new(vec![3], vec![0.3, -0.7, 2.0]).unwrap();
        let mut state = AdamState::new(&[3]);
        let lr = 1e-4;
        adam_step(&mut [&mut p], &[&g], &mut state, lr).unwrap();
        // Bias correction makes m_hat/sqrt(v_hat) ~ sign(g) on step one.
        let expect = [1.0 - lr, -2.0 + lr, 0.5 - lr];
        for (a, b) in p.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < lr * 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_lr_keeps_params_but_decays_moments() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let mut state = AdamState::new(&[2]);
        adam_step(&mut [&mut p], &[&g], &mut state, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert!(state.first_moment(0)[0] > 0.0);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Tensor::zeros(vec![2]);
        let g = Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap();
        let mut state = AdamState::new(&[2]);
        let err = adam_step(&mut [&mut p], &[&g], &mut state, 1e-4).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteGradient { index: 0 }));
        assert_eq!(state.step_count(), 0);
    }
}
