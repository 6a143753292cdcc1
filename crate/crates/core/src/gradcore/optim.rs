use super::{Real, Tensor};

/// Adam moment buffers for one fixed, ordered set of parameter tensors.
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Real> AdamState<T> {
    /// Default moment decay constants (0.9, 0.999) and epsilon 1e-8.
    pub fn new(params: &[&Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One adaptive-moment update over a parameter set. `params` and `grads`
/// must be in the same order the state was built with.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: T,
) {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state built for a different set");
    state.step += 1;
    let t = state.step as i32;
    let one = T::one();
    let bias1 = one - state.beta1.powi(t);
    let bias2 = one - state.beta2.powi(t);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(
            p.shape(),
            g.shape(),
            "adam shape mismatch: param {:?} vs grad {:?}",
            p.shape(),
            g.shape()
        );
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = state.beta1 * m.data()[i] + (one - state.beta1) * gi;
            let vi = state.beta2 * v.data()[i] + (one - state.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            p.data_mut()[i] = p.data()[i] - lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}

/// Scale all gradients so their joint Euclidean norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * k;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::<f32>::new(&[2], vec![0.5, -0.25]);
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[&p]);
        for _ in 0..10 {
            adam_step(&mut [&mut p], &[&g], &mut st, 0.001);
        }
        assert_eq!(p.data(), &[0.5, -0.25]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        // With a constant gradient the adaptive-moment ratio m_hat/sqrt(v_hat)
        // tends to 1, so the per-step displacement tends to lr.
        let mut p = Tensor::<f64>::scalar(0.0);
        let g = Tensor::scalar(3.7);
        let mut st = AdamState::new(&[&p]);
        let lr = 0.001;
        let mut last = p.item();
        let mut step_size = 0.0;
        for _ in 0..2_000 {
            adam_step(&mut [&mut p], &[&g], &mut st, lr);
            step_size = (p.item() - last).abs();
            last = p.item();
        }
        assert!(
            (step_size - lr).abs() < lr * 0.01,
            "step size {} did not approach lr {}",
            step_size,
            lr
        );
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let run = || {
            let mut p = Tensor::<f32>::new(&[3], vec![1.0, 2.0, 3.0]);
            let mut st = AdamState::new(&[&p]);
            for k in 0..25 {
                let g = Tensor::new(&[3], vec![0.1 * k as f32, -0.2, 0.05]);
                adam_step(&mut [&mut p], &[&g], &mut st, 0.01);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut grads = vec![Tensor::<f32>::new(&[2], vec![3.0, 4.0])];
        let norm = clip_global_norm(&mut grads, 10.0);
        assert!((norm - 5.0).abs() < 1e-6);
        assert_eq!(grads[0].data(), &[3.0, 4.0]);

        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-6);
        let clipped = grads[0].sq_norm().sqrt();
        assert!((clipped - 1.0).abs() < 1e-5, "clipped norm {}", clipped);
    }
}
