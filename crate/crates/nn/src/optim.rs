use crate::error::{mismatch, Result};
use crate::params::{Grads, ParamStore};
use crate::scalar::Scalar;

/// Adam moments and step counter for one parameter store.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        Self::with_betas(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<T: Scalar>(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are left
/// untouched and their moments do not decay.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(mismatch("adam_step", &[params.len()], &[grads.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for id in params.ids() {
        let Some(g) = grads.get(id) else { continue };
        let p = params.get_mut(id);
        if g.len() != p.len() {
            return Err(mismatch("adam_step", p.shape(), &[g.len()]));
        }
        let m = &mut state.first[id.0];
        let v = &mut state.second[id.0];
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi.as_f64();
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= T::cast(lr * mhat / (vhat.sqrt() + state.eps));
        }
    }
    Ok(())
}

/// Linear warm-up from 0 to `peak` over `warmup` steps, then cosine decay to 0
/// at `total`.
pub fn lr_schedule(step: u64, warmup: u64, peak: f64, total: u64) -> f64 {
    if warmup > 0 && step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert_filled("w", vec![3], 0.7).unwrap();
        let mut state = OptimizerState::new(&store);
        let mut g = Grads::new(1);
        g.set(id, vec![0.0; 3]);
        adam_step(&mut store, &g, &mut state, 0.1).unwrap();
        assert_eq!(store.get(id).data(), &[0.7, 0.7, 0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g/|g|.
        let mut store = ParamStore::<f64>::new();
        let id = store.insert_filled("w", vec![1], 0.0).unwrap();
        let mut state = OptimizerState::new(&store);
        let mut g = Grads::new(1);
        g.set(ParamId(0), vec![1.0]);
        adam_step(&mut store, &g, &mut state, 0.1).unwrap();
        let w = store.get(id).data()[0];
        assert!((w + 0.1).abs() < 1e-8, "{w}");
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(0, 2000, 2.5e-4, 10_000), 0.0);
        assert!((lr_schedule(2000, 2000, 2.5e-4, 10_000) - 2.5e-4).abs() < 1e-18);
        // Cosine midpoint: 0.5 * (1 + cos(pi/2)) = 0.5.
        let mid = lr_schedule(6000, 2000, 2.5e-4, 10_000);
        assert!((mid - 1.25e-4).abs() < 1e-15);
        assert_eq!(lr_schedule(10_000, 2000, 2.5e-4, 10_000), 0.0);
        assert!((lr_schedule(1000, 2000, 2.5e-4, 10_000) - 1.25e-4).abs() < 1e-18);
    }
}
