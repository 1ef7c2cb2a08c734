//! Adaptive-moment optimizer with decoupled weight decay and a linear
//! warmup / linear decay learning-rate schedule.

use crate::numkit::{ParamSet, Tensor};

pub struct AdamW {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, warmup_steps: usize, total_steps: usize, weight_decay: f64) -> AdamW {
        let m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        AdamW {
            lr,
            warmup_steps: warmup_steps.max(1),
            total_steps: total_steps.max(1),
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    /// Piecewise-linear schedule: ramps from `lr / warmup_steps` at step 0
    /// to `lr` at the warmup boundary, then decays linearly toward 0 at
    /// `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else if self.total_steps <= self.warmup_steps {
            self.lr
        } else {
            let remain = (self.total_steps - step) as f64;
            let span = (self.total_steps - self.warmup_steps) as f64;
            self.lr * (remain / span).max(0.0)
        }
    }

    /// One update from pre-reduced gradients ordered like the ParamSet.
    /// Replaces each parameter tensor with a fresh leaf.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        let lr_t = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let ids: Vec<_> = params.ids().collect();
        for (idx, id) in ids.into_iter().enumerate() {
            let old = params.get(id);
            let g = &grads[idx];
            debug_assert_eq!(g.len(), old.len());
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut data = old.data().to_vec();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= lr_t * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * data[i]);
            }
            params.replace(id, Tensor::param_with_dtype(old.shape(), data, old.dtype()));
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Tensor::param(&[2], vec![1.0, -1.0]));
        p
    }

    #[test]
    fn schedule_ramps_and_decays() {
        let params = empty_params();
        let opt = AdamW::new(&params, 0.1, 10, 100, 0.0);
        // value at step 0 is lr / warmup_steps
        assert!((opt.lr_at(0) - 0.01).abs() < 1e-12);
        // peak at the warmup boundary
        assert!((opt.lr_at(9) - 0.1).abs() < 1e-12);
        // strictly increasing through warmup, non-increasing after
        for s in 1..10 {
            assert!(opt.lr_at(s) > opt.lr_at(s - 1));
        }
        for s in 11..100 {
            assert!(opt.lr_at(s) <= opt.lr_at(s - 1));
        }
        // near zero at the end
        assert!(opt.lr_at(99) < 0.01);
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_gradient() {
        let mut params = empty_params();
        let mut opt = AdamW::new(&params, 0.5, 1, 2, 0.1);
        opt.apply(&mut params, &[vec![0.0, 0.0]]);
        let w = params.by_name("w").unwrap().tensor.clone();
        assert!((w.data()[0] - 0.95).abs() < 1e-12);
        assert!((w.data()[1] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn gradient_moves_against_the_slope() {
        let mut params = empty_params();
        let mut opt = AdamW::new(&params, 0.1, 1, 10, 0.0);
        opt.apply(&mut params, &[vec![1.0, -1.0]]);
        let w = params.by_name("w").unwrap().tensor.clone();
        assert!(w.data()[0] < 1.0);
        assert!(w.data()[1] > -1.0);
    }
}
