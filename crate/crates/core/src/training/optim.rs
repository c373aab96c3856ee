use serde::{Deserialize, Serialize};

use crate::numeric::{ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

/// Learning rate at optimizer step `step` (1-based) of `total`: linear
/// warmup to `peak`, then cosine decay reaching zero at `total`.
pub fn learning_rate(
    schedule: Schedule,
    peak: f64,
    warmup: usize,
    step: usize,
    total: usize,
) -> f64 {
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => peak,
        Schedule::Cosine => {
            if total <= warmup {
                return peak;
            }
            let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
            0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Adam with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`; `grads` are in store order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let decay = T::of(1.0 - lr * self.weight_decay);
        let (step_size, bc2_sqrt) = (T::of(lr / bc1), T::of(bc2.sqrt()));
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id);
            let (m, v, g) = (&mut self.m[k].data, &mut self.v[k].data, &grads[k].data);
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p.data[i] = p.data[i] * decay - step_size * m[i] / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let total = 5000;
        assert!((learning_rate(Schedule::Cosine, 1e-3, 1000, 1000, total) - 1e-3).abs() < 1e-18);
        assert!(learning_rate(Schedule::Cosine, 1e-3, 1000, total, total) <= 1e-9);
        assert!((learning_rate(Schedule::Cosine, 1e-3, 1000, 500, total) - 5e-4).abs() < 1e-18);
        let mid = learning_rate(Schedule::Cosine, 1e-3, 1000, 3000, total);
        assert!((mid - 5e-4).abs() < 1e-12);
        assert_eq!(learning_rate(Schedule::Constant, 1e-3, 0, 77, total), 1e-3);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![
            Tensor::<f64>::from_f64(1, 2, &[3.0, 4.0]),
            Tensor::from_f64(1, 1, &[12.0]),
        ];
        let before = clip_grad_norm(&mut g, 1.0);
        assert!((before - 13.0).abs() < 1e-12);
        let after: f64 = g
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(after <= 1.0 + 1e-6);
        let mut small = vec![Tensor::<f64>::from_f64(1, 1, &[0.5])];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].data[0], 0.5);
    }

    /// Against a scalar transcription of the published update rule.
    #[test]
    fn adamw_matches_reference_update() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::from_f64(1, 2, &[0.5, -1.0]));
        let mut opt = AdamW::new(&s, 0.01);
        let grads = [[0.2, -0.3], [0.1, 0.4], [-0.5, 0.05]];
        let (mut m, mut v, mut w) = ([0.0f64; 2], [0.0f64; 2], [0.5f64, -1.0]);
        for (t, g) in grads.iter().enumerate() {
            let lr = 0.01 * (t + 1) as f64;
            opt.step(&mut s, &[Tensor::from_f64(1, 2, g)], lr);
            for i in 0..2 {
                w[i] -= lr * 0.01 * w[i];
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t as i32 + 1));
                let vh = v[i] / (1.0 - 0.999f64.powi(t as i32 + 1));
                w[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        for i in 0..2 {
            assert!((s.get(id).data[i] - w[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::from_f64(1, 2, &[0.5, -1.0]));
        let before = s.clone();
        let mut opt = AdamW::new(&s, 0.1);
        opt.step(&mut s, &[Tensor::from_f64(1, 2, &[1.0, 1.0])], 0.0);
        assert_eq!(s.by_name("w"), before.by_name("w"));
    }
}
