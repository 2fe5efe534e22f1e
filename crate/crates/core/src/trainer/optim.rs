use std::collections::BTreeMap;

use crate::numerics::Tensor;

/// Learning rate rising linearly from 0 over `warmup_steps`, then falling
/// linearly to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWarmupDecay {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearWarmupDecay {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_fraction).floor() as usize;
        Self {
            peak,
            warmup_steps,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak * step as f64 / self.warmup_steps as f64
        } else if step >= self.total_steps {
            0.0
        } else {
            self.peak * (self.total_steps - step) as f64
                / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

/// Rescales all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, max_norm: f64) -> f64 {
    let grads: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `decay(name)` selects the parameters that receive weight
    /// decay.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        decay: impl Fn(&str) -> bool,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let Some(param) = params.get_mut(name) else {
                continue;
            };
            let n = param.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let wd = if decay(name) { self.weight_decay } else { 0.0 };
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * wd * *p;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = LinearWarmupDecay::new(2e-5, 0.1, 250);
        assert_eq!(s.warmup_steps, 25);
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(25), 2e-5);
        let increment = 2e-5 / 225.0;
        assert!(s.lr(249) <= increment + 1e-18);
        assert_eq!(s.lr(250), 0.0);
    }

    #[test]
    fn schedule_is_piecewise_linear_with_closed_form_area() {
        let s = LinearWarmupDecay::new(1.0, 0.1, 1000);
        // Sum over steps of a triangle rising to 1 at step 100 and back to 0 at 1000.
        let area: f64 = (0..1000).map(|t| s.lr(t)).sum();
        let want = (0..100).map(|t| t as f64 / 100.0).sum::<f64>()
            + (100..1000).map(|t| (1000 - t) as f64 / 900.0).sum::<f64>();
        assert!((area - want).abs() < 1e-9);
        assert!((want - (49.5 + 450.5)).abs() < 1e-9);
        // Second differences vanish except at the breakpoint.
        for t in 1..999 {
            let d2 = s.lr(t + 1) - 2.0 * s.lr(t) + s.lr(t - 1);
            if t != 100 {
                assert!(d2.abs() < 1e-12, "kink at {t}");
            }
        }
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let s = LinearWarmupDecay::new(0.5, 0.0, 10);
        assert_eq!(s.lr(0), 0.5);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut a = Tensor::vector(vec![6.0, 0.0]);
        let mut b = Tensor::vector(vec![8.0]);
        let norm = clip_grad_norm([&mut a, &mut b], 1.0);
        assert_eq!(norm, 10.0);
        let after = (a.norm_sq() + b.norm_sq()).sqrt();
        assert!((after - 1.0).abs() < 1e-15);
        assert!((a.data()[0] - 0.6).abs() < 1e-15 && a.data()[1] == 0.0);

        let mut small = Tensor::vector(vec![0.3, 0.4]);
        clip_grad_norm([&mut small], 1.0);
        assert_eq!(small.data(), &[0.3, 0.4]);
    }

    #[test]
    fn first_adam_step_moves_by_lr_against_gradient_sign() {
        let mut params = BTreeMap::from([("w".to_owned(), Tensor::vector(vec![1.0, -1.0]))]);
        let grads = BTreeMap::from([("w".to_owned(), Tensor::vector(vec![0.5, -2.0]))]);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut params, &grads, 0.1, |_| true);
        let w = params["w"].data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled_and_masked() {
        let mut params = BTreeMap::from([
            ("w".to_owned(), Tensor::vector(vec![2.0])),
            ("b.bias".to_owned(), Tensor::vector(vec![2.0])),
        ]);
        let grads = BTreeMap::from([
            ("w".to_owned(), Tensor::vector(vec![0.0])),
            ("b.bias".to_owned(), Tensor::vector(vec![0.0])),
        ]);
        let mut opt = AdamW::new(0.5);
        opt.step(&mut params, &grads, 0.1, |n| !n.ends_with(".bias"));
        assert!((params["w"].data()[0] - 1.9).abs() < 1e-12);
        assert_eq!(params["b.bias"].data()[0], 2.0);
    }
}
