//! Adam optimization and stepped learning-rate decay.

use crate::autodiff::Param;
use crate::dense::DenseMat;
use crate::error::{Error, Result};

/// Step decay: the base rate is multiplied by `gamma` once for every
/// milestone at or below the current (0-based) epoch.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub milestones: Vec<usize>,
}

impl Schedule {
    pub fn new(base_lr: f64, gamma: f64, milestones: Vec<usize>) -> Schedule {
        Schedule {
            base_lr,
            gamma,
            milestones,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.gamma.powi(hits as i32)
    }
}

/// Adam with first/second moment estimates, bias correction, and decoupled
/// weight decay: parameters flagged for decay additionally shrink by
/// `lr · weight_decay · θ` each step, independent of the moment estimates.
/// Bias and normalization parameters are registered without decay.
pub struct Adam {
    params: Vec<Param>,
    decay: Vec<bool>,
    m: Vec<DenseMat>,
    v: Vec<DenseMat>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    /// `params` pairs each parameter with whether weight decay applies.
    pub fn new(params: Vec<(Param, bool)>, weight_decay: f64) -> Adam {
        let m = params
            .iter()
            .map(|(p, _)| {
                let (r, c) = p.shape();
                DenseMat::zeros(r, c)
            })
            .collect();
        let v = params
            .iter()
            .map(|(p, _)| {
                let (r, c) = p.shape();
                DenseMat::zeros(r, c)
            })
            .collect();
        let (params, decay) = params.into_iter().unzip();
        Adam {
            params,
            decay,
            m,
            v,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Apply one update from the gradients accumulated in the parameters.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad();
            if !grad.is_all_finite() {
                return Err(Error::NonFiniteGrad {
                    param: p.name().to_string(),
                });
            }
            let wd = if self.decay[i] { self.weight_decay } else { 0.0 };
            let mut value = p.value_mut();
            for (((th, &g), m), v) in value
                .data
                .iter_mut()
                .zip(&grad.data)
                .zip(self.m[i].data.iter_mut())
                .zip(self.v[i].data.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *th -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * *th);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(name: &str, data: Vec<f64>) -> Param {
        let n = data.len();
        Param::new(name, DenseMat::from_vec(1, n, data).unwrap())
    }

    #[test]
    fn schedule_steps_at_each_milestone() {
        let s = Schedule::new(0.001, 0.1, vec![25, 35, 45]);
        assert_eq!(s.lr_at(0), 0.001);
        assert_eq!(s.lr_at(24), 0.001);
        assert!((s.lr_at(25) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(26) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(35) - 1e-5).abs() < 1e-19);
        assert!((s.lr_at(44) - 1e-5).abs() < 1e-19);
        assert!((s.lr_at(46) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn zero_gradients_and_zero_decay_leave_parameters_unchanged() {
        let p = param("w", vec![1.0, -2.0, 3.0]);
        let before = p.value().clone();
        let mut opt = Adam::new(vec![(p.clone(), true)], 0.0);
        opt.step(0.01).unwrap();
        opt.step(0.01).unwrap();
        assert_eq!(*p.value(), before);
    }

    #[test]
    fn first_step_moves_by_roughly_lr_against_the_gradient() {
        let p = param("w", vec![0.0, 0.0]);
        p.grad_mut().data.copy_from_slice(&[0.5, -2.0]);
        let mut opt = Adam::new(vec![(p.clone(), false)], 0.0);
        opt.step(0.001).unwrap();
        // m̂/(√v̂ + ε) = g/(|g| + ε') ≈ sign(g) on the first step.
        assert!((p.value().data[0] + 0.001).abs() < 1e-6);
        assert!((p.value().data[1] - 0.001).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradients() {
        let p = param("w", vec![2.0, -4.0]);
        let mut opt = Adam::new(vec![(p.clone(), true)], 0.1);
        opt.step(0.5).unwrap();
        // θ ← θ − lr·wd·θ = 0.95 θ.
        assert!((p.value().data[0] - 2.0 * 0.95).abs() < 1e-12);
        assert!((p.value().data[1] + 4.0 * 0.95).abs() < 1e-12);

        // The same parameter registered without decay stays put.
        let q = param("b", vec![2.0]);
        let mut opt = Adam::new(vec![(q.clone(), false)], 0.1);
        opt.step(0.5).unwrap();
        assert_eq!(q.value().data[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_is_reported_by_name() {
        let p = param("conv0.theta", vec![1.0]);
        p.grad_mut().data[0] = f64::NAN;
        let mut opt = Adam::new(vec![(p, true)], 0.0);
        match opt.step(0.001) {
            Err(Error::NonFiniteGrad { param }) => assert_eq!(param, "conv0.theta"),
            other => panic!("expected NonFiniteGrad, got {other:?}"),
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize f(w) = (w − 3)² by hand-supplied gradients.
        let p = param("w", vec![0.0]);
        let mut opt = Adam::new(vec![(p.clone(), false)], 0.0);
        for _ in 0..2000 {
            let w = p.value().data[0];
            p.zero_grad();
            p.grad_mut().data[0] = 2.0 * (w - 3.0);
            opt.step(0.05).unwrap();
        }
        assert!((p.value().data[0] - 3.0).abs() < 1e-3);
    }
}
