use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Multiplier applied to the base learning rate at each step: an
/// exponential ramp from 1/100 over the warmup steps, then step decays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub total_steps: usize,
    #[serde(default = "Schedule::default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "Schedule::default_milestones")]
    pub milestones: Vec<f64>,
    #[serde(default = "Schedule::default_decay")]
    pub decay: f64,
}

impl Schedule {
    fn default_warmup() -> f64 {
        0.02
    }

    fn default_milestones() -> Vec<f64> {
        vec![0.66, 0.9]
    }

    fn default_decay() -> f64 {
        0.1
    }

    pub fn new(total_steps: usize) -> Self {
        Self {
            total_steps,
            warmup_fraction: Self::default_warmup(),
            milestones: Self::default_milestones(),
            decay: Self::default_decay(),
        }
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    pub fn factor(&self, step: usize) -> f64 {
        let tw = self.warmup_steps();
        let warm = if step < tw {
            (100f64.ln() * (step as f64 / tw as f64 - 1.0)).exp()
        } else {
            1.0
        };
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| step as f64 >= m * self.total_steps as f64)
            .count();
        warm * self.decay.powi(passed as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay. State is kept per tensor slot; call
/// [`AdamW::begin_step`] once per optimization step, then
/// [`AdamW::update`] for every slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [T], grad: &[T], lr: f64, weight_decay: f64) {
        assert!(self.step > 0, "begin_step must precede update");
        assert_eq!(param.len(), grad.len());
        let (b1, b2) = (T::c(self.cfg.beta1), T::c(self.cfg.beta2));
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, wd, eps) = (T::c(lr), T::c(weight_decay), T::c(self.cfg.eps));
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            param[i] = param[i] - lr * (mh / (vh.sqrt() + eps) + wd * param[i]);
        }
    }
}
