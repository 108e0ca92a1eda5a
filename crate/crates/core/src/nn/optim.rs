//! SGD with Nesterov momentum and Adam, both with decoupled weight decay,
//! driven by a cosine annealing schedule.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// lr(step) = lr_min + (lr_max - lr_min) * (1 + cos(pi * step / horizon)) / 2,
/// clamped to lr_min past the horizon. An optional linear warmup prefix
/// ramps from 0 to lr_max before the cosine phase; with momentum SGD the
/// first steps would otherwise slingshot the parameters.
#[derive(Clone, Copy, Debug)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub horizon: usize,
    pub warmup: usize,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, horizon: usize) -> CosineSchedule {
        CosineSchedule {
            lr_max,
            lr_min,
            horizon,
            warmup: 0,
        }
    }

    pub fn with_warmup(lr_max: f64, lr_min: f64, horizon: usize, warmup: usize) -> CosineSchedule {
        CosineSchedule {
            lr_max,
            lr_min,
            horizon,
            warmup,
        }
    }

    pub fn constant(lr: f64) -> CosineSchedule {
        CosineSchedule {
            lr_max: lr,
            lr_min: lr,
            horizon: 1,
            warmup: 0,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr_max * (step + 1) as f64 / self.warmup as f64;
        }
        let step = step - self.warmup;
        let horizon = self.horizon.saturating_sub(self.warmup).max(1);
        if step >= horizon {
            return self.lr_min;
        }
        let frac = step as f64 / horizon as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Algo {
    SgdNesterov { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algo {
    pub fn adam() -> Algo {
        Algo::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_nesterov(momentum: f64) -> Algo {
        Algo::SgdNesterov { momentum }
    }
}

pub struct Optimizer {
    algo: Algo,
    weight_decay: f64,
    schedule: CosineSchedule,
    step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(algo: Algo, weight_decay: f64, schedule: CosineSchedule) -> Optimizer {
        Optimizer {
            algo,
            weight_decay,
            schedule,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Current learning rate, then advances the step counter.
    /// Call once per optimization step, before `update`.
    pub fn begin_step(&mut self) -> f64 {
        let lr = self.schedule.lr(self.step);
        self.step += 1;
        lr
    }

    /// Applies one update to parameter `idx`. Parameters must be visited in a
    /// fixed order so the moment buffers stay aligned.
    pub fn update(&mut self, idx: usize, lr: f64, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if grad.shape() != param.shape() {
            return Err(Error::shape(
                format!("{:?}", param.shape()),
                format!("{:?}", grad.shape()),
            ));
        }
        while self.m.len() <= idx {
            self.m.push(Tensor::zeros(param.shape()));
        }
        // Decoupled weight decay: applied directly to the parameter.
        if self.weight_decay != 0.0 {
            let f = 1.0 - lr * self.weight_decay;
            for p in param.data_mut() {
                *p *= f;
            }
        }
        match self.algo {
            Algo::SgdNesterov { momentum } => {
                let buf = &mut self.m[idx];
                for ((p, b), &g) in param
                    .data_mut()
                    .iter_mut()
                    .zip(buf.data_mut())
                    .zip(grad.data())
                {
                    *b = momentum * *b + g;
                    let d = g + momentum * *b;
                    *p -= lr * d;
                }
            }
            Algo::Adam { beta1, beta2, eps } => {
                while self.v.len() <= idx {
                    self.v.push(Tensor::zeros(param.shape()));
                }
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                let (mbuf, vbuf) = (&mut self.m[idx], &mut self.v[idx]);
                for (((p, m), v), &g) in param
                    .data_mut()
                    .iter_mut()
                    .zip(mbuf.data_mut())
                    .zip(vbuf.data_mut())
                    .zip(grad.data())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if !param.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameter after optimizer step {}",
                self.step
            )));
        }
        Ok(())
    }
}
