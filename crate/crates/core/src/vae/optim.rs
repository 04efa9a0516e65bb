use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::sampling::Rng;

/// `fan_in×fan_out` weights uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(invalid("fans must be at least 1"));
    }
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| a * (2.0 * rng.uniform() - 1.0)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

/// `T_max · (T_min / T_max)^{min(1, 2t / t_total)}`: exponential decay over
/// the first half of the run, constant afterwards.
pub fn anneal_temperature(t: usize, t_total: usize, t_max: f64, t_min: f64) -> f64 {
    if t_total == 0 {
        return t_min;
    }
    let frac = (2.0 * t as f64 / t_total as f64).min(1.0);
    t_max * (t_min / t_max).powf(frac)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter that has a gradient. Parameters without one are left alone.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| invalid(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    detail: format!("`{name}`: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).unwrap();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
