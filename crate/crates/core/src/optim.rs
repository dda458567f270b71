//! Parameter containers and the AdamW optimizer.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// A fixed collection of named real-valued tensors.
pub trait Parameters: Clone + Send + Sync {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn add_assign(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * s);
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

impl Parameters for Array2<f64> {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![("matrix", self)]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![("matrix", self)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new<P: Parameters>(cfg: AdamWConfig, params: &P) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| Array2::zeros(t.raw_dim()))
            .collect();
        AdamW {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, ((_, p), (_, g))) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            Zip::from(p)
                .and(g)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *p -= lr * weight_decay * *p;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}
