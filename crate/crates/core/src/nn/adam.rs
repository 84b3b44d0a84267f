use super::{Gradients, Real, WeightSet};

/// Adam hyperparameters. Defaults are the method's published ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-network moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(ws: &WeightSet<T>) -> Self {
        let zeros: Vec<Vec<T>> = ws
            .params
            .iter()
            .map(|p| if p.trainable { vec![T::zero(); p.data.len()] } else { Vec::new() })
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one bias-corrected Adam update with learning rate `lr`.
    pub fn update(&mut self, cfg: &Adam, lr: f64, ws: &mut WeightSet<T>, grads: &Gradients<T>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - cfg.beta1.powi(t));
        let bc2 = T::of(1.0 - cfg.beta2.powi(t));
        let lr = T::of(lr);
        let eps = T::of(cfg.eps);
        for (i, p) in ws.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = &grads.grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.data.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
