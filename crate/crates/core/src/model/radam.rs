use crate::error::{KalmError, Result};
use crate::numcore::{ParamGrads, ParamStore, Tensor};

/// Rectified Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct RAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    last_rectified: bool,
}

impl RAdam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = |e: &crate::numcore::ParamEntry| Tensor::new(e.tensor.shape().to_vec(), vec![0.0; e.tensor.len()]).expect("shape of existing tensor");
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: store.entries().iter().map(zeros).collect(),
            v: store.entries().iter().map(zeros).collect(),
            last_rectified: false,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Whether the most recent step used the variance-rectified update.
    pub fn last_rectified(&self) -> bool {
        self.last_rectified
    }

    /// Length of the approximated simple moving average at step `t`.
    pub fn rho(beta2: f64, t: u64) -> f64 {
        let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
        let b2t = beta2.powi(t as i32);
        rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(KalmError::State(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (id, g) in grads.iter() {
            if id.index() >= store.len() || g.shape() != store.get(id).shape() {
                return Err(KalmError::State(format!("gradient for parameter {} has the wrong shape", id.index())));
            }
        }
        self.t += 1;
        let t = self.t;
        let (b1, b2) = (self.beta1, self.beta2);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho_t = Self::rho(b2, t);
        let rectified = rho_t > 4.0;
        let r_t = if rectified {
            (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
        } else {
            0.0
        };
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = grads.get(id);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[j]);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                p[j] -= self.lr * self.weight_decay * p[j];
                let m_hat = m[j] / bc1;
                if rectified {
                    let v_hat = (v[j] / bc2).sqrt();
                    p[j] -= self.lr * r_t * m_hat / (v_hat + self.eps);
                } else {
                    p[j] -= self.lr * m_hat;
                }
            }
        }
        self.last_rectified = rectified;
        Ok(())
    }
}
