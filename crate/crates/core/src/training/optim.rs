use crate::error::{Error, Result};
use crate::tensor::{GradientMap, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moments are kept in 64-bit.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Option<Vec<f64>>>,
    v: Vec<Option<Vec<f64>>>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &GradientMap<T>,
    ) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if self.m.len() < ids.len() {
            self.m.resize(ids.len(), None);
            self.v.resize(ids.len(), None);
        }
        if grads.len() != ids.len() {
            return Err(Error::shape("adam", &[ids.len()], &[grads.len()]));
        }
        for (id, g) in grads.iter() {
            let n = store.get(id).numel();
            if g.len() != n {
                return Err(Error::shape("adam", store.get(id).shape(), &[g.len()]));
            }
        }
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (id, g) in grads.iter() {
            if !store.requires_grad(id) {
                continue;
            }
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v[i].get_or_insert_with(|| vec![0.0; g.len()]);
            let p = store.get_mut(id).data_mut();
            for j in 0..g.len() {
                let gj = g[j].f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] = T::of(p[j].f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}
