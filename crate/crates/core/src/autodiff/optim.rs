use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Adaptive-moment optimizer state (beta1 = 0.9, beta2 = 0.999).
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new<F: Scalar>(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.grad(id).len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step<F: Scalar>(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        store.check_grads_finite()?;
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let grad: Vec<f64> = store.grad(id).iter().map(|g| g.as_f64()).collect();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let values = store.value_mut(id).data_mut();
            for (i, g) in grad.iter().enumerate() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g;
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                values[i] = F::lit(values[i].as_f64() - update);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

/// Outer-loop optimizer: plain SGD or Adam.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new<F: Scalar>(kind: OptimizerKind, store: &ParamStore<F>) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(store)),
        }
    }

    pub fn step<F: Scalar>(&mut self, store: &mut ParamStore<F>, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => store.sgd_step(lr),
            Optimizer::Adam(a) => a.step(store, lr),
        }
    }
}
