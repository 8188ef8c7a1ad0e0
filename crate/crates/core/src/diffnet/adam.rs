use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, p)| (k.clone(), Tensor::zeros(p.value.shape())))
                .collect()
        };
        OptimizerState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Moments packed as a param store (`m/<path>`, `v/<path>`, `step`) for checkpointing.
    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (k, t) in &self.first {
            s.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.second {
            s.insert(format!("v/{k}"), t.clone());
        }
        s.insert("step", Tensor::scalar(self.step as f64));
        s
    }

    pub fn from_store(store: &ParamStore, config: AdamConfig) -> Self {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (k, p) in store.iter() {
            if let Some(rest) = k.strip_prefix("m/") {
                first.insert(rest.to_string(), p.value.clone());
            } else if let Some(rest) = k.strip_prefix("v/") {
                second.insert(rest.to_string(), p.value.clone());
            }
        }
        let step = if store.contains("step") {
            store.get("step").data()[0] as u64
        } else {
            0
        };
        OptimizerState {
            config,
            step,
            first,
            second,
        }
    }
}

/// One bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState) {
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (path, p) in params.iter_mut() {
        let m = state.first.get_mut(path).expect("moment for every param");
        let v = state.second.get_mut(path).expect("moment for every param");
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.grad.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = scalar_store(0.7);
        let mut st = OptimizerState::new(&s, AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut s, &mut st);
        }
        assert_eq!(s.get("w").data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        let mut st = OptimizerState::new(&s, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        s.param_mut("w").grad.data_mut()[0] = 1.0;
        adam_step(&mut s, &mut st);
        assert!((s.get("w").data()[0] + 0.1).abs() < 1e-8);
        assert_eq!(s.param("w").grad.data()[0], 0.0);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(&s, AdamConfig { lr: 0.05, ..AdamConfig::default() });
        for _ in 0..200 {
            let w = s.get("w").data()[0];
            s.param_mut("w").grad.data_mut()[0] = 2.0 * w;
            adam_step(&mut s, &mut st);
        }
        assert!(s.get("w").data()[0].abs() < 0.1);
    }

    #[test]
    fn state_round_trips_through_store() {
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(&s, AdamConfig::default());
        s.param_mut("w").grad.data_mut()[0] = 0.3;
        adam_step(&mut s, &mut st);
        let back = OptimizerState::from_store(&st.to_store(), st.config);
        assert_eq!(back, st);
    }
}
