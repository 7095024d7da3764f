use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// First and second moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    hyper: AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (name, g) in grads {
        let theta = params.get_mut(name)?;
        if theta.len() != g.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: theta.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; g.len()],
            v: vec![0.0; g.len()],
        });
        for (((p, &gi), m), v) in theta
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(mom.m.iter_mut())
            .zip(mom.v.iter_mut())
        {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * gi;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const HYPER: AdamHyper = AdamHyper {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    fn one_param(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    fn grad(g: f64) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), vec![g])])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(1.5);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(0.0), &mut s, HYPER).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.5);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = one_param(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(1.0), &mut s, HYPER).unwrap();
        let m1 = s.moments["w"].m[0];
        adam_step(&mut p, &grad(0.0), &mut s, HYPER).unwrap();
        assert!((s.moments["w"].m[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1, so Δθ = −lr / (1 + ε)
        let mut p = one_param(0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(1.0), &mut s, HYPER).unwrap();
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = one_param(0.0);
        let mut s = AdamState::default();
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..5000 {
            adam_step(&mut p, &grad(0.37), &mut s, HYPER).unwrap();
            let now = p.get("w").unwrap().item();
            last_delta = now - prev;
            prev = now;
        }
        assert!((last_delta + 0.1).abs() < 1e-6, "{last_delta}");
    }

    #[test]
    fn shape_mismatch() {
        let mut p = one_param(0.0);
        let g = BTreeMap::from([("w".to_string(), vec![1.0, 2.0])]);
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), HYPER).is_err());
    }
}
