use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::error::{shape_err, Error, Result};

/// Adam moments and hyper-parameters for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Array2>,
    pub v: Vec<Array2>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state (zero moments) with the usual `beta1 = 0.9`, `beta2 = 0.999`,
    /// `epsilon = 1e-8`.
    pub fn new(params: &[&Array2], lr: f64) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| Array2::zeros(p.rows(), p.cols()))
                .collect(),
            v: params
                .iter()
                .map(|p| Array2::zeros(p.rows(), p.cols()))
                .collect(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// One Adam update of `params` in place.
///
/// Gradients are checked before anything is modified, so a rejected step
/// leaves both the parameters and the state untouched.
pub fn adam_step(
    params: &mut [&mut Array2],
    grads: &[&Array2],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!("{} parameter arrays", state.m.len()),
            format!("{} params, {} grads", params.len(), grads.len()),
        ));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(shape_err(
                "adam_step",
                format!("parameter {i} of {}x{}", m.rows(), m.cols()),
                format!(
                    "param {}x{}, grad {}x{}",
                    p.rows(),
                    p.cols(),
                    g.rows(),
                    g.cols()
                ),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }

    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.epsilon);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((theta, &gv), (mv, vv)) in it {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
