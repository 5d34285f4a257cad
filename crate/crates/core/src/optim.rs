//! Adam with per-tensor learning rates.

use crate::error::{Error, Result};
use crate::nn::Params;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl Params) -> Self {
        Self::for_shapes(params.tensors().iter().map(|t| t.len()))
    }

    pub fn for_shapes(lens: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = lens.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { t: 0, m, v }
    }

    /// One bias-corrected step. Tensors with learning rate 0 are left
    /// untouched, moments included.
    pub fn update(&mut self, params: &mut impl Params, grads: &impl Params, lrs: &[f64]) -> Result<()> {
        let mut p = params.tensors_mut();
        let g = grads.tensors();
        adam_update(&mut p, &g, self, lrs)
    }
}

/// Apply one Adam step to matching parameter and gradient tensors.
pub fn adam_update(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lrs: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != lrs.len() {
        return Err(Error::contract("optimizer state does not match the parameter set"));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::contract("optimizer tensor shape mismatch"));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let lr = lrs[i];
        if lr == 0.0 {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.iter_mut().enumerate() {
            let gj = grads[i][j];
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= lr * mh / (vh.sqrt() + EPSILON);
        }
    }
    Ok(())
}
