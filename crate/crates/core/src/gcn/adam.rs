use ndarray::{Array2, Zip};

use super::{GcnGradients, GcnModel};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for both weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m0: Array2<f64>,
    v0: Array2<f64>,
    m1: Array2<f64>,
    v1: Array2<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(model: &GcnModel) -> Self {
        Self {
            m0: Array2::zeros(model.w0.dim()),
            v0: Array2::zeros(model.w0.dim()),
            m1: Array2::zeros(model.w1.dim()),
            v1: Array2::zeros(model.w1.dim()),
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }
}

/// One bias-corrected Adam update of `model` in place.
pub fn adam_step(model: &mut GcnModel, grads: &GcnGradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step);
    update(&mut model.w0, &grads.w0, &mut state.m0, &mut state.v0, lr, bc1, bc2);
    update(&mut model.w1, &grads.w1, &mut state.m1, &mut state.v1, lr, bc1, bc2);
}

fn update(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    });
}
