//! Time changes `T^η_±` that turn the kernel increment of `Z²` into
//! spectrally positive stable processes:
//! `T_± = ∫₀^t du ∫ X_u(dy) ((p̃_{t−u}(x₁−y, x₂−y))^±)^{1+β}` with
//! `p̃_s(a,b) = p_s(a) − p_s(b)`, minus `(a−b)∂p_s(b)` when `η > 1`.

use serde::{Deserialize, Serialize};

use super::SimOutput;
use crate::error::{Error, Result};
use crate::kernels::StableKernel;
use crate::model::derive_exponents;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChange {
    pub plus: f64,
    pub minus: f64,
}

/// `p̃_s(a, b)` for the exponent `η`.
pub fn kernel_difference(k: &StableKernel, s: f64, a: f64, b: f64, eta: f64) -> f64 {
    let d = k.density(s, a) - k.density(s, b);
    if eta > 1.0 {
        d - (a - b) * k.gradient(s, b)
    } else {
        d
    }
}

/// Quadrature of `T^η_±(t)` over the stored path: one midpoint lag per time
/// step and cell-centre nodes in space. Requires a run with `store_path`.
pub fn increment_time_change(out: &SimOutput, x1: f64, x2: f64, eta: f64) -> Result<TimeChange> {
    let p = &out.params;
    let st = derive_exponents(p)?;
    if !(eta > st.eta_c && eta < st.eta_bar_c) {
        return Err(Error::domain(format!(
            "eta = {eta} outside ({}, {})",
            st.eta_c, st.eta_bar_c
        )));
    }
    if out.path.fields.len() < out.steps.len() {
        return Err(Error::domain(
            "time change needs a run with store_path = true",
        ));
    }
    if x1 == x2 {
        return Ok(TimeChange {
            plus: 0.0,
            minus: 0.0,
        });
    }
    let k = StableKernel::shared(p.alpha)?;
    let g = &out.sim_grid;
    let len = g.length();
    let kappa = 1.0 + p.beta;
    let (mut plus, mut minus) = (0.0, 0.0);
    for (step, field) in out.steps.iter().zip(&out.path.fields) {
        let lag = p.t - step.s0 - 0.5 * step.dt;
        let (mut sp, mut sm) = (0.0, 0.0);
        for (i, &xv) in field.iter().enumerate() {
            if xv <= 0.0 {
                continue;
            }
            let y = g.x(i);
            // Periodic image nearest the pair midpoint, so swapping the
            // pair swaps the signs exactly.
            let mid = 0.5 * (x1 + x2) - y;
            let shift = len * (mid / len).round();
            let a = x1 - y - shift;
            let b = x2 - y - shift;
            let d = kernel_difference(&k, lag, a, b, eta);
            if d > 0.0 {
                sp += xv * d.powf(kappa);
            } else {
                sm += xv * (-d).powf(kappa);
            }
        }
        plus += step.dt * sp * g.dx;
        minus += step.dt * sm * g.dx;
    }
    Ok(TimeChange { plus, minus })
}
