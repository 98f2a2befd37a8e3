//! Empirical proxies for the three conditions of the good event `A^ε`:
//! jump sizes below `C(t−s)^{1/(1+β)−γ}`, bounded smoothed densities, and a
//! Hölder modulus of exponent `η_c − ε` for `X_t` on `(0,1)`.

use serde::{Deserialize, Serialize};

use super::SimOutput;
use crate::model::derive_exponents;

/// Thresholds that the three statistics are compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub max_jump_ratio: f64,
    pub v_hat: f64,
    pub holder_ratio: f64,
    /// Largest separation used for the Hölder ratio.
    pub max_separation: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            max_jump_ratio: 5.0,
            v_hat: 100.0,
            holder_ratio: 100.0,
            max_separation: 0.125,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub v_hat: f64,
    pub max_jump_ratio: f64,
    pub holder_ratio: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// `[jumps, V̂, Hölder]`, each true when below its threshold.
    pub a_eps_pass: [bool; 3],
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.a_eps_pass.iter().all(|b| *b)
    }
}

/// `max r / (t−s)^{1/(1+β)−γ}` over the recorded atoms; 0 without jumps.
pub fn max_jump_ratio(out: &SimOutput, gamma: f64) -> f64 {
    let t = out.params.t;
    let e = 1.0 / (1.0 + out.params.beta) - gamma;
    out.jumps
        .jumps
        .iter()
        .map(|j| j.r / (t - j.s).max(f64::MIN_POSITIVE).powf(e))
        .fold(0.0, f64::max)
}

/// `sup |f(x₁) − f(x₂)| / |x₁ − x₂|^h` over separations up to `max_sep`
/// (every lag up to 64 cells, geometric beyond).
pub fn holder_ratio(field: &[f64], dx: f64, h: f64, max_sep: f64) -> f64 {
    let n = field.len();
    let max_lag = ((max_sep / dx).floor() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut lags: Vec<usize> = (1..=max_lag.min(64)).collect();
    let mut l = 64.0f64;
    while (l as usize) < max_lag {
        l *= 1.125;
        lags.push((l as usize).min(max_lag));
    }
    lags.dedup();
    let mut best: f64 = 0.0;
    for lag in lags {
        if lag >= n {
            break;
        }
        let d = (0..n - lag)
            .map(|i| (field[i + lag] - field[i]).abs())
            .fold(0.0, f64::max);
        best = best.max(d / (lag as f64 * dx).powf(h));
    }
    best
}

/// Evaluates the three statistics of the good event for one run.
pub fn diagnostics_good_event(
    out: &SimOutput,
    gamma: f64,
    epsilon: f64,
    cfg: &DiagnosticsConfig,
) -> DiagnosticsReport {
    let eta_c = derive_exponents(&out.params)
        .map(|s| s.eta_c)
        .unwrap_or(0.0);
    let jr = max_jump_ratio(out, gamma);
    let hr = holder_ratio(
        &out.decomposition.x_t,
        out.analysis_grid.dx,
        (eta_c - epsilon).max(0.0),
        cfg.max_separation,
    );
    let v = if out.v_hat.is_finite() {
        out.v_hat
    } else {
        out.decomposition.x_t.iter().cloned().fold(0.0, f64::max)
    };
    DiagnosticsReport {
        v_hat: v,
        max_jump_ratio: jr,
        holder_ratio: hr,
        gamma,
        epsilon,
        a_eps_pass: [
            jr <= cfg.max_jump_ratio,
            v <= cfg.v_hat,
            hr <= cfg.holder_ratio,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holder_ratio_of_power_function() {
        let n = 4096;
        let dx = 1.0 / n as f64;
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * dx).powf(0.3)).collect();
        // |x^h − y^h| ≤ |x − y|^h, attained at y = 0.
        let r = holder_ratio(&f, dx, 0.3, 0.125);
        assert!((r - 1.0).abs() < 1e-9, "{r}");
        let lip = holder_ratio(&f, dx, 0.2, 0.125);
        assert!(lip < 1.0);
    }

    #[test]
    fn constant_field_has_zero_ratio() {
        assert_eq!(holder_ratio(&[2.0; 256], 1.0 / 256.0, 0.1, 0.125), 0.0);
    }
}
