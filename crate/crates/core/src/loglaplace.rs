//! Spectral solver for the log-Laplace equation
//! `∂u/∂t = Δ_α u + a u − b u^{1+β}`, `u_0 = φ`, and the duality
//! `E_μ exp(−⟨X_t, φ⟩) = exp(−⟨μ, u_t⟩)` used as an oracle for the simulator.
//!
//! Time stepping is Strang splitting `R(dt/2) D(dt) R(dt/2)`: `D` is the exact
//! periodic semigroup `e^{−dt|ξ|^α}` and `R` the exact flow of
//! `u' = au − bu^{1+β}`, obtained from the linear equation
//! `v' = −aβ v + bβ` for `v = u^{−β}`. Both substeps are contractions on
//! nonnegative data, so the scheme has no step-size stability limit; `dt`
//! controls only the `O(dt²)` splitting error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grid1D, InitialMeasure, ModelParams};
use crate::spectral::Spectral;
use crate::stats::MeanSe;

const OVERFLOW_GUARD: f64 = 1e150;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLaplaceState {
    pub grid: Grid1D,
    pub u: Vec<f64>,
    pub time: f64,
    pub params: ModelParams,
    /// Most negative value removed by clipping after a diffusion step.
    pub worst_clip: f64,
}

/// Exact solution of `u' = au − bu^{1+β}` after time `tau`.
pub fn reaction_flow(u0: f64, a: f64, b: f64, beta: f64, tau: f64) -> f64 {
    if u0 <= 0.0 {
        return 0.0;
    }
    let v0 = u0.powf(-beta);
    let v = if a == 0.0 {
        v0 + b * beta * tau
    } else {
        let e = -a * beta * tau;
        v0 * e.exp() - (b / a) * e.exp_m1()
    };
    v.powf(-1.0 / beta)
}

impl LogLaplaceState {
    pub fn new(phi: &[f64], params: &ModelParams, grid: &Grid1D) -> Result<Self> {
        if phi.len() != grid.n_points {
            return Err(Error::GridMismatch(format!(
                "phi has {} samples, grid has {}",
                phi.len(),
                grid.n_points
            )));
        }
        if phi.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("phi must be finite and nonnegative"));
        }
        Ok(LogLaplaceState {
            grid: *grid,
            u: phi.to_vec(),
            time: 0.0,
            params: params.clone(),
            worst_clip: 0.0,
        })
    }

    fn react(&mut self, tau: f64) {
        let p = &self.params;
        for v in &mut self.u {
            *v = reaction_flow(*v, p.a, p.b, p.beta, tau);
        }
    }

    /// Advances by `duration` in `n_steps` Strang steps.
    pub fn advance(&mut self, duration: f64, n_steps: usize) -> Result<()> {
        if n_steps == 0 || !(duration >= 0.0) {
            return Err(Error::domain("need n_steps >= 1 and duration >= 0"));
        }
        let dt = duration / n_steps as f64;
        let mut sp = Spectral::new(&self.grid);
        let mult = sp.heat_multiplier(self.params.alpha, dt);
        for _ in 0..n_steps {
            self.react(dt / 2.0);
            sp.apply(&mut self.u, &mult);
            for v in &mut self.u {
                if *v < 0.0 {
                    if *v < -1e-10 {
                        self.worst_clip = self.worst_clip.min(*v);
                    }
                    *v = 0.0;
                }
            }
            self.react(dt / 2.0);
            self.time += dt;
            let top = self.u.iter().cloned().fold(0.0, f64::max);
            if !(top < OVERFLOW_GUARD) {
                return Err(Error::numeric(
                    "loglaplace",
                    format!("solution exceeded {OVERFLOW_GUARD:e} at time {}", self.time),
                ));
            }
        }
        if self.worst_clip < 0.0 {
            log::debug!(
                "log-Laplace clipping removed values down to {}",
                self.worst_clip
            );
        }
        Ok(())
    }
}

/// Solves from `u_0 = φ` to `params.t`.
pub fn solve_log_laplace(
    phi: &[f64],
    params: &ModelParams,
    grid: &Grid1D,
    n_steps: usize,
) -> Result<LogLaplaceState> {
    let mut s = LogLaplaceState::new(phi, params, grid)?;
    s.advance(params.t, n_steps)?;
    Ok(s)
}

/// `⟨μ, f⟩` with μ discretised on `grid` exactly as the simulator does.
pub fn pair_measure(mu: &InitialMeasure, f: &[f64], grid: &Grid1D) -> f64 {
    let rho = mu.discretize(grid);
    rho.iter().zip(f).map(|(r, v)| r * v).sum::<f64>() * grid.dx
}

/// `exp(−⟨μ, u_t⟩)`.
pub fn laplace_functional(mu: &InitialMeasure, state: &LogLaplaceState) -> f64 {
    (-pair_measure(mu, &state.u, &state.grid)).exp()
}

/// `E⟨X_t, φ⟩ = e^{at} ⟨μ, S_t φ⟩`.
pub fn first_moment(params: &ModelParams, phi: &[f64], grid: &Grid1D) -> f64 {
    let mut f = phi.to_vec();
    Spectral::new(grid).semigroup(&mut f, params.alpha, params.t);
    (params.a * params.t).exp() * pair_measure(&params.mu, &f, grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub monte_carlo: MeanSe,
    pub oracle: f64,
    /// Absolute solver tolerance added to `3 SE`.
    pub solver_tolerance: f64,
    pub difference: f64,
    pub pass: bool,
}

/// Compares `mean_i exp(−⟨X_t^{(i)}, φ⟩)` with `exp(−⟨μ, u_t⟩)`.
pub fn duality_check(
    params: &ModelParams,
    phi: &[f64],
    grid: &Grid1D,
    ensemble: &[Vec<f64>],
    n_steps: usize,
    solver_rel_tol: f64,
) -> Result<DualityReport> {
    if let Some(bad) = ensemble.iter().find(|f| f.len() != grid.n_points) {
        return Err(Error::GridMismatch(format!(
            "ensemble field has {} samples, grid has {}",
            bad.len(),
            grid.n_points
        )));
    }
    let state = solve_log_laplace(phi, params, grid, n_steps)?;
    let oracle = laplace_functional(&params.mu, &state);
    let vals: Vec<f64> = ensemble
        .iter()
        .map(|x| {
            let s: f64 = x.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() * grid.dx;
            (-s).exp()
        })
        .collect();
    let mc = MeanSe::from_samples(&vals);
    let solver_tolerance = solver_rel_tol * oracle;
    Ok(DualityReport {
        monte_carlo: mc,
        oracle,
        solver_tolerance,
        difference: mc.mean - oracle,
        pass: mc.agrees_with(oracle, 3.0, solver_tolerance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::apply_semigroup;
    use proptest::prelude::*;

    fn params(a: f64, b: f64, t: f64) -> ModelParams {
        ModelParams {
            a,
            b,
            ..ModelParams::critical(1.6, 0.5, t)
        }
    }

    fn grid() -> Grid1D {
        Grid1D::new(-1.5, 2.5, 256).unwrap()
    }

    fn bump(g: &Grid1D, c: f64, h: f64) -> Vec<f64> {
        g.points()
            .iter()
            .map(|&x| h * (-(x - c) * (x - c) / 0.02).exp())
            .collect()
    }

    #[test]
    fn zero_stays_zero() {
        let g = grid();
        let s = solve_log_laplace(&vec![0.0; g.n_points], &params(0.0, 1.0, 1.0), &g, 10).unwrap();
        assert!(s.u.iter().all(|&v| v == 0.0));
        assert_eq!(
            laplace_functional(&InitialMeasure::lebesgue(0.0, 1.0), &s),
            1.0
        );
    }

    #[test]
    fn constant_datum_closed_form() {
        let g = grid();
        let s = solve_log_laplace(&vec![1.0; g.n_points], &params(0.0, 1.0, 1.0), &g, 8).unwrap();
        for v in &s.u {
            assert!((v - 4.0 / 9.0).abs() < 1e-12);
        }
        let unit = InitialMeasure::lebesgue(0.0, 1.0);
        assert!((laplace_functional(&unit, &s) - (-4.0f64 / 9.0).exp()).abs() < 1e-12);
        let atom = InitialMeasure::Atoms {
            atoms: vec![(0.5, 1.0)],
        };
        assert!((laplace_functional(&atom, &s) - (-s.u[128]).exp()).abs() < 1e-12);
    }

    #[test]
    fn reaction_with_drift() {
        // a ≠ 0: compare with a fine RK4 integration of u' = au − bu^{1+β}.
        let (a, b, beta) = (0.7, 1.3, 0.4);
        let f = |u: f64| a * u - b * u.powf(1.0 + beta);
        let mut u = 2.0;
        let n = 100_000;
        let h = 1.5 / n as f64;
        for _ in 0..n {
            let k1 = f(u);
            let k2 = f(u + h / 2.0 * k1);
            let k3 = f(u + h / 2.0 * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((reaction_flow(2.0, a, b, beta, 1.5) - u).abs() < 1e-10);
    }

    #[test]
    fn linear_limit_is_heat_flow() {
        let g = grid();
        let phi = bump(&g, 0.5, 1.0);
        let s = solve_log_laplace(&phi, &params(0.0, 0.0, 0.3), &g, 7).unwrap();
        let heat = apply_semigroup(&phi, 1.6, 0.3, &g);
        let err =
            s.u.iter()
                .zip(&heat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn semigroup_property() {
        let g = grid();
        let phi = bump(&g, 0.4, 2.0);
        let p = params(0.3, 1.0, 0.6);
        let full = solve_log_laplace(&phi, &p, &g, 40).unwrap();
        let mut half = LogLaplaceState::new(&phi, &p, &g).unwrap();
        half.advance(0.3, 20).unwrap();
        half.advance(0.3, 20).unwrap();
        let err = full
            .u
            .iter()
            .zip(&half.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn strang_is_second_order() {
        let g = grid();
        let phi = bump(&g, 0.5, 3.0);
        let p = params(0.0, 1.0, 0.5);
        let sols: Vec<Vec<f64>> = [8, 16, 32, 64]
            .iter()
            .map(|&n| solve_log_laplace(&phi, &p, &g, n).unwrap().u)
            .collect();
        let diff = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let d1 = diff(&sols[0], &sols[1]);
        let d2 = diff(&sols[1], &sols[2]);
        let d3 = diff(&sols[2], &sols[3]);
        assert!(d1 / d2 > 3.0 && d2 / d3 > 3.0, "{d1} {d2} {d3}");
    }

    #[test]
    fn rejects_negative_datum() {
        let g = grid();
        let mut phi = vec![0.0; g.n_points];
        phi[3] = -1.0;
        assert!(solve_log_laplace(&phi, &params(0.0, 1.0, 1.0), &g, 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn comparison_principle(c in 0.0f64..2.0, h1 in 0.1f64..3.0, extra in 0.0f64..2.0) {
            let g = Grid1D::new(-1.0, 2.0, 128).unwrap();
            let lo = bump(&g, c.min(1.5), h1);
            let hi: Vec<f64> = lo.iter().enumerate().map(|(i, v)| v + extra * (i % 7) as f64 / 7.0).collect();
            let p = params(0.2, 1.0, 0.4);
            let a = solve_log_laplace(&lo, &p, &g, 16).unwrap();
            let b = solve_log_laplace(&hi, &p, &g, 16).unwrap();
            for (x, y) in a.u.iter().zip(&b.u) {
                prop_assert!(*x <= *y + 1e-9);
            }
        }
    }
}
