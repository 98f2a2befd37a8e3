//! Property suites for the kernel, the Lévy sampler and the duality oracle.
//! The `verify` command and the acceptance tests both call these.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use superfractal::kernels::{
    build_kernel, check_gradient_bounds, check_kernel_difference_bound, check_tail_bound,
    GradientBound, KernelEstimateReport,
};
use superfractal::levy::{
    empirical_laplace_check, jump_rate_above, truncated_sup_tail_grid, LaplaceCheckReport,
    TailGridReport,
};
use superfractal::loglaplace::{duality_check, DualityReport};
use superfractal::model::{Grid1D, ModelParams, RunConfig};
use superfractal::sim::{SimConfig, Simulator};

use crate::config::{DualitySpec, VerifySpec};
use crate::error::{in_stage, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    /// Sup-norm error against the Gaussian and Cauchy kernels on `|x| ≤ 8 t^{1/α}`.
    pub gauss_error: f64,
    pub cauchy_error: f64,
    /// Worst `|∫p_t − 1|` over α ∈ {1, 1.3, 1.6, 2} and t ∈ {0.01, 0.1, 1}.
    pub normalization_error: f64,
    /// Worst relative deviation from `p_t(x) = t^{−1/α} p_1(t^{−1/α}x)`.
    pub scaling_error: f64,
    pub pass: bool,
}

const TIMES: [f64; 3] = [0.01, 0.1, 1.0];

/// Closed forms, normalization and the scaling law.
pub fn kernel_closed_forms() -> CliResult<ClosedFormReport> {
    let stage = in_stage("verify-kernel");
    let gauss = |t: f64, x: f64| (-x * x / (4.0 * t)).exp() / (4.0 * PI * t).sqrt();
    let cauchy = |t: f64, x: f64| t / (PI * (t * t + x * x));
    let sup_err = |alpha: f64, f: &dyn Fn(f64, f64) -> f64| -> CliResult<f64> {
        let mut err: f64 = 0.0;
        for &t in &TIMES {
            let w = t.powf(1.0 / alpha);
            let grid = Grid1D::centered(16.0 * w, 2048).map_err(&stage)?;
            let tab = build_kernel(alpha, t, grid).map_err(&stage)?;
            for (i, x) in grid.points().into_iter().enumerate() {
                if x.abs() <= 8.0 * w {
                    err = err.max((tab.values[i] - f(t, x)).abs());
                }
            }
        }
        Ok(err)
    };
    let gauss_error = sup_err(2.0, &gauss)?;
    let cauchy_error = sup_err(1.0, &cauchy)?;

    let mut normalization_error: f64 = 0.0;
    for &alpha in &[1.0, 1.3, 1.6, 2.0] {
        for &t in &TIMES {
            let w = t.powf(1.0 / alpha);
            let grid = Grid1D::centered(16.0 * w, 4096).map_err(&stage)?;
            let m = build_kernel(alpha, t, grid)
                .and_then(|k| k.total_mass())
                .map_err(&stage)?;
            normalization_error = normalization_error.max((m - 1.0).abs());
        }
    }

    let mut scaling_error: f64 = 0.0;
    for &alpha in &[1.3, 1.6] {
        let t: f64 = 0.05;
        let w = t.powf(1.0 / alpha);
        let tab = build_kernel(alpha, t, Grid1D::centered(16.0 * w, 1024).map_err(&stage)?)
            .map_err(&stage)?;
        let unit = build_kernel(alpha, 1.0, Grid1D::centered(16.0, 1024).map_err(&stage)?)
            .map_err(&stage)?;
        let half = tab.values.len() / 2;
        // Interior points: the outer quarter on each side is left out.
        for i in half / 2..3 * half / 2 {
            let scaled = unit.values[i] / w;
            scaling_error = scaling_error.max((tab.values[i] - scaled).abs() / scaled);
        }
    }
    Ok(ClosedFormReport {
        gauss_error,
        cauchy_error,
        normalization_error,
        scaling_error,
        pass: gauss_error <= 1e-6
            && cauchy_error <= 1e-6
            && normalization_error <= 1e-6
            && scaling_error <= 1e-10,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCase {
    pub inequality: String,
    pub alpha: f64,
    pub report: KernelEstimateReport,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub samples: usize,
    pub cases: Vec<InequalityCase>,
    pub pass: bool,
}

/// Fitted-constant protocol for the kernel difference, gradient, Taylor and
/// tail inequalities.
pub fn kernel_inequalities(
    alphas: &[f64],
    samples: usize,
    seed: u64,
) -> CliResult<InequalityReport> {
    let stage = in_stage("verify-kernel");
    let mut jobs: Vec<(String, f64, f64, Option<GradientBound>)> = Vec::new();
    for &alpha in alphas {
        for &d in &[0.25, 0.5, 1.0] {
            jobs.push(("difference".into(), alpha, d, None));
        }
        for &d in &[0.5, 1.0] {
            jobs.push((
                "gradient_difference".into(),
                alpha,
                d,
                Some(GradientBound::Difference),
            ));
        }
        jobs.push((
            "gradient_pointwise".into(),
            alpha,
            0.0,
            Some(GradientBound::Pointwise),
        ));
        for &d in &[1.0, 1.5, 2.0] {
            jobs.push(("taylor".into(), alpha, d, Some(GradientBound::Taylor)));
        }
        jobs.push(("tail".into(), alpha, 0.0, None));
    }
    let cases = jobs
        .into_par_iter()
        .enumerate()
        .map(|(k, (name, alpha, delta, which))| {
            let s = seed.wrapping_add(k as u64);
            let report = match (name.as_str(), which) {
                ("tail", _) => check_tail_bound(alpha, samples, s),
                (_, Some(w)) => check_gradient_bounds(alpha, delta, samples, s, w),
                _ => check_kernel_difference_bound(alpha, delta, samples, s),
            }
            .map_err(&stage)?;
            Ok(InequalityCase {
                inequality: name,
                alpha,
                stable: report.is_stable(),
                report,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(InequalityReport {
        samples,
        pass: cases.iter().all(|c| c.stable),
        cases,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyReport {
    pub laplace: Vec<LaplaceCheckReport>,
    pub tail: Vec<TailGridReport>,
    pub pass: bool,
}

/// `(t, x, y)` cells of the truncated-supremum tail grid.
pub fn tail_cells() -> Vec<(f64, f64, f64)> {
    let mut cells = Vec::new();
    for &t in &[0.5, 1.0] {
        for &y in &[0.5, 1.0, 2.0] {
            for &m in &[1.0, 2.0, 3.0] {
                cells.push((t, m * y, y));
            }
        }
    }
    cells
}

/// Truncation level giving `rate` jumps per unit time.
pub fn levy_r_min(kappa: f64, rate: f64) -> f64 {
    // jump_rate_above(κ, r) = c r^{−κ}/κ
    (rate / jump_rate_above(kappa, 1.0)).powf(-1.0 / kappa)
}

/// Laplace transform of `L_t` and the truncated-supremum tail bound.
pub fn levy_identities(spec: &VerifySpec, seed: u64) -> CliResult<LevyReport> {
    let stage = in_stage("verify-levy");
    let cells = tail_cells();
    let mut laplace = Vec::new();
    let mut tail = Vec::new();
    for (k, &kappa) in spec.levy_kappas.iter().enumerate() {
        let r_min = levy_r_min(kappa, spec.levy_jump_rate);
        let s = seed.wrapping_add(1000 * k as u64);
        laplace.push(
            empirical_laplace_check(kappa, &spec.levy_lambdas, 1.0, spec.levy_paths, r_min, s)
                .map_err(&stage)?,
        );
        tail.push(
            truncated_sup_tail_grid(kappa, &cells, spec.levy_paths, r_min, s + 1)
                .map_err(&stage)?,
        );
    }
    let pass = laplace.iter().all(|r| r.pass()) && tail.iter().all(|r| r.pass());
    Ok(LevyReport {
        laplace,
        tail,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualitySuiteReport {
    pub params: ModelParams,
    pub replicas: usize,
    pub checks: Vec<DualityReport>,
    pub pass: bool,
}

/// Monte-Carlo `E exp(−⟨X_t, φ⟩)` against `exp(−⟨μ, u_t⟩)` for each bump.
pub fn duality(
    params: &ModelParams,
    spec: &DualitySpec,
    seed: u64,
) -> CliResult<DualitySuiteReport> {
    let stage = in_stage("duality");
    let grid = Grid1D::unit(spec.grid_points).map_err(&stage)?;
    let run = RunConfig {
        seed,
        n_replicas: spec.replicas,
        time_steps: spec.time_steps,
        r_min: spec.r_min,
        gamma: 1e-4,
        output_dir: ".".into(),
    };
    let cfg = SimConfig {
        track_v_hat: false,
        ..SimConfig::default()
    };
    let sim = Simulator::new(params, &grid, &run, &cfg).map_err(&stage)?;
    let sg = sim.sim_grid;
    let ensemble: Vec<Vec<f64>> = (0..spec.replicas as u64)
        .into_par_iter()
        .map(|r| sim.run_replica(r).map(|o| o.x_t_full))
        .collect::<superfractal::Result<_>>()
        .map_err(&stage)?;
    let checks = spec
        .bumps
        .iter()
        .map(|b| {
            duality_check(
                params,
                &b.sample(&sg),
                &sg,
                &ensemble,
                spec.solver_steps,
                spec.solver_rel_tol,
            )
            .map_err(&stage)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DualitySuiteReport {
        params: params.clone(),
        replicas: spec.replicas,
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub closed_forms: Option<ClosedFormReport>,
    pub inequalities: Option<InequalityReport>,
    pub levy: Option<LevyReport>,
    pub duality: Option<DualitySuiteReport>,
}

impl VerifyReport {
    pub fn gates(&self) -> Vec<(&'static str, bool)> {
        let mut g = Vec::new();
        if let Some(r) = &self.closed_forms {
            g.push(("kernel_closed_forms", r.pass));
        }
        if let Some(r) = &self.inequalities {
            g.push(("kernel_inequalities", r.pass));
        }
        if let Some(r) = &self.levy {
            g.push(("levy_identities", r.pass));
        }
        if let Some(r) = &self.duality {
            g.push(("duality", r.pass));
        }
        g
    }
}

pub fn run_verify(params: &ModelParams, spec: &VerifySpec, seed: u64) -> CliResult<VerifyReport> {
    let (closed_forms, inequalities) = if spec.kernel {
        (
            Some(kernel_closed_forms()?),
            Some(kernel_inequalities(
                &spec.kernel_alphas,
                spec.kernel_samples,
                seed,
            )?),
        )
    } else {
        (None, None)
    };
    let levy = if spec.levy {
        Some(levy_identities(spec, seed)?)
    } else {
        None
    };
    let duality = if spec.duality {
        Some(duality(params, &spec.duality_spec, seed)?)
    } else {
        None
    };
    Ok(VerifyReport {
        closed_forms,
        inequalities,
        levy,
        duality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_min_matches_rate() {
        for &k in &[1.2, 1.5, 1.8] {
            let r = levy_r_min(k, 200.0);
            assert!((jump_rate_above(k, r) - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tail_cells_cover_ratios() {
        let c = tail_cells();
        assert_eq!(c.len(), 18);
        assert!(c.iter().all(|&(_, x, y)| x >= y));
    }
}
