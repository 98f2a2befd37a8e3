//! Spectrally positive κ-stable Lévy processes with `E e^{−λL_t} = e^{tλ^κ}`.
//!
//! The Lévy measure is `c_κ r^{−1−κ} dr` on `(0,∞)` with `c_κ = 1/Γ(−κ)`:
//! for `κ ∈ (1,2)`,
//! `∫_0^∞ (e^{−λr} − 1 + λr) r^{−1−κ} dr = Γ(−κ) λ^κ`, and `Γ(−κ) > 0`.
//!
//! Paths keep every jump above `r_min` (Poisson with rate `c_κ r_min^{−κ}/κ`,
//! Pareto sizes) and the compensating drift `−c_κ r_min^{1−κ}/(κ−1)`; the
//! compensated small jumps are dropped. The truncated path therefore has
//! Laplace exponent `λ^κ − ψ_small(λ)` with
//! `ψ_small(λ) = c_κ Σ_{k≥2} (−λ)^k/k! · r_min^{k−κ}/(k−κ)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::stats::{self, ChiSquareResult, KsResult, MeanSe, Welford};

/// `c_κ = 1/Γ(−κ)`.
pub fn levy_constant(kappa: f64) -> f64 {
    1.0 / gamma(-kappa)
}

/// Rate of jumps above `r`: `c_κ r^{−κ}/κ`.
pub fn jump_rate_above(kappa: f64, r: f64) -> f64 {
    levy_constant(kappa) * r.powf(-kappa) / kappa
}

/// Drift compensating the jumps above `r_min`.
pub fn compensating_drift(kappa: f64, r_min: f64) -> f64 {
    -levy_constant(kappa) * r_min.powf(1.0 - kappa) / (kappa - 1.0)
}

/// `ψ_small(λ)`: the part of `λ^κ` carried by jumps below `r_min`.
pub fn small_jump_exponent(kappa: f64, lambda: f64, r_min: f64) -> f64 {
    let c = levy_constant(kappa);
    let x = lambda * r_min;
    let mut sum = 0.0;
    let mut term = 1.0; // (−x)^k / k!
    for k in 1..200 {
        term *= -x / k as f64;
        if k < 2 {
            continue;
        }
        let add = term / (k as f64 - kappa);
        sum += add;
        if add.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    c * r_min.powf(-kappa) * sum
}

/// Exact `E e^{−λ L_t}` of the truncated process.
pub fn truncated_laplace(kappa: f64, lambda: f64, t: f64, r_min: f64) -> f64 {
    (t * (lambda.powf(kappa) - small_jump_exponent(kappa, lambda, r_min))).exp()
}

/// `|e^{tλ^κ} − e^{t(λ^κ − ψ_small)}|`, the bias from dropping small jumps.
pub fn truncation_tolerance(kappa: f64, lambda: f64, t: f64, r_min: f64) -> f64 {
    ((t * lambda.powf(kappa)).exp() - truncated_laplace(kappa, lambda, t, r_min)).abs()
}

/// One truncated path on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StablePathSample {
    pub kappa: f64,
    pub horizon: f64,
    /// `(time, size)` with strictly increasing times.
    pub jumps: Vec<(f64, f64)>,
    /// Drift per unit time.
    pub drift_correction: f64,
    pub r_min: f64,
}

impl StablePathSample {
    fn jumps_through(&self, u: f64) -> f64 {
        let k = self.jumps.partition_point(|&(s, _)| s <= u);
        self.jumps[..k].iter().map(|&(_, r)| r).sum()
    }

    /// `L_u` (right-continuous).
    pub fn value_at(&self, u: f64) -> f64 {
        self.jumps_through(u) + self.drift_correction * u
    }

    /// `L_{u−}`.
    pub fn left_limit(&self, u: f64) -> f64 {
        let k = self.jumps.partition_point(|&(s, _)| s < u);
        self.jumps[..k].iter().map(|&(_, r)| r).sum::<f64>() + self.drift_correction * u
    }

    pub fn terminal(&self) -> f64 {
        self.value_at(self.horizon)
    }

    /// Number of jumps of size above `r`.
    pub fn count_above(&self, r: f64) -> usize {
        self.jumps.iter().filter(|&&(_, v)| v > r).count()
    }

    /// `sup_{u ≤ t} |L_u| 1{every jump up to u is ≤ y}`.
    ///
    /// Between jumps the path is linear, so the supremum is attained at `0`,
    /// at a jump time (from either side) or at `t`.
    pub fn truncated_sup(&self, t: f64, y: f64) -> f64 {
        let d = self.drift_correction;
        let mut level = 0.0;
        let mut sup: f64 = 0.0;
        for &(s, r) in &self.jumps {
            if s > t {
                break;
            }
            let before = level + d * s;
            sup = sup.max(before.abs());
            if r > y {
                return sup;
            }
            level += r;
            sup = sup.max((level + d * s).abs());
        }
        sup.max((level + d * t).abs())
    }
}

pub fn sample_path_with(
    kappa: f64,
    horizon: f64,
    r_min: f64,
    rng: &mut SimRng,
) -> StablePathSample {
    let rate = jump_rate_above(kappa, r_min) * horizon;
    let n = if rate > 0.0 {
        Poisson::new(rate)
            .map(|p| p.sample(rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let inv = -1.0 / kappa;
    let jumps = times
        .into_iter()
        .map(|s| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (s, r_min * u.powf(inv))
        })
        .collect();
    StablePathSample {
        kappa,
        horizon,
        jumps,
        drift_correction: compensating_drift(kappa, r_min),
        r_min,
    }
}

fn check_kappa(kappa: f64, r_min: f64) -> Result<()> {
    if !(kappa > 1.0 && kappa < 2.0) {
        return Err(Error::domain(format!("kappa = {kappa} outside (1,2)")));
    }
    if !(r_min > 0.0) {
        return Err(Error::domain(format!("r_min = {r_min} must be positive")));
    }
    Ok(())
}

pub fn sample_path(kappa: f64, horizon: f64, r_min: f64, seed: u64) -> Result<StablePathSample> {
    check_kappa(kappa, r_min)?;
    if jump_rate_above(kappa, r_min) * horizon < 1e-3 {
        log::warn!("r_min = {r_min} leaves almost no jumps over horizon {horizon}");
    }
    Ok(sample_path_with(
        kappa,
        horizon,
        r_min,
        &mut rng::stream(seed, 0),
    ))
}

/// Maps `f` over `n_paths` independent paths, path `i` drawn from stream `i`.
fn map_paths<T: Send>(
    kappa: f64,
    horizon: f64,
    r_min: f64,
    n_paths: usize,
    seed: u64,
    f: impl Fn(&StablePathSample) -> T + Sync,
) -> Vec<T> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            f(&sample_path_with(kappa, horizon, r_min, &mut r))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheckEntry {
    pub lambda: f64,
    pub empirical: f64,
    pub se: f64,
    /// `e^{tλ^κ}`.
    pub exact: f64,
    /// Exact value for the truncated process.
    pub truncated_exact: f64,
    pub tolerance: f64,
    /// `|empirical − exact| ≤ 3 SE + tolerance`.
    pub pass: bool,
    /// `|empirical − truncated_exact| ≤ 3 SE`.
    pub pass_truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheckReport {
    pub kappa: f64,
    pub t: f64,
    pub r_min: f64,
    pub n_paths: usize,
    pub entries: Vec<LaplaceCheckEntry>,
}

impl LaplaceCheckReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

pub fn empirical_laplace_check(
    kappa: f64,
    lambdas: &[f64],
    t: f64,
    n_paths: usize,
    r_min: f64,
    seed: u64,
) -> Result<LaplaceCheckReport> {
    check_kappa(kappa, r_min)?;
    if lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::domain("lambda values must be >= 0"));
    }
    let terminals = map_paths(kappa, t, r_min, n_paths, seed, |p| p.terminal());
    let entries = lambdas
        .iter()
        .map(|&lambda| {
            let vals: Vec<f64> = terminals.iter().map(|l| (-lambda * l).exp()).collect();
            let m = MeanSe::from_samples(&vals);
            let exact = (t * lambda.powf(kappa)).exp();
            let truncated_exact = truncated_laplace(kappa, lambda, t, r_min);
            let tolerance = truncation_tolerance(kappa, lambda, t, r_min);
            LaplaceCheckEntry {
                lambda,
                empirical: m.mean,
                se: m.se,
                exact,
                truncated_exact,
                tolerance,
                pass: m.agrees_with(exact, 3.0, tolerance),
                pass_truncated: m.agrees_with(truncated_exact, 3.0, 1e-12 * exact),
            }
        })
        .collect();
    Ok(LaplaceCheckReport {
        kappa,
        t,
        r_min,
        n_paths,
        entries,
    })
}

/// One `(x, y, t)` cell of the truncated-supremum tail check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub empirical_prob: f64,
    /// `(C t/(x y^{κ−1}))^{x/y}` at the fitted `C`.
    pub bound_value: f64,
    pub n_paths: usize,
    pub fitted_c: f64,
    /// Relative SE of `empirical_prob` is 30% or more.
    pub vacuous: bool,
}

impl TailBoundReport {
    pub fn holds(&self) -> bool {
        self.vacuous || self.empirical_prob <= self.bound_value * (1.0 + 1e-12)
    }
}

/// Smallest `C` with `p ≤ (C t/(x y^{κ−1}))^{x/y}`.
pub fn constant_for(kappa: f64, p: f64, t: f64, x: f64, y: f64) -> f64 {
    p.powf(y / x) * x * y.powf(kappa - 1.0) / t
}

pub fn tail_bound(kappa: f64, c: f64, t: f64, x: f64, y: f64) -> f64 {
    (c * t / (x * y.powf(kappa - 1.0))).powf(x / y)
}

fn cell_report(kappa: f64, hits: usize, n: usize, t: f64, x: f64, y: f64) -> TailBoundReport {
    let p = hits as f64 / n as f64;
    let rel_se = if hits == 0 {
        f64::INFINITY
    } else {
        ((1.0 - p) / hits as f64).sqrt()
    };
    let fitted_c = constant_for(kappa, p, t, x, y);
    TailBoundReport {
        x,
        y,
        t,
        empirical_prob: p,
        bound_value: tail_bound(kappa, fitted_c, t, x, y),
        n_paths: n,
        fitted_c,
        vacuous: rel_se >= 0.3,
    }
}

/// Single-cell estimate of `P(sup_{u≤t}|L_u| 1{jumps ≤ y} ≥ x)`.
pub fn truncated_sup_tail_check(
    kappa: f64,
    t: f64,
    x: f64,
    y: f64,
    n_paths: usize,
    r_min: f64,
    seed: u64,
) -> Result<TailBoundReport> {
    check_kappa(kappa, r_min)?;
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::domain("x and y must be positive"));
    }
    let hits = map_paths(kappa, t, r_min, n_paths, seed, |p| {
        (p.truncated_sup(t, y) >= x) as usize
    })
    .into_iter()
    .sum();
    Ok(cell_report(kappa, hits, n_paths, t, x, y))
}

/// Grid version with one constant per κ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailGridReport {
    pub kappa: f64,
    pub r_min: f64,
    pub cells: Vec<TailBoundReport>,
    /// Max over non-vacuous cells of the per-cell constant, all paths.
    pub fitted_c: f64,
    /// Same from the first half of the paths.
    pub fitted_c_half: f64,
    /// Every non-vacuous cell obeys the bound at `fitted_c`.
    pub holds: bool,
}

impl TailGridReport {
    pub fn drift(&self) -> f64 {
        if self.fitted_c_half > 0.0 {
            (self.fitted_c / self.fitted_c_half - 1.0).abs()
        } else {
            f64::INFINITY
        }
    }

    /// Fitted-constant protocol: finite, ≤10% drift under doubling, and the
    /// bound holds on every informative cell.
    pub fn pass(&self) -> bool {
        self.fitted_c.is_finite() && self.fitted_c > 0.0 && self.drift() <= 0.10 && self.holds
    }
}

pub fn truncated_sup_tail_grid(
    kappa: f64,
    cells: &[(f64, f64, f64)],
    n_paths: usize,
    r_min: f64,
    seed: u64,
) -> Result<TailGridReport> {
    check_kappa(kappa, r_min)?;
    let horizon = cells.iter().map(|c| c.0).fold(0.0, f64::max);
    let indicators: Vec<Vec<bool>> = map_paths(kappa, horizon, r_min, n_paths, seed, |p| {
        cells
            .iter()
            .map(|&(t, x, y)| p.truncated_sup(t, y) >= x)
            .collect()
    });
    let half = n_paths / 2;
    let fit = |n: usize| -> (Vec<TailBoundReport>, f64) {
        let reports: Vec<TailBoundReport> = cells
            .iter()
            .enumerate()
            .map(|(j, &(t, x, y))| {
                let hits = indicators[..n].iter().filter(|v| v[j]).count();
                cell_report(kappa, hits, n, t, x, y)
            })
            .collect();
        let c = reports
            .iter()
            .filter(|r| !r.vacuous)
            .map(|r| r.fitted_c)
            .fold(0.0, f64::max);
        (reports, c)
    };
    let (_, fitted_c_half) = fit(half);
    let (mut reports, fitted_c) = fit(n_paths);
    for r in &mut reports {
        r.bound_value = tail_bound(kappa, fitted_c, r.t, r.x, r.y);
    }
    let holds = reports.iter().all(|r| r.holds());
    Ok(TailGridReport {
        kappa,
        r_min,
        cells: reports,
        fitted_c,
        fitted_c_half,
        holds,
    })
}

/// Chi-square test that jump counts above each level are Poisson with mean
/// `t c_κ r^{−κ}/κ`.
pub fn jump_count_chi_square(
    kappa: f64,
    t: f64,
    r_min: f64,
    levels: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, ChiSquareResult)>> {
    check_kappa(kappa, r_min)?;
    let counts: Vec<Vec<usize>> = map_paths(kappa, t, r_min, n_paths, seed, |p| {
        levels.iter().map(|&r| p.count_above(r)).collect()
    });
    let mut out = Vec::new();
    for (j, &r) in levels.iter().enumerate() {
        let mean = t * jump_rate_above(kappa, r);
        let max = counts.iter().map(|c| c[j]).max().unwrap_or(0);
        let len = max.max((mean + 10.0 * mean.sqrt() + 10.0) as usize) + 1;
        let mut observed = vec![0.0; len];
        for c in &counts {
            observed[c[j]] += 1.0;
        }
        let pmf = stats::poisson_pmf_table(mean, len);
        let mut expected: Vec<f64> = pmf.iter().map(|p| p * n_paths as f64).collect();
        // Fold the upper tail into the last class.
        let tail = 1.0 - pmf.iter().sum::<f64>();
        expected[len - 1] += tail.max(0.0) * n_paths as f64;
        let res = stats::chi_square_gof(&observed, &expected)
            .ok_or_else(|| Error::numeric("levy", "too few classes for chi-square"))?;
        out.push((r, res));
    }
    Ok(out)
}

/// Two-sample KS test of `L_{ct}` against `c^{1/κ} L_t`, with the truncation
/// level scaled by `c^{1/κ}` so both sides have the same law.
pub fn self_similarity_ks(
    kappa: f64,
    t: f64,
    c: f64,
    r_min: f64,
    n_paths: usize,
    seed: u64,
) -> Result<KsResult> {
    check_kappa(kappa, r_min)?;
    let scale = c.powf(1.0 / kappa);
    let a = map_paths(kappa, t, r_min, n_paths, seed, |p| scale * p.terminal());
    let b = map_paths(
        kappa,
        c * t,
        r_min * scale,
        n_paths,
        seed ^ 0x5eed_5eed,
        |p| p.terminal(),
    );
    Ok(stats::ks_two_sample(&a, &b))
}

/// Mean of `L_t` with its standard error.
pub fn terminal_mean(kappa: f64, t: f64, r_min: f64, n_paths: usize, seed: u64) -> Result<MeanSe> {
    check_kappa(kappa, r_min)?;
    let mut w = Welford::default();
    for v in map_paths(kappa, t, r_min, n_paths, seed, |p| p.terminal()) {
        w.push(v);
    }
    Ok(w.summary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn normalization_reproduces_laplace_exponent() {
        // Γ(−1.5) = 4√π/3.
        assert!((levy_constant(1.5) - 3.0 / (4.0 * PI.sqrt())).abs() < 1e-12);
        // ∫(e^{−λr}−1+λr) c r^{−1−κ} dr = λ^κ, by quadrature in log r.
        for &kappa in &[1.2, 1.5, 1.8] {
            let c = levy_constant(kappa);
            let lambda = 1.7;
            let n = 1_000_000;
            let (lo, hi) = (-250.0f64, 100.0f64);
            let h = (hi - lo) / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                let r = (lo + (i as f64 + 0.5) * h).exp();
                let x = lambda * r;
                let f = if x < 1e-4 {
                    x * x / 2.0 - x * x * x / 6.0
                } else {
                    (-x).exp_m1() + x
                };
                s += f * c * r.powf(-kappa) * h;
            }
            assert!((s / lambda.powf(kappa) - 1.0).abs() < 1e-6, "{kappa}: {s}");
        }
    }

    #[test]
    fn small_jump_exponent_matches_quadrature() {
        let (kappa, lambda, r_min): (f64, f64, f64) = (1.5, 2.0, 0.05);
        let c = levy_constant(kappa);
        let n = 100_000;
        let mut s = 0.0;
        // r = v² removes the integrable singularity at 0.
        let h = r_min.sqrt() / n as f64;
        for i in 0..n {
            let v = (i as f64 + 0.5) * h;
            let r = v * v;
            let x = lambda * r;
            s += ((-x).exp_m1() + x) * c * r.powf(-1.0 - kappa) * 2.0 * v * h;
        }
        let series = small_jump_exponent(kappa, lambda, r_min);
        assert!((s - series).abs() < 1e-6 * series, "{s} {series}");
    }

    #[test]
    fn paths_are_spectrally_positive() {
        let p = sample_path(1.5, 2.0, 0.01, 3).unwrap();
        assert!(!p.jumps.is_empty());
        assert!(p.jumps.iter().all(|&(_, r)| r > 0.01));
        assert!(p.jumps.windows(2).all(|w| w[0].0 < w[1].0));
        let (s, r) = p.jumps[0];
        assert!((p.value_at(s) - p.left_limit(s) - r).abs() < 1e-12);
        assert_eq!(p.value_at(0.0), 0.0);
    }

    #[test]
    fn truncated_sup_examples() {
        let path = StablePathSample {
            kappa: 1.5,
            horizon: 1.0,
            jumps: vec![(0.25, 0.5), (0.5, 2.0)],
            drift_correction: -1.0,
            r_min: 0.1,
        };
        // Before the big jump: levels −0.25 → 0.25 → 0.0 just before s = 0.5.
        assert!((path.truncated_sup(1.0, 1.0) - 0.25).abs() < 1e-12);
        // No truncation: after the big jump the level is 2.0, ending at 1.5.
        assert!((path.truncated_sup(1.0, 3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_exact() {
        let r = empirical_laplace_check(1.5, &[0.0], 1.0, 200, 0.05, 1).unwrap();
        assert_eq!(r.entries[0].empirical, 1.0);
        assert_eq!(r.entries[0].se, 0.0);
        assert!(r.pass());
    }

    #[test]
    fn truncation_bias_shrinks() {
        let mut prev = f64::INFINITY;
        for &r_min in &[0.1, 0.025, 0.00625] {
            let tol = truncation_tolerance(1.5, 1.0, 1.0, r_min);
            assert!(tol < prev);
            prev = tol;
        }
    }

    #[test]
    fn mean_is_zero() {
        let m = terminal_mean(1.5, 1.0, 0.02, 10_000, 11).unwrap();
        assert!(m.mean.abs() <= 3.0 * m.se, "{m:?}");
    }

    #[test]
    fn bound_inverse() {
        let c = constant_for(1.5, 0.01, 1.0, 2.0, 0.5);
        assert!((tail_bound(1.5, c, 1.0, 2.0, 0.5) - 0.01).abs() < 1e-15);
    }
}
