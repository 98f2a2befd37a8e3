//! Euler scheme for the jump SPDE of the (α,1,β)-superprocess on a periodic
//! grid, recording every jump atom `(s, y, r)`.
//!
//! One step of length `dt` starting at `s₀` with state `X`:
//!
//! 1. `Y = e^{a dt} S_dt X` (exact spectral semigroup);
//! 2. jumps above the truncation level `r_cut` arrive as a Poisson number
//!    with mean `ϱ dt ⟨Y⁺,1⟩ r_cut^{−1−β}/(1+β)`, in a cell chosen with
//!    probability proportional to `Y⁺`, uniform inside that cell, with sizes
//!    `r_cut U^{−1/(1+β)}`; each adds `r/dx` to its cell;
//! 3. their compensator `ϱ dt r_cut^{−β}/β · Y⁺` is subtracted.
//!
//! Step 2 and 3 have equal means, so `E⟨X_t,1⟩ = |μ|e^{at}` holds exactly in
//! the discrete scheme.
//!
//! The truncation level depends on the lag `τ = t − s₀`:
//! `r_cut(τ) = r_min (τ/t)^ζ`. With `ζ = (1+η̄_c)/α` every dropped jump is
//! too small to create a singularity rougher than `η̄_c` at its own spatial
//! scale `τ^{1/α}`, which keeps late small scales resolved at a bounded jump
//! budget. `ζ = 0` gives a fixed truncation.
//!
//! Time steps are `min(q·τ, t/time_steps, dt_f)` where `dt_f` keeps the
//! compensated fraction per step below `max_compensator_fraction`; stepping
//! stops once the lag drops below `dx^α`, where the kernel is narrower than a
//! cell.

mod diagnostics;
mod representation;
mod timechange;

pub use diagnostics::{diagnostics_good_event, DiagnosticsConfig, DiagnosticsReport};
pub use representation::{compute_z2_derivative, density_from_representation};
pub use timechange::{increment_time_change, kernel_difference, TimeChange};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derive_exponents, Grid1D, ModelParams, RunConfig, SpectrumTheory};
use crate::rng;
use crate::spectral::Spectral;

/// Simulator tuning; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulation domain length as a multiple of the analysis window.
    pub pad_factor: usize,
    /// Upper bound on `dt / (t − s)`.
    pub lag_ratio: f64,
    /// `ζ` in `r_cut(τ) = r_min (τ/t)^ζ`; `None` means `(1+η̄_c)/α`.
    pub truncation_exponent: Option<f64>,
    /// Upper bound on the compensated fraction of `Y⁺` per step.
    pub max_compensator_fraction: f64,
    /// Smallest lag that is stepped through; `None` means `dx^α`.
    pub lag_floor: Option<f64>,
    /// Keep the full field after every step.
    pub store_path: bool,
    /// Compute `V̂ = max S_{2^α(t−s)} X_s` on the analysis window.
    pub track_v_hat: bool,
    /// Abort when a replica would record more jumps than this.
    pub max_jumps: usize,
    /// Record `X_s` masses of the `2^L` equal cells of the analysis window
    /// after every step (needed by the event census).
    pub cell_mass_level: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            pad_factor: 4,
            lag_ratio: 0.1,
            truncation_exponent: None,
            max_compensator_fraction: 0.5,
            lag_floor: None,
            store_path: false,
            track_v_hat: true,
            max_jumps: 50_000_000,
            cell_mass_level: None,
        }
    }
}

/// One recorded atom `r δ_y` of the jump measure at time `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub s: f64,
    pub y: f64,
    pub r: f64,
    pub step: u32,
    /// Cell index on the simulation grid.
    pub cell: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub jumps: Vec<Jump>,
}

impl JumpRecord {
    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn count_above(&self, r0: f64) -> usize {
        self.jumps.iter().filter(|j| j.r > r0).count()
    }
}

/// One time step of the scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub s0: f64,
    pub dt: f64,
    pub r_cut: f64,
}

/// `s ↦ X_s` on the simulation grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurePath {
    /// `0 = s_0 < s_1 < … = t`.
    pub time_grid: Vec<f64>,
    /// Density after each step (index `k` is `X_{s_k}`); empty unless stored.
    pub fields: Vec<Vec<f64>>,
    /// `⟨X_{s_k}, 1⟩` over the whole periodic domain.
    pub total_mass_series: Vec<f64>,
    /// `⟨X_{s_k}, 1_{window}⟩` over the analysis window.
    pub window_mass_series: Vec<f64>,
    /// `⟨Y⁺,1⟩` driving the jumps of step `k` (one entry per step).
    #[serde(default)]
    pub plus_mass_series: Vec<f64>,
    /// Masses of the `2^L` analysis cells at each `s_k`; empty unless recorded.
    #[serde(default)]
    pub cell_masses: Vec<Vec<f64>>,
}

/// `X_t = Z¹ + Z² + Z³` on the analysis grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityDecomposition {
    pub grid: Grid1D,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    pub x_t: Vec<f64>,
    /// `∂Z²/∂x`, only when `β < (α−1)/2`.
    pub z2_prime: Option<Vec<f64>>,
}

impl DensityDecomposition {
    /// Mass of the negative part of `x_t` relative to its total mass.
    pub fn negative_mass_fraction(&self) -> f64 {
        let neg: f64 = self.x_t.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
        let tot: f64 = self.x_t.iter().map(|v| v.abs()).sum();
        if tot > 0.0 {
            neg / tot
        } else {
            0.0
        }
    }
}

/// Everything one replica produces.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub params: ModelParams,
    pub sim_grid: Grid1D,
    pub analysis_grid: Grid1D,
    /// Index of the first analysis point on the simulation grid.
    pub offset: usize,
    pub steps: Vec<StepInfo>,
    pub path: MeasurePath,
    pub jumps: JumpRecord,
    /// Terminal fields on the simulation grid.
    pub x_t_full: Vec<f64>,
    pub z1_full: Vec<f64>,
    pub z2_full: Vec<f64>,
    pub z3_full: Vec<f64>,
    /// `Σ_k S_{t−s_{k+1}} C_k`: the subtracted compensator carried to time `t`.
    pub compensator_full: Vec<f64>,
    pub decomposition: DensityDecomposition,
    /// `max_k max_{x ∈ window} S_{2^α(t−s_k)} X_{s_k}(x)`.
    pub v_hat: f64,
    /// Largest `⟨Y⁻,1⟩ / ⟨|Y|,1⟩` seen before a jump step.
    pub worst_negative_fraction: f64,
}

impl SimOutput {
    /// `∫₀^t ϱ⟨X_s⁺,1⟩ ds · r₀^{−1−β}/(1+β)`: the compensator of the number
    /// of recorded jumps above `r0`, exact when `r0` is at least every
    /// truncation level.
    pub fn integrated_compensator(&self, rho_coeff: f64, r0: f64) -> f64 {
        let k = self.params.kappa();
        self.steps
            .iter()
            .zip(&self.path.plus_mass_series)
            .map(|(st, m)| st.dt * m)
            .sum::<f64>()
            * rho_coeff
            * r0.powf(-k)
            / k
    }

    /// Highest mass of `X_s` on the analysis window over the run.
    pub fn sup_window_mass(&self) -> f64 {
        self.path
            .window_mass_series
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.x_t_full.iter().sum::<f64>() * self.sim_grid.dx
    }
}

/// Shared, replica-independent set-up: grids, time steps, spectral symbol.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub params: ModelParams,
    pub theory: SpectrumTheory,
    pub run: RunConfig,
    pub config: SimConfig,
    pub analysis_grid: Grid1D,
    pub sim_grid: Grid1D,
    pub offset: usize,
    pub steps: Vec<StepInfo>,
    mu_field: Vec<f64>,
    symbol: Vec<f64>,
    spectral: Spectral,
}

impl Simulator {
    pub fn new(
        params: &ModelParams,
        analysis_grid: &Grid1D,
        run: &RunConfig,
        config: &SimConfig,
    ) -> Result<Self> {
        let theory = derive_exponents(params)?;
        if !(run.r_min > 0.0) || run.time_steps == 0 {
            return Err(Error::InvalidParams(
                "r_min must be positive and time_steps >= 1".into(),
            ));
        }
        if config.pad_factor == 0 || !config.pad_factor.is_power_of_two() {
            return Err(Error::InvalidParams(
                "pad_factor must be a power of two".into(),
            ));
        }
        let n = analysis_grid.n_points;
        let pad = config.pad_factor;
        let extra = (pad - 1) as f64 * analysis_grid.length() / 2.0;
        let sim_grid = Grid1D::new(
            analysis_grid.x_min - extra,
            analysis_grid.x_max + extra,
            n * pad,
        )?;
        let offset = (pad - 1) * n / 2;
        if let Some(level) = config.cell_mass_level {
            if level >= usize::BITS || !n.is_multiple_of(1usize << level) {
                return Err(Error::InvalidParams(format!(
                    "cell_mass_level {level} does not divide {n} analysis points"
                )));
            }
        }
        let zeta = config
            .truncation_exponent
            .unwrap_or((1.0 + theory.eta_bar_c) / params.alpha);
        let floor = config
            .lag_floor
            .unwrap_or(sim_grid.dx.powf(params.alpha))
            .min(params.t);
        let steps = build_time_grid(params, &theory, run, config, zeta, floor)?;
        let spectral = Spectral::new(&sim_grid);
        let symbol = spectral.symbol(params.alpha);
        Ok(Simulator {
            params: params.clone(),
            theory,
            run: run.clone(),
            config: config.clone(),
            analysis_grid: *analysis_grid,
            sim_grid,
            offset,
            steps,
            mu_field: params.mu.discretize(&sim_grid),
            symbol,
            spectral,
        })
    }

    fn record_cells(&self, path: &mut MeasurePath, x: &[f64]) {
        if let Some(level) = self.config.cell_mass_level {
            let w = self.window(x);
            let per = w.len() >> level;
            let dx = self.sim_grid.dx;
            path.cell_masses
                .push(w.chunks(per).map(|c| c.iter().sum::<f64>() * dx).collect());
        }
    }

    /// Expected number of recorded jumps per replica when `X_s` keeps its
    /// mean mass.
    pub fn expected_jump_count(&self) -> f64 {
        let p = &self.params;
        let kappa = 1.0 + p.beta;
        let m0 = p.mu.total_mass();
        self.steps
            .iter()
            .map(|st| {
                let mass = m0 * (p.a * (st.s0 + st.dt)).exp();
                self.theory.rho_coeff * st.dt * mass * st.r_cut.powf(-kappa) / kappa
            })
            .sum()
    }

    fn multiplier(&self, tau: f64) -> Vec<f64> {
        self.symbol.iter().map(|s| (-tau * s).exp()).collect()
    }

    fn window<'a>(&self, f: &'a [f64]) -> &'a [f64] {
        &f[self.offset..self.offset + self.analysis_grid.n_points]
    }

    /// Runs replica `replica` of the ensemble seeded by `run.seed`.
    pub fn run_replica(&self, replica: u64) -> Result<SimOutput> {
        let mut rng = rng::stream(self.run.seed, replica);
        let p = &self.params;
        let st = &self.theory;
        let n = self.sim_grid.n_points;
        let dx = self.sim_grid.dx;
        let beta = p.beta;
        let kappa = 1.0 + beta;
        let mut sp = self.spectral.clone();

        let mut x = self.mu_field.clone();
        let mut z2 = vec![0.0; n];
        let mut z3 = vec![0.0; n];
        let mut comp = vec![0.0; n];
        let mut cdf = vec![0.0; n];
        let mut jumps: Vec<Jump> = Vec::new();
        let mut path = MeasurePath {
            time_grid: vec![0.0],
            ..Default::default()
        };
        let mass = |f: &[f64]| f.iter().sum::<f64>() * dx;
        path.total_mass_series.push(mass(&x));
        path.window_mass_series.push(mass(self.window(&x)));
        if self.config.store_path {
            path.fields.push(x.clone());
        }
        self.record_cells(&mut path, &x);
        let mut v_hat: f64 = 0.0;
        let mut worst_negative: f64 = 0.0;
        let mass_guard = 1e12 * p.mu.total_mass().max(1.0);
        let two_alpha = 2f64.powf(p.alpha);

        for (k, step) in self.steps.iter().enumerate() {
            let lag0 = p.t - step.s0;
            if self.config.track_v_hat {
                let mut smooth = self.window(&x).to_vec();
                if lag0 > 0.0 {
                    let mut full = x.clone();
                    sp.apply(&mut full, &self.multiplier(two_alpha * lag0));
                    smooth.copy_from_slice(self.window(&full));
                }
                v_hat = v_hat.max(smooth.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
            let dt = step.dt;
            let mult = self.multiplier(dt);
            sp.apply_pair(&mut x, &mut z2, &mult);
            let growth = (p.a * dt).exp();
            if p.a != 0.0 {
                sp.apply_pair(&mut z3, &mut comp, &mult);
                let g1 = growth - 1.0;
                for (z, v) in z3.iter_mut().zip(&x) {
                    *z += g1 * v;
                }
                for v in &mut x {
                    *v *= growth;
                }
            } else {
                sp.apply(&mut comp, &mult);
            }

            // Jumps and compensator, both driven by Y⁺.
            let r_cut = step.r_cut;
            let f = st.rho_coeff * dt * r_cut.powf(-beta) / beta;
            let mut acc = 0.0;
            let mut neg = 0.0;
            for (c, v) in cdf.iter_mut().zip(&x) {
                if *v > 0.0 {
                    acc += *v;
                } else {
                    neg -= *v;
                }
                *c = acc;
            }
            if acc + neg > 0.0 {
                worst_negative = worst_negative.max(neg / (acc + neg));
            }
            let m_plus = acc * dx;
            path.plus_mass_series.push(m_plus);
            let lambda = st.rho_coeff * dt * m_plus * r_cut.powf(-kappa) / kappa;
            let count = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::numeric("simulate", e.to_string()))?
                    .sample(&mut rng) as usize
            } else {
                0
            };
            if jumps.len() + count > self.config.max_jumps {
                return Err(Error::numeric(
                    "simulate",
                    format!("jump budget {} exceeded at step {k}", self.config.max_jumps),
                ));
            }
            for v in x.iter_mut().zip(z2.iter_mut()).zip(comp.iter_mut()) {
                let ((xv, z2v), cv) = v;
                let c = f * xv.max(0.0);
                *xv -= c;
                *z2v -= c;
                *cv += c;
            }
            let inv = -1.0 / kappa;
            for _ in 0..count {
                let target = rng.random::<f64>() * acc;
                let cell = cdf.partition_point(|&c| c <= target).min(n - 1);
                let y = self.sim_grid.x(cell) + dx * (rng.random::<f64>() - 0.5);
                let u: f64 = 1.0 - rng.random::<f64>();
                let r = r_cut * u.powf(inv);
                let s = step.s0 + dt * (1.0 - rng.random::<f64>());
                x[cell] += r / dx;
                z2[cell] += r / dx;
                jumps.push(Jump {
                    s,
                    y,
                    r,
                    step: k as u32,
                    cell: cell as u32,
                });
            }

            let s1 = step.s0 + dt;
            path.time_grid.push(s1);
            let m = mass(&x);
            if !(m.abs() < mass_guard) {
                return Err(Error::numeric(
                    "simulate",
                    format!("total mass {m:e} overflowed at s = {s1}"),
                ));
            }
            path.total_mass_series.push(m);
            path.window_mass_series.push(mass(self.window(&x)));
            if self.config.store_path {
                path.fields.push(x.clone());
            }
            self.record_cells(&mut path, &x);
        }
        if self.config.track_v_hat {
            v_hat = v_hat.max(
                self.window(&x)
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }

        let mut z1 = self.mu_field.clone();
        sp.apply(&mut z1, &self.multiplier(p.t));
        let decomposition = DensityDecomposition {
            grid: self.analysis_grid,
            z1: self.window(&z1).to_vec(),
            z2: self.window(&z2).to_vec(),
            z3: self.window(&z3).to_vec(),
            x_t: self.window(&x).to_vec(),
            z2_prime: None,
        };
        Ok(SimOutput {
            params: p.clone(),
            sim_grid: self.sim_grid,
            analysis_grid: self.analysis_grid,
            offset: self.offset,
            steps: self.steps.clone(),
            path,
            jumps: JumpRecord { jumps },
            x_t_full: x,
            z1_full: z1,
            z2_full: z2,
            z3_full: z3,
            compensator_full: comp,
            decomposition,
            v_hat,
            worst_negative_fraction: worst_negative,
        })
    }
}

fn build_time_grid(
    p: &ModelParams,
    st: &SpectrumTheory,
    run: &RunConfig,
    cfg: &SimConfig,
    zeta: f64,
    floor: f64,
) -> Result<Vec<StepInfo>> {
    let t = p.t;
    let uniform = t / run.time_steps as f64;
    let mut steps = Vec::new();
    let mut s = 0.0;
    loop {
        let lag = t - s;
        let r_cut = run.r_min * (lag / t).powf(zeta);
        let dt_f = cfg.max_compensator_fraction * p.beta * r_cut.powf(p.beta) / st.rho_coeff;
        let mut dt = (cfg.lag_ratio * lag).min(uniform).min(dt_f);
        if lag - dt < floor || lag <= floor {
            dt = lag;
        }
        if !(dt > 0.0) {
            return Err(Error::numeric("simulate", "time grid collapsed"));
        }
        steps.push(StepInfo { s0: s, dt, r_cut });
        if dt >= lag {
            break;
        }
        s += dt;
        if steps.len() > 1_000_000 {
            return Err(Error::numeric("simulate", "time grid exceeds 10^6 steps"));
        }
    }
    Ok(steps)
}

/// Runs one replica; shorthand for [`Simulator::run_replica`] with replica 0.
pub fn simulate_measure_path(
    params: &ModelParams,
    grid: &Grid1D,
    run: &RunConfig,
    config: &SimConfig,
) -> Result<(MeasurePath, JumpRecord)> {
    let out = Simulator::new(params, grid, run, config)?.run_replica(0)?;
    Ok((out.path, out.jumps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialMeasure;
    use crate::spectral::apply_semigroup;
    use std::path::PathBuf;

    pub(crate) fn run_config(seed: u64, r_min: f64) -> RunConfig {
        RunConfig {
            seed,
            n_replicas: 1,
            time_steps: 32,
            r_min,
            gamma: 1e-4,
            output_dir: PathBuf::from("./out"),
        }
    }

    #[test]
    fn time_grid_is_geometric_near_t() {
        let p = ModelParams::critical(1.6, 0.4, 1.0);
        let g = Grid1D::unit(256).unwrap();
        let sim = Simulator::new(&p, &g, &run_config(1, 0.05), &SimConfig::default()).unwrap();
        let total: f64 = sim.steps.iter().map(|s| s.dt).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for s in &sim.steps[..sim.steps.len() - 1] {
            assert!(s.dt <= 0.1 * (1.0 - s.s0) + 1e-15);
        }
        let last = sim.steps.last().unwrap();
        assert!(last.dt <= sim.sim_grid.dx.powf(1.6) / 0.9);
        // r_cut decreases with the lag.
        assert!(sim.steps.windows(2).all(|w| w[1].r_cut <= w[0].r_cut));
    }

    #[test]
    fn no_branching_is_heat_flow() {
        let mut p = ModelParams::critical(1.6, 0.4, 0.5);
        p.b = 0.0;
        let g = Grid1D::unit(128).unwrap();
        let cfg = SimConfig {
            truncation_exponent: Some(0.0),
            ..SimConfig::default()
        };
        let sim = Simulator::new(&p, &g, &run_config(3, 1e6), &cfg).unwrap();
        let out = sim.run_replica(0).unwrap();
        assert!(out.jumps.is_empty());
        let heat = apply_semigroup(&p.mu.discretize(&out.sim_grid), 1.6, 0.5, &out.sim_grid);
        let err = out
            .x_t_full
            .iter()
            .zip(&heat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        let m0 = out.path.total_mass_series[0];
        for m in &out.path.total_mass_series {
            assert!(((m - m0) / m0).abs() < 1e-8);
        }
        assert!(out.z3_full.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decomposition_sums_and_jumps_are_valid() {
        let mut p = ModelParams::critical(1.6, 0.4, 0.5);
        p.a = 0.3;
        p.mu = InitialMeasure::lebesgue(0.2, 0.8);
        let g = Grid1D::unit(256).unwrap();
        let sim = Simulator::new(&p, &g, &run_config(5, 0.01), &SimConfig::default()).unwrap();
        let out = sim.run_replica(2).unwrap();
        assert!(!out.jumps.is_empty());
        let d = &out.decomposition;
        for i in 0..g.n_points {
            let sum = d.z1[i] + d.z2[i] + d.z3[i];
            assert!((sum - d.x_t[i]).abs() < 1e-9 * (1.0 + d.x_t[i].abs()));
        }
        for j in &out.jumps.jumps {
            assert!(j.r > out.steps[j.step as usize].r_cut);
            assert!(j.s > 0.0 && j.s <= p.t);
        }
        assert!(out.v_hat.is_finite());
        // Determinism per replica.
        let again = sim.run_replica(2).unwrap();
        assert_eq!(again.x_t_full, out.x_t_full);
    }
}
