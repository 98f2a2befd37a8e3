//! Census of recorded jumps and of the dyadic events used in the covering
//! arguments for the spectrum.
//!
//! *Jump boxes.* A jump `(s, y, r)` with `(s, r) ∈ D_{j,n} = [t−2^{−j},
//! t−2^{−j−1}) × [2^{−n−1}, 2^{−n})` gets the ball
//! `B(y, (2^{−n}/(2^{−j−1})^{1/(1+β)−γ})^{1/(η−η_c)})`. When the mass on the
//! window stays below `N`, the count in a box is Poisson with mean at most
//! `λ_{n,j} = Nϱ(2^{1+β}−1)/(2(1+β))·2^{n(1+β)−j}`.
//!
//! *Events.* With `I_k = [k2^{−n}, (k+1)2^{−n})`, tallies of `O_n` (some cell
//! carries too much mass late), `B_n(θ)` (some cell meeting `{X_t ≥ θ}`
//! carries too little), `A_k` (a big jump late in `I_k`) and `G_k` (two big
//! jumps near `I_k` in a narrow time band).

use serde::{Deserialize, Serialize};
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::model::{Grid1D, SpectrumTheory};
use crate::sim::{Jump, JumpRecord, SimOutput, StepInfo};
use crate::stats::linear_fit;

/// `(1/(1+β) − γ)`: the exponent of the lag in the jump-size threshold.
fn lag_exponent(st: &SpectrumTheory, gamma: f64) -> f64 {
    1.0 / st.kappa - gamma
}

/// `n₀(j) = ⌊j(1/(1+β) − γ/4)⌋`.
pub fn n0(st: &SpectrumTheory, gamma: f64, j: u32) -> u32 {
    (j as f64 * (1.0 / st.kappa - gamma / 4.0)).floor().max(0.0) as u32
}

/// `n₁(j) = ⌈j(1/(1+β) + γ/4)⌉`.
pub fn n1(st: &SpectrumTheory, gamma: f64, j: u32) -> u32 {
    (j as f64 * (1.0 / st.kappa + gamma / 4.0)).ceil() as u32
}

/// `λ_{n,j}` for the mass bound `n_bound`.
pub fn box_intensity(st: &SpectrumTheory, n_bound: f64, j: u32, n: u32) -> f64 {
    let k = st.kappa;
    n_bound * st.rho_coeff * (2f64.powf(k) - 1.0) / (2.0 * k) * 2f64.powf(n as f64 * k - j as f64)
}

/// Radius of the ball assigned to a jump in `D_{j,n}`.
pub fn ball_radius(st: &SpectrumTheory, gamma: f64, eta: f64, j: u32, n: u32) -> f64 {
    let e = lag_exponent(st, gamma);
    let ratio = 2f64.powf(-(n as f64)) / 2f64.powf(-((j + 1) as f64)).powf(e);
    ratio.powf(1.0 / (eta - st.eta_c))
}

/// `P(Poi(λ) > 2λ)`.
pub fn poisson_excess(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    match Poisson::new(lambda) {
        Ok(p) => p.sf((2.0 * lambda).floor() as u64),
        Err(_) => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpBox {
    pub j: u32,
    pub n: u32,
    pub count: u64,
    pub lambda: f64,
    /// `P(Poi(λ) > 2λ)`, the exact bound for a box.
    pub poisson_bound: f64,
    /// `e^{−λ}`, the bound quoted in the covering argument.
    pub exp_bound: f64,
    pub exceeds: bool,
    pub radius: f64,
}

/// Jumps with `n₀(j) ≤ n ≤ n₁(j)` in one time octave.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Octave {
    pub j: u32,
    pub n0: u32,
    pub n1: u32,
    /// `Λ_j = Σ_{n=n₀}^{n₁} λ_{n,j}`.
    pub lambda_sum: f64,
    pub count: u64,
    pub exceeds: bool,
    /// Largest ball radius over `n ∈ [n₀, n₁]`.
    pub r_j: f64,
    /// Whether all boxes `n₀..=n₁` lie above the truncation level.
    pub complete: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: f64,
    pub radius: f64,
    pub j: u32,
    pub n: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpCensus {
    pub eta: f64,
    pub gamma: f64,
    pub n_bound: f64,
    /// Boxes that lie entirely above the truncation level.
    pub boxes: Vec<JumpBox>,
    pub octaves: Vec<Octave>,
    pub balls: Vec<Ball>,
    /// Jumps with `r ≥ 1`, outside every box.
    pub oversized: u64,
}

impl JumpCensus {
    pub fn exceedances(&self) -> usize {
        self.boxes.iter().filter(|b| b.exceeds).count()
    }
}

/// What a run can resolve: the spatial window, the mass bound `N`, and the
/// truncation level over time.
#[derive(Clone, Debug, PartialEq)]
pub struct CensusScope {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_bound: f64,
    pub steps: Vec<StepInfo>,
}

impl CensusScope {
    /// The analysis window of a run, with `N` its observed sup of mass there.
    pub fn from_output(out: &SimOutput) -> Self {
        CensusScope {
            x_lo: out.analysis_grid.x_min,
            x_hi: out.analysis_grid.x_max,
            n_bound: out.sup_window_mass(),
            steps: out.steps.clone(),
        }
    }

    /// Largest truncation level over steps overlapping `[a, b)`.
    fn max_cut(&self, a: f64, b: f64) -> f64 {
        self.steps
            .iter()
            .filter(|s| s.s0 < b && s.s0 + s.dt > a)
            .map(|s| s.r_cut)
            .fold(0.0, f64::max)
    }

    /// Length of the last step: lags below it are not resolved in time.
    fn finest_lag(&self) -> f64 {
        self.steps.last().map(|s| s.dt).unwrap_or(0.0)
    }
}

/// Bins the jumps of a run into the boxes `D_{j,n}` and assigns balls.
///
/// Only boxes entirely above the truncation level and entirely before the
/// last time step are kept: elsewhere counts are incomplete.
pub fn jump_census(
    jumps: &JumpRecord,
    st: &SpectrumTheory,
    gamma: f64,
    eta: f64,
    t: f64,
    scope: &CensusScope,
) -> Result<JumpCensus> {
    if !(eta > st.eta_c && eta < st.eta_bar_c) {
        return Err(Error::domain(format!(
            "eta = {eta} outside ({}, {})",
            st.eta_c, st.eta_bar_c
        )));
    }
    if !(gamma >= 0.0) || !(t > 0.0) {
        return Err(Error::domain("need gamma >= 0 and t > 0"));
    }
    let j_lo = (-t.log2()).ceil().max(0.0) as u32;
    let finest = scope.finest_lag();
    let mut j_hi = j_lo;
    while j_hi < 60 && 2f64.powi(-(j_hi as i32) - 2) >= finest {
        j_hi += 1;
    }
    // n_hi[j]: last complete size class in octave j.
    let mut n_hi = Vec::new();
    for j in j_lo..=j_hi {
        let a = t - 2f64.powi(-(j as i32));
        let b = t - 2f64.powi(-(j as i32) - 1);
        let cut = scope.max_cut(a, b);
        let nh = if cut > 0.0 {
            ((-cut.log2()).floor() - 1.0).clamp(-1.0, 60.0) as i64
        } else {
            60
        };
        n_hi.push(nh);
    }
    let nj = (j_hi - j_lo + 1) as usize;
    let mut counts = vec![vec![0u64; 61]; nj];
    let mut oversized = 0;
    let mut balls = Vec::new();
    for jp in &jumps.jumps {
        if !(jp.y >= scope.x_lo && jp.y < scope.x_hi) {
            continue;
        }
        let lag = t - jp.s;
        if !(lag > 0.0) {
            continue;
        }
        let j = (-lag.log2()).floor();
        if j < j_lo as f64 || j > j_hi as f64 {
            continue;
        }
        let j = j as u32;
        if jp.r >= 1.0 {
            oversized += 1;
            continue;
        }
        let n = ((-jp.r.log2()).ceil() as i64 - 1).max(0);
        let ji = (j - j_lo) as usize;
        if n > n_hi[ji] {
            continue;
        }
        let n = n as u32;
        counts[ji][n as usize] += 1;
        if n >= n0(st, gamma, j) {
            balls.push(Ball {
                center: jp.y,
                radius: ball_radius(st, gamma, eta, j, n),
                j,
                n,
            });
        }
    }

    let mut boxes = Vec::new();
    let mut octaves = Vec::new();
    for (ji, row) in counts.iter().enumerate() {
        let j = j_lo + ji as u32;
        let nh = n_hi[ji];
        for n in 0..=nh {
            let n = n as u32;
            let lambda = box_intensity(st, scope.n_bound, j, n);
            let count = row[n as usize];
            boxes.push(JumpBox {
                j,
                n,
                count,
                lambda,
                poisson_bound: poisson_excess(lambda),
                exp_bound: (-lambda).exp(),
                exceeds: count as f64 > 2.0 * lambda,
                radius: ball_radius(st, gamma, eta, j, n),
            });
        }
        let (a, b) = (n0(st, gamma, j), n1(st, gamma, j));
        let lambda_sum: f64 = (a..=b)
            .map(|n| box_intensity(st, scope.n_bound, j, n))
            .sum();
        let count: u64 = (a..=b.min(60)).map(|n| row[n as usize]).sum();
        octaves.push(Octave {
            j,
            n0: a,
            n1: b,
            lambda_sum,
            count,
            exceeds: count as f64 > 2.0 * lambda_sum,
            r_j: ball_radius(st, gamma, eta, j, a),
            complete: (b as i64) <= nh,
        });
    }
    Ok(JumpCensus {
        eta,
        gamma,
        n_bound: scope.n_bound,
        boxes,
        octaves,
        balls,
        oversized,
    })
}

/// Truncated evaluation of
/// `Σ_j (2Λ_j r_j^θ + Σ_{n ≥ n₁(j)} 2λ_{n,j} radius_{j,n}^θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumRuleReport {
    pub theta: f64,
    /// `log₂` of the `j`-th term, inner series truncated.
    pub log2_terms: Vec<f64>,
    /// Ratio of consecutive inner terms in `n`.
    pub inner_ratio: f64,
    /// Least-squares slope of `log₂ term_j` against `j`.
    pub j_slope: f64,
    pub converges: bool,
}

fn log2_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (1.0 + 2f64.powf(lo - hi)).log2()
}

/// Trend check of the covering sum: the inner series must decay
/// geometrically in `n` and the octave terms must decay in `j`. Everything
/// is done in `log₂` so large `j` does not underflow.
pub fn sum_rule(
    st: &SpectrumTheory,
    gamma: f64,
    eta: f64,
    theta: f64,
    j_max: u32,
    n_extra: u32,
) -> SumRuleReport {
    let k = st.kappa;
    let e = lag_exponent(st, gamma);
    let de = eta - st.eta_c;
    let c0 = (st.rho_coeff * (2f64.powf(k) - 1.0) / (2.0 * k)).log2() + 1.0;
    // log₂(2λ_{n,j}) and log₂ radius, without the N factor.
    let log_lam = |j: u32, n: u32| c0 + n as f64 * k - j as f64;
    let log_rad = |j: u32, n: u32| (-(n as f64) + (j + 1) as f64 * e) / de;
    let mut log2_terms = Vec::with_capacity(j_max as usize);
    let mut inner_ratio = 0.0;
    for j in 1..=j_max {
        let (a, b) = (n0(st, gamma, j), n1(st, gamma, j));
        let mut lam_sum = f64::NEG_INFINITY;
        for n in a..=b {
            lam_sum = log2_add(lam_sum, log_lam(j, n));
        }
        let mut term = lam_sum + theta * log_rad(j, a);
        let mut prev = f64::NAN;
        for n in b..=b + n_extra {
            let v = log_lam(j, n) + theta * log_rad(j, n);
            term = log2_add(term, v);
            if n == b + n_extra {
                inner_ratio = 2f64.powf(v - prev);
            }
            prev = v;
        }
        log2_terms.push(term);
    }
    let js: Vec<f64> = (1..=j_max).map(|j| j as f64).collect();
    let j_slope = linear_fit(&js, &log2_terms)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN);
    SumRuleReport {
        theta,
        log2_terms,
        inner_ratio,
        j_slope,
        converges: inner_ratio < 1.0 && j_slope < 0.0,
    }
}

/// Proof parameters for the event census. `None` fields take defaults
/// inside the admissible ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusParams {
    pub m: f64,
    /// Density level for `B_n`; `None` is a tenth of the mean of `X_t`.
    pub theta: Option<f64>,
    pub rho: Option<f64>,
    pub nu: Option<f64>,
    pub c: Option<f64>,
    pub big_q: Option<u32>,
    pub big_r: u32,
    pub eta: f64,
    pub n_max: u32,
}

impl Default for CensusParams {
    fn default() -> Self {
        CensusParams {
            m: 2.0,
            theta: None,
            rho: None,
            nu: None,
            c: None,
            big_q: None,
            big_r: 2,
            eta: 0.5,
            n_max: 14,
        }
    }
}

/// Parameters after defaults and constraint checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCensusParams {
    pub m: f64,
    pub q: f64,
    pub theta: f64,
    pub rho: f64,
    pub nu: f64,
    pub c: f64,
    pub big_q: u32,
    pub big_r: u32,
    pub eta: f64,
    pub gamma: f64,
    pub n_max: u32,
}

/// Hard ceiling on the event levels.
pub const N_CEILING: u32 = 14;

impl CensusParams {
    /// Fills defaults and checks `m > 3/α`, `ρ < 10⁻²γ`,
    /// `ν ∈ ((αγ+5ρ)/η_c, 0.1)`, `c ∈ (10/(2−η), 1/(10ρ))` and `Q > 4η/η_c`.
    pub fn resolve(
        &self,
        st: &SpectrumTheory,
        alpha: f64,
        gamma: f64,
        theta: f64,
    ) -> Result<ResolvedCensusParams> {
        let mut bad = Vec::new();
        let eta = self.eta;
        if !(eta > st.eta_c && eta < st.eta_bar_c) {
            bad.push(format!(
                "eta = {eta} outside ({}, {})",
                st.eta_c, st.eta_bar_c
            ));
        }
        if !(self.m > 3.0 / alpha) {
            bad.push(format!(
                "m = {} must exceed 3/alpha = {}",
                self.m,
                3.0 / alpha
            ));
        }
        if !(gamma > 0.0) {
            bad.push(format!("gamma = {gamma} must be positive"));
        }
        let rho = self.rho.unwrap_or(0.5e-2 * gamma);
        if !(rho > 0.0 && rho < 1e-2 * gamma) {
            bad.push(format!("rho = {rho} must lie in (0, {})", 1e-2 * gamma));
        }
        let nu_lo = (alpha * gamma + 5.0 * rho) / st.eta_c;
        let nu = self.nu.unwrap_or(0.5 * (nu_lo + 0.1));
        if !(nu > nu_lo && nu < 0.1) {
            bad.push(format!("nu = {nu} must lie in ({nu_lo}, 0.1)"));
        }
        let (c_lo, c_hi) = (10.0 / (2.0 - eta), 1.0 / (10.0 * rho));
        let c = self.c.unwrap_or((c_lo * c_hi).sqrt());
        if !(c > c_lo && c < c_hi) {
            bad.push(format!("c = {c} must lie in ({c_lo}, {c_hi})"));
        }
        let mut q_lo = 4.0 * eta / st.eta_c;
        if eta > 1.0 {
            q_lo = q_lo.max(4.0 * eta / (eta - 1.0));
        }
        let big_q = self.big_q.unwrap_or(q_lo.floor() as u32 + 1);
        if !(big_q as f64 > q_lo) {
            bad.push(format!("Q = {big_q} must exceed {q_lo}"));
        }
        if self.n_max == 0 || self.n_max > N_CEILING {
            bad.push(format!(
                "n_max = {} must lie in 1..={N_CEILING}",
                self.n_max
            ));
        }
        let theta = self.theta.unwrap_or(theta);
        if !(theta > 0.0) {
            bad.push(format!("theta = {theta} must be positive"));
        }
        if !bad.is_empty() {
            return Err(Error::InvalidParams(bad.join("; ")));
        }
        Ok(ResolvedCensusParams {
            m: self.m,
            q: alpha_q(alpha, st, self.m, eta),
            theta,
            rho,
            nu,
            c,
            big_q,
            big_r: self.big_r,
            eta,
            gamma,
            n_max: self.n_max,
        })
    }
}

/// `q = (α+3)m/((β+1)(η−η_c))`.
fn alpha_q(alpha: f64, st: &SpectrumTheory, m: f64, eta: f64) -> f64 {
    (alpha + 3.0) * m / (st.kappa * (eta - st.eta_c))
}

/// Tallies at one level `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLevel {
    pub n: u32,
    pub cells: usize,
    pub o_n: bool,
    pub b_n: bool,
    /// Cells `k` with `A_k`, the jump taken in `I_k` itself.
    pub a_count: usize,
    /// Cells `k` with `A_k` for the shifted cell `I_{k−2n^q−2}`.
    pub a_shifted_count: usize,
    pub g_count: usize,
    /// `min(1, λ₁)²` with `λ₁` the single-jump intensity bound on `O_n^c`.
    pub g_envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventCensus {
    pub params: ResolvedCensusParams,
    pub levels: Vec<EventLevel>,
    pub n_feasible: u32,
    pub warnings: Vec<String>,
}

/// `2^{−αn} n^p`, the lags bounding the event windows.
fn lag_window(alpha: f64, n: u32, p: f64) -> f64 {
    2f64.powf(-alpha * n as f64) * (n as f64).powf(p)
}

/// Truncation level at lag `lag`, from the step containing `t − lag`.
fn cut_at(steps: &[StepInfo], t: f64, lag: f64) -> f64 {
    let s = t - lag;
    steps
        .iter()
        .find(|st| s < st.s0 + st.dt)
        .or(steps.last())
        .map(|st| st.r_cut)
        .unwrap_or(0.0)
}

/// Tallies `O_n`, `B_n(θ)`, `A_k^{(n)}` and `G_k^{(n)}` for one run.
///
/// Needs the analysis window `[0,1)` and per-step cell masses recorded at a
/// level `L`; levels are capped by `L`, by `n_max`, by the time resolution
/// near `t` and by the truncation level, with a warning for each cap.
pub fn event_census(
    out: &SimOutput,
    x_t: &[f64],
    params: &CensusParams,
    gamma: f64,
) -> Result<EventCensus> {
    let p = &out.params;
    let st = crate::model::derive_exponents(p)?;
    let g = &out.analysis_grid;
    if g.x_min != 0.0 || g.x_max != 1.0 {
        return Err(Error::domain(
            "event census needs the analysis window [0, 1)",
        ));
    }
    if x_t.len() != g.n_points {
        return Err(Error::domain("x_t does not match the analysis grid"));
    }
    let cells = &out.path.cell_masses;
    if cells.is_empty() || cells.len() != out.path.time_grid.len() {
        return Err(Error::domain(
            "event census needs cell_mass_level in the run",
        ));
    }
    let top = cells[0].len();
    let level = top.trailing_zeros();
    let mean = x_t.iter().sum::<f64>() / x_t.len() as f64;
    let rp = params.resolve(&st, p.alpha, gamma, 0.1 * mean)?;
    let (alpha, m, eta, t) = (p.alpha, rp.m, rp.eta, p.t);
    let finest = out.steps.last().map(|s| s.dt).unwrap_or(0.0);
    let cr = rp.c * rp.rho;

    let mut warnings = Vec::new();
    let mut n_feasible = rp.n_max;
    if level < n_feasible {
        warnings.push(format!("cell masses recorded to level {level} only"));
        n_feasible = level;
    }
    for n in 1..=n_feasible {
        let lb = lag_window(alpha, n + 1, -alpha * m);
        let a_thr = 2f64.powf(-(eta + 1.0) * n as f64);
        let g_thr = 2f64.powf(-(eta + 1.0 + 2.0 * rp.rho + 2.0 * cr) * n as f64);
        let g_lag = 2f64.powf(-alpha * (1.0 - cr) * n as f64);
        let why = if lb < finest {
            Some("time steps near t are too coarse")
        } else if cut_at(&out.steps, t, lag_window(alpha, n, -alpha * m)) > a_thr
            || cut_at(&out.steps, t, g_lag) > g_thr
        {
            Some("truncation level above the jump thresholds")
        } else {
            None
        };
        if let Some(w) = why {
            warnings.push(format!("levels n >= {n} dropped: {w}"));
            n_feasible = n - 1;
            break;
        }
    }
    for w in &warnings {
        log::debug!("event census: {w}");
    }

    let lags: Vec<f64> = out.path.time_grid.iter().map(|s| t - s).collect();
    let above: Vec<bool> = x_t.iter().map(|&v| v >= rp.theta).collect();
    let mut sorted: Vec<&Jump> = out.jumps.jumps.iter().collect();
    sorted.sort_by(|a, b| a.y.total_cmp(&b.y));

    let mut levels = Vec::new();
    for n in 1..=n_feasible {
        let nc = 1usize << n;
        let per = top / nc;
        let h = 2f64.powi(-(n as i32));
        let nf = n as f64;
        let masses =
            |k: usize| -> Vec<f64> { cells[k].chunks(per).map(|c| c.iter().sum()).collect() };

        // O_n: some cell above 2^{−n}n^{2mα/3} during the late window.
        let wo = lag_window(alpha, n, alpha * alpha * m / 3.0);
        let o_thr = h * nf.powf(2.0 * m * alpha / 3.0);
        let o_n = (0..lags.len())
            .filter(|&k| lags[k] < wo)
            .any(|k| masses(k).iter().any(|&v| v >= o_thr));

        // B_n(θ): a cell meeting {X_t ≥ θ} whose late infimum is small.
        let wb = lag_window(alpha, n, -alpha * m);
        let b_thr = h * nf.powf(-2.0 * m);
        let mut inf = vec![f64::INFINITY; nc];
        for k in (0..lags.len()).filter(|&k| lags[k] < wb) {
            for (i, v) in masses(k).into_iter().enumerate() {
                inf[i] = inf[i].min(v);
            }
        }
        let pts = g.n_points / nc;
        let b_n =
            (0..nc).any(|i| inf[i] <= b_thr && above[i * pts..(i + 1) * pts].iter().any(|&a| a));

        // A_k: a jump ≥ 2^{−(η+1)n} in I_k with lag in (L_{n+1}, L_n].
        let (l_hi, l_lo) = (wb, lag_window(alpha, n + 1, -alpha * m));
        let a_thr = 2f64.powf(-(eta + 1.0) * nf);
        let mut hit = vec![false; nc];
        for jp in &out.jumps.jumps {
            let lag = t - jp.s;
            if jp.r >= a_thr && lag > l_lo && lag <= l_hi && (0.0..1.0).contains(&jp.y) {
                hit[((jp.y / h) as usize).min(nc - 1)] = true;
            }
        }
        let a_count = hit.iter().filter(|&&b| b).count();
        let shift = (2.0 * nf.powf(rp.q)).ceil() + 2.0;
        let a_shifted_count = if shift < nc as f64 {
            let s = shift as usize;
            hit[..nc - s].iter().filter(|&&b| b).count()
        } else {
            0
        };

        // G_k: two jumps ≥ 2^{−(η+1+2ρ+2cρ)n} in the widened cell and band.
        let g_thr = 2f64.powf(-(eta + 1.0 + 2.0 * rp.rho + 2.0 * cr) * nf);
        let (g_hi, g_lo) = (
            2f64.powf(-alpha * (1.0 - cr) * nf),
            2f64.powf(-alpha * (1.0 + cr) * nf),
        );
        let widen = 2f64.powf(-nf * (1.0 - cr) * (1.0 - rp.nu));
        let ok: Vec<f64> = sorted
            .iter()
            .filter(|jp| {
                let lag = t - jp.s;
                jp.r >= g_thr && lag > g_lo && lag <= g_hi
            })
            .map(|jp| jp.y)
            .collect();
        let g_count = if ok.len() < 2 {
            0
        } else {
            (0..nc)
                .filter(|&k| {
                    let a = k as f64 * h - widen;
                    let b = (k + 1) as f64 * h + widen;
                    let lo = ok.partition_point(|&y| y < a);
                    let hi = ok.partition_point(|&y| y <= b);
                    hi - lo >= 2
                })
                .count()
        };
        let mass_bound = (h + 2.0 * widen) * nf.powf(2.0 * m * alpha / 3.0);
        let lambda1 = (g_hi - g_lo) * mass_bound * st.rho_coeff * g_thr.powf(-st.kappa) / st.kappa;
        levels.push(EventLevel {
            n,
            cells: nc,
            o_n,
            b_n,
            a_count,
            a_shifted_count,
            g_count,
            g_envelope: lambda1.min(1.0).powi(2),
        });
    }
    Ok(EventCensus {
        params: rp,
        levels,
        n_feasible,
        warnings,
    })
}

/// Frequencies across replicas at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventFrequency {
    pub n: u32,
    pub replicas: usize,
    pub o_freq: f64,
    pub b_freq: f64,
    /// Mean fraction of cells with `A_k`.
    pub a_per_cell: f64,
    pub a_shifted_per_cell: f64,
    /// Mean fraction of cells with `G_k`.
    pub g_per_cell: f64,
    pub g_envelope: f64,
}

/// Pools per-replica censuses level by level, over the levels every
/// replica resolved.
pub fn pool_event_census(all: &[EventCensus]) -> Vec<EventFrequency> {
    let n_common = all.iter().map(|c| c.n_feasible).min().unwrap_or(0);
    (1..=n_common)
        .map(|n| {
            let rows: Vec<&EventLevel> = all
                .iter()
                .filter_map(|c| c.levels.iter().find(|l| l.n == n))
                .collect();
            let r = rows.len() as f64;
            let frac = |f: &dyn Fn(&EventLevel) -> f64| rows.iter().map(|l| f(l)).sum::<f64>() / r;
            EventFrequency {
                n,
                replicas: rows.len(),
                o_freq: frac(&|l| l.o_n as u8 as f64),
                b_freq: frac(&|l| l.b_n as u8 as f64),
                a_per_cell: frac(&|l| l.a_count as f64 / l.cells as f64),
                a_shifted_per_cell: frac(&|l| l.a_shifted_count as f64 / l.cells as f64),
                g_per_cell: frac(&|l| l.g_count as f64 / l.cells as f64),
                g_envelope: frac(&|l| l.g_envelope),
            }
        })
        .collect()
}

/// Settings for [`jump_exponent_field`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpExponentConfig {
    pub t: f64,
    /// Only jumps with `t − s` below this count as late.
    pub lag_cutoff: f64,
    /// Only jumps closer than this to `x` count.
    pub max_distance: f64,
    /// Values above this are reported as `+∞`.
    pub cap: f64,
}

impl JumpExponentConfig {
    pub fn new(st: &SpectrumTheory, t: f64) -> Self {
        JumpExponentConfig {
            t,
            lag_cutoff: 0.1 * t,
            max_distance: 1.0,
            cap: st.eta_bar_c + 0.5,
        }
    }
}

/// `η_jump(x) = η_c + inf [log r − (1/(1+β)−γ) log(t−s)] / log|x−y|` over
/// late jumps near `x`: the exponent below which `x` lies in the set of
/// points hit by a jump large for its lag and distance. Distances are
/// floored at half a cell; points with nothing below `cap` get `+∞`.
pub fn jump_exponent_field(
    jumps: &JumpRecord,
    grid: &Grid1D,
    st: &SpectrumTheory,
    gamma: f64,
    cfg: &JumpExponentConfig,
) -> Vec<f64> {
    let n = grid.n_points;
    let mut best = vec![f64::INFINITY; n];
    let e = lag_exponent(st, gamma);
    let span = cfg.cap - st.eta_c;
    let d_min = 0.5 * grid.dx;
    let d_max = cfg.max_distance.min(1.0);
    for jp in &jumps.jumps {
        let lag = cfg.t - jp.s;
        if !(lag > 0.0 && lag < cfg.lag_cutoff) || !(jp.r > 0.0) {
            continue;
        }
        let a = jp.r.ln() - e * lag.ln();
        // a/ln d < span  ⇔  d < exp(a/span) when a < 0; always when a ≥ 0.
        let reach = if a < 0.0 {
            if span > 0.0 {
                (a / span).exp().min(d_max)
            } else {
                continue;
            }
        } else {
            d_max
        };
        if reach < d_min && a < 0.0 {
            // Only the cell holding the jump can be reached.
            if let Some(i) = grid.cell_of(jp.y) {
                let v = a / d_min.ln();
                best[i] = best[i].min(v);
            }
            continue;
        }
        let lo = ((jp.y - reach - grid.x_min) / grid.dx).floor().max(0.0) as usize;
        let hi = (((jp.y + reach - grid.x_min) / grid.dx).ceil().max(0.0) as usize).min(n - 1);
        for (i, b) in best.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = (grid.x(i) - jp.y).abs();
            if d >= d_max || d > reach {
                continue;
            }
            let v = a / d.max(d_min).ln();
            if v < *b {
                *b = v;
            }
        }
    }
    best.iter()
        .map(|&v| {
            let h = st.eta_c + v;
            if h < cfg.cap {
                h
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_exponents, ModelParams};
    use statrs::function::gamma::gamma as gamma_fn;

    fn theory(alpha: f64, beta: f64) -> SpectrumTheory {
        derive_exponents(&ModelParams::critical(alpha, beta, 1.0)).unwrap()
    }

    fn jump(s: f64, y: f64, r: f64) -> Jump {
        Jump {
            s,
            y,
            r,
            step: 0,
            cell: 0,
        }
    }

    #[test]
    fn box_intensity_example() {
        let st = theory(1.6, 0.5);
        // ϱ = b(1+β)β/Γ(1−β) with Γ(1/2) = √π.
        let rho = 1.5 * 0.5 / std::f64::consts::PI.sqrt();
        assert!((st.rho_coeff - rho).abs() < 1e-12);
        assert!((st.rho_coeff - 0.5 * 1.5 / gamma_fn(0.5)).abs() < 1e-12);
        let lam = box_intensity(&st, 1.0, 5, 10);
        let direct = 0.423142 * (2f64.powf(1.5) - 1.0) / 3.0 * 1024.0;
        assert!((lam - direct).abs() < 1e-3 * direct);
        assert!((lam - 264.1).abs() < 0.1, "{lam}");
    }

    #[test]
    fn box_intensity_is_the_compensator_integral() {
        // N 2^{−j−1} ∫_{2^{−n−1}}^{2^{−n}} ϱ r^{−2−β} dr by quadrature.
        let st = theory(1.6, 0.4);
        let (j, n) = (3u32, 4u32);
        let (a, b) = (2f64.powi(-(n as i32) - 1), 2f64.powi(-(n as i32)));
        let m = 20000;
        let h = (b - a) / m as f64;
        let integral: f64 = (0..m)
            .map(|i| {
                let r = a + (i as f64 + 0.5) * h;
                st.rho_coeff * r.powf(-2.0 - 0.4) * h
            })
            .sum();
        let expect = 2.5 * 2f64.powi(-(j as i32) - 1) * integral;
        let lam = box_intensity(&st, 2.5, j, n);
        assert!((lam - expect).abs() < 1e-7 * lam);
    }

    #[test]
    fn ball_radius_formula() {
        let st = theory(1.6, 0.4);
        for &(j, n, gamma, eta) in &[
            (5u32, 3u32, 1e-3, 0.5),
            (12, 9, 0.0, 0.3),
            (20, 14, 4e-4, 0.8),
        ] {
            let e = 1.0 / st.kappa - gamma;
            let want = (2f64.powf(-(n as f64)) / 2f64.powf(-((j + 1) as f64)).powf(e))
                .powf(1.0 / (eta - st.eta_c));
            let got = ball_radius(&st, gamma, eta, j, n);
            assert!((got - want).abs() <= 1e-13 * want, "{got} {want}");
        }
    }

    #[test]
    fn poisson_excess_matches_direct_sum() {
        for &lam in &[0.3f64, 2.0, 17.5] {
            let k = (2.0 * lam).floor() as u64;
            let mut cdf = 0.0;
            let mut pmf = (-lam).exp();
            for i in 0..=k {
                if i > 0 {
                    pmf *= lam / i as f64;
                }
                cdf += pmf;
            }
            assert!((poisson_excess(lam) - (1.0 - cdf)).abs() < 1e-10);
        }
        // e^{−λ} is not a bound for large λ.
        assert!(poisson_excess(50.0) > (-50f64).exp());
        assert_eq!(poisson_excess(0.0), 0.0);
    }

    fn scope(t: f64) -> CensusScope {
        CensusScope {
            x_lo: 0.0,
            x_hi: 1.0,
            n_bound: 1.0,
            steps: vec![
                StepInfo {
                    s0: 0.0,
                    dt: t - 1e-6,
                    r_cut: 1e-9,
                },
                StepInfo {
                    s0: t - 1e-6,
                    dt: 1e-6,
                    r_cut: 1e-9,
                },
            ],
        }
    }

    #[test]
    fn census_bins_and_flags() {
        let st = theory(1.6, 0.4);
        let t = 1.0;
        let empty = jump_census(&JumpRecord::default(), &st, 1e-3, 0.5, t, &scope(t)).unwrap();
        assert!(empty.boxes.iter().all(|b| b.count == 0 && !b.exceeds));
        assert!(empty.balls.is_empty());

        // Lag 0.3 → j = 1; r = 0.1 → n = 3.
        let rec = JumpRecord {
            jumps: vec![
                jump(0.7, 0.5, 0.1),
                jump(0.7, 1.5, 0.1),
                jump(0.7, 0.2, 3.0),
            ],
        };
        let c = jump_census(&rec, &st, 1e-3, 0.5, t, &scope(t)).unwrap();
        let b = c.boxes.iter().find(|b| b.j == 1 && b.n == 3).unwrap();
        assert_eq!(b.count, 1);
        assert_eq!(c.oversized, 1);
        assert_eq!(c.balls.len(), 1);
        assert_eq!(c.balls[0].radius, ball_radius(&st, 1e-3, 0.5, 1, 3));
        assert_eq!(c.exceedances(), (b.count as f64 > 2.0 * b.lambda) as usize);
        for o in &c.octaves {
            assert!(o.n0 <= o.n1);
            let s: f64 = (o.n0..=o.n1).map(|n| box_intensity(&st, 1.0, o.j, n)).sum();
            assert!((o.lambda_sum - s).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn truncated_boxes_are_dropped() {
        let st = theory(1.6, 0.4);
        let mut sc = scope(1.0);
        sc.steps[0].r_cut = 0.01;
        let c = jump_census(&JumpRecord::default(), &st, 1e-3, 0.5, 1.0, &sc).unwrap();
        assert!(c.boxes.iter().all(|b| 2f64.powi(-(b.n as i32) - 1) >= 0.01));
    }

    #[test]
    fn sum_rule_threshold() {
        let st = theory(1.6, 0.4);
        let gamma = 4e-4;
        for &eta in &[0.3, 0.5, 0.7] {
            let d = st.kappa * (eta - st.eta_c);
            let hi = sum_rule(&st, gamma, eta, d + 0.05, 100_000, 40);
            let lo = sum_rule(&st, gamma, eta, d - 0.05, 100_000, 40);
            assert!(hi.converges, "{eta}: {} {}", hi.inner_ratio, hi.j_slope);
            assert!(!lo.converges && lo.inner_ratio > 1.0);
        }
    }

    #[test]
    fn params_constraints() {
        let st = theory(1.6, 0.4);
        let gamma = 4e-4;
        let rp = CensusParams::default()
            .resolve(&st, 1.6, gamma, 0.1)
            .unwrap();
        assert!(rp.rho < 1e-2 * gamma);
        assert!(rp.nu > (1.6 * gamma + 5.0 * rp.rho) / st.eta_c && rp.nu < 0.1);
        assert!(rp.c > 10.0 / 1.5 && rp.c < 1.0 / (10.0 * rp.rho));
        let q = 4.6 * 2.0 / (1.4 * (0.5 - st.eta_c));
        assert!((rp.q - q).abs() < 1e-12);
        let bad = CensusParams {
            m: 1.5,
            ..Default::default()
        };
        assert!(bad.resolve(&st, 1.6, gamma, 0.1).is_err());
        let bad = CensusParams {
            n_max: 15,
            ..Default::default()
        };
        assert!(bad.resolve(&st, 1.6, gamma, 0.1).is_err());
        let bad = CensusParams {
            rho: Some(1e-2 * gamma),
            ..Default::default()
        };
        assert!(bad.resolve(&st, 1.6, gamma, 0.1).is_err());
    }

    #[test]
    fn jump_exponent_example() {
        // β = 0.4, γ = 0, lag 2^{−21}, distance 2^{−6}, r = 2^{−17.1}.
        let st = theory(1.6, 0.4);
        let grid = Grid1D::new(0.0, 1.0, 1 << 12).unwrap();
        let t = 1.0;
        let y = grid.x(2048) - 2f64.powi(-6);
        let rec = JumpRecord {
            jumps: vec![jump(t - 2f64.powi(-21), y, 2f64.powf(-17.1))],
        };
        let cfg = JumpExponentConfig::new(&st, t);
        let f = jump_exponent_field(&rec, &grid, &st, 0.0, &cfg);
        let want = st.eta_c + (-17.1 + 15.0) / -6.0;
        assert!((f[2048] - want).abs() < 1e-9, "{} vs {want}", f[2048]);
        assert!((f[2048] - 0.493).abs() < 1e-3);
        let none = jump_exponent_field(&JumpRecord::default(), &grid, &st, 0.0, &cfg);
        assert!(none.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn jump_exponent_monotone_in_r() {
        let st = theory(1.6, 0.4);
        let grid = Grid1D::new(0.0, 1.0, 1024).unwrap();
        let cfg = JumpExponentConfig::new(&st, 1.0);
        let base = vec![
            jump(0.999, 0.3, 1e-3),
            jump(0.9999, 0.31, 1e-4),
            jump(0.99, 0.7, 2e-3),
        ];
        let f0 = jump_exponent_field(
            &JumpRecord {
                jumps: base.clone(),
            },
            &grid,
            &st,
            1e-3,
            &cfg,
        );
        for i in 0..base.len() {
            for factor in [1.5, 10.0, 1e3] {
                let mut js = base.clone();
                js[i].r *= factor;
                let f1 = jump_exponent_field(&JumpRecord { jumps: js }, &grid, &st, 1e-3, &cfg);
                for (a, b) in f0.iter().zip(&f1) {
                    assert!(b <= a, "{b} > {a}");
                }
            }
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::model::{derive_exponents, ModelParams};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn radius_decreases_in_n_and_increases_in_j(
            j in 1u32..40, n in 0u32..40, eta in 0.2f64..0.8, gamma in 0.0f64..1e-3
        ) {
            let st = derive_exponents(&ModelParams::critical(1.6, 0.4, 1.0)).unwrap();
            let r = ball_radius(&st, gamma, eta, j, n);
            prop_assert!(ball_radius(&st, gamma, eta, j, n + 1) < r);
            prop_assert!(ball_radius(&st, gamma, eta, j + 1, n) > r);
        }

        #[test]
        fn field_monotone_in_r(
            r in 1e-6f64..1e-1, f in 1.0f64..100.0, y in 0.0f64..1.0, lag in 1e-6f64..0.05
        ) {
            let st = derive_exponents(&ModelParams::critical(1.6, 0.4, 1.0)).unwrap();
            let grid = Grid1D::new(0.0, 1.0, 256).unwrap();
            let cfg = JumpExponentConfig::new(&st, 1.0);
            let one = |r: f64| JumpRecord { jumps: vec![Jump { s: 1.0 - lag, y, r, step: 0, cell: 0 }] };
            let a = jump_exponent_field(&one(r), &grid, &st, 1e-3, &cfg);
            let b = jump_exponent_field(&one(r * f), &grid, &st, 1e-3, &cfg);
            for (x, z) in a.iter().zip(&b) {
                prop_assert!(z <= x);
            }
        }
    }
}
