//! One pass over the replicas that serves `simulate`, `spectrum` and
//! `census`. Replicas run on the worker pool and are collected in replica
//! order, so every pooled statistic is reduced sequentially.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use superfractal::mfa::dimension::centred_bins;
use superfractal::mfa::{
    empirical_spectrum, event_census, holder_field, jump_census, jump_exponent_field,
    pool_event_census, pool_spectra, sum_rule, CensusScope, EventCensus, EventFrequency,
    HolderField, JumpCensus, JumpExponentConfig, SpectrumEstimate, SumRuleReport,
};
use superfractal::model::{derive_exponents, Grid1D, SpectrumTheory};
use superfractal::sim::{diagnostics_good_event, DiagnosticsReport, Jump, SimConfig, Simulator};
use superfractal::spectral::apply_semigroup;
use superfractal::stats::{quantile_sorted, MeanSe};

use crate::config::RunFile;
use crate::error::{in_stage, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stages {
    pub spectrum: bool,
    pub census: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: u64,
    pub total_mass: f64,
    pub window_mass: f64,
    pub jumps: usize,
    /// Recorded jumps above `r0` and their integrated compensator.
    pub jumps_above_r0: usize,
    pub compensator_above_r0: f64,
    pub negative_fraction: f64,
    pub good_event: DiagnosticsReport,
}

/// Fields of replica 0 that are written out.
#[derive(Clone, Debug)]
pub struct FirstReplica {
    pub grid: Grid1D,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    pub x_t: Vec<f64>,
    pub jumps: Vec<Jump>,
    pub holder: Option<HolderField>,
    pub jump_eta: Option<Vec<f64>>,
    /// `sup |X_t − S_t μ|` over the simulation grid when `b = 0`.
    pub heat_flow_error: Option<f64>,
}

struct ReplicaResult {
    summary: ReplicaSummary,
    spectrum: Option<(SpectrumEstimate, Vec<f64>)>,
    jump_census: Option<JumpCensus>,
    event_census: Option<EventCensus>,
    first: Option<FirstReplica>,
    seconds: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean_mass: MeanSe,
    /// `|μ| e^{at}`.
    pub expected_mass: f64,
    pub mass_agrees: bool,
    pub r0: f64,
    /// Mean over replicas of (count above `r0`) − (its compensator).
    pub count_minus_compensator: MeanSe,
    pub counts_agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub theory: SpectrumTheory,
    pub sim_points: usize,
    pub time_steps: usize,
    pub expected_jumps: f64,
    pub moments: MomentReport,
    pub heat_flow_error: Option<f64>,
    pub good_event_rate: f64,
    pub replicas: Vec<ReplicaSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePoint {
    pub eta: f64,
    pub d_hat: Option<f64>,
    pub d_theory: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub replicas: usize,
    pub pooled: SpectrumEstimate,
    pub points: Vec<GatePoint>,
    pub monotone: bool,
    pub floor_quantile: f64,
    pub eta_quantile: Option<f64>,
    pub floor_threshold: f64,
    pub floor_pass: bool,
    pub points_on_set: usize,
}

impl SpectrumReport {
    pub fn pass(&self) -> bool {
        self.monotone && self.floor_pass && self.points.iter().all(|p| p.pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumRuleSummary {
    pub theta: f64,
    pub inner_ratio: f64,
    pub j_slope: f64,
    pub converges: bool,
}

impl From<SumRuleReport> for SumRuleSummary {
    fn from(r: SumRuleReport) -> Self {
        SumRuleSummary {
            theta: r.theta,
            inner_ratio: r.inner_ratio,
            j_slope: r.j_slope,
            converges: r.converges,
        }
    }
}

/// Jump boxes `(j, n)` pooled over replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxClass {
    pub j: u32,
    pub n: u32,
    pub replicas: usize,
    pub exceedances: usize,
    pub mean_lambda: f64,
    pub mean_poisson_bound: f64,
    pub mean_exp_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub eta: f64,
    pub boxes: Vec<BoxClass>,
    pub total_boxes: usize,
    pub exceedances: usize,
    /// Sum over boxes of `P(Poi(λ) > 2λ)` and the SE of the exceedance count.
    pub bound_sum: f64,
    pub bound_se: f64,
    pub box_pass: bool,
    pub oversized_jumps: u64,
    /// Sum-rule trend at `θ = D(η) ± 0.05`.
    pub sum_rule: Vec<SumRuleSummary>,
    pub events: Vec<EventFrequency>,
    pub o_nonincreasing: bool,
    pub warnings: Vec<String>,
}

impl CensusReport {
    pub fn pass(&self) -> bool {
        self.box_pass && self.o_nonincreasing
    }
}

pub struct PipelineOutput {
    pub diagnostics: Diagnostics,
    pub first: FirstReplica,
    pub spectrum: Option<SpectrumReport>,
    pub census: Option<CensusReport>,
    /// Summed per-replica seconds of simulation, spectrum and census work.
    pub seconds: [f64; 3],
}

/// Builds the simulator for a run file, recording cell masses when the
/// event census needs them.
pub fn simulator(rf: &RunFile, stages: Stages) -> superfractal::Result<Simulator> {
    let grid = rf.grid.build()?;
    let mut cfg: SimConfig = rf.sim.clone();
    if stages.census && cfg.cell_mass_level.is_none() {
        cfg.cell_mass_level = Some(
            grid.n_points
                .trailing_zeros()
                .min(superfractal::mfa::census::N_CEILING),
        );
    }
    Simulator::new(&rf.params, &grid, &rf.run, &cfg)
}

/// Smallest `r0 ≥ 2 r_min` above every truncation level.
fn count_level(sim: &Simulator) -> f64 {
    let top = sim.steps.iter().map(|s| s.r_cut).fold(0.0, f64::max);
    top.max(2.0 * sim.run.r_min)
}

fn process(
    rf: &RunFile,
    sim: &Simulator,
    st: &SpectrumTheory,
    stages: Stages,
    r: u64,
) -> CliResult<ReplicaResult> {
    let t0 = Instant::now();
    let out = sim.run_replica(r).map_err(in_stage("simulate"))?;
    let r0 = count_level(sim);
    let good_event = diagnostics_good_event(&out, rf.run.gamma, 0.0, &rf.diagnostics);
    let summary = ReplicaSummary {
        replica: r,
        total_mass: out.total_mass(),
        window_mass: *out.path.window_mass_series.last().unwrap_or(&f64::NAN),
        jumps: out.jumps.len(),
        jumps_above_r0: out.jumps.count_above(r0),
        compensator_above_r0: out.integrated_compensator(st.rho_coeff, r0),
        negative_fraction: out.worst_negative_fraction,
        good_event,
    };
    let s_sim = t0.elapsed().as_secs_f64();
    let grid = out.analysis_grid;
    let x_t = &out.decomposition.x_t;

    let t1 = Instant::now();
    let mut holder = None;
    let mut spectrum = None;
    if stages.spectrum {
        let hf = holder_field(x_t, &grid, &rf.holder).map_err(in_stage("spectrum"))?;
        let mean = x_t.iter().sum::<f64>() / x_t.len() as f64;
        let theta = rf.spectrum.threshold_fraction * mean;
        let mut masked = hf.clone();
        let mut on_set = Vec::new();
        for (i, e) in masked.eta_hat.iter_mut().enumerate() {
            if x_t[i] > theta {
                if e.is_finite() {
                    on_set.push(*e);
                }
            } else {
                *e = f64::NAN;
            }
        }
        let bins = centred_bins(&rf.spectrum.centres, rf.spectrum.half_width);
        let ladder = rf.holder.ladder_for(&grid).map_err(in_stage("spectrum"))?;
        spectrum = Some((empirical_spectrum(&masked, st, &bins, &ladder), on_set));
        if r == 0 {
            holder = Some(hf);
        }
    }
    let s_spec = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let (mut jc, mut ec) = (None, None);
    if stages.census {
        let scope = CensusScope::from_output(&out);
        let mut c = jump_census(
            &out.jumps,
            st,
            rf.run.gamma,
            rf.census.eta,
            rf.params.t,
            &scope,
        )
        .map_err(in_stage("census"))?;
        if r != 0 {
            c.balls = Vec::new();
        }
        jc = Some(c);
        ec = Some(event_census(&out, x_t, &rf.census, rf.run.gamma).map_err(in_stage("census"))?);
    }
    let s_census = t2.elapsed().as_secs_f64();

    let first = (r == 0).then(|| {
        let window = |y: f64| y >= grid.x_min && y < grid.x_max;
        let heat_flow_error = (rf.params.b == 0.0).then(|| {
            let mut heat = apply_semigroup(
                &rf.params.mu.discretize(&out.sim_grid),
                rf.params.alpha,
                rf.params.t,
                &out.sim_grid,
            );
            let g = (rf.params.a * rf.params.t).exp();
            heat.iter_mut().for_each(|v| *v *= g);
            out.x_t_full
                .iter()
                .zip(&heat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        });
        let jump_eta = stages.spectrum.then(|| {
            jump_exponent_field(
                &out.jumps,
                &grid,
                st,
                rf.run.gamma,
                &JumpExponentConfig::new(st, rf.params.t),
            )
        });
        FirstReplica {
            grid,
            z1: out.decomposition.z1.clone(),
            z2: out.decomposition.z2.clone(),
            z3: out.decomposition.z3.clone(),
            x_t: x_t.clone(),
            jumps: out
                .jumps
                .jumps
                .iter()
                .filter(|j| window(j.y))
                .copied()
                .collect(),
            holder,
            jump_eta,
            heat_flow_error,
        }
    });
    Ok(ReplicaResult {
        summary,
        spectrum,
        jump_census: jc,
        event_census: ec,
        first,
        seconds: [s_sim, s_spec, s_census],
    })
}

pub fn run_pipeline(rf: &RunFile, stages: Stages) -> CliResult<PipelineOutput> {
    let st = derive_exponents(&rf.params).map_err(in_stage("simulate"))?;
    let sim = simulator(rf, stages).map_err(in_stage("simulate"))?;
    let n = rf.run.n_replicas as u64;
    log::info!(
        "{} replicas on {} points, {} steps, about {:.0} jumps each",
        n,
        sim.sim_grid.n_points,
        sim.steps.len(),
        sim.expected_jump_count()
    );
    let results: Vec<ReplicaResult> = (0..n)
        .into_par_iter()
        .map(|r| process(rf, &sim, &st, stages, r))
        .collect::<CliResult<_>>()?;

    let mut seconds = [0.0; 3];
    for r in &results {
        for (acc, s) in seconds.iter_mut().zip(r.seconds) {
            *acc += s;
        }
    }
    let summaries: Vec<ReplicaSummary> = results.iter().map(|r| r.summary.clone()).collect();
    let diagnostics = diagnostics(rf, &sim, &st, summaries, &results);
    let spectrum = stages.spectrum.then(|| spectrum_report(rf, &st, &results));
    let census = stages.census.then(|| census_report(rf, &st, &results));
    let mut results = results;
    let first = results[0].first.take().expect("replica 0 keeps its fields");
    Ok(PipelineOutput {
        diagnostics,
        first,
        spectrum,
        census,
        seconds,
    })
}

fn diagnostics(
    rf: &RunFile,
    sim: &Simulator,
    st: &SpectrumTheory,
    replicas: Vec<ReplicaSummary>,
    results: &[ReplicaResult],
) -> Diagnostics {
    let masses: Vec<f64> = replicas.iter().map(|s| s.total_mass).collect();
    let mean_mass = MeanSe::from_samples(&masses);
    let expected_mass = rf.params.mu.total_mass() * (rf.params.a * rf.params.t).exp();
    let diffs: Vec<f64> = replicas
        .iter()
        .map(|s| s.jumps_above_r0 as f64 - s.compensator_above_r0)
        .collect();
    let cmc = MeanSe::from_samples(&diffs);
    let good = replicas.iter().filter(|s| s.good_event.all_pass()).count();
    Diagnostics {
        theory: *st,
        sim_points: sim.sim_grid.n_points,
        time_steps: sim.steps.len(),
        expected_jumps: sim.expected_jump_count(),
        moments: MomentReport {
            mean_mass,
            expected_mass,
            mass_agrees: mean_mass.agrees_with(expected_mass, 3.0, 0.0),
            r0: count_level(sim),
            count_minus_compensator: cmc,
            counts_agree: cmc.agrees_with(0.0, 3.0, 0.0),
        },
        heat_flow_error: results[0].first.as_ref().and_then(|f| f.heat_flow_error),
        good_event_rate: good as f64 / replicas.len() as f64,
        replicas,
    }
}

fn spectrum_report(rf: &RunFile, st: &SpectrumTheory, results: &[ReplicaResult]) -> SpectrumReport {
    let sp = &rf.spectrum;
    let ests: Vec<SpectrumEstimate> = results
        .iter()
        .filter_map(|r| r.spectrum.as_ref().map(|s| s.0.clone()))
        .collect();
    let pooled = pool_spectra(&ests).expect("at least one replica");
    let centres = pooled.centres();
    let points = sp
        .gate_etas
        .iter()
        .map(|&eta| {
            let k = centres
                .iter()
                .position(|c| (c - eta).abs() < 1e-9)
                .unwrap_or(usize::MAX);
            let d_hat = pooled.d_hat.get(k).copied().flatten();
            let d_theory = st.spectrum_unchecked(eta);
            GatePoint {
                eta,
                d_hat,
                d_theory,
                pass: d_hat.is_some_and(|d| (d - d_theory).abs() <= sp.tolerance),
            }
        })
        .collect();
    let mut on: Vec<f64> = results
        .iter()
        .filter_map(|r| r.spectrum.as_ref())
        .flat_map(|s| s.1.iter().copied())
        .collect();
    on.sort_by(f64::total_cmp);
    let eta_quantile = quantile_sorted(&on, sp.floor_quantile);
    let floor_threshold = st.eta_c - sp.floor_margin;
    SpectrumReport {
        replicas: ests.len(),
        monotone: pooled.is_monotone(),
        pooled,
        points,
        floor_quantile: sp.floor_quantile,
        eta_quantile,
        floor_threshold,
        floor_pass: eta_quantile.is_some_and(|q| q >= floor_threshold),
        points_on_set: on.len(),
    }
}

fn census_report(rf: &RunFile, st: &SpectrumTheory, results: &[ReplicaResult]) -> CensusReport {
    let mut classes: BTreeMap<(u32, u32), BoxClass> = BTreeMap::new();
    let (mut total, mut exceed, mut bsum, mut bvar, mut oversized) = (0, 0, 0.0, 0.0, 0);
    for c in results.iter().filter_map(|r| r.jump_census.as_ref()) {
        oversized += c.oversized;
        for b in &c.boxes {
            let e = classes.entry((b.j, b.n)).or_insert(BoxClass {
                j: b.j,
                n: b.n,
                replicas: 0,
                exceedances: 0,
                mean_lambda: 0.0,
                mean_poisson_bound: 0.0,
                mean_exp_bound: 0.0,
            });
            e.replicas += 1;
            e.exceedances += b.exceeds as usize;
            e.mean_lambda += b.lambda;
            e.mean_poisson_bound += b.poisson_bound;
            e.mean_exp_bound += b.exp_bound;
            total += 1;
            exceed += b.exceeds as usize;
            bsum += b.poisson_bound;
            bvar += b.poisson_bound * (1.0 - b.poisson_bound);
        }
    }
    let boxes: Vec<BoxClass> = classes
        .into_values()
        .map(|mut b| {
            let r = b.replicas as f64;
            b.mean_lambda /= r;
            b.mean_poisson_bound /= r;
            b.mean_exp_bound /= r;
            b
        })
        .collect();
    let bound_se = bvar.sqrt();
    let events_all: Vec<EventCensus> = results
        .iter()
        .filter_map(|r| r.event_census.clone())
        .collect();
    let events = pool_event_census(&events_all);
    let o_nonincreasing = events.windows(2).all(|w| w[1].o_freq <= w[0].o_freq);
    let mut warnings: Vec<String> = events_all.iter().flat_map(|e| e.warnings.clone()).collect();
    warnings.sort();
    warnings.dedup();
    let eta = rf.census.eta;
    let d = st.spectrum_unchecked(eta);
    let sum_rule = [d - 0.05, d + 0.05]
        .iter()
        .map(|&theta| sum_rule(st, rf.run.gamma, eta, theta, 100_000, 40).into())
        .collect();
    CensusReport {
        eta,
        boxes,
        total_boxes: total,
        exceedances: exceed,
        bound_sum: bsum,
        bound_se,
        box_pass: exceed as f64 <= bsum + 3.0 * bound_se,
        oversized_jumps: oversized,
        sum_rule,
        events,
        o_nonincreasing,
        warnings,
    }
}
