//! Moment identities and representation consistency on small runs.

use superfractal::mfa::census::event_census;
use superfractal::model::{derive_exponents, Grid1D, ModelParams, RunConfig};
use superfractal::sim::{density_from_representation, increment_time_change, SimConfig, Simulator};
use superfractal::stats::MeanSe;
use superfractal::CensusParams;

fn run(n_replicas: usize, time_steps: usize, r_min: f64) -> RunConfig {
    RunConfig {
        seed: 11,
        n_replicas,
        time_steps,
        r_min,
        gamma: 1e-4,
        output_dir: ".".into(),
    }
}

#[test]
fn mean_mass_grows_like_exp_at() {
    let mut p = ModelParams::critical(1.6, 0.4, 0.5);
    p.a = 0.8;
    let grid = Grid1D::unit(64).unwrap();
    let sim = Simulator::new(&p, &grid, &run(400, 16, 0.05), &SimConfig::default()).unwrap();
    let m: Vec<f64> = (0..400)
        .map(|r| sim.run_replica(r).unwrap().total_mass())
        .collect();
    let s = MeanSe::from_samples(&m);
    let target = (0.8f64 * 0.5).exp();
    assert!(s.agrees_with(target, 3.0, 0.0), "{s:?} vs {target}");
}

#[test]
fn compensated_jump_sum_is_centred() {
    let p = ModelParams::critical(1.6, 0.4, 0.5);
    let grid = Grid1D::unit(64).unwrap();
    let sim = Simulator::new(&p, &grid, &run(400, 16, 0.05), &SimConfig::default()).unwrap();
    let mid = 32;
    let z2: Vec<f64> = (0..400)
        .map(|r| sim.run_replica(r).unwrap().decomposition.z2[mid])
        .collect();
    let s = MeanSe::from_samples(&z2);
    assert!(s.agrees_with(0.0, 3.0, 0.0), "{s:?}");
}

#[test]
fn jump_counts_match_compensator() {
    let p = ModelParams::critical(1.9, 0.6, 1.0);
    let st = derive_exponents(&p).unwrap();
    let grid = Grid1D::unit(64).unwrap();
    let sim = Simulator::new(&p, &grid, &run(300, 16, 0.05), &SimConfig::default()).unwrap();
    let r0 = sim.steps.iter().map(|s| s.r_cut).fold(0.1, f64::max);
    let d: Vec<f64> = (0..300)
        .map(|r| {
            let out = sim.run_replica(r).unwrap();
            out.jumps.count_above(r0) as f64 - out.integrated_compensator(st.rho_coeff, r0)
        })
        .collect();
    let s = MeanSe::from_samples(&d);
    assert!(s.agrees_with(0.0, 3.0, 0.0), "{s:?}");
}

#[test]
fn representation_tracks_scheme() {
    let p = ModelParams::critical(1.6, 0.4, 0.5);
    let grid = Grid1D::unit(128).unwrap();
    let sim = Simulator::new(&p, &grid, &run(1, 32, 0.05), &SimConfig::default()).unwrap();
    let out = sim.run_replica(0).unwrap();
    let rep = density_from_representation(&out).unwrap();
    let scale = out
        .decomposition
        .x_t
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let z1_err = rep
        .z1
        .iter()
        .zip(&out.decomposition.z1)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(z1_err < 1e-8 * scale.max(1.0), "z1 {z1_err}");
    // Atoms sit on the simulation lattice in the scheme and at their exact
    // positions in the representation; compare in L¹.
    let dx = grid.dx;
    let l1: f64 = rep
        .x_t
        .iter()
        .zip(&out.decomposition.x_t)
        .map(|(a, b)| (a - b).abs() * dx)
        .sum();
    assert!(l1 < 0.1, "L1 gap {l1}");
}

#[test]
fn time_change_is_antisymmetric_in_the_pair() {
    let p = ModelParams::critical(1.6, 0.4, 0.3);
    let grid = Grid1D::unit(64).unwrap();
    let cfg = SimConfig {
        store_path: true,
        ..SimConfig::default()
    };
    let sim = Simulator::new(&p, &grid, &run(1, 16, 0.05), &cfg).unwrap();
    let out = sim.run_replica(0).unwrap();
    let a = increment_time_change(&out, 0.4, 0.45, 0.5).unwrap();
    let b = increment_time_change(&out, 0.45, 0.4, 0.5).unwrap();
    assert!(a.plus > 0.0 && a.minus > 0.0);
    assert!((a.plus - b.minus).abs() <= 1e-9 * a.plus);
    assert!((a.minus - b.plus).abs() <= 1e-9 * a.minus);
    assert!(increment_time_change(&out, 0.4, 0.45, 0.95).is_err());
}

#[test]
fn census_without_branching_has_no_jump_events() {
    let mut p = ModelParams::critical(1.6, 0.4, 1.0);
    p.b = 0.0;
    let grid = Grid1D::unit(256).unwrap();
    let cfg = SimConfig {
        cell_mass_level: Some(8),
        ..SimConfig::default()
    };
    let sim = Simulator::new(&p, &grid, &run(1, 16, 0.05), &cfg).unwrap();
    let out = sim.run_replica(0).unwrap();
    assert!(out.jumps.is_empty());
    let ec = event_census(&out, &out.decomposition.x_t, &CensusParams::default(), 1e-4).unwrap();
    assert!(!ec.levels.is_empty());
    for l in &ec.levels {
        assert!(!l.o_n, "O_{} set without jumps", l.n);
        assert_eq!(l.a_count, 0);
        assert_eq!(l.g_count, 0);
    }
}
