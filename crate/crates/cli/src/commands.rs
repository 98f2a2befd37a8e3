//! Subcommand bodies. Each writes its artifacts and a manifest and returns
//! the gates it evaluated.

use std::path::{Path, PathBuf};

use superfractal::kernels::build_kernel;
use superfractal::model::{Grid1D, ModelParams};

use crate::artifacts::{ArtifactWriter, Csv, GateResult, Manifest};
use crate::config::RunFile;
use crate::error::{in_stage, CliError, CliResult};
use crate::pipeline::{run_pipeline, PipelineOutput, Stages};
use crate::plots::emit_plots;
use crate::verify::{duality, run_verify};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Spectrum,
    Census,
    Verify { kernel_table: bool },
    LoglaplaceCheck,
    All,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Spectrum => "spectrum",
            Command::Census => "census",
            Command::Verify { .. } => "verify",
            Command::LoglaplaceCheck => "loglaplace-check",
            Command::All => "all",
        }
    }
}

/// What a finished command leaves behind.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.manifest.gates.iter().all(|g| g.pass)
    }
}

fn gate(name: &str, pass: bool) -> GateResult {
    if !pass {
        log::warn!("gate {name} failed");
    }
    GateResult {
        name: name.to_string(),
        pass,
    }
}

pub fn execute(cmd: Command, rf: &RunFile) -> CliResult<Outcome> {
    let dir = rf.run.output_dir.clone();
    let mut w = ArtifactWriter::create(&dir)?;
    let mut gates = Vec::new();
    let stages = match cmd {
        Command::Simulate => Some(Stages::default()),
        Command::Spectrum => Some(Stages {
            spectrum: true,
            census: false,
        }),
        Command::Census => Some(Stages {
            spectrum: false,
            census: true,
        }),
        Command::All => Some(Stages {
            spectrum: true,
            census: true,
        }),
        _ => None,
    };
    if let Some(stages) = stages {
        let out = w.stage("pipeline", || run_pipeline(rf, stages))?;
        w.record("simulate_replica_seconds", out.seconds[0]);
        w.record("spectrum_replica_seconds", out.seconds[1]);
        w.record("census_replica_seconds", out.seconds[2]);
        write_pipeline(&mut w, &out, &mut gates)?;
    }
    match cmd {
        Command::Verify { kernel_table } => {
            let rep = w.stage("verify", || run_verify(&rf.params, &rf.verify, rf.run.seed))?;
            for (name, pass) in rep.gates() {
                gates.push(gate(name, pass));
            }
            w.write_json("verify.json", &rep)?;
            if kernel_table {
                write_kernel_table(&mut w, &rf.params)?;
            }
        }
        Command::LoglaplaceCheck => {
            let rep = w.stage("duality", || {
                duality(&rf.params, &rf.verify.duality_spec, rf.run.seed)
            })?;
            gates.push(gate("duality", rep.pass));
            w.write_json("loglaplace_check.json", &rep)?;
        }
        Command::All => {
            let rep = w.stage("verify", || run_verify(&rf.params, &rf.verify, rf.run.seed))?;
            for (name, pass) in rep.gates() {
                gates.push(gate(name, pass));
            }
            w.write_json("verify.json", &rep)?;
            let scripts = emit_plots(w.dir(), &rf.params)?;
            for (name, text) in scripts {
                w.write(name, text.as_bytes())?;
            }
        }
        _ => {}
    }
    let manifest = w.finish(cmd.name(), rf, gates, None)?;
    Ok(Outcome { dir, manifest })
}

fn write_pipeline(
    w: &mut ArtifactWriter,
    out: &PipelineOutput,
    gates: &mut Vec<GateResult>,
) -> CliResult<()> {
    let f = &out.first;
    let mut density = Csv::new(&["x", "z1", "z2", "z3", "x_t"]);
    for i in 0..f.grid.n_points {
        density.row(&[f.grid.x(i), f.z1[i], f.z2[i], f.z3[i], f.x_t[i]]);
    }
    w.write("density.csv", &density.into_bytes())?;
    let mut jumps = Csv::new(&["s", "y", "r"]);
    for j in &f.jumps {
        jumps.row(&[j.s, j.y, j.r]);
    }
    w.write("jumps.csv", &jumps.into_bytes())?;
    w.write_json("diagnostics.json", &out.diagnostics)?;
    if let Some(err) = out.diagnostics.heat_flow_error {
        gates.push(gate("heat_flow", err <= 1e-8));
    }

    if let Some(sp) = &out.spectrum {
        let p = &sp.pooled;
        let mut csv = Csv::new(&["eta_bin_lo", "eta_bin_hi", "d_hat", "d_theory", "count"]);
        for k in 0..p.eta_bins.len() {
            let (lo, hi) = p.eta_bins[k];
            csv.row(&[
                lo,
                hi,
                p.d_hat[k].unwrap_or(f64::NAN),
                p.d_theory[k],
                p.counts[k] as f64,
            ]);
        }
        w.write("spectrum.csv", &csv.into_bytes())?;
        w.write_json("spectrum_report.json", sp)?;
        gates.push(gate("spectrum_points", sp.points.iter().all(|p| p.pass)));
        gates.push(gate("spectrum_monotone", sp.monotone));
        gates.push(gate("holder_floor", sp.floor_pass));
        if let Some(hf) = &f.holder {
            let je = f.jump_eta.as_deref();
            let mut csv = Csv::new(&[
                "x",
                "x_t",
                "eta_hat",
                "detrend_degree",
                "fit_quality",
                "eta_jump",
            ]);
            for i in 0..f.grid.n_points {
                csv.row(&[
                    f.grid.x(i),
                    f.x_t[i],
                    hf.eta_hat[i],
                    hf.detrend_degree[i] as f64,
                    hf.fit_quality[i],
                    je.map_or(f64::NAN, |v| v[i]),
                ]);
            }
            w.write("holder_field.csv", &csv.into_bytes())?;
        }
    }
    if let Some(c) = &out.census {
        w.write_json("census.json", c)?;
        gates.push(gate("census_boxes", c.box_pass));
        gates.push(gate("census_o_nonincreasing", c.o_nonincreasing));
    }
    Ok(())
}

/// Kernel table of `p_t^α` on a centred grid of 16 widths, for debugging.
fn write_kernel_table(w: &mut ArtifactWriter, p: &ModelParams) -> CliResult<()> {
    let stage = in_stage("verify-kernel");
    let width = p.t.powf(1.0 / p.alpha);
    let grid = Grid1D::centered(16.0 * width, 2048).map_err(&stage)?;
    let tab = build_kernel(p.alpha, p.t, grid).map_err(&stage)?;
    let mut buf = Vec::new();
    tab.write_csv(&mut buf)
        .map_err(|e| CliError::numeric("write", e))?;
    w.write("kernel_table.csv", &buf)
}

/// Writes plot scripts into `dir`. Parameters come from `rf` when given,
/// else from the directory's manifest.
pub fn plots(dir: &Path, rf: Option<&RunFile>) -> CliResult<Outcome> {
    let previous = Manifest::read(dir).ok();
    let config = match (rf, &previous) {
        (Some(rf), _) => rf.clone(),
        (None, Some(m)) => m.config.clone(),
        (None, None) => {
            return Err(CliError::MissingArtifact(
                dir.join(crate::artifacts::MANIFEST),
            ));
        }
    };
    let mut w = ArtifactWriter::create(dir)?;
    let scripts = emit_plots(dir, &config.params)?;
    for (name, text) in scripts {
        w.write(name, text.as_bytes())?;
    }
    let gates = previous
        .as_ref()
        .map(|m| m.gates.clone())
        .unwrap_or_default();
    let manifest = w.finish("plots", &config, gates, previous.as_ref())?;
    Ok(Outcome {
        dir: dir.to_path_buf(),
        manifest,
    })
}
