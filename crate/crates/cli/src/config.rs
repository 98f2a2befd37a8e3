//! The JSON run file and its validation.
//!
//! Syntax errors are reported with the line and column from the parser.
//! Semantic errors name the offending key and the line it sits on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superfractal::mfa::CensusParams;
use superfractal::mfa::HolderConfig;
use superfractal::model::{derive_exponents, validate_params, Grid1D, ModelParams, RunConfig};
use superfractal::sim::{DiagnosticsConfig, SimConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn build(&self) -> superfractal::Result<Grid1D> {
        Grid1D::new(self.x_min, self.x_max, self.n_points)
    }
}

/// Level-set bins and the gates applied to the pooled spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    pub centres: Vec<f64>,
    pub half_width: f64,
    /// `θ` as a fraction of the mean of `X_t` on the window.
    pub threshold_fraction: f64,
    /// Bin centres where `D̂` must be within `tolerance` of the theory.
    pub gate_etas: Vec<f64>,
    pub tolerance: f64,
    /// The `floor_quantile` of `η̂` on `{X_t > θ}` must reach `η_c − floor_margin`.
    pub floor_quantile: f64,
    pub floor_margin: f64,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec {
            centres: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            half_width: 0.05,
            threshold_fraction: 0.1,
            gate_etas: vec![0.3, 0.5, 0.7],
            tolerance: 0.15,
            floor_quantile: 0.01,
            floor_margin: 0.1,
        }
    }
}

/// One bump `h·exp(1 − 1/(1−u²))`, `u = (x−centre)/width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub centre: f64,
    pub height: f64,
    pub width: f64,
}

impl Bump {
    pub fn sample(&self, grid: &Grid1D) -> Vec<f64> {
        grid.points()
            .iter()
            .map(|&x| {
                let u = (x - self.centre) / self.width;
                if u.abs() < 1.0 {
                    self.height * (1.0 - 1.0 / (1.0 - u * u)).exp()
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualitySpec {
    /// Points of the analysis window `(0,1)`.
    pub grid_points: usize,
    pub r_min: f64,
    pub time_steps: usize,
    pub replicas: usize,
    pub solver_steps: usize,
    pub solver_rel_tol: f64,
    pub bumps: Vec<Bump>,
}

impl Default for DualitySpec {
    fn default() -> Self {
        DualitySpec {
            grid_points: 64,
            r_min: 1e-3,
            time_steps: 512,
            replicas: 2000,
            solver_steps: 400,
            solver_rel_tol: 0.01,
            bumps: vec![
                Bump {
                    centre: 0.5,
                    height: 1.0,
                    width: 0.3,
                },
                Bump {
                    centre: 0.3,
                    height: 3.0,
                    width: 0.15,
                },
            ],
        }
    }
}

/// Which property suites `verify` runs, and their sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub kernel: bool,
    pub kernel_samples: usize,
    pub kernel_alphas: Vec<f64>,
    pub levy: bool,
    pub levy_paths: usize,
    pub levy_kappas: Vec<f64>,
    pub levy_lambdas: Vec<f64>,
    /// Mean number of jumps above the truncation level per unit time; fixes
    /// `r_min` for each κ.
    pub levy_jump_rate: f64,
    pub duality: bool,
    pub duality_spec: DualitySpec,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            kernel: true,
            kernel_samples: 100_000,
            kernel_alphas: vec![1.3, 1.6, 1.9],
            levy: true,
            levy_paths: 100_000,
            levy_kappas: vec![1.2, 1.5, 1.8],
            levy_lambdas: vec![0.5, 1.0, 2.0],
            levy_jump_rate: 200.0,
            duality: true,
            duality_spec: DualitySpec::default(),
        }
    }
}

/// Everything a run needs; `manifest.json` stores the resolved copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub params: ModelParams,
    pub run: RunConfig,
    pub grid: GridSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub holder: HolderConfig,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub census: CensusParams,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub verify: VerifySpec,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
}

/// 1-based line of `"key"` inside the object opened by `"section"`, or of
/// the section itself.
pub fn locate_key(text: &str, section: &str, key: &str) -> usize {
    let lines: Vec<&str> = text.lines().collect();
    let quoted = |k: &str| format!("\"{k}\"");
    let start = lines
        .iter()
        .position(|l| l.contains(&quoted(section)))
        .unwrap_or(0);
    lines[start..]
        .iter()
        .position(|l| l.contains(&quoted(key)))
        .map(|i| start + i + 1)
        .unwrap_or(start + 1)
}

/// Leading identifier of a message such as `"beta = 1.5 must lie in (0,1)"`.
fn message_key(msg: &str) -> Option<&str> {
    let head = msg.split(" = ").next()?;
    (head.len() < msg.len() && head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
        .then_some(head)
}

impl RunFile {
    pub fn parse(text: &str, origin: &Path) -> CliResult<RunFile> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!(
                "{}:{}:{}: {}",
                origin.display(),
                e.line(),
                e.column(),
                e
            ))
        })
    }

    /// Reads, parses, applies overrides and validates.
    pub fn load(path: &Path, ov: &Overrides) -> CliResult<RunFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut rf = RunFile::parse(&text, path)?;
        rf.apply(ov);
        rf.validate(&text, path)?;
        Ok(rf)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.run.seed = s;
        }
        if let Some(n) = ov.replicas {
            self.run.n_replicas = n;
        }
        if let Some(o) = &ov.out {
            self.run.output_dir = o.clone();
        }
    }

    /// Semantic checks; every message is prefixed with `file:line`.
    pub fn validate(&self, text: &str, origin: &Path) -> CliResult<()> {
        let mut errors = Vec::new();
        let mut push = |section: &str, fallback: &str, msg: String| {
            let key = message_key(&msg).unwrap_or(fallback);
            let key = if key == "Q" { "big_q" } else { key };
            let line = locate_key(text, section, key);
            errors.push(format!(
                "{}:{line}: {section}.{key}: {msg}",
                origin.display()
            ));
        };
        let report = validate_params(&self.params);
        for v in &report.violations {
            push("params", "mu", v.clone());
        }
        if let Err(e) = self.grid.build() {
            push("grid", "n_points", e.to_string());
        }
        if report.is_valid() {
            if let Err(e) = self.run.validate(&self.params) {
                for m in split_core(&e) {
                    push("run", "run", m);
                }
            }
            let st = derive_exponents(&self.params).expect("validated");
            if let Err(e) = self
                .census
                .resolve(&st, self.params.alpha, self.run.gamma, 1.0)
            {
                for m in split_core(&e) {
                    push("census", "census", m);
                }
            }
        }
        let sp = &self.spectrum;
        if sp.centres.is_empty() || sp.half_width.is_nan() || sp.half_width <= 0.0 {
            push(
                "spectrum",
                "centres",
                "centres must be nonempty and half_width positive".into(),
            );
        }
        if sp.threshold_fraction.is_nan() || sp.threshold_fraction < 0.0 {
            push(
                "spectrum",
                "threshold_fraction",
                format!(
                    "threshold_fraction = {} must be >= 0",
                    sp.threshold_fraction
                ),
            );
        }
        if let Some(l) = self.sim.cell_mass_level {
            if (1usize << l.min(63)) > self.grid.n_points {
                push(
                    "sim",
                    "cell_mass_level",
                    format!("cell_mass_level = {l} exceeds the grid resolution"),
                );
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errors.join("\n")))
        }
    }
}

/// Splits the `"; "`-joined list inside a core `InvalidParams` error.
fn split_core(e: &superfractal::Error) -> Vec<String> {
    match e {
        superfractal::Error::InvalidParams(s) => s.split("; ").map(str::to_string).collect(),
        other => vec![other.to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
  "params": {
    "alpha": 1.6,
    "beta": 0.4,
    "a": 0.0,
    "b": 1.0,
    "t": 1.0,
    "mu": { "kind": "interval", "lo": 0.0, "hi": 1.0, "density": 1.0 }
  },
  "run": {
    "seed": 1,
    "n_replicas": 2,
    "time_steps": 16,
    "r_min": 0.1,
    "gamma": 0.0001
  },
  "grid": { "x_min": 0.0, "x_max": 1.0, "n_points": 256 }
}"#;

    #[test]
    fn parses_and_defaults() {
        let rf = RunFile::parse(GOOD, Path::new("c.json")).unwrap();
        rf.validate(GOOD, Path::new("c.json")).unwrap();
        assert_eq!(rf.spectrum.gate_etas, vec![0.3, 0.5, 0.7]);
        assert_eq!(rf.run.output_dir, PathBuf::from("./out"));
    }

    #[test]
    fn syntax_error_has_line_and_column() {
        let bad = GOOD.replace("\"beta\": 0.4,", "\"beta\": 0.4,,");
        let e = RunFile::parse(&bad, Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("c.json:4:"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn semantic_error_names_the_line() {
        let bad = GOOD.replace("\"beta\": 0.4", "\"beta\": 1.5");
        let rf = RunFile::parse(&bad, Path::new("c.json")).unwrap();
        let e = rf
            .validate(&bad, Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("c.json:4: params.beta"), "{e}");
        let bad = GOOD.replace("\"gamma\": 0.0001", "\"gamma\": 0.5");
        let rf = RunFile::parse(&bad, Path::new("c.json")).unwrap();
        let e = rf
            .validate(&bad, Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(e.contains("c.json:15: run.gamma"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = GOOD.replace("\"seed\": 1,", "\"seed\": 1, \"sead\": 2,");
        assert!(RunFile::parse(&bad, Path::new("c.json")).is_err());
    }

    #[test]
    fn overrides_win() {
        let mut rf = RunFile::parse(GOOD, Path::new("c.json")).unwrap();
        rf.apply(&Overrides {
            seed: Some(9),
            replicas: Some(5),
            out: Some("x".into()),
        });
        assert_eq!((rf.run.seed, rf.run.n_replicas), (9, 5));
        assert_eq!(rf.run.output_dir, PathBuf::from("x"));
    }

    #[test]
    fn bump_is_smooth_and_supported() {
        let g = Grid1D::unit(64).unwrap();
        let b = Bump {
            centre: 0.5,
            height: 2.0,
            width: 0.25,
        };
        let v = b.sample(&g);
        assert!((v[32] - 2.0).abs() < 1e-12);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[16], 0.0);
    }
}
