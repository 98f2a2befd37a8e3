//! Model parameters, derived exponents and the theoretical multifractal
//! spectrum, plus the grid and run configuration shared by every stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Finite initial measure `μ = X_0` on the line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMeasure {
    /// `density · Lebesgue` restricted to `[lo, hi]`.
    Interval { lo: f64, hi: f64, density: f64 },
    /// Weighted point atoms `(position, mass)`.
    Atoms { atoms: Vec<(f64, f64)> },
}

impl InitialMeasure {
    pub fn lebesgue(lo: f64, hi: f64) -> Self {
        InitialMeasure::Interval {
            lo,
            hi,
            density: 1.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            InitialMeasure::Interval { lo, hi, density } => density * (hi - lo),
            InitialMeasure::Atoms { atoms } => atoms.iter().map(|&(_, m)| m).sum(),
        }
    }

    /// Density samples on `grid` whose Riemann sum `Σ ρ_i dx` reproduces the
    /// measure. Intervals are split by cell overlap, atoms by cloud-in-cell.
    pub fn discretize(&self, grid: &Grid1D) -> Vec<f64> {
        let n = grid.n_points;
        let dx = grid.dx;
        let mut rho = vec![0.0; n];
        match self {
            InitialMeasure::Interval { lo, hi, density } => {
                for (i, r) in rho.iter_mut().enumerate() {
                    let c = grid.x(i);
                    let overlap = ((c + 0.5 * dx).min(*hi) - (c - 0.5 * dx).max(*lo)).max(0.0);
                    *r = density * overlap / dx;
                }
            }
            InitialMeasure::Atoms { atoms } => {
                for &(pos, mass) in atoms {
                    let u = (pos - grid.x_min) / dx;
                    let i0 = u.floor();
                    let frac = u - i0;
                    let i0 = i0 as i64;
                    for (idx, w) in [(i0, 1.0 - frac), (i0 + 1, frac)] {
                        if (0..n as i64).contains(&idx) && w > 0.0 {
                            rho[idx as usize] += mass * w / dx;
                        }
                    }
                }
            }
        }
        rho
    }
}

/// Parameters `(α, β, a, b, t, μ)` of the (α,1,β)-superprocess.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub t: f64,
    pub mu: InitialMeasure,
}

impl ModelParams {
    /// Critical parameters with unit Lebesgue initial mass on `(0,1)`.
    pub fn critical(alpha: f64, beta: f64, t: f64) -> Self {
        ModelParams {
            alpha,
            beta,
            a: 0.0,
            b: 1.0,
            t,
            mu: InitialMeasure::lebesgue(0.0, 1.0),
        }
    }

    /// Stability index `κ = 1 + β` of the branching mechanism.
    pub fn kappa(&self) -> f64 {
        1.0 + self.beta
    }

    /// Jump-measure intensity `ϱ = b(1+β)β / Γ(1−β)`.
    pub fn rho_coeff(&self) -> f64 {
        self.b * (1.0 + self.beta) * self.beta / gamma(1.0 - self.beta)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    /// `β < (α−1)/2`: the regime in which `∂Z²/∂x` exists.
    pub z2_differentiable: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_params(p: &ModelParams) -> ValidationReport {
    let mut violations = Vec::new();
    let finite = [p.alpha, p.beta, p.a, p.b, p.t]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        violations.push("all scalar parameters must be finite".to_string());
    }
    if !(p.beta > 0.0 && p.beta < 1.0) {
        violations.push(format!("beta = {} must lie in (0,1)", p.beta));
    }
    if !(p.alpha > 1.0 + p.beta) {
        violations.push(format!(
            "alpha = {} must exceed 1+beta = {} (continuous-density regime)",
            p.alpha,
            1.0 + p.beta
        ));
    }
    if p.alpha > 2.0 {
        violations.push(format!("alpha = {} must not exceed 2", p.alpha));
    }
    // b = 0 is allowed as the deterministic limit with branching switched off.
    if !(p.b >= 0.0) {
        violations.push(format!("b = {} must be nonnegative", p.b));
    }
    if !(p.t > 0.0) {
        violations.push(format!("t = {} must be positive", p.t));
    }
    match &p.mu {
        InitialMeasure::Interval { lo, hi, density } => {
            if !(lo < hi) || !(*density >= 0.0) || !density.is_finite() {
                violations
                    .push("initial interval must have lo < hi and finite density >= 0".into());
            }
        }
        InitialMeasure::Atoms { atoms } => {
            if atoms
                .iter()
                .any(|&(x, m)| !x.is_finite() || !(m >= 0.0) || !m.is_finite())
            {
                violations.push("initial atoms must have finite positions and masses >= 0".into());
            }
        }
    }
    if !p.mu.total_mass().is_finite() {
        violations.push("initial measure must have finite mass".into());
    }
    ValidationReport {
        violations,
        z2_differentiable: p.beta < (p.alpha - 1.0) / 2.0,
    }
}

/// Exponents that shape the multifractal spectrum of `x ↦ X_t(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTheory {
    /// Optimal uniform Hölder index `α/(1+β) − 1`.
    pub eta_c: f64,
    /// Hölder index at a fixed point `(1+α)/(1+β) − 1`.
    pub eta_bar_c: f64,
    /// Jump intensity `ϱ`.
    pub rho_coeff: f64,
    /// `1 + β`; slope of the spectrum.
    pub kappa: f64,
}

pub fn derive_exponents(p: &ModelParams) -> Result<SpectrumTheory> {
    let report = validate_params(p);
    if !report.is_valid() {
        return Err(Error::InvalidParams(report.violations.join("; ")));
    }
    let kappa = 1.0 + p.beta;
    Ok(SpectrumTheory {
        eta_c: p.alpha / kappa - 1.0,
        eta_bar_c: (1.0 + p.alpha) / kappa - 1.0,
        rho_coeff: p.rho_coeff(),
        kappa,
    })
}

impl SpectrumTheory {
    /// `D(η) = (1+β)(η − η_c)` without range checking.
    pub fn spectrum_unchecked(&self, eta: f64) -> f64 {
        self.kappa * (eta - self.eta_c)
    }
}

/// `D(η) = (1+β)(η − η_c)` for `η ∈ [η_c, η̄_c)`.
pub fn theoretical_spectrum(st: &SpectrumTheory, eta: f64) -> Result<f64> {
    if !(eta >= st.eta_c && eta < st.eta_bar_c) {
        return Err(Error::domain(format!(
            "eta = {eta} outside [{}, {})",
            st.eta_c, st.eta_bar_c
        )));
    }
    Ok(st.spectrum_unchecked(eta))
}

/// Uniform periodic grid `x_i = x_min + i·dx`, `i < n_points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub dx: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !n_points.is_power_of_two() {
            return Err(Error::domain(format!(
                "grid size {n_points} must be a power of two >= 2"
            )));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::domain("grid requires finite x_min < x_max"));
        }
        Ok(Grid1D {
            x_min,
            x_max,
            n_points,
            dx: (x_max - x_min) / n_points as f64,
        })
    }

    /// Grid on `(0,1)`.
    pub fn unit(n_points: usize) -> Result<Self> {
        Grid1D::new(0.0, 1.0, n_points)
    }

    /// Grid symmetric about zero: `x_{n/2} = 0`.
    pub fn centered(half_width: f64, n_points: usize) -> Result<Self> {
        Grid1D::new(-half_width, half_width, n_points)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Index of the cell `[x_i − dx/2, x_i + dx/2)` containing `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let u = ((x - self.x_min) / self.dx + 0.5).floor();
        if u >= 0.0 && (u as usize) < self.n_points {
            Some(u as usize)
        } else {
            None
        }
    }

    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.n_points == other.n_points
            && (self.x_min - other.x_min).abs() <= 1e-12 * self.length()
            && (self.x_max - other.x_max).abs() <= 1e-12 * self.length()
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("./out")
}

/// Run-level configuration loaded from the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_replicas: usize,
    /// Number of uniform steps over `[0,t]`; late times are refined geometrically.
    pub time_steps: usize,
    /// Small-jump truncation level at lag `t − s = t`.
    pub r_min: f64,
    /// Proof parameter `γ`, constrained to `(0, 10⁻²·η_c/α)`.
    pub gamma: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        let st = derive_exponents(p)?;
        let mut problems = Vec::new();
        if !(self.r_min > 0.0) {
            problems.push(format!("r_min = {} must be positive", self.r_min));
        }
        let gamma_max = 1e-2 * st.eta_c / p.alpha;
        if !(self.gamma > 0.0 && self.gamma < gamma_max) {
            problems.push(format!(
                "gamma = {} must lie in (0, {gamma_max:.3e})",
                self.gamma
            ));
        }
        if self.n_replicas == 0 {
            problems.push("n_replicas must be >= 1".into());
        }
        if self.time_steps == 0 {
            problems.push("time_steps must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(problems.join("; ")))
        }
    }

    /// Default `γ = min(10⁻²η_c/α, 10⁻³)/2`.
    pub fn default_gamma(st: &SpectrumTheory, alpha: f64) -> f64 {
        (1e-2 * st.eta_c / alpha).min(1e-3) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(alpha: f64, beta: f64) -> ModelParams {
        ModelParams::critical(alpha, beta, 1.0)
    }

    #[test]
    fn validation_examples() {
        let r = validate_params(&params(1.6, 0.4));
        assert!(r.is_valid());
        assert!(!r.z2_differentiable);

        let r = validate_params(&params(1.8, 0.2));
        assert!(r.is_valid());
        assert!(r.z2_differentiable);

        let r = validate_params(&params(1.2, 0.5));
        assert!(!r.is_valid());
        assert!(r.violations.iter().any(|v| v.contains("1+beta")));
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut p = params(2.5, 1.5);
        p.b = -1.0;
        p.t = 0.0;
        let r = validate_params(&p);
        assert!(r.violations.len() >= 4, "{:?}", r.violations);
    }

    #[test]
    fn exponent_examples() {
        let st = derive_exponents(&params(1.6, 0.4)).unwrap();
        assert!((st.eta_c - 1.0 / 7.0).abs() < 1e-12);
        assert!((st.eta_bar_c - 6.0 / 7.0).abs() < 1e-12);

        let st = derive_exponents(&params(1.8, 0.5)).unwrap();
        assert!((st.eta_c - 0.2).abs() < 1e-12);
        assert!((st.eta_bar_c - 13.0 / 15.0).abs() < 1e-12);
        // Γ(1/2) = √π.
        assert!((st.rho_coeff - 0.75 / PI.sqrt()).abs() < 1e-12);
        assert!((st.rho_coeff - 0.423142).abs() < 1e-6);
    }

    #[test]
    fn derive_rejects_invalid() {
        assert!(derive_exponents(&params(1.2, 0.5)).is_err());
    }

    #[test]
    fn spectrum_examples() {
        let st = derive_exponents(&params(1.6, 0.4)).unwrap();
        assert!((theoretical_spectrum(&st, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(theoretical_spectrum(&st, st.eta_c).unwrap(), 0.0);
        let near_top = theoretical_spectrum(&st, st.eta_bar_c - 1e-12).unwrap();
        assert!((near_top - 1.0).abs() < 1e-9);
        assert!(theoretical_spectrum(&st, st.eta_bar_c).is_err());
        assert!(theoretical_spectrum(&st, 0.1).is_err());
    }

    #[test]
    fn grid_rules() {
        assert!(Grid1D::unit(1000).is_err());
        assert!(Grid1D::unit(1).is_err());
        let g = Grid1D::unit(1024).unwrap();
        assert!((g.dx - 1.0 / 1024.0).abs() < 1e-15);
        assert_eq!(g.cell_of(0.0), Some(0));
        assert_eq!(g.cell_of(0.5), Some(512));
        assert_eq!(g.cell_of(-0.01), None);
        let c = Grid1D::centered(4.0, 64).unwrap();
        assert_eq!(c.x(32), 0.0);
    }

    #[test]
    fn discretization_preserves_mass() {
        let g = Grid1D::new(-1.0, 2.0, 256).unwrap();
        let mu = InitialMeasure::lebesgue(0.0, 1.0);
        let m: f64 = mu.discretize(&g).iter().sum::<f64>() * g.dx;
        assert!((m - 1.0).abs() < 1e-12);
        let atoms = InitialMeasure::Atoms {
            atoms: vec![(0.3, 0.5), (1.25, 2.0)],
        };
        let m: f64 = atoms.discretize(&g).iter().sum::<f64>() * g.dx;
        assert!((m - 2.5).abs() < 1e-12);
    }

    #[test]
    fn run_config_gamma_window() {
        let p = params(1.6, 0.4);
        let st = derive_exponents(&p).unwrap();
        let mut rc = RunConfig {
            seed: 1,
            n_replicas: 1,
            time_steps: 8,
            r_min: 1e-3,
            gamma: RunConfig::default_gamma(&st, p.alpha),
            output_dir: default_output_dir(),
        };
        rc.validate(&p).unwrap();
        rc.gamma = 1e-2;
        assert!(rc.validate(&p).is_err());
        rc.gamma = 1e-4;
        rc.r_min = 0.0;
        assert!(rc.validate(&p).is_err());
    }

    #[test]
    fn run_config_output_dir_defaults() {
        let rc: RunConfig = serde_json::from_str(
            r#"{"seed": 3, "n_replicas": 2, "time_steps": 16, "r_min": 0.01, "gamma": 1e-4}"#,
        )
        .unwrap();
        assert_eq!(rc.output_dir, PathBuf::from("./out"));
        let missing: std::result::Result<RunConfig, _> =
            serde_json::from_str(r#"{"seed": 3, "n_replicas": 2}"#);
        assert!(missing.is_err());
    }

    proptest::proptest! {
        #[test]
        fn exponent_identities(beta in 0.01f64..0.99, frac in 0.001f64..0.999) {
            let alpha = 1.0 + beta + frac * (1.0 - beta);
            let st = derive_exponents(&params(alpha, beta)).unwrap();
            proptest::prop_assert!(st.eta_c > 0.0 && st.eta_c < st.eta_bar_c && st.eta_bar_c < 2.0);
            proptest::prop_assert!((st.eta_bar_c - st.eta_c - 1.0 / (1.0 + beta)).abs() < 1e-12);
            // Affine with slope 1+β.
            let e1 = st.eta_c + 0.25 * (st.eta_bar_c - st.eta_c);
            let e2 = st.eta_c + 0.75 * (st.eta_bar_c - st.eta_c);
            let slope = (theoretical_spectrum(&st, e2).unwrap() - theoretical_spectrum(&st, e1).unwrap()) / (e2 - e1);
            proptest::prop_assert!((slope - (1.0 + beta)).abs() < 1e-9);
        }

        #[test]
        fn rho_increases_with_b(beta in 0.05f64..0.95, b in 0.01f64..10.0, db in 0.001f64..1.0) {
            let mut p = params(1.0 + beta + 0.5 * (1.0 - beta), beta);
            p.b = b;
            let r1 = p.rho_coeff();
            p.b = b + db;
            proptest::prop_assert!(p.rho_coeff() > r1 && r1 > 0.0);
        }
    }
}
