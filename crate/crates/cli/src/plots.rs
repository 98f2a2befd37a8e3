//! Gnuplot scripts for a run directory. Every script reads only files that
//! sit next to it, so `cd run_dir && gnuplot spectrum.gp` works anywhere.

use std::path::Path;

use superfractal::model::{derive_exponents, ModelParams};

use crate::error::{CliError, CliResult};

pub const SPECTRUM_SCRIPT: &str = "spectrum.gp";
pub const HOLDER_SCRIPT: &str = "holder_field.gp";
pub const JUMPS_SCRIPT: &str = "jumps.gp";

/// `D̂(η)` with the theory overlay `(1+β)(η−η_c)` on `[η_c, η̄_c]`.
/// Rows without an estimate are skipped by gnuplot, so an empty spectrum
/// renders the theory line alone.
pub fn spectrum_script(params: &ModelParams) -> String {
    let st = derive_exponents(params).expect("validated parameters");
    format!(
        "set terminal pngcairo size 800,600\n\
         set output 'spectrum.png'\n\
         set datafile separator ','\n\
         set datafile missing 'NaN'\n\
         set key top left\n\
         set xlabel 'eta'\n\
         set ylabel 'D(eta)'\n\
         eta_c = {ec}\n\
         eta_bar_c = {ebc}\n\
         kappa = {k}\n\
         D(x) = (x >= eta_c && x <= eta_bar_c) ? kappa*(x - eta_c) : 1/0\n\
         set xrange [0:1.1]\n\
         set yrange [0:1.1]\n\
         plot D(x) with lines lw 2 title 'theory', \\\n\
         \x20    'spectrum.csv' every ::1 using (($1+$2)/2):3 with linespoints pt 7 title 'estimate'\n",
        ec = st.eta_c,
        ebc = st.eta_bar_c,
        k = st.kappa,
    )
}

/// `η̂(x)` and the jump-predicted exponent along the window, over `X_t`.
pub fn holder_script(params: &ModelParams) -> String {
    let st = derive_exponents(params).expect("validated parameters");
    format!(
        "set terminal pngcairo size 1000,700\n\
         set output 'holder_field.png'\n\
         set datafile separator ','\n\
         set multiplot layout 2,1\n\
         set ylabel 'X_t'\n\
         plot 'holder_field.csv' every ::1 using 1:2 with lines notitle\n\
         set ylabel 'eta'\n\
         set yrange [0:2.1]\n\
         plot 'holder_field.csv' every ::1 using 1:3 with dots title 'oscillation', \\\n\
         \x20    'holder_field.csv' every ::1 using 1:6 with points pt 7 ps 0.3 title 'jump prediction', \\\n\
         \x20    {ec} with lines dt 2 title 'eta_c'\n\
         unset multiplot\n",
        ec = st.eta_c,
    )
}

/// Jumps in the `(t−s, r)` plane on log-log axes, with a guide line of the
/// compensator slope `−2−β`.
pub fn jumps_script(params: &ModelParams) -> String {
    format!(
        "set terminal pngcairo size 800,600\n\
         set output 'jumps.png'\n\
         set datafile separator ','\n\
         set logscale xy\n\
         set xlabel 't - s'\n\
         set ylabel 'r'\n\
         T = {t}\n\
         slope = {slope}\n\
         guide(x) = 0.1 * x**slope\n\
         plot 'jumps.csv' every ::1 using (T - $1):3 with dots title 'jumps', \\\n\
         \x20    guide(x) with lines lw 2 title sprintf('slope %.2f', slope)\n",
        t = params.t,
        slope = jump_slope(params.beta),
    )
}

/// Exponent of `r` in the compensator density.
pub fn jump_slope(beta: f64) -> f64 {
    -2.0 - beta
}

/// Scripts for whatever data the directory holds; fails without
/// `spectrum.csv`.
pub fn emit_plots(dir: &Path, params: &ModelParams) -> CliResult<Vec<(&'static str, String)>> {
    let spectrum = dir.join("spectrum.csv");
    if !spectrum.is_file() {
        return Err(CliError::MissingArtifact(spectrum));
    }
    let mut out = vec![(SPECTRUM_SCRIPT, spectrum_script(params))];
    if dir.join("holder_field.csv").is_file() {
        out.push((HOLDER_SCRIPT, holder_script(params)));
    }
    if dir.join("jumps.csv").is_file() {
        out.push((JUMPS_SCRIPT, jumps_script(params)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::critical(1.6, 0.4, 1.0)
    }

    #[test]
    fn slope_guide() {
        assert_eq!(jump_slope(0.4), -2.4);
        assert!(jumps_script(&params()).contains("slope = -2.4"));
    }

    #[test]
    fn missing_spectrum_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let e = emit_plots(d.path(), &params()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn scripts_reference_local_files_only() {
        let d = tempfile::tempdir().unwrap();
        for f in ["spectrum.csv", "holder_field.csv", "jumps.csv"] {
            std::fs::write(d.path().join(f), "h\n").unwrap();
        }
        let scripts = emit_plots(d.path(), &params()).unwrap();
        assert_eq!(scripts.len(), 3);
        for (_, s) in scripts {
            for quoted in s.split('\'').skip(1).step_by(2) {
                if quoted.ends_with(".csv") || quoted.ends_with(".png") {
                    assert!(!quoted.contains('/'), "{quoted}");
                }
            }
        }
    }

    #[test]
    fn theory_only_when_empty() {
        let s = spectrum_script(&params());
        assert!(s.contains("kappa = 1.4"));
        assert!(s.contains("set datafile missing 'NaN'"));
    }
}
