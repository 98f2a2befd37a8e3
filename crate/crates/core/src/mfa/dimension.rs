//! Box-counting and gauge covering sums, level sets of Hölder fields and the
//! empirical spectrum built from them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::holder::{HolderField, ScaleLadder};
use crate::model::{Grid1D, SpectrumTheory};
use crate::stats::linear_fit;

/// Fewest points for which a box dimension is reported.
pub const MIN_POINTS: usize = 10;

/// Half-open exponent bins `[lo, hi)`.
pub type EtaBin = (f64, f64);

/// `count` equal bins covering `[lo, hi)`.
pub fn uniform_bins(lo: f64, hi: f64, count: usize) -> Vec<EtaBin> {
    let w = (hi - lo) / count as f64;
    (0..count)
        .map(|k| (lo + k as f64 * w, lo + (k + 1) as f64 * w))
        .collect()
}

/// Bins of half-width `half` centred on `centres`.
pub fn centred_bins(centres: &[f64], half: f64) -> Vec<EtaBin> {
    centres.iter().map(|c| (c - half, c + half)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub eta_bins: Vec<EtaBin>,
    /// `None` where the bin holds too few points.
    pub d_hat: Vec<Option<f64>>,
    pub d_theory: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SpectrumEstimate {
    pub fn centres(&self) -> Vec<f64> {
        self.eta_bins.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// True when the defined estimates never decrease across bins.
    pub fn is_monotone(&self) -> bool {
        let defined: Vec<f64> = self.d_hat.iter().flatten().cloned().collect();
        defined.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeCoveringReport {
    pub eta: f64,
    pub cover_scale_ladder: Vec<f64>,
    /// `Σ h_η(|I|)` over occupied boxes, one entry per scale.
    pub gauge_sums: Vec<f64>,
    pub box_counts: Vec<usize>,
}

/// Occupied dyadic boxes of side `2^{−j}` (anchored at `x_min`).
pub fn box_count(points: &[usize], grid: &Grid1D, j: u32) -> usize {
    let side = 2f64.powi(-(j as i32));
    points
        .iter()
        .map(|&i| ((grid.x(i) - grid.x_min) / side + 1e-9).floor() as i64)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Least-squares slope of `log₂ N(2^{−j})` against `j`. `None` for fewer
/// than [`MIN_POINTS`] points or fewer than four scales; a single point has
/// dimension 0.
pub fn box_dimension(points: &[usize], grid: &Grid1D, ladder: &ScaleLadder) -> Option<f64> {
    if ladder.len() < 4 {
        return None;
    }
    let distinct: BTreeSet<usize> = points.iter().cloned().collect();
    if distinct.len() == 1 {
        return Some(0.0);
    }
    if distinct.len() < MIN_POINTS {
        return None;
    }
    let pts: Vec<usize> = distinct.into_iter().collect();
    let (x, y): (Vec<f64>, Vec<f64>) = ladder
        .levels()
        .map(|j| (j as f64, (box_count(&pts, grid, j) as f64).log2()))
        .unzip();
    linear_fit(&x, &y).map(|f| f.slope)
}

/// `h_η(x) = x^{(β+1)(η−η_c)} log²(1/x)`.
pub fn gauge(x: f64, eta: f64, st: &SpectrumTheory) -> f64 {
    let d = (st.kappa) * (eta - st.eta_c);
    x.powf(d) * x.ln().powi(2)
}

/// Gauge sums of the covering by occupied dyadic boxes at each scale.
pub fn gauge_covering_sum(
    points: &[usize],
    grid: &Grid1D,
    eta: f64,
    st: &SpectrumTheory,
    ladder: &ScaleLadder,
) -> GaugeCoveringReport {
    let mut scales = Vec::new();
    let mut sums = Vec::new();
    let mut counts = Vec::new();
    for j in ladder.levels() {
        let side = 2f64.powi(-(j as i32));
        let n = if points.is_empty() {
            0
        } else {
            box_count(points, grid, j)
        };
        scales.push(side);
        counts.push(n);
        sums.push(n as f64 * gauge(side, eta, st));
    }
    GaugeCoveringReport {
        eta,
        cover_scale_ladder: scales,
        gauge_sums: sums,
        box_counts: counts,
    }
}

/// Grid indices per bin; smooth and undefined points fall in no bin.
pub fn level_sets(hf: &HolderField, bins: &[EtaBin]) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); bins.len()];
    for (i, &e) in hf.eta_hat.iter().enumerate() {
        if !e.is_finite() || hf.is_smooth(i) {
            continue;
        }
        if let Some(k) = bins.iter().position(|&(lo, hi)| e >= lo && e < hi) {
            sets[k].push(i);
        }
    }
    sets
}

/// Box dimension of every level set, with the theoretical overlay.
pub fn empirical_spectrum(
    hf: &HolderField,
    st: &SpectrumTheory,
    bins: &[EtaBin],
    ladder: &ScaleLadder,
) -> SpectrumEstimate {
    let sets = level_sets(hf, bins);
    SpectrumEstimate {
        eta_bins: bins.to_vec(),
        d_hat: sets
            .iter()
            .map(|s| box_dimension(s, &hf.grid, ladder))
            .collect(),
        d_theory: theory_overlay(st, bins),
        counts: sets.iter().map(|s| s.len()).collect(),
    }
}

fn theory_overlay(st: &SpectrumTheory, bins: &[EtaBin]) -> Vec<f64> {
    bins.iter()
        .map(|(a, b)| {
            let c = 0.5 * (a + b);
            if c < st.eta_c {
                0.0
            } else {
                st.spectrum_unchecked(c.min(st.eta_bar_c)).min(1.0)
            }
        })
        .collect()
}

/// Averages the defined per-replica dimensions bin by bin.
pub fn pool_spectra(estimates: &[SpectrumEstimate]) -> Option<SpectrumEstimate> {
    let first = estimates.first()?;
    let nb = first.eta_bins.len();
    let mut d_hat = Vec::with_capacity(nb);
    let mut counts = vec![0; nb];
    for (k, count) in counts.iter_mut().enumerate() {
        let vals: Vec<f64> = estimates.iter().filter_map(|e| e.d_hat[k]).collect();
        d_hat.push(if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        });
        *count = estimates.iter().map(|e| e.counts[k]).sum();
    }
    Some(SpectrumEstimate {
        eta_bins: first.eta_bins.clone(),
        d_hat,
        d_theory: first.d_theory.clone(),
        counts,
    })
}

/// Coarse-grained spectrum pooled over replicas: at level `j` each dyadic
/// box gets the exponent `log osc / log 2^{−j}` of the field over the box and
/// its two neighbours, and `D̂(η)` is the slope of `log₂` of the mean number
/// of boxes per bin against `j`.
pub fn coarse_grained_spectrum(
    fields: &[&[f64]],
    grid: &Grid1D,
    st: &SpectrumTheory,
    bins: &[EtaBin],
    ladder: &ScaleLadder,
) -> SpectrumEstimate {
    let nb = bins.len();
    let levels: Vec<u32> = ladder.levels().collect();
    let mut counts = vec![vec![0usize; levels.len()]; nb];
    for f in fields {
        for (li, &j) in levels.iter().enumerate() {
            for h in coarse_exponents(f, grid, j) {
                if let Some(k) = bins.iter().position(|&(lo, hi)| h >= lo && h < hi) {
                    counts[k][li] += 1;
                }
            }
        }
    }
    let reps = fields.len().max(1) as f64;
    let d_hat = counts
        .iter()
        .map(|c| {
            let pts: Vec<(f64, f64)> = levels
                .iter()
                .zip(c)
                .filter(|(_, &n)| n > 0)
                .map(|(&j, &n)| (j as f64, (n as f64 / reps).log2()))
                .collect();
            if pts.len() < 4 {
                return None;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            linear_fit(&x, &y).map(|f| f.slope)
        })
        .collect();
    SpectrumEstimate {
        eta_bins: bins.to_vec(),
        d_hat,
        d_theory: theory_overlay(st, bins),
        counts: counts.iter().map(|c| c.iter().sum()).collect(),
    }
}

/// Exponents of the `2^j` dyadic boxes at level `j` (fewer when the grid is
/// coarser than the level).
pub fn coarse_exponents(field: &[f64], grid: &Grid1D, j: u32) -> Vec<f64> {
    let n = field.len();
    let side = 2f64.powi(-(j as i32));
    let cells = ((side / grid.dx).round() as usize).max(1);
    let boxes = n / cells;
    let ext: Vec<(f64, f64)> = (0..boxes)
        .map(|b| {
            let w = &field[b * cells..((b + 1) * cells).min(n)];
            (
                w.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                w.iter().cloned().fold(f64::INFINITY, f64::min),
            )
        })
        .collect();
    (1..boxes.saturating_sub(1))
        .filter_map(|b| {
            let mx = ext[b - 1].0.max(ext[b].0).max(ext[b + 1].0);
            let mn = ext[b - 1].1.min(ext[b].1).min(ext[b + 1].1);
            let osc = mx - mn;
            (osc > 0.0).then(|| osc.ln() / side.ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfa::synthetic::{cantor_indices, quaternary_indices};
    use crate::model::{derive_exponents, ModelParams};

    #[test]
    fn interval_and_point() {
        let g = Grid1D::unit(1 << 14).unwrap();
        let ladder = ScaleLadder::new(2, 12).unwrap();
        let all: Vec<usize> = (0..g.n_points).collect();
        let d = box_dimension(&all, &g, &ladder).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
        assert_eq!(box_dimension(&[77], &g, &ladder), Some(0.0));
        assert_eq!(box_dimension(&[1, 2, 3], &g, &ladder), None);
    }

    #[test]
    fn cantor_dimension() {
        let g = Grid1D::unit(1 << 14).unwrap();
        let pts = cantor_indices(&g, 7);
        let d = box_dimension(&pts, &g, &ScaleLadder::new(3, 11).unwrap()).unwrap();
        assert!((d - 2f64.ln() / 3f64.ln()).abs() < 0.05, "{d}");
    }

    #[test]
    fn monotone_under_inclusion() {
        let g = Grid1D::unit(1 << 14).unwrap();
        let ladder = ScaleLadder::new(1, 10).unwrap();
        let small = cantor_indices(&g, 7);
        let mut big = small.clone();
        big.extend(quaternary_indices(&g, 6));
        let (a, b) = (
            box_dimension(&small, &g, &ladder).unwrap(),
            box_dimension(&big, &g, &ladder).unwrap(),
        );
        assert!(b >= a - 0.05, "{a} {b}");
    }

    #[test]
    fn gauge_sums() {
        let p = ModelParams::critical(1.6, 0.4, 1.0);
        let st = derive_exponents(&p).unwrap();
        let g = Grid1D::unit(1 << 14).unwrap();
        let ladder = ScaleLadder::new(2, 12).unwrap();
        let empty = gauge_covering_sum(&[], &g, 0.5, &st, &ladder);
        assert!(empty.gauge_sums.iter().all(|s| *s == 0.0));
        // Whole interval with gauge exponent 0.5 < 1: sums grow.
        let all: Vec<usize> = (0..g.n_points).collect();
        let r = gauge_covering_sum(&all, &g, 0.5, &st, &ladder);
        assert!(r.gauge_sums.windows(2).all(|w| w[1] > w[0]));
        // Base-4 {0,3} set has dimension 1/2; with gauge exponent exactly
        // 1/2, sums / log² stay within a constant corridor.
        let eta = st.eta_c + 0.5 / st.kappa;
        let pts = quaternary_indices(&g, 7);
        let r = gauge_covering_sum(&pts, &g, eta, &st, &ScaleLadder::new(2, 12).unwrap());
        let ratios: Vec<f64> = r
            .gauge_sums
            .iter()
            .zip(&r.cover_scale_ladder)
            .map(|(s, x)| s / x.ln().powi(2))
            .collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo < 1.5, "{ratios:?}");
    }

    #[test]
    fn coarse_exponents_of_cusp() {
        let g = Grid1D::unit(1 << 14).unwrap();
        let f: Vec<f64> = (0..g.n_points)
            .map(|i| (g.x(i) - 0.5).abs().powf(0.4))
            .collect();
        for j in [6u32, 10] {
            let h = coarse_exponents(&f, &g, j);
            assert_eq!(h.len(), (1 << j) - 2);
            // Worst triple starts at the cusp and spans 3·2^{−j}.
            let min = h.iter().cloned().fold(f64::MAX, f64::min);
            let want = 0.4 * (1.0 - 3f64.log2() / j as f64);
            assert!((min - want).abs() < 0.01, "{j}: {min} vs {want}");
        }
    }
}
