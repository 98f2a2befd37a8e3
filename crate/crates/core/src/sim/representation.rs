//! Rebuilds `X_t = Z¹ + Z² + Z³` from the recorded path and jump atoms.
//!
//! `Z²(x) = Σ r p_{t−s}(x−y) − (compensator carried to t)`. Each atom is
//! summed either in real space over a footprint of `max(8dx, 16 w)` with
//! `w = (t−s)^{1/α}` (cell averages from the kernel CDF), or, when the
//! kernel is wide, directly into the Fourier coefficients of the periodic
//! kernel, where only `|ξ|^α (t−s) < 40` contributes. Both routes produce
//! cell averages on the periodic simulation grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::{DensityDecomposition, Jump, SimOutput};
use crate::error::{Error, Result};
use crate::kernels::{image_power_sums, StableKernel};
use crate::model::{validate_params, Grid1D};
use crate::spectral::Spectral;

const SPECTRAL_CUTOFF: f64 = 40.0;
/// Cost of one real-space edge relative to one Fourier mode.
const REAL_EDGE_COST: f64 = 4.0;

#[derive(Clone, Copy, PartialEq)]
enum Order {
    Value,
    Gradient,
}

/// Far-field expansion terms used beyond the real-space footprint.
const TAIL_TERMS: usize = 2;

struct Acc {
    real: Vec<f64>,
    spec: Vec<Complex64>,
    /// `tail[c][k]`: `Σ r τ^{k+1}` per cell for atoms of reach class `c`.
    tail: Vec<[Vec<f64>; TAIL_TERMS]>,
}

impl Acc {
    fn new(n: usize, classes: usize) -> Self {
        Acc {
            real: vec![0.0; n],
            spec: vec![Complex64::default(); n / 2 + 1],
            tail: (0..classes)
                .map(|_| std::array::from_fn(|_| Vec::new()))
                .collect(),
        }
    }

    fn merge(mut self, o: Acc) -> Acc {
        for (a, b) in self.real.iter_mut().zip(&o.real) {
            *a += b;
        }
        for (a, b) in self.spec.iter_mut().zip(&o.spec) {
            *a += b;
        }
        for (ca, cb) in self.tail.iter_mut().zip(o.tail) {
            for (a, b) in ca.iter_mut().zip(cb) {
                if a.is_empty() {
                    *a = b;
                } else if !b.is_empty() {
                    for (u, v) in a.iter_mut().zip(&b) {
                        *u += v;
                    }
                }
            }
        }
        self
    }
}

/// Reach of class `c`: `8·2^c` cells.
fn class_reach(dx: f64, c: usize) -> f64 {
    8.0 * dx * (1u64 << c) as f64
}

/// `|x|^{−s}` outside `[−R, R]`, continued inside by the even quadratic that
/// matches value and slope at `±R`.
#[derive(Clone, Copy)]
struct TailProfile {
    s: f64,
    r: f64,
}

impl TailProfile {
    fn value(&self, x: f64) -> f64 {
        let a = x.abs();
        if a > self.r {
            a.powf(-self.s)
        } else {
            let q = a / self.r;
            self.r.powf(-self.s) * (1.0 + 0.5 * self.s * (1.0 - q * q))
        }
    }

    /// Odd antiderivative.
    fn anti(&self, x: f64) -> f64 {
        let (s, r) = (self.s, self.r);
        let a = x.abs();
        let inner = |z: f64| r.powf(-s) * ((1.0 + 0.5 * s) * z - s * z * z * z / (6.0 * r * r));
        let v = if a <= r {
            inner(a)
        } else {
            inner(r) + (a.powf(1.0 - s) - r.powf(1.0 - s)) / (1.0 - s)
        };
        v * x.signum()
    }

    fn cell(&self, lo: f64, hi: f64, order: Order) -> f64 {
        match order {
            Order::Value => (self.anti(hi) - self.anti(lo)) / (hi - lo),
            Order::Gradient => (self.value(hi) - self.value(lo)) / (hi - lo),
        }
    }
}

/// `Σ_{m≠0} |d + mL|^{−s}` for `|d| ≤ L/2`.
fn periodic_power(d: f64, s: f64, l: f64) -> f64 {
    let (a, b) = image_power_sums(s, d, l);
    a + b
}

/// `Σ r K_{t−s}(· − y)` on the periodic grid, with `K = p` or `K = ∂_x p`,
/// returned as cell averages.
fn jump_sum(
    kernel: &StableKernel,
    grid: &Grid1D,
    t: f64,
    jumps: &[Jump],
    order: Order,
) -> Vec<f64> {
    let n = grid.n_points;
    let dx = grid.dx;
    let len = grid.length();
    let alpha = kernel.alpha();
    let xi0 = 2.0 * PI / len;
    let mut classes = 0;
    while class_reach(dx, classes) < 0.5 * len {
        classes += 1;
    }
    let series = kernel.tail_series();
    let modes = mode_table(grid, alpha);
    let has_tail = series.iter().take(TAIL_TERMS).any(|(c, _)| *c != 0.0);

    let acc = jumps
        .par_chunks(256)
        .fold(
            || Acc::new(n, classes),
            |mut acc, chunk| {
                for j in chunk {
                    let tau = (t - j.s).max(0.0);
                    let w = tau.powf(1.0 / alpha);
                    let want = (8.0 * dx).max(16.0 * w);
                    let c = (want / (8.0 * dx)).log2().ceil().max(0.0) as usize;
                    let kmax = ((SPECTRAL_CUTOFF / tau.max(1e-300)).powf(1.0 / alpha) / xi0)
                        .floor()
                        .min((n / 2 - 1) as f64);
                    if c < classes
                        && (REAL_EDGE_COST * 2.0 * class_reach(dx, c) / dx <= kmax || tau == 0.0)
                    {
                        let tails = if has_tail {
                            &series[..TAIL_TERMS]
                        } else {
                            &series[..0]
                        };
                        add_real(
                            kernel,
                            grid,
                            tau,
                            j,
                            class_reach(dx, c),
                            tails,
                            order,
                            &mut acc.real,
                        );
                        if has_tail && tau > 0.0 {
                            // Cloud-in-cell keeps the far field centred on y.
                            let u = (j.y - grid.x_min) / dx;
                            let i0 = u.floor();
                            let frac = u - i0;
                            let c0 = (i0 as i64).rem_euclid(n as i64) as usize;
                            let c1 = (c0 + 1) % n;
                            let mut tk = 1.0;
                            for buf in acc.tail[c].iter_mut() {
                                tk *= tau;
                                if buf.is_empty() {
                                    *buf = vec![0.0; n];
                                }
                                buf[c0] += j.r * tk * (1.0 - frac);
                                buf[c1] += j.r * tk * frac;
                            }
                        }
                    } else {
                        add_spectral(grid, &modes, tau, j, kmax as usize, order, &mut acc.spec);
                    }
                }
                acc
            },
        )
        .reduce(|| Acc::new(n, classes), Acc::merge);

    let mut out = acc.real;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut total = full_spectrum(&acc.spec, n);
    let mut any = total.iter().any(|c| *c != Complex64::default());
    for (c, terms) in acc.tail.iter().enumerate() {
        let cut = class_reach(dx, c);
        for (k, q) in terms.iter().enumerate() {
            if q.is_empty() || series[k].0 == 0.0 {
                continue;
            }
            let (ck, sk) = series[k];
            // Far-field kernel at offsets d = i·dx (index 0 at d = 0): the
            // smoothed principal profile plus all periodic images.
            let prof = TailProfile { s: sk, r: cut };
            let img = |e: f64| periodic_power(e, sk, len);
            let h = 0.5 * dx;
            let mut kern: Vec<Complex64> = (0..n)
                .map(|i| {
                    let ii = if i <= n / 2 {
                        i as f64
                    } else {
                        i as f64 - n as f64
                    };
                    let d = ii * dx;
                    let v = match order {
                        Order::Value => img(d) + prof.cell(d - h, d + h, order),
                        Order::Gradient => {
                            (img(d + h) - img(d - h)) / dx + prof.cell(d - h, d + h, order)
                        }
                    };
                    Complex64::new(ck * v, 0.0)
                })
                .collect();
            let mut qb: Vec<Complex64> = q.iter().map(|v| Complex64::new(*v, 0.0)).collect();
            fwd.process(&mut kern);
            fwd.process(&mut qb);
            for ((tt, a), b) in total.iter_mut().zip(&qb).zip(&kern) {
                *tt += a * b * len / n as f64;
            }
            any = true;
        }
    }
    if any {
        inv.process(&mut total);
        // Coefficients are relative to x_min, scaled so that the inverse
        // transform divided by L gives the field.
        for (o, b) in out.iter_mut().zip(&total) {
            *o += b.re / len;
        }
    }
    out
}

/// Cell averages of `r (p_τ − Σ c_k τ^k T_k)(· − y)` around the atom, where
/// `T_k` are the smoothed tail profiles handled by the far field. Both the
/// value and the gradient are differences of an edge function.
#[allow(clippy::too_many_arguments)]
fn add_real(
    kernel: &StableKernel,
    grid: &Grid1D,
    tau: f64,
    j: &Jump,
    reach: f64,
    tails: &[(f64, f64)],
    order: Order,
    out: &mut [f64],
) {
    let n = grid.n_points as i64;
    let dx = grid.dx;
    let centre = ((j.y - grid.x_min) / dx).round() as i64;
    let half = (reach / dx).round() as i64 + 2;
    let mut profiles = [(0.0, TailProfile { s: 2.0, r: reach }); TAIL_TERMS];
    let mut tk = 1.0;
    for (slot, &(c, s)) in profiles.iter_mut().zip(tails) {
        tk *= tau;
        *slot = (c * tk, TailProfile { s, r: reach });
    }
    let profiles = &profiles[..tails.len()];
    let w = tau.powf(1.0 / kernel.alpha());
    let edge = |e: f64| -> f64 {
        if tau == 0.0 {
            return match order {
                Order::Value if e > 0.0 => 1.0,
                _ => 0.0,
            };
        }
        let mut v = match order {
            Order::Value => kernel.cdf1(e / w),
            Order::Gradient => kernel.p1(e / w) / w,
        };
        for (c, prof) in profiles {
            v -= c * match order {
                Order::Value => prof.anti(e),
                Order::Gradient => prof.value(e),
            };
        }
        v
    };
    let first = centre - half;
    let mut lo = edge(grid.x_min + (first as f64 - 0.5) * dx - j.y);
    for i in first..=centre + half {
        let hi = edge(grid.x_min + (i as f64 + 0.5) * dx - j.y);
        out[i.rem_euclid(n) as usize] += j.r * (hi - lo) / dx;
        lo = hi;
    }
}

/// `(ξ_k, |ξ_k|^α, sinc(ξ_k dx/2))` for `k ≤ n/2`.
fn mode_table(grid: &Grid1D, alpha: f64) -> Vec<(f64, f64, f64)> {
    let xi0 = 2.0 * PI / grid.length();
    (0..=grid.n_points / 2)
        .map(|k| {
            let xi = xi0 * k as f64;
            let h = 0.5 * xi * grid.dx;
            let sinc = if h == 0.0 { 1.0 } else { h.sin() / h };
            (xi, xi.powf(alpha), sinc)
        })
        .collect()
}

/// Adds the atom to the non-negative-frequency half of the spectrum of the
/// cell-averaged field (relative to `x_min`).
fn add_spectral(
    grid: &Grid1D,
    modes: &[(f64, f64, f64)],
    tau: f64,
    j: &Jump,
    kmax: usize,
    order: Order,
    half: &mut [Complex64],
) {
    let xi0 = modes.get(1).map_or(0.0, |m| m.0);
    // e^{−iξ_k (y − x_min)} by rotation.
    let step = Complex64::from_polar(1.0, -xi0 * (j.y - grid.x_min));
    let mut phase = Complex64::new(j.r, 0.0);
    for (&(xi, sym, sinc), h) in modes[..=kmax].iter().zip(half.iter_mut()) {
        let amp = (-tau * sym).exp() * sinc;
        *h += match order {
            Order::Value => phase * amp,
            Order::Gradient => phase * Complex64::new(0.0, xi * amp),
        };
        phase *= step;
    }
}

/// Expands a half spectrum of a real field to all `n` coefficients.
fn full_spectrum(half: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut full = vec![Complex64::default(); n];
    for (k, c) in half.iter().enumerate().take(n / 2) {
        full[k] += c;
        if k > 0 {
            full[n - k] += c.conj();
        }
    }
    full
}

fn check_output(out: &SimOutput) -> Result<()> {
    if out.jumps.jumps.iter().any(|j| !(j.s <= out.params.t)) {
        return Err(Error::domain("jump time beyond the horizon"));
    }
    if out.x_t_full.len() != out.sim_grid.n_points {
        return Err(Error::GridMismatch(
            "path and simulation grid differ".into(),
        ));
    }
    Ok(())
}

fn window(out: &SimOutput, f: &[f64]) -> Vec<f64> {
    f[out.offset..out.offset + out.analysis_grid.n_points].to_vec()
}

/// `Z³ = Σ_k (e^{a dt_k} − 1) S_{t−s_k} X_{s_k}` from stored fields, or the
/// value accumulated during the run when fields were not kept.
fn z3_full(out: &SimOutput) -> Vec<f64> {
    let p = &out.params;
    if p.a == 0.0 {
        return vec![0.0; out.sim_grid.n_points];
    }
    let fields = &out.path.fields;
    if fields.len() < out.steps.len() {
        return out.z3_full.clone();
    }
    let mut sp = Spectral::new(&out.sim_grid);
    let mut acc = vec![0.0; out.sim_grid.n_points];
    for (st, xk) in out.steps.iter().zip(fields) {
        let g = (p.a * st.dt).exp_m1();
        for (a, v) in acc.iter_mut().zip(xk) {
            *a += g * v;
        }
        sp.semigroup(&mut acc, p.alpha, st.dt);
    }
    acc
}

/// Density of `X_t` on the analysis window from the representation.
pub fn density_from_representation(out: &SimOutput) -> Result<DensityDecomposition> {
    check_output(out)?;
    let p = &out.params;
    let kernel = StableKernel::shared(p.alpha)?;
    let mut z1 = p.mu.discretize(&out.sim_grid);
    Spectral::new(&out.sim_grid).semigroup(&mut z1, p.alpha, p.t);
    let mut z2 = jump_sum(&kernel, &out.sim_grid, p.t, &out.jumps.jumps, Order::Value);
    for (z, c) in z2.iter_mut().zip(&out.compensator_full) {
        *z -= c;
    }
    let z3 = z3_full(out);
    let x: Vec<f64> = (0..z1.len()).map(|i| z1[i] + z2[i] + z3[i]).collect();
    let z2_prime = if validate_params(p).z2_differentiable {
        Some(compute_z2_derivative(out)?)
    } else {
        None
    };
    Ok(DensityDecomposition {
        grid: out.analysis_grid,
        z1: window(out, &z1),
        z2: window(out, &z2),
        z3: window(out, &z3),
        x_t: window(out, &x),
        z2_prime,
    })
}

/// `∂Z²/∂x` on the analysis window: gradient kernels summed over the atoms,
/// minus the spectral derivative of the carried compensator.
pub fn compute_z2_derivative(out: &SimOutput) -> Result<Vec<f64>> {
    let p = &out.params;
    if !validate_params(p).z2_differentiable {
        return Err(Error::domain(format!(
            "Z² is differentiable only for beta < (alpha-1)/2; got alpha={}, beta={}",
            p.alpha, p.beta
        )));
    }
    check_output(out)?;
    let kernel = StableKernel::shared(p.alpha)?;
    let mut d = jump_sum(
        &kernel,
        &out.sim_grid,
        p.t,
        &out.jumps.jumps,
        Order::Gradient,
    );
    let dc = Spectral::new(&out.sim_grid).derivative(&out.compensator_full, None);
    for (v, c) in d.iter_mut().zip(&dc) {
        *v -= c;
    }
    Ok(window(out, &d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn atom(s: f64, y: f64, r: f64) -> Jump {
        Jump {
            s,
            y,
            r,
            step: 0,
            cell: 0,
        }
    }

    #[test]
    fn single_atom_mass() {
        let p = ModelParams::critical(1.6, 0.4, 1.0);
        let g = Grid1D::new(-2.0, 2.0, 512).unwrap();
        let k = StableKernel::shared(p.alpha).unwrap();
        for &s in &[0.0, 0.9, 0.999, 0.99999, 1.0] {
            let z = jump_sum(&k, &g, 1.0, &[atom(s, 0.3, 0.5)], Order::Value);
            let m: f64 = z.iter().sum::<f64>() * g.dx;
            assert!((m - 0.5).abs() < 5e-6, "s={s} mass={m}");
            let d = jump_sum(&k, &g, 1.0, &[atom(s, 0.3, 0.5)], Order::Gradient);
            let md: f64 = d.iter().sum::<f64>() * g.dx;
            assert!(md.abs() < 1e-6, "s={s} {md}");
        }
    }

    #[test]
    fn footprint_plus_far_field_matches_fourier_sum() {
        let alpha = 1.3;
        let g = Grid1D::new(-2.0, 2.0, 4096).unwrap();
        let k = StableKernel::shared(alpha).unwrap();
        let n = g.n_points;
        for &tau in &[1e-3, 3e-3, 1e-2] {
            let j = atom(1.0 - tau, -0.377, 1.0);
            for order in [Order::Value, Order::Gradient] {
                let z = jump_sum(&k, &g, 1.0, &[j], order);
                let mut half = vec![Complex64::default(); n / 2 + 1];
                add_spectral(
                    &g,
                    &mode_table(&g, alpha),
                    tau,
                    &j,
                    n / 2 - 1,
                    order,
                    &mut half,
                );
                let mut spec = full_spectrum(&half, n);
                FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
                let scale = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
                // Compare away from the peak, where the far field matters.
                let err = z
                    .iter()
                    .zip(&spec)
                    .enumerate()
                    .filter(|(i, _)| (g.x(*i) - j.y).abs() > 0.05)
                    .map(|(_, (a, b))| (a - b.re / g.length()).abs())
                    .fold(0.0, f64::max);
                assert!(
                    err < 1e-5 * scale,
                    "tau={tau} {:?} err={err} scale={scale}",
                    order == Order::Value
                );
            }
        }
    }
}
