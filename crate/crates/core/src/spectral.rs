//! Periodic FFT helpers: the fractional heat semigroup `e^{−s|ξ|^α}` and
//! spectral differentiation on a [`Grid1D`].

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::model::Grid1D;

/// FFT plans plus scratch for one grid size. Cloning shares the plans and
/// duplicates the scratch, so each worker thread should own a clone.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    length: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed angular wavenumbers `2πk/L`.
    xi: Arc<Vec<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl Spectral {
    pub fn new(grid: &Grid1D) -> Self {
        let n = grid.n_points;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        let length = grid.length();
        let xi = (0..n)
            .map(|k| {
                let kk = if k <= n / 2 {
                    k as f64
                } else {
                    k as f64 - n as f64
                };
                2.0 * std::f64::consts::PI * kk / length
            })
            .collect();
        Spectral {
            n,
            length,
            fwd,
            inv,
            xi: Arc::new(xi),
            buf: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.xi
    }

    /// Fourier multiplier of `S_s`: `e^{−s|ξ|^α}`.
    pub fn heat_multiplier(&self, alpha: f64, s: f64) -> Vec<f64> {
        self.xi
            .iter()
            .map(|x| (-s * x.abs().powf(alpha)).exp())
            .collect()
    }

    /// `|ξ|^α`, from which per-step multipliers are cheap to form.
    pub fn symbol(&self, alpha: f64) -> Vec<f64> {
        self.xi.iter().map(|x| x.abs().powf(alpha)).collect()
    }

    fn forward(&mut self) {
        self.fwd
            .process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    fn inverse(&mut self) {
        self.inv
            .process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    /// Applies a real, even multiplier `m(ξ)` to a real field in place.
    pub fn apply(&mut self, f: &mut [f64], mult: &[f64]) {
        assert_eq!(f.len(), self.n);
        for (b, &v) in self.buf.iter_mut().zip(f.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward();
        for (b, &m) in self.buf.iter_mut().zip(mult) {
            *b *= m;
        }
        self.inverse();
        let scale = 1.0 / self.n as f64;
        for (v, b) in f.iter_mut().zip(&self.buf) {
            *v = b.re * scale;
        }
    }

    /// Applies the same real, even multiplier to two real fields with one
    /// complex transform pair (`f + i g` stays separable because `m` is real
    /// and even).
    pub fn apply_pair(&mut self, f: &mut [f64], g: &mut [f64], mult: &[f64]) {
        assert_eq!(f.len(), self.n);
        assert_eq!(g.len(), self.n);
        for ((b, &u), &v) in self.buf.iter_mut().zip(f.iter()).zip(g.iter()) {
            *b = Complex64::new(u, v);
        }
        self.forward();
        for (b, &m) in self.buf.iter_mut().zip(mult) {
            *b *= m;
        }
        self.inverse();
        let scale = 1.0 / self.n as f64;
        for ((u, v), b) in f.iter_mut().zip(g.iter_mut()).zip(&self.buf) {
            *u = b.re * scale;
            *v = b.im * scale;
        }
    }

    /// `S_s f` for the symmetric α-stable semigroup on the periodic domain.
    pub fn semigroup(&mut self, f: &mut [f64], alpha: f64, s: f64) {
        if s == 0.0 {
            return;
        }
        let m = self.heat_multiplier(alpha, s);
        self.apply(f, &m);
    }

    /// Spectral derivative of a real field, optionally after smoothing with
    /// a real multiplier. The Nyquist mode is dropped.
    pub fn derivative(&mut self, f: &[f64], mult: Option<&[f64]>) -> Vec<f64> {
        assert_eq!(f.len(), self.n);
        for (b, &v) in self.buf.iter_mut().zip(f.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward();
        let nyq = self.n / 2;
        for (k, b) in self.buf.iter_mut().enumerate() {
            let m = mult.map_or(1.0, |m| m[k]);
            *b = if k == nyq && self.n.is_multiple_of(2) {
                Complex64::default()
            } else {
                *b * Complex64::new(0.0, self.xi[k] * m)
            };
        }
        self.inverse();
        let scale = 1.0 / self.n as f64;
        self.buf.iter().map(|b| b.re * scale).collect()
    }

    /// Inverse transform of a real, even spectrum sampled on the wavenumbers,
    /// divided by the domain length: the periodic function whose Fourier
    /// coefficients are `spec(ξ_k)`, centred at index 0.
    pub fn inverse_of_symbol(&mut self, spec: &[f64]) -> Vec<f64> {
        for (b, &v) in self.buf.iter_mut().zip(spec) {
            *b = Complex64::new(v, 0.0);
        }
        self.inverse();
        let scale = 1.0 / self.length;
        self.buf.iter().map(|b| b.re * scale).collect()
    }
}

/// `S^α_s f` on the periodic domain of `grid`.
pub fn apply_semigroup(field: &[f64], alpha: f64, s: f64, grid: &Grid1D) -> Vec<f64> {
    let mut out = field.to_vec();
    if s > 0.0 {
        Spectral::new(grid).semigroup(&mut out, alpha, s);
    }
    out
}
