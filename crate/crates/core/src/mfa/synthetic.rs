//! Synthetic fields and sets with known exponents and dimensions, used to
//! calibrate the estimators.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::Grid1D;
use crate::rng;

/// True when `x ∈ [0,1)` survives `level` steps of keeping base-`base`
/// digits in `keep`.
fn survives(mut x: f64, base: u32, keep: &[u32], level: u32) -> bool {
    if !(0.0..1.0).contains(&x) {
        return false;
    }
    for _ in 0..level {
        x *= base as f64;
        let d = x.floor() as u32;
        if !keep.contains(&d) {
            return false;
        }
        x -= d as f64;
    }
    true
}

/// Grid points inside the level-`level` middle-thirds Cantor intervals.
pub fn cantor_indices(grid: &Grid1D, level: u32) -> Vec<usize> {
    (0..grid.n_points)
        .filter(|&i| survives(grid.x(i), 3, &[0, 2], level))
        .collect()
}

/// Grid points whose first `level` base-4 digits lie in `{0, 3}` (a set of
/// dimension 1/2).
pub fn quaternary_indices(grid: &Grid1D, level: u32) -> Vec<usize> {
    (0..grid.n_points)
        .filter(|&i| survives(grid.x(i), 4, &[0, 3], level))
        .collect()
}

/// `|x − x₀|^h` sampled on the grid, plus `slope·x`.
pub fn cusp_field(grid: &Grid1D, x0: f64, h: f64, slope: f64) -> Vec<f64> {
    grid.points()
        .iter()
        .map(|&x| slope * x + (x - x0).abs().powf(h))
        .collect()
}

/// Sum of cusps with separate exponents, each localised by a smooth bump of
/// radius `radius`.
pub fn multi_cusp_field(grid: &Grid1D, cusps: &[(f64, f64)], radius: f64) -> Vec<f64> {
    grid.points()
        .iter()
        .map(|&x| {
            cusps
                .iter()
                .map(|&(x0, h)| {
                    let u = (x - x0) / radius;
                    let bump = if u.abs() < 1.0 {
                        (-1.0 / (1.0 - u * u)).exp() * std::f64::consts::E
                    } else {
                        0.0
                    };
                    bump * (x - x0).abs().powf(h)
                })
                .sum()
        })
        .collect()
}

/// `dist(x, C_level)^h` for the middle-thirds Cantor set: exponent `h` on the
/// set, larger off it.
pub fn cantor_distance_field(grid: &Grid1D, level: u32, h: f64) -> Vec<f64> {
    let mut intervals = vec![(0.0f64, 1.0f64)];
    for _ in 0..level {
        intervals = intervals
            .iter()
            .flat_map(|&(a, b)| {
                let w = (b - a) / 3.0;
                [(a, a + w), (b - w, b)]
            })
            .collect();
    }
    grid.points()
        .iter()
        .map(|&x| {
            let k = intervals.partition_point(|&(a, _)| a <= x);
            let mut d = f64::INFINITY;
            for idx in [k.saturating_sub(1), k.min(intervals.len() - 1)] {
                let (a, b) = intervals[idx];
                let di = if x < a {
                    a - x
                } else if x > b {
                    x - b
                } else {
                    0.0
                };
                d = d.min(di);
            }
            d.powf(h)
        })
        .collect()
}

/// The Cantor function, Hölder with exponent `log 2/log 3` on the Cantor set
/// and locally constant off it.
pub fn cantor_function(grid: &Grid1D, depth: u32) -> Vec<f64> {
    grid.points()
        .iter()
        .map(|&x0| {
            let mut x = x0.clamp(0.0, 1.0 - f64::EPSILON);
            let mut v = 0.0;
            let mut scale = 0.5;
            for _ in 0..depth {
                x *= 3.0;
                let d = x.floor();
                x -= d;
                match d as u32 {
                    0 => {}
                    1 => {
                        v += scale;
                        return v;
                    }
                    _ => v += scale,
                }
                scale *= 0.5;
            }
            v
        })
        .collect()
}

/// Brownian path on the grid with unit diffusivity per unit length.
pub fn brownian_path(grid: &Grid1D, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    let sd = grid.dx.sqrt();
    let mut acc = 0.0;
    (0..grid.n_points)
        .map(|_| {
            let z: f64 = r.sample(StandardNormal);
            acc += sd * z;
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cantor_sets_have_expected_sizes() {
        let g = Grid1D::unit(1 << 14).unwrap();
        let c = cantor_indices(&g, 3);
        let frac = c.len() as f64 / g.n_points as f64;
        assert!((frac - (2.0f64 / 3.0).powi(3)).abs() < 1e-3);
        let q = quaternary_indices(&g, 2);
        assert_eq!(q.len(), g.n_points / 4);
    }

    #[test]
    fn cantor_function_endpoints() {
        let g = Grid1D::unit(1024).unwrap();
        let f = cantor_function(&g, 30);
        assert_eq!(f[0], 0.0);
        assert!(f.windows(2).all(|w| w[1] >= w[0]));
        assert!((f[g.n_points / 2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distance_field_vanishes_on_set() {
        let g = Grid1D::unit(1 << 12).unwrap();
        let f = cantor_distance_field(&g, 5, 0.3);
        for i in cantor_indices(&g, 5) {
            assert_eq!(f[i], 0.0);
        }
    }
}
