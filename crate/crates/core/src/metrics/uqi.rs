//! Universal quality index over sliding 8x8 uniform windows.
//!
//! Degenerate windows follow the reference implementation: when both
//! variances vanish the index reduces to the luminance term
//! `2 mu_x mu_y / (mu_x^2 + mu_y^2)`, and when both means vanish as well (or
//! only the means vanish) the window scores 1.

use super::filter::{filter_valid, uniform_kernel, Plane};
use crate::error::Result;

pub const WINDOW: usize = 8;
/// Variance or mean sums below this are treated as zero; guards against
/// rounding residue in flat windows.
pub const FLAT_EPS: f64 = 1e-12;

/// Index of a single window from its moments (unbiased variances).
pub fn window_index(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    let var_sum = vx + vy;
    let mean_sum = mx * mx + my * my;
    if var_sum < FLAT_EPS {
        if mean_sum < FLAT_EPS {
            1.0
        } else {
            2.0 * (mx * my) / mean_sum
        }
    } else if mean_sum < FLAT_EPS {
        2.0 * cov / var_sum
    } else {
        4.0 * cov * (mx * my) / (var_sum * mean_sum)
    }
}

pub fn uqi(a: &Plane, b: &Plane) -> Result<f64> {
    a.check_pair(b, "uqi", WINDOW)?;
    let k = uniform_kernel(WINDOW);
    let n = (WINDOW * WINDOW) as f64;
    let bessel = n / (n - 1.0);
    let mu_a = filter_valid(a, &k)?;
    let mu_b = filter_valid(b, &k)?;
    let e_aa = filter_valid(&a.zip(a, |x, y| x * y), &k)?;
    let e_bb = filter_valid(&b.zip(b, |x, y| x * y), &k)?;
    let e_ab = filter_valid(&a.zip(b, |x, y| x * y), &k)?;
    let count = mu_a.data().len();
    let mut total = 0.0;
    for i in 0..count {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = (bessel * (e_aa.data()[i] - ma * ma)).max(0.0);
        let vb = (bessel * (e_bb.data()[i] - mb * mb)).max(0.0);
        let cov = bessel * (e_ab.data()[i] - ma * mb);
        total += window_index(ma, mb, va, vb, cov);
    }
    Ok(total / count as f64)
}
