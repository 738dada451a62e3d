//! Structural similarity with the canonical 11x11, sigma = 1.5 Gaussian window.

use super::filter::{filter_valid, gaussian_kernel, Plane};
use crate::error::Result;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
/// Dynamic range of the inputs.
pub const L: f64 = 1.0;

/// Mean SSIM over every position where the window fits. Identical inputs
/// give exactly 1: each factor of the ratio is computed from bit-identical
/// numerator and denominator terms.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    a.check_pair(b, "ssim", WINDOW)?;
    let k = gaussian_kernel(WINDOW, SIGMA);
    let c1 = (K1 * L).powi(2);
    let c2 = (K2 * L).powi(2);
    let mu_a = filter_valid(a, &k)?;
    let mu_b = filter_valid(b, &k)?;
    let e_aa = filter_valid(&a.zip(a, |x, y| x * y), &k)?;
    let e_bb = filter_valid(&b.zip(b, |x, y| x * y), &k)?;
    let e_ab = filter_valid(&a.zip(b, |x, y| x * y), &k)?;
    let n = mu_a.data().len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let (ma2, mb2, mab) = (ma * ma, mb * mb, ma * mb);
        let va = e_aa.data()[i] - ma2;
        let vb = e_bb.data()[i] - mb2;
        let cov = e_ab.data()[i] - mab;
        total += ((2.0 * mab + c1) * (2.0 * cov + c2)) / ((ma2 + mb2 + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}
