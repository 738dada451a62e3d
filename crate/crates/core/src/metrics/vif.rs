//! Pixel-domain visual information fidelity.
//!
//! Four scales; scale `s` (1-based) uses a Gaussian window with
//! `sigma = 2^(4 - s) / 5` and width `2 ceil(3 sigma) + 1`. Before every scale
//! after the first, both images are smoothed with that scale's window
//! (mirror-padded) and halved. Local moments come from the window at every
//! valid position, and each scale contributes
//!
//! ```text
//! num += log10(1 + g^2 s1 / (sv + sn)),   den += log10(1 + s1 / sn)
//! ```
//!
//! with the reference variance `s1`, gain `g = s12 / s1`, distortion variance
//! `sv = s2 - g s12` and noise `sn = 2`. Inputs are luminance in [0, 1],
//! rescaled to [0, 255] so `sn` keeps its usual 8-bit meaning.

use super::filter::{downsample2, filter_reflect, filter_valid, gaussian_kernel, Plane};
use crate::error::Result;

pub const SCALES: usize = 4;
pub const SIGMA_N_SQ: f64 = 2.0;
/// Variances below this count as zero.
const VAR_EPS: f64 = 1e-10;
pub const MIN_SIDE: usize = 32;

pub fn scale_sigma(scale: usize) -> f64 {
    2f64.powi(4 - scale as i32) / 5.0
}

pub fn scale_width(scale: usize) -> usize {
    2 * (3.0 * scale_sigma(scale)).ceil() as usize + 1
}

/// Per-scale `(num, den)` contributions.
pub fn vif_terms(reference: &Plane, test: &Plane) -> Result<Vec<(f64, f64)>> {
    reference.check_pair(test, "vif", MIN_SIDE)?;
    let mut r = reference.map(|v| v * 255.0);
    let mut t = test.map(|v| v * 255.0);
    let mut out = Vec::with_capacity(SCALES);
    for scale in 1..=SCALES {
        let k = gaussian_kernel(scale_width(scale), scale_sigma(scale));
        if scale > 1 {
            r = downsample2(&filter_reflect(&r, &k));
            t = downsample2(&filter_reflect(&t, &k));
        }
        let mu1 = filter_valid(&r, &k)?;
        let mu2 = filter_valid(&t, &k)?;
        let e11 = filter_valid(&r.zip(&r, |a, b| a * b), &k)?;
        let e22 = filter_valid(&t.zip(&t, |a, b| a * b), &k)?;
        let e12 = filter_valid(&r.zip(&t, |a, b| a * b), &k)?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..mu1.data().len() {
            let (m1, m2) = (mu1.data()[i], mu2.data()[i]);
            let (n, d) = local_terms(e11.data()[i] - m1 * m1, e22.data()[i] - m2 * m2, e12.data()[i] - m1 * m2);
            num += n;
            den += d;
        }
        out.push((num, den));
    }
    Ok(out)
}

/// Information terms of one window from its (co)variances.
fn local_terms(s1: f64, s2: f64, s12: f64) -> (f64, f64) {
    let s1 = s1.max(0.0);
    let s2 = s2.max(0.0);
    let (mut g, mut sv, s1) = if s1 < VAR_EPS { (0.0, s2, 0.0) } else { (s12 / s1, s2 - (s12 / s1) * s12, s1) };
    if s2 < VAR_EPS {
        g = 0.0;
        sv = 0.0;
    }
    if g < 0.0 {
        sv = s2;
        g = 0.0;
    }
    // Floored at zero rather than a small positive constant, so a window
    // compared with itself contributes identical numerator and denominator.
    sv = sv.max(0.0);
    let num = (1.0 + g * g * s1 / (sv + SIGMA_N_SQ)).log10();
    let den = (1.0 + s1 / SIGMA_N_SQ).log10();
    (num, den)
}

/// Ratio of summed information terms. A reference with no variance at any
/// scale carries no information to lose and scores 1.
pub fn vif(reference: &Plane, test: &Plane) -> Result<f64> {
    let terms = vif_terms(reference, test)?;
    let num: f64 = terms.iter().map(|t| t.0).sum();
    let den: f64 = terms.iter().map(|t| t.1).sum();
    Ok(if den == 0.0 { 1.0 } else { num / den })
}
