//! Procedural rain and snow streaks composited additively onto clean images.
//!
//! A field `w` is built by drawing a Poisson number of anti-aliased line
//! segments, each at the requested angle (plus a small jitter), with
//! brightness scaled by the intensity. Overlapping streaks combine like
//! stacked translucent layers, `w <- 1 - (1 - w)(1 - a)`, so the field stays
//! in [0, 1]. A 3x3 binomial blur softens the result. The rainy image is
//! `clamp(y + w, 0, 1)` with `w` broadcast to all three channels.

pub mod dataset;

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub use dataset::{build_dataset, synthetic_scene, Manifest, ManifestRow, RainRanges, SynthOptions};

use crate::error::{Error, Result};
use crate::io::image::image_dims;
use crate::tensor::Tensor;

/// Standard deviation of the per-streak angle jitter, degrees.
pub const ANGLE_JITTER_DEG: f64 = 2.0;
pub const MIN_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StreakMode {
    #[default]
    Rain,
    /// Short, round flakes: length tracks width.
    Snow,
}

impl FromStr for StreakMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rain" => Ok(StreakMode::Rain),
            "snow" => Ok(StreakMode::Snow),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected rain or snow)"))),
        }
    }
}

impl std::fmt::Display for StreakMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StreakMode::Rain => "rain",
            StreakMode::Snow => "snow",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainParams {
    /// Peak streak brightness, [0, 1].
    pub intensity: f64,
    /// Streak direction measured from vertical, degrees; positive leans right
    /// going down.
    pub angle_deg: f64,
    /// Expected streaks per 10^4 pixels.
    pub density: f64,
    pub length_px: f64,
    pub width_px: f64,
    pub seed: u64,
    pub mode: StreakMode,
}

impl Default for RainParams {
    fn default() -> Self {
        Self { intensity: 0.8, angle_deg: 0.0, density: 20.0, length_px: 20.0, width_px: 1.5, seed: 0, mode: StreakMode::Rain }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.intensity) {
            return bad(format!("intensity {} outside [0, 1]", self.intensity));
        }
        if !(-45.0..=45.0).contains(&self.angle_deg) {
            return bad(format!("angle {} outside [-45, 45]", self.angle_deg));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("density {} must be positive", self.density));
        }
        if !(self.length_px >= 1.0 && self.length_px.is_finite()) {
            return bad(format!("length {} must be >= 1", self.length_px));
        }
        if !(self.width_px > 0.0 && self.width_px.is_finite()) {
            return bad(format!("width {} must be positive", self.width_px));
        }
        Ok(())
    }
}

/// Single-channel streak layer, `H x W`, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RainField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RainField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

struct Streak {
    cx: f64,
    cy: f64,
    dx: f64,
    dy: f64,
    half_len: f64,
    half_width: f64,
    alpha: f64,
}

fn draw(field: &mut [f64], width: usize, height: usize, s: &Streak) {
    let reach = s.half_len + s.half_width + 1.0;
    let x0 = (s.cx - reach).floor().max(0.0) as usize;
    let y0 = (s.cy - reach).floor().max(0.0) as usize;
    let x1 = ((s.cx + reach).ceil() as isize).clamp(0, width as isize - 1) as usize;
    let y1 = ((s.cy + reach).ceil() as isize).clamp(0, height as isize - 1) as usize;
    if s.cx + reach < 0.0 || s.cy + reach < 0.0 {
        return;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            // Pixel centre relative to the streak centre, split into the
            // along-streak coordinate and the perpendicular distance.
            let (px, py) = (x as f64 + 0.5 - s.cx, y as f64 + 0.5 - s.cy);
            let along = px * s.dx + py * s.dy;
            let perp = (px * s.dy - py * s.dx).abs();
            let beyond = (along.abs() - s.half_len).max(0.0);
            let dist = (perp * perp + beyond * beyond).sqrt();
            let coverage = (s.half_width + 0.5 - dist).clamp(0.0, 1.0);
            if coverage > 0.0 {
                let a = s.alpha * coverage;
                let w = &mut field[y * width + x];
                *w = 1.0 - (1.0 - *w) * (1.0 - a);
            }
        }
    }
}

/// `[1 2 1] x [1 2 1] / 16` with replicated borders.
fn blur(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    const K: [f64; 3] = [0.25, 0.5, 0.25];
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = (0..3).map(|j| K[j] * src[y * width + clampi(x as isize + j as isize - 1, width)]).sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = (0..3).map(|j| K[j] * tmp[clampi(y as isize + j as isize - 1, height) * width + x]).sum();
        }
    }
    out
}

/// Renders a streak field; fully determined by `params` (including its seed).
pub fn render_streaks(params: &RainParams, height: usize, width: usize) -> Result<RainField> {
    params.validate()?;
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::geometry("render_streaks", format!("{height}x{width} is below {MIN_SIDE}x{MIN_SIDE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mean = params.density * (height * width) as f64 / 1e4;
    let count = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize;
    let jitter = Normal::new(0.0, ANGLE_JITTER_DEG).expect("positive std");
    let length = Normal::new(params.length_px, params.length_px / 4.0).expect("positive std");
    let mut field = vec![0.0f64; height * width];
    for _ in 0..count {
        let cx = rng.random::<f64>() * width as f64;
        let cy = rng.random::<f64>() * height as f64;
        let theta = (params.angle_deg + jitter.sample(&mut rng)).to_radians();
        let len = match params.mode {
            StreakMode::Rain => length.sample(&mut rng).max(1.0),
            StreakMode::Snow => params.width_px * (1.0 + 0.5 * rng.random::<f64>()),
        };
        let width_px = params.width_px * (0.75 + 0.5 * rng.random::<f64>());
        let alpha = params.intensity * (0.5 + 0.5 * rng.random::<f64>());
        let s = Streak {
            cx,
            cy,
            dx: theta.sin(),
            dy: theta.cos(),
            half_len: len / 2.0,
            half_width: width_px / 2.0,
            alpha,
        };
        draw(&mut field, width, height, &s);
    }
    let data = blur(&field, width, height).into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    Ok(RainField { height, width, data })
}

/// `clamp(clean + w, 0, 1)` per channel for a `3 x H x W` clean image.
pub fn composite(clean: &Tensor, field: &RainField) -> Result<Tensor> {
    let (h, w) = image_dims(clean)?;
    if (h, w) != (field.height, field.width) {
        return Err(Error::shape("composite", format!("image {h}x{w} vs field {}x{}", field.height, field.width)));
    }
    let n = h * w;
    let data = clean.data().iter().enumerate().map(|(i, &y)| (y + field.data[i % n]).clamp(0.0, 1.0)).collect();
    Tensor::new(vec![3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_intensity_gives_zero_field() {
        let p = RainParams { intensity: 0.0, density: 50.0, ..Default::default() };
        let f = render_streaks(&p, 32, 40).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = RainParams { seed: 5, ..Default::default() };
        let a = render_streaks(&p, 48, 48).unwrap();
        assert_eq!(a, render_streaks(&p, 48, 48).unwrap());
        let b = render_streaks(&RainParams { seed: 6, ..p }, 48, 48).unwrap();
        assert_ne!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.data().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn composite_examples() {
        let clean = Tensor::full(&[3, 16, 16], 0.5);
        let mut f = RainField::zeros(16, 16);
        assert!(composite(&clean, &f).unwrap().bit_eq(&clean));
        f.data_mut()[3 * 16 + 5] = 0.3;
        let x = composite(&clean, &f).unwrap();
        for c in 0..3 {
            for i in 0..256 {
                let want = if i == 3 * 16 + 5 { 0.8 } else { 0.5 };
                assert_eq!(x.data()[c * 256 + i], want);
            }
        }
        let white = Tensor::ones(&[3, 16, 16]);
        let full = RainField { height: 16, width: 16, data: vec![0.7; 256] };
        assert!(composite(&white, &full).unwrap().bit_eq(&white));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(render_streaks(&RainParams::default(), 8, 32).is_err());
        assert!(render_streaks(&RainParams { intensity: 1.5, ..Default::default() }, 32, 32).is_err());
        assert!(render_streaks(&RainParams { density: 0.0, ..Default::default() }, 32, 32).is_err());
        let f = RainField::zeros(16, 16);
        assert!(composite(&Tensor::zeros(&[3, 16, 17]), &f).is_err());
    }
}
