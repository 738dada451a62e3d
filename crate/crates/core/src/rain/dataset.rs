//! Paired dataset synthesis: clean sources are assigned round-robin, cropped
//! and resized, and each pair gets its own parameters and seed drawn from an
//! independent ChaCha stream, so pairs can be rendered in any order.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{composite, render_streaks, RainParams, StreakMode};
use crate::error::{Error, Result};
use crate::io::dataset::{list_images, DatasetLayout};
use crate::io::image::{decode_image, encode_image, fit_square, from_byte, to_byte};
use crate::parallel;
use crate::tensor::Tensor;

/// Inclusive sampling ranges for per-pair parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainRanges {
    pub intensity: (f64, f64),
    pub angle_deg: (f64, f64),
    pub density: (f64, f64),
    pub length_px: (f64, f64),
    pub width_px: (f64, f64),
}

impl Default for RainRanges {
    fn default() -> Self {
        Self {
            intensity: (0.3, 0.9),
            angle_deg: (-40.0, 40.0),
            density: (10.0, 40.0),
            length_px: (8.0, 30.0),
            width_px: (1.0, 2.0),
        }
    }
}

impl RainRanges {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("intensity", self.intensity),
            ("angle", self.angle_deg),
            ("density", self.density),
            ("length", self.length_px),
            ("width", self.width_px),
        ];
        for (name, (a, b)) in fields {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::Config(format!("{name} range ({a}, {b}) is not ordered")));
            }
        }
        // The extremes must themselves be valid parameters.
        for pick in [0, 1] {
            let sel = |r: (f64, f64)| if pick == 0 { r.0 } else { r.1 };
            RainParams {
                intensity: sel(self.intensity),
                angle_deg: sel(self.angle_deg),
                density: sel(self.density),
                length_px: sel(self.length_px),
                width_px: sel(self.width_px),
                seed: 0,
                mode: StreakMode::Rain,
            }
            .validate()?;
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, mode: StreakMode) -> RainParams {
        let mut u = |(a, b): (f64, f64)| if a == b { a } else { rng.random_range(a..=b) };
        let intensity = u(self.intensity);
        let angle_deg = u(self.angle_deg);
        let density = u(self.density);
        let length_px = u(self.length_px);
        let width_px = u(self.width_px);
        RainParams { intensity, angle_deg, density, length_px, width_px, seed: rng.next_u64(), mode }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub ranges: RainRanges,
    pub count: usize,
    pub seed: u64,
    /// Output side length; sources are center-cropped and resized to it.
    pub size: usize,
    pub mode: StreakMode,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { ranges: RainRanges::default(), count: 0, seed: 0, size: 256, mode: StreakMode::Rain }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub pair_id: usize,
    /// Relative to the dataset root.
    pub clean_file: String,
    pub rainy_file: String,
    pub params: RainParams,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_HEADER: [&str; 9] =
    ["pair_id", "clean_file", "rainy_file", "intensity", "angle", "density", "length", "width", "seed"];

impl Manifest {
    /// CSV text; floats use the shortest representation that parses back
    /// to the same value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.rows {
            let p = &r.params;
            w.write_record([
                r.pair_id.to_string(),
                r.clean_file.clone(),
                r.rainy_file.clone(),
                p.intensity.to_string(),
                p.angle_deg.to_string(),
                p.density.to_string(),
                p.length_px.to_string(),
                p.width_px.to_string(),
                p.seed.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Parses manifest text; the streak mode is not recorded and reads as rain.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        if rdr.headers()?.iter().ne(MANIFEST_HEADER) {
            return Err(Error::Data("manifest header does not match".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Data(format!("bad manifest value `{}`", &rec[i])))
            };
            rows.push(ManifestRow {
                pair_id: rec[0].parse().map_err(|_| Error::Data(format!("bad pair id `{}`", &rec[0])))?,
                clean_file: rec[1].to_string(),
                rainy_file: rec[2].to_string(),
                params: RainParams {
                    intensity: num(3)?,
                    angle_deg: num(4)?,
                    density: num(5)?,
                    length_px: num(6)?,
                    width_px: num(7)?,
                    seed: rec[8].parse().map_err(|_| Error::Data(format!("bad seed `{}`", &rec[8])))?,
                    mode: StreakMode::Rain,
                },
            });
        }
        Ok(Self { rows })
    }
}

pub fn pair_file_name(i: usize) -> String {
    format!("pair_{i:04}.png")
}

/// Writes `count` pairs under `out_dir/{clean,rainy}/` plus `manifest.csv`.
/// Pair `i` uses the `(i mod n)`-th clean source in file-name order.
pub fn build_dataset(clean_dir: &Path, out_dir: &Path, opts: &SynthOptions) -> Result<Manifest> {
    opts.ranges.validate()?;
    if opts.size < super::MIN_SIDE {
        return Err(Error::Config(format!("size {} is below {}", opts.size, super::MIN_SIDE)));
    }
    let layout = DatasetLayout::new(out_dir);
    std::fs::create_dir_all(layout.clean_dir())?;
    std::fs::create_dir_all(layout.rainy_dir())?;
    let mut manifest = Manifest::default();
    if opts.count > 0 {
        let sources = list_images(clean_dir)?;
        if sources.is_empty() {
            return Err(Error::Data(format!("no PNG or PPM images in {}", clean_dir.display())));
        }
        let decoded = parallel::map_slice(&sources, |p| decode_image(p).and_then(|img| fit_square(&img, opts.size)));
        let clean: Vec<Tensor> = decoded.into_iter().collect::<Result<_>>()?;
        let rows = parallel::map_indices(opts.count, |i| -> Result<ManifestRow> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let params = opts.ranges.sample(&mut rng, opts.mode);
            let y = &clean[i % clean.len()];
            let field = render_streaks(&params, opts.size, opts.size)?;
            let x = composite(y, &field)?;
            let name = pair_file_name(i);
            encode_image(y, layout.clean_dir().join(&name))?;
            encode_image(&x, layout.rainy_dir().join(&name))?;
            Ok(ManifestRow {
                pair_id: i,
                clean_file: format!("{}/{name}", DatasetLayout::CLEAN),
                rainy_file: format!("{}/{name}", DatasetLayout::RAINY),
                params,
            })
        });
        manifest.rows = rows.into_iter().collect::<Result<_>>()?;
    }
    std::fs::write(layout.manifest_path(), manifest.to_csv()?)?;
    Ok(manifest)
}

/// A deterministic, byte-quantised clean test scene (`3 x size x size`):
/// a smooth colour gradient, a few flat shapes and a mild texture.
pub fn synthetic_scene(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.55));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let shapes: Vec<(f64, f64, f64, [f64; 3], bool)> = (0..4)
        .map(|_| {
            let cx = rng.random_range(0.1..0.9);
            let cy = rng.random_range(0.1..0.9);
            let r = rng.random_range(0.08..0.25);
            let col = std::array::from_fn(|_| rng.random_range(0.05..0.75));
            (cx, cy, r, col, rng.random_bool(0.5))
        })
        .collect();
    let freq = rng.random_range(4.0..10.0);
    let s = size as f64;
    let plane = size * size;
    Tensor::from_fn(&[3, size, size], |i| {
        let c = i / plane;
        let (y, x) = ((i % plane) / size, i % size);
        let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let mut val = base[c] + tilt[c] * (u - v);
        for &(cx, cy, r, col, round) in &shapes {
            let inside = if round { (u - cx).powi(2) + (v - cy).powi(2) < r * r } else { (u - cx).abs() < r && (v - cy).abs() < r * 0.6 };
            if inside {
                val = col[c];
            }
        }
        val += 0.04 * (freq * std::f64::consts::TAU * (u + 0.5 * v)).sin();
        from_byte(to_byte(val.clamp(0.0, 1.0) as f32))
    })
}
