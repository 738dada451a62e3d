//! Full-reference quality measures on the luminance channel: PSNR, SSIM,
//! UQI and VIF, plus per-corpus evaluation and the CSV report.

pub mod filter;
pub mod ssim;
pub mod uqi;
pub mod vif;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

pub use filter::Plane;
pub use ssim::ssim;
pub use uqi::uqi;
pub use vif::vif;

use crate::error::{Error, Result};
use crate::io::dataset::{load_pair, PairPaths};
use crate::io::image::image_dims;
use crate::parallel;
use crate::tensor::Tensor;

/// Reported PSNR when the images are identical (and the upper clamp otherwise).
pub const PSNR_CAP_DB: f64 = 99.0;

/// BT.601 luma of a `3 x H x W` image.
pub fn luminance(img: &Tensor) -> Result<Plane> {
    let (h, w) = image_dims(img)?;
    let n = h * w;
    let d = img.data();
    let data = (0..n)
        .map(|i| 0.299 * d[i] as f64 + 0.587 * d[n + i] as f64 + 0.114 * d[2 * n + i] as f64)
        .collect();
    Plane::new(w, h, data)
}

/// `10 log10(1 / MSE)` for unit peak; capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Plane, test: &Plane) -> Result<f64> {
    reference.check_pair(test, "psnr", 1)?;
    let mse = reference.zip(test, |a, b| (a - b) * (a - b)).mean();
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Psnr,
    Ssim,
    Uqi,
    Vif,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Psnr, Metric::Ssim, Metric::Uqi, Metric::Vif];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Uqi => "uqi",
            Metric::Vif => "vif",
        }
    }

    pub fn column(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr_db",
            other => other.name(),
        }
    }

    pub fn compute(self, reference: &Plane, test: &Plane) -> Result<f64> {
        match self {
            Metric::Psnr => psnr(reference, test),
            Metric::Ssim => ssim(reference, test),
            Metric::Uqi => uqi(reference, test),
            Metric::Vif => vif(reference, test),
        }
    }

    /// Parses a comma-separated subset such as `psnr,ssim`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> = s.split(',').map(|t| t.trim().parse()).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}` (expected psnr, ssim, uqi or vif)")))
    }
}

/// One value per metric; `None` when the metric was not requested.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricValues {
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub uqi: Option<f64>,
    pub vif: Option<f64>,
}

impl MetricValues {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Psnr => self.psnr_db,
            Metric::Ssim => self.ssim,
            Metric::Uqi => self.uqi,
            Metric::Vif => self.vif,
        }
    }

    pub fn set(&mut self, m: Metric, v: Option<f64>) {
        match m {
            Metric::Psnr => self.psnr_db = v,
            Metric::Ssim => self.ssim = v,
            Metric::Uqi => self.uqi = v,
            Metric::Vif => self.vif = v,
        }
    }
}

/// Computes the requested metrics between two `3 x H x W` images.
pub fn evaluate_images(reference: &Tensor, test: &Tensor, metrics: &[Metric]) -> Result<MetricValues> {
    let r = luminance(reference)?;
    let t = luminance(test)?;
    let mut out = MetricValues::default();
    for &m in metrics {
        out.set(m, Some(m.compute(&r, &t)?));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub file: String,
    pub values: MetricValues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub rows: Vec<MetricRow>,
    /// Files that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
    pub mean: MetricValues,
}

impl MetricReport {
    pub fn from_rows(metrics: &[Metric], rows: Vec<MetricRow>, failures: Vec<(String, String)>) -> Result<Self> {
        if rows.is_empty() {
            let why = failures.first().map(|(f, e)| format!(" (first failure: {f}: {e})")).unwrap_or_default();
            return Err(Error::Data(format!("no pair could be evaluated{why}")));
        }
        let mut mean = MetricValues::default();
        for &m in metrics {
            let s: f64 = rows.iter().map(|r| r.values.get(m).unwrap_or(0.0)).sum();
            mean.set(m, Some(s / rows.len() as f64));
        }
        Ok(Self { metrics: metrics.to_vec(), rows, failures, mean })
    }

    /// `file,psnr_db,ssim,uqi,vif` rows with four decimals and a closing
    /// `MEAN` row. Unrequested metrics leave their column empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("file,psnr_db,ssim,uqi,vif\n");
        let mut line = |name: &str, v: &MetricValues| {
            out.push_str(name);
            for m in Metric::ALL {
                out.push(',');
                if let Some(x) = v.get(m) {
                    write!(out, "{x:.4}").expect("write to string");
                }
            }
            out.push('\n');
        };
        for r in &self.rows {
            line(&r.file, &r.values);
        }
        line("MEAN", &self.mean);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Reads a report CSV back into `(file, values)` rows, `MEAN` included.
pub fn parse_report_csv(text: &str) -> Result<Vec<(String, MetricValues)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["file", "psnr_db", "ssim", "uqi", "vif"] {
        return Err(Error::Data(format!("unexpected report header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut v = MetricValues::default();
        for (i, m) in Metric::ALL.into_iter().enumerate() {
            let field = rec.get(i + 1).unwrap_or("");
            let parsed = if field.is_empty() {
                None
            } else {
                Some(field.parse().map_err(|_| Error::Data(format!("bad number `{field}`")))?)
            };
            v.set(m, parsed);
        }
        out.push((rec.get(0).unwrap_or("").to_string(), v));
    }
    Ok(out)
}

/// Evaluates every pair (clean as reference, rainy/test as distorted). Pairs
/// that fail to decode are listed in the report; the call fails only when
/// none succeed.
pub fn evaluate_corpus(pairs: &[PairPaths], metrics: &[Metric]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no image pairs to evaluate".into()));
    }
    let results = parallel::map_slice(pairs, |p| {
        load_pair(p).and_then(|pair| evaluate_images(&pair.clean, &pair.rainy, metrics))
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(values) => rows.push(MetricRow { file: p.name.clone(), values }),
            Err(e) => failures.push((p.name.clone(), e.to_string())),
        }
    }
    MetricReport::from_rows(metrics, rows, failures)
}
