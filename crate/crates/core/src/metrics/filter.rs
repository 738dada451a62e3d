//! Single-channel planes and the separable filters the metrics share.

use crate::error::{Error, Result};

/// A single-channel image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape("plane", format!("{width}x{height} with {} values", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("from_fn: zero-sized plane")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination; panics on size mismatch (callers check).
    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { width: self.width, height: self.height, data }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.at(self.width - 1 - x, y))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn check_pair(&self, other: &Self, op: &'static str, min_side: usize) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", self.width, self.height, other.width, other.height),
            ));
        }
        if self.width.min(self.height) < min_side {
            return Err(Error::geometry(
                op,
                format!("{}x{} is smaller than the {min_side}-pixel minimum", self.width, self.height),
            ));
        }
        Ok(())
    }
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_kernel(width: usize, sigma: f64) -> Vec<f64> {
    let c = (width as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..width).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn uniform_kernel(width: usize) -> Vec<f64> {
    vec![1.0 / width as f64; width]
}

/// Separable correlation at every position where the window fits.
pub fn filter_valid(p: &Plane, k: &[f64]) -> Result<Plane> {
    let n = k.len();
    if p.width < n || p.height < n {
        return Err(Error::geometry("filter", format!("{}x{} smaller than window {n}", p.width, p.height)));
    }
    let (ow, oh) = (p.width - n + 1, p.height - n + 1);
    let mut rows = vec![0.0; ow * p.height];
    for y in 0..p.height {
        let src = &p.data[y * p.width..(y + 1) * p.width];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, &kj)| kj * rows[(y + j) * ow + x]).sum();
        }
    }
    Plane::new(ow, oh, out)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Separable correlation with mirror padding (`d c b | a b c d | c b a`);
/// output has the input's size.
pub fn filter_reflect(p: &Plane, k: &[f64]) -> Plane {
    let r = (k.len() / 2) as isize;
    let mut rows = vec![0.0; p.data.len()];
    for y in 0..p.height {
        for x in 0..p.width {
            rows[y * p.width + x] = k
                .iter()
                .enumerate()
                .map(|(j, &kj)| kj * p.data[y * p.width + reflect(x as isize + j as isize - r, p.width)])
                .sum();
        }
    }
    let mut out = vec![0.0; p.data.len()];
    for y in 0..p.height {
        for x in 0..p.width {
            out[y * p.width + x] = k
                .iter()
                .enumerate()
                .map(|(j, &kj)| kj * rows[reflect(y as isize + j as isize - r, p.height) * p.width + x])
                .sum();
        }
    }
    Plane { width: p.width, height: p.height, data: out }
}

/// Halves each dimension. Even extents average adjacent pairs and odd
/// extents keep every other sample, so the result commutes with flips.
pub fn downsample2(p: &Plane) -> Plane {
    fn axis(n: usize) -> Vec<(usize, usize)> {
        if n.is_multiple_of(2) {
            (0..n / 2).map(|i| (2 * i, 2 * i + 1)).collect()
        } else {
            (0..n.div_ceil(2)).map(|i| (2 * i, 2 * i)).collect()
        }
    }
    let (xs, ys) = (axis(p.width), axis(p.height));
    let mut data = Vec::with_capacity(xs.len() * ys.len());
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            data.push(0.25 * (p.at(x0, y0) + p.at(x1, y0) + p.at(x0, y1) + p.at(x1, y1)));
        }
    }
    Plane { width: xs.len(), height: ys.len(), data }
}
