//! Per-channel batch normalisation kernels.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Variance floor added before the square root.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the running statistic kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Statistics of one training-mode batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T: Element> {
    pub mean: Vec<T>,
    /// Unbiased (`m - 1`) variance, used for the running estimate.
    pub var_unbiased: Vec<T>,
}

impl<T: Element> BatchStats<T> {
    /// `running <- momentum * running + (1 - momentum) * batch` for mean and variance.
    pub fn blend_into(&self, running_mean: &mut Tensor<T>, running_var: &mut Tensor<T>, momentum: f64) {
        let keep = T::from_f64_lossy(momentum);
        let take = T::from_f64_lossy(1.0 - momentum);
        for (r, &b) in running_mean.data_mut().iter_mut().zip(&self.mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in running_var.data_mut().iter_mut().zip(&self.var_unbiased) {
            *r = keep * *r + take * b;
        }
    }
}

pub(crate) struct TrainForward<T: Element> {
    pub out: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub stats: BatchStats<T>,
}

fn check_affine<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batchnorm")?;
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if p.shape() != [c] {
            return Err(Error::shape("batchnorm", format!("{name} {:?} for {c} channels", p.shape())));
        }
    }
    Ok((n, c, h * w))
}

pub(crate) fn train_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<TrainForward<T>> {
    let (n, c, plane) = check_affine(x, gamma, beta)?;
    let m = n * plane;
    if m < 2 {
        return Err(Error::Degenerate(format!(
            "batchnorm train mode needs at least 2 values per channel, got {m}"
        )));
    }
    let xd = x.data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut mean_v = Vec::with_capacity(c);
    let mut var_u = Vec::with_capacity(c);
    for ch in 0..c {
        let chunks = || (0..n).map(move |s| (s * c + ch) * plane);
        let mut sum = 0.0f64;
        for base in chunks() {
            sum += xd[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = sum / m as f64;
        let mut ss = 0.0f64;
        for base in chunks() {
            ss += xd[base..base + plane].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
        }
        let var = ss / m as f64;
        let inv = T::from_f64_lossy(1.0 / (var + eps).sqrt());
        let mean_t = T::from_f64_lossy(mean);
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for base in chunks() {
            for i in base..base + plane {
                let xh = (xd[i] - mean_t) * inv;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
        inv_std.push(inv);
        mean_v.push(mean_t);
        var_u.push(T::from_f64_lossy(ss / (m - 1) as f64));
    }
    let shape = x.shape().to_vec();
    Ok(TrainForward {
        out: Tensor::new(shape.clone(), out)?,
        xhat: Tensor::new(shape, xhat)?,
        inv_std,
        stats: BatchStats { mean: mean_v, var_unbiased: var_u },
    })
}

/// Gradients `(dx, dgamma, dbeta)` of training-mode normalisation.
pub(crate) fn train_backward<T: Element>(
    gout: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &Tensor<T>,
    inv_std: &[T],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = gout.dims4("batchnorm")?;
    let plane = h * w;
    let m = T::from_usize(n * plane).unwrap();
    let (gd, xh) = (gout.data(), xhat.data());
    let mut dx = vec![T::zero(); gd.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let bases: Vec<usize> = (0..n).map(|s| (s * c + ch) * plane).collect();
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for &b in &bases {
            for i in b..b + plane {
                sum_g = sum_g + gd[i];
                sum_gx = sum_gx + gd[i] * xh[i];
            }
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        // dxhat = g * gamma; dx = inv/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
        let gam = gamma.data()[ch];
        let scale = gam * inv_std[ch] / m;
        for &b in &bases {
            for i in b..b + plane {
                dx[i] = scale * (m * gd[i] - sum_g - xh[i] * sum_gx);
            }
        }
    }
    Ok((
        Tensor::new(gout.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Inference-mode normalisation with running statistics. Returns the output
/// and the per-channel `1/sqrt(var + eps)` used by the backward pass.
pub(crate) fn eval_forward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, plane) = check_affine(x, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::shape("batchnorm", "running statistics do not match channel count"));
    }
    if running_var.data().iter().any(|&v| v.as_f64() + eps <= 0.0) {
        return Err(Error::Degenerate("running variance must be positive".into()));
    }
    let inv: Vec<T> = running_var
        .data()
        .iter()
        .map(|v| T::from_f64_lossy(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();
    let xd = x.data();
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let (mu, k, g, b) = (running_mean.data()[ch], inv[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + plane {
                out[i] = g * ((xd[i] - mu) * k) + b;
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, inv))
}

pub(crate) fn eval_backward<T: Element>(
    gout: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &[T],
    inv_std: &[T],
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = gout.dims4("batchnorm")?;
    let plane = h * w;
    let (gd, xd) = (gout.data(), x.data());
    let mut dx = vec![T::zero(); gd.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let k = inv_std[ch];
            let gk = gamma.data()[ch] * k;
            for i in base..base + plane {
                dx[i] = gd[i] * gk;
                dgamma[ch] = dgamma[ch] + gd[i] * (xd[i] - running_mean[ch]) * k;
                dbeta[ch] = dbeta[ch] + gd[i];
            }
        }
    }
    Ok((
        Tensor::new(gout.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}
