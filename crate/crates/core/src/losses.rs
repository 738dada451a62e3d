//! Euclidean, perceptual and adversarial losses, their weighted combination
//! for the generator, and the discriminator's cross-entropy objective.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::models::{Params, PerceptualNet};
use crate::tensor::Element;

/// Floor applied to every argument of a logarithm.
pub const SCORE_EPS: f64 = 1e-7;

/// Adversarial weight used for the full configuration.
pub const DEFAULT_LAMBDA_A: f32 = 6.6e-3;
/// Perceptual weight used for the full configuration.
pub const DEFAULT_LAMBDA_P: f32 = 1.0;

/// Coefficients of the generator objective
/// `[L_E] + lambda_a * L_A + lambda_p * L_P`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_a: f32,
    pub lambda_p: f32,
    /// Whether `L_E` is part of the objective (it is always reported).
    pub euclidean: bool,
}

impl LossWeights {
    /// Plain CNN: Euclidean loss only.
    pub fn gen() -> Self {
        Self { lambda_a: 0.0, lambda_p: 0.0, euclidean: true }
    }

    pub fn cgan(lambda_a: f32) -> Self {
        Self { lambda_a, lambda_p: 0.0, euclidean: true }
    }

    /// Adversarial plus perceptual, without the Euclidean term.
    pub fn cgan_p(lambda_a: f32, lambda_p: f32) -> Self {
        Self { lambda_a, lambda_p, euclidean: false }
    }

    pub fn id_cgan(lambda_a: f32, lambda_p: f32) -> Self {
        Self { lambda_a, lambda_p, euclidean: true }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_p", self.lambda_p)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.euclidean && self.lambda_a == 0.0 && self.lambda_p == 0.0 {
            return Err(Error::Config("generator objective has no active term".into()));
        }
        Ok(())
    }

    pub fn uses_adversarial(&self) -> bool {
        self.lambda_a > 0.0
    }

    pub fn uses_perceptual(&self) -> bool {
        self.lambda_p > 0.0
    }

    /// The objective from already-computed terms. Evaluation order matches
    /// the tape version, so both yield identical bits.
    pub fn combine<T: Element>(&self, l_e: T, l_a: Option<T>, l_p: Option<T>) -> T {
        let mut acc: Option<T> = self.euclidean.then_some(l_e);
        let mut push = |term: T| acc = Some(acc.map_or(term, |a| a + term));
        if let (true, Some(a)) = (self.uses_adversarial(), l_a) {
            push(a * T::from_f64_lossy(self.lambda_a as f64));
        }
        if let (true, Some(p)) = (self.uses_perceptual(), l_p) {
            push(p * T::from_f64_lossy(self.lambda_p as f64));
        }
        acc.unwrap_or_else(T::zero)
    }

    fn combine_vars<'t, T: Element>(&self, l_e: Var<'t, T>, l_a: Option<Var<'t, T>>, l_p: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let mut acc = self.euclidean.then_some(l_e);
        let mut terms = Vec::new();
        if let (true, Some(a)) = (self.uses_adversarial(), l_a) {
            terms.push(a.scale(T::from_f64_lossy(self.lambda_a as f64))?);
        }
        if let (true, Some(p)) = (self.uses_perceptual(), l_p) {
            terms.push(p.scale(T::from_f64_lossy(self.lambda_p as f64))?);
        }
        for t in terms {
            acc = Some(match acc {
                Some(a) => a.add(t)?,
                None => t,
            });
        }
        acc.ok_or_else(|| Error::Config("generator objective has no active term".into()))
    }
}

/// Per-batch loss values. Terms that were not computed are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport<T: Element = f32> {
    pub l_e: T,
    pub l_p: Option<T>,
    pub l_a: Option<T>,
    /// The generator objective actually minimised.
    pub l_rp: T,
    pub d_loss: Option<T>,
}

/// Mean squared per-pixel difference, averaged over channels, pixels and batch.
pub fn euclidean_loss<'t, T: Element>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    pred.mse(target)
}

/// Mean squared difference of frozen-network features. The target's features
/// carry no gradient unless `target` itself does.
pub fn perceptual_loss<'t, T: Element>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    net: &PerceptualNet,
    params: &Params<'t, '_, T>,
) -> Result<Var<'t, T>> {
    let fp = net.forward(pred, params)?;
    let ft = net.forward(target, params)?;
    fp.mse(ft)
}

/// `-(1/N) sum log(D(x, G(x)))` over generated-sample scores.
pub fn adversarial_loss<'t, T: Element>(scores: Var<'t, T>) -> Result<Var<'t, T>> {
    scores.neg_log_mean(T::from_f64_lossy(SCORE_EPS))
}

/// `-(1/N) sum [log(real_i) + log(1 - fake_i)]`, the negated conditional GAN
/// objective the discriminator maximises.
pub fn discriminator_loss<'t, T: Element>(real: Var<'t, T>, fake: Var<'t, T>) -> Result<Var<'t, T>> {
    let eps = T::from_f64_lossy(SCORE_EPS);
    let r = real.neg_log_mean(eps)?;
    let f = fake.one_minus()?.neg_log_mean(eps)?;
    r.add(f)
}

/// Frozen network plus its bound (constant) parameters.
pub struct PerceptualTerm<'a, 't, 's, T: Element> {
    pub net: &'a PerceptualNet,
    pub params: &'a Params<'t, 's, T>,
}

/// Generator objective together with its reported terms.
pub struct Refined<'t, T: Element> {
    pub objective: Var<'t, T>,
    pub report: LossReport<T>,
}

/// Builds the weighted generator objective. `scores` (discriminator outputs
/// on generated images) and `perceptual` are required only when their
/// weight is non-zero.
pub fn refined_loss<'t, T: Element>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    scores: Option<Var<'t, T>>,
    weights: &LossWeights,
    perceptual: Option<&PerceptualTerm<'_, 't, '_, T>>,
) -> Result<Refined<'t, T>> {
    weights.validate()?;
    let l_e = euclidean_loss(pred, target)?;
    let l_a = match (weights.uses_adversarial(), scores) {
        (true, None) => return Err(Error::Config("adversarial weight set but no scores given".into())),
        (_, Some(s)) => Some(adversarial_loss(s)?),
        (false, None) => None,
    };
    let l_p = match (weights.uses_perceptual(), perceptual) {
        (true, None) => return Err(Error::Config("perceptual weight set but no network given".into())),
        (true, Some(p)) => Some(perceptual_loss(pred, target, p.net, p.params)?),
        (false, _) => None,
    };
    let objective = weights.combine_vars(l_e, l_a, l_p)?;
    let item = |v: Var<'t, T>| v.value().item();
    let (e, a, p) = (item(l_e)?, l_a.map(item).transpose()?, l_p.map(item).transpose()?);
    let report = LossReport { l_e: e, l_a: a, l_p: p, l_rp: objective.value().item()?, d_loss: None };
    Ok(Refined { objective, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::models::{init_weights, ModelConfig};
    use crate::tensor::Tensor;

    fn img(seed: u32) -> Tensor<f32> {
        Tensor::from_fn(&[2, 3, 8, 8], move |i| ((i as f32 + seed as f32) * 0.61).sin())
    }

    #[test]
    fn euclidean_examples() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(img(0));
        assert_eq!(euclidean_loss(a, a).unwrap().value().item().unwrap(), 0.0);
        for shape in [[1, 1, 2, 2], [3, 3, 5, 7]] {
            let z = tape.constant(Tensor::zeros(&shape));
            let h = tape.constant(Tensor::full(&shape, 0.5));
            assert_eq!(euclidean_loss(h, z).unwrap().value().item().unwrap(), 0.25);
        }
        let b = tape.constant(img(3));
        let ab = euclidean_loss(a, b).unwrap().value().item().unwrap();
        let ba = euclidean_loss(b, a).unwrap().value().item().unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn adversarial_examples() {
        let tape = Tape::<f64>::new();
        let ones = tape.constant(Tensor::ones(&[4]));
        assert_eq!(adversarial_loss(ones).unwrap().value().item().unwrap(), 0.0);
        let half = tape.constant(Tensor::full(&[4], 0.5));
        let v = adversarial_loss(half).unwrap().value().item().unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let zero = tape.constant(Tensor::zeros(&[3]));
        let v = adversarial_loss(zero).unwrap().value().item().unwrap();
        assert!((v + SCORE_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn discriminator_examples() {
        let tape = Tape::<f64>::new();
        let ones = tape.constant(Tensor::ones(&[3]));
        let zeros = tape.constant(Tensor::zeros(&[3]));
        assert_eq!(discriminator_loss(ones, zeros).unwrap().value().item().unwrap(), 0.0);
        let half = tape.constant(Tensor::full(&[3], 0.5));
        let v = discriminator_loss(half, half).unwrap().value().item().unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let worst = discriminator_loss(zeros, ones).unwrap().value().item().unwrap();
        assert!(worst.is_finite());
        assert!((worst + 2.0 * SCORE_EPS.ln()).abs() < 1e-6);
    }

    #[test]
    fn refined_reductions() {
        let store = init_weights(&ModelConfig::default(), 1).unwrap();
        let tape = Tape::<f32>::new();
        let vp = Params::bind(&tape, &store, "v.", false);
        let net = PerceptualNet::new();
        let term = PerceptualTerm { net: &net, params: &vp };
        let pred = tape.leaf(img(1));
        let target = tape.constant(img(2));
        let scores = tape.constant(Tensor::from_vec(&[2], vec![0.3, 0.8]).unwrap());

        let gen = refined_loss(pred, target, None, &LossWeights::gen(), None).unwrap();
        assert_eq!(gen.report.l_rp, gen.report.l_e);
        assert!(gen.report.l_a.is_none() && gen.report.l_p.is_none());

        let w = LossWeights::id_cgan(DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_P);
        let full = refined_loss(pred, target, Some(scores), &w, Some(&term)).unwrap();
        let r = full.report;
        assert_eq!(r.l_rp, r.l_e + DEFAULT_LAMBDA_A * r.l_a.unwrap() + DEFAULT_LAMBDA_P * r.l_p.unwrap());
        assert_eq!(r.l_rp, w.combine(r.l_e, r.l_a, r.l_p));

        let cp = refined_loss(pred, target, Some(scores), &LossWeights::cgan_p(0.5, 2.0), Some(&term)).unwrap();
        let r = cp.report;
        assert_eq!(r.l_rp, 0.5 * r.l_a.unwrap() + 2.0 * r.l_p.unwrap());
    }

    #[test]
    fn zero_at_identity() {
        let store = init_weights(&ModelConfig::default(), 1).unwrap();
        let tape = Tape::<f32>::new();
        let vp = Params::bind(&tape, &store, "v.", false);
        let net = PerceptualNet::new();
        let term = PerceptualTerm { net: &net, params: &vp };
        let y = tape.leaf(img(5));
        let scores = tape.constant(Tensor::ones(&[2]));
        let w = LossWeights::id_cgan(DEFAULT_LAMBDA_A, DEFAULT_LAMBDA_P);
        let r = refined_loss(y, y, Some(scores), &w, Some(&term)).unwrap().report;
        assert_eq!(r.l_rp, 0.0);
    }

    #[test]
    fn missing_inputs_are_errors() {
        let tape = Tape::<f32>::new();
        let p = tape.leaf(img(1));
        assert!(refined_loss(p, p, None, &LossWeights::cgan(0.1), None).is_err());
        assert!(LossWeights { lambda_a: -1.0, lambda_p: 0.0, euclidean: true }.validate().is_err());
        assert!(LossWeights::cgan_p(0.0, 0.0).validate().is_err());
    }
}
