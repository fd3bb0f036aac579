//! The identity, attribute and mask terms and their weighted sum.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::providers::{provider_err, FaceMask, LossProviders};
use crate::sampler::ImageObjective;

pub const N_ATTRIBUTES: usize = 40;
pub const PROB_EPS: f64 = 1e-8;

fn check_len(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            context,
            expected: vec![a],
            actual: vec![b],
        });
    }
    Ok(())
}

/// `exp(−‖f_src − f_gen‖₂)`.
pub fn identity_loss(f_src: &[f64], f_gen: &[f64]) -> Result<f64> {
    Ok(identity_loss_grad(f_src, f_gen)?.0)
}

/// Identity loss and its gradient with respect to `f_gen`. The gradient is
/// taken as zero at zero distance.
pub fn identity_loss_grad(f_src: &[f64], f_gen: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("identity embeddings", f_src.len(), f_gen.len())?;
    let diff: Vec<f64> = f_gen.iter().zip(f_src).map(|(g, s)| g - s).collect();
    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let value = (-d).exp();
    let grad = if d > 0.0 {
        diff.iter().map(|e| -value * e / d).collect()
    } else {
        vec![0.0; diff.len()]
    };
    Ok((value, grad))
}

/// Per-attribute probabilities clamped to `[ε, 1−ε]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution(Vec<f64>);

impl AttributeDistribution {
    /// Clamps and checks for the 40-attribute length.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_len("attribute distribution", N_ATTRIBUTES, probs.len())?;
        Self::with_len(probs)
    }

    /// Any positive length; used for small worked examples.
    pub fn with_len(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DegenerateInput("empty attribute distribution"));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::numerical("attribute probabilities", None));
        }
        Ok(Self(probs.into_iter().map(clamp_prob).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn set(&mut self, index: usize, value: f64) {
        self.0[index] = clamp_prob(value);
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Which divergence the attribute term uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlVariant {
    /// `Σ p·ln(p/q)` over the attribute vector.
    #[default]
    Literal,
    /// Sum of per-attribute Bernoulli divergences; always non-negative.
    Bernoulli,
}

pub fn attribute_loss(a_src: &AttributeDistribution, a_gen: &AttributeDistribution) -> Result<f64> {
    attribute_loss_with(a_src, a_gen, KlVariant::Literal)
}

pub fn attribute_loss_with(
    a_src: &AttributeDistribution,
    a_gen: &AttributeDistribution,
    variant: KlVariant,
) -> Result<f64> {
    check_len("attribute distributions", a_src.len(), a_gen.len())?;
    Ok(a_src
        .probs()
        .iter()
        .zip(a_gen.probs())
        .map(|(&p, &q)| {
            let mut v = p * (p / q).ln();
            if variant == KlVariant::Bernoulli {
                v += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
            }
            v
        })
        .sum())
}

/// Gradient of the attribute loss with respect to the raw (unclamped)
/// generated probabilities; zero where the clamp is active.
pub fn attribute_loss_grad(a_src: &AttributeDistribution, raw_gen: &[f64], variant: KlVariant) -> Result<Vec<f64>> {
    check_len("attribute distributions", a_src.len(), raw_gen.len())?;
    Ok(a_src
        .probs()
        .iter()
        .zip(raw_gen)
        .map(|(&p, &r)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&r) {
                return 0.0;
            }
            let mut g = -p / r;
            if variant == KlVariant::Bernoulli {
                g += (1.0 - p) / (1.0 - r);
            }
            g
        })
        .collect())
}

fn check_mask(x: &ImageTensor, x_hat: &ImageTensor, m: &FaceMask) -> Result<()> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            context: "mask loss images",
            expected: x.shape().to_vec(),
            actual: x_hat.shape().to_vec(),
        });
    }
    let (h, w) = m.size();
    if (h, w) != (x.height(), x.width()) {
        return Err(Error::ShapeMismatch {
            context: "face mask",
            expected: vec![x.height(), x.width()],
            actual: vec![h, w],
        });
    }
    Ok(())
}

/// `Σ |x − x̂|·(1 − M)` over pixels and channels.
pub fn mask_loss(x: &ImageTensor, x_hat: &ImageTensor, m: &FaceMask) -> Result<f64> {
    check_mask(x, x_hat, m)?;
    let mut total = 0.0;
    for ((i, j, c), v) in x.data().indexed_iter() {
        total += (v - x_hat.data()[[i, j, c]]).abs() * (1.0 - m.values()[[i, j]]);
    }
    Ok(total)
}

/// Subgradient with respect to `x_hat`: `sign(x̂ − x)·(1 − M)`, zero on ties.
pub fn mask_loss_grad(x: &ImageTensor, x_hat: &ImageTensor, m: &FaceMask) -> Result<Array3<f64>> {
    check_mask(x, x_hat, m)?;
    Ok(Array3::from_shape_fn(x.data().dim(), |(i, j, c)| {
        let d = x_hat.data()[[i, j, c]] - x.data()[[i, j, c]];
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        s * (1.0 - m.values()[[i, j]])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_attr: f64,
    pub lambda_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_id: 1.0,
            lambda_attr: 1.0,
            lambda_mask: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_id", self.lambda_id),
            ("lambda_attr", self.lambda_attr),
            ("lambda_mask", self.lambda_mask),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn combine(&self, id: f64, attr: f64, mask: f64) -> LossTerms {
        LossTerms {
            total: self.lambda_id * id + self.lambda_attr * attr + self.lambda_mask * mask,
            id,
            attr,
            mask,
        }
    }
}

/// Unweighted terms plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub id: f64,
    pub attr: f64,
    pub mask: f64,
}

/// Source-side quantities computed once per image.
#[derive(Debug, Clone)]
pub struct SourceCache {
    pub image: ImageTensor,
    pub embedding: Vec<f64>,
    pub attributes: AttributeDistribution,
    pub mask: FaceMask,
}

impl SourceCache {
    pub fn compute(x: &ImageTensor, providers: LossProviders<'_>) -> Result<Self> {
        let embedding = providers
            .embedder
            .embed(x)
            .map_err(|e| provider_err(providers.embedder.name(), e))?;
        let raw = providers
            .attributes
            .predict(x)
            .map_err(|e| provider_err(providers.attributes.name(), e))?;
        let attributes =
            AttributeDistribution::with_len(raw).map_err(|e| provider_err(providers.attributes.name(), e))?;
        let mask = providers
            .parser
            .parse(x)
            .map_err(|e| provider_err(providers.parser.name(), e))?;
        Ok(Self {
            image: x.clone(),
            embedding,
            attributes,
            mask,
        })
    }
}

/// Total loss for a generated image against a cached source.
pub fn total_loss(
    source: &SourceCache,
    x_hat: &ImageTensor,
    providers: LossProviders<'_>,
    weights: &LossWeights,
) -> Result<LossTerms> {
    ReagentObjective::new(source.clone(), providers, *weights).terms(x_hat)
}

/// The weighted reagent loss as a differentiable image objective.
pub struct ReagentObjective<'a> {
    source: SourceCache,
    target: AttributeDistribution,
    providers: LossProviders<'a>,
    weights: LossWeights,
    variant: KlVariant,
}

impl<'a> ReagentObjective<'a> {
    pub fn new(source: SourceCache, providers: LossProviders<'a>, weights: LossWeights) -> Self {
        Self {
            target: source.attributes.clone(),
            source,
            providers,
            weights,
            variant: KlVariant::Literal,
        }
    }

    /// Replaces the attribute target (defaults to the source distribution).
    pub fn with_target(mut self, target: AttributeDistribution) -> Self {
        self.target = target;
        self
    }

    pub fn with_variant(mut self, variant: KlVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn source(&self) -> &SourceCache {
        &self.source
    }

    pub fn target(&self) -> &AttributeDistribution {
        &self.target
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    fn embed(&self, x_hat: &ImageTensor) -> Result<Vec<f64>> {
        let p = self.providers.embedder;
        p.embed(x_hat).map_err(|e| provider_err(p.name(), e))
    }

    fn attributes(&self, x_hat: &ImageTensor) -> Result<Vec<f64>> {
        let p = self.providers.attributes;
        p.predict(x_hat).map_err(|e| provider_err(p.name(), e))
    }

    pub fn terms(&self, x_hat: &ImageTensor) -> Result<LossTerms> {
        let id = identity_loss(&self.source.embedding, &self.embed(x_hat)?)?;
        let gen = AttributeDistribution::with_len(self.attributes(x_hat)?)?;
        let attr = attribute_loss_with(&self.target, &gen, self.variant)?;
        let mask = mask_loss(&self.source.image, x_hat, &self.source.mask)?;
        Ok(self.weights.combine(id, attr, mask))
    }

    pub fn terms_and_grad(&self, x_hat: &ImageTensor) -> Result<(LossTerms, Array3<f64>)> {
        let w = self.weights;
        let (id, g_emb) = identity_loss_grad(&self.source.embedding, &self.embed(x_hat)?)?;
        let raw = self.attributes(x_hat)?;
        let gen = AttributeDistribution::with_len(raw.clone())?;
        let attr = attribute_loss_with(&self.target, &gen, self.variant)?;
        let g_attr = attribute_loss_grad(&self.target, &raw, self.variant)?;
        let mask = mask_loss(&self.source.image, x_hat, &self.source.mask)?;

        let mut grad = mask_loss_grad(&self.source.image, x_hat, &self.source.mask)? * w.lambda_mask;
        if w.lambda_id != 0.0 {
            let e = self.providers.embedder;
            let scaled: Vec<f64> = g_emb.iter().map(|g| g * w.lambda_id).collect();
            grad += &e.embed_vjp(x_hat, &scaled).map_err(|err| provider_err(e.name(), err))?;
        }
        if w.lambda_attr != 0.0 {
            let a = self.providers.attributes;
            let scaled: Vec<f64> = g_attr.iter().map(|g| g * w.lambda_attr).collect();
            grad += &a
                .predict_vjp(x_hat, &scaled)
                .map_err(|err| provider_err(a.name(), err))?;
        }
        Ok((w.combine(id, attr, mask), grad))
    }
}

impl ImageObjective for ReagentObjective<'_> {
    fn value(&self, x_hat: &ImageTensor) -> Result<f64> {
        Ok(self.terms(x_hat)?.total)
    }

    fn value_and_grad(&self, x_hat: &ImageTensor) -> Result<(f64, Array3<f64>)> {
        let (terms, grad) = self.terms_and_grad(x_hat)?;
        Ok((terms.total, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::synthetic_face;
    use crate::providers::{toy_attribute_predictor, toy_face_parser, toy_identity_embedder};
    use ndarray::Array2;

    fn dist(v: &[f64]) -> AttributeDistribution {
        AttributeDistribution::with_len(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_values() {
        let e = [0.3, -1.2, 2.0];
        assert_eq!(identity_loss(&e, &e).unwrap(), 1.0);
        let ln2 = 2f64.ln();
        assert!((identity_loss(&[0.0, 0.0], &[ln2, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((identity_loss(&[0.0], &[10.0]).unwrap() - 4.539_992_976e-5).abs() < 1e-12);
        assert!(identity_loss(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn attribute_values() {
        let a = dist(&[0.5, 0.5]);
        assert_eq!(attribute_loss(&a, &a).unwrap(), 0.0);
        let v = attribute_loss(&a, &dist(&[0.25, 0.75])).unwrap();
        assert!((v - 0.143_841_036).abs() < 1e-6, "{v}");
        let v = attribute_loss(&dist(&[0.9]), &dist(&[0.1])).unwrap();
        assert!((v - 0.9 * 9f64.ln()).abs() < 1e-12);
        assert!(attribute_loss(&a, &dist(&[0.5])).is_err());
        assert!(AttributeDistribution::new(vec![0.5; 39]).is_err());
    }

    #[test]
    fn bernoulli_variant_is_nonnegative() {
        let p = dist(&[0.2, 0.7, 0.9]);
        let q = dist(&[0.6, 0.1, 0.95]);
        assert!(attribute_loss_with(&p, &q, KlVariant::Bernoulli).unwrap() > 0.0);
        assert!(attribute_loss_with(&p, &p, KlVariant::Bernoulli).unwrap().abs() < 1e-15);
    }

    #[test]
    fn attribute_gradient_matches_differences() {
        let p = dist(&[0.2, 0.7, 0.4]);
        let q = [0.3, 0.5, 0.8];
        for variant in [KlVariant::Literal, KlVariant::Bernoulli] {
            let g = attribute_loss_grad(&p, &q, variant).unwrap();
            for k in 0..3 {
                let h = 1e-6;
                let f = |s: f64| {
                    let mut v = q.to_vec();
                    v[k] += s;
                    attribute_loss_with(&p, &dist(&v), variant).unwrap()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * fd.abs(), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn mask_values() {
        let x = ImageTensor::new(Array3::zeros((2, 2, 3))).unwrap();
        let mut y = x.data().clone();
        y[[1, 0, 2]] = 0.4;
        let y = ImageTensor::new(y).unwrap();
        let mut m = Array2::ones((2, 2));
        m[[1, 0]] = 0.25;
        let m = FaceMask::new(m).unwrap();
        assert!((mask_loss(&x, &y, &m).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(mask_loss(&x, &x, &m).unwrap(), 0.0);
        let ones = FaceMask::new(Array2::ones((2, 2))).unwrap();
        assert_eq!(mask_loss(&x, &y, &ones).unwrap(), 0.0);
        let small = FaceMask::new(Array2::ones((1, 2))).unwrap();
        assert!(mask_loss(&x, &y, &small).is_err());
    }

    #[test]
    fn weighted_sum() {
        let t = LossWeights::default().combine(0.5, 0.2, 4.0);
        assert!((t.total - 2.7).abs() < 1e-12);
        let zero = LossWeights {
            lambda_id: 0.0,
            lambda_attr: 0.0,
            lambda_mask: 0.0,
        };
        assert_eq!(zero.combine(0.5, 0.2, 4.0).total, 0.0);
        assert!(LossWeights {
            lambda_mask: -1.0,
            ..LossWeights::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn self_comparison_leaves_identity_term() {
        let (e, a, p) = (toy_identity_embedder(), toy_attribute_predictor(), toy_face_parser());
        let providers = LossProviders {
            embedder: &e,
            attributes: &a,
            parser: &p,
        };
        let x = synthetic_face(16, 16, 0);
        let src = SourceCache::compute(&x, providers).unwrap();
        let t = total_loss(&src, &x, providers, &LossWeights::default()).unwrap();
        assert!((t.total - 1.0).abs() < 1e-12);
        assert_eq!((t.id, t.attr, t.mask), (1.0, 0.0, 0.0));
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let (e, a, p) = (toy_identity_embedder(), toy_attribute_predictor(), toy_face_parser());
        let providers = LossProviders {
            embedder: &e,
            attributes: &a,
            parser: &p,
        };
        let x = synthetic_face(16, 16, 1);
        let obj = ReagentObjective::new(
            SourceCache::compute(&x, providers).unwrap(),
            providers,
            LossWeights::default(),
        );
        // Keep every pixel away from |x − x̂| = 0 so the L1 term is smooth.
        let y = ImageTensor::from_clamped(x.data() * 0.7 + 0.05).unwrap();
        let (_, g) = obj.value_and_grad(&y).unwrap();
        for &(i, j, c) in &[(3, 4, 0), (8, 8, 1), (12, 2, 2), (0, 15, 0)] {
            let h = 1e-6;
            let f = |s: f64| {
                let mut v = y.data().clone();
                v[[i, j, c]] += s;
                obj.value(&ImageTensor::new(v).unwrap()).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!(
                (fd - g[[i, j, c]]).abs() <= 1e-4 * fd.abs().max(1e-8),
                "{fd} vs {}",
                g[[i, j, c]]
            );
        }
    }
}
