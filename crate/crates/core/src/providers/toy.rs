//! Deterministic analytic providers for tests, examples and the toy pipeline.
//!
//! All of them read the image through an average pool onto an 8×8 grid, so
//! they accept any image size.

use ndarray::{Array1, Array2, Array3};

use super::{AttributePredictor, EvalProviders, FaceMask, FaceParser, IdentityEmbedder};
use crate::error::Result;
use crate::image::{soft_ellipse, ImageTensor};
use crate::rng::{normal_vec, seeded, streams};

const GRID: usize = 8;
const POOLED: usize = GRID * GRID * 3;

fn bins(len: usize) -> Vec<(usize, usize)> {
    (0..GRID)
        .map(|b| {
            let lo = b * len / GRID;
            let hi = ((b + 1) * len / GRID).max(lo + 1).min(len);
            (lo, hi)
        })
        .collect()
}

/// Average pool onto the 8×8×3 grid, flattened.
fn pool(image: &Array3<f64>) -> Array1<f64> {
    let (h, w, _) = image.dim();
    let (rows, cols) = (bins(h), bins(w));
    let mut out = Array1::zeros(POOLED);
    for (bi, &(r0, r1)) in rows.iter().enumerate() {
        for (bj, &(c0, c1)) in cols.iter().enumerate() {
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            for c in 0..3 {
                let mut acc = 0.0;
                for i in r0..r1 {
                    for j in c0..c1 {
                        acc += image[[i, j, c]];
                    }
                }
                out[(bi * GRID + bj) * 3 + c] = acc / count;
            }
        }
    }
    out
}

fn pool_vjp(shape: (usize, usize, usize), grad: &Array1<f64>) -> Array3<f64> {
    let (h, w, _) = shape;
    let (rows, cols) = (bins(h), bins(w));
    let mut out = Array3::zeros(shape);
    for (bi, &(r0, r1)) in rows.iter().enumerate() {
        for (bj, &(c0, c1)) in cols.iter().enumerate() {
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            for c in 0..3 {
                let g = grad[(bi * GRID + bj) * 3 + c] / count;
                for i in r0..r1 {
                    for j in c0..c1 {
                        out[[i, j, c]] += g;
                    }
                }
            }
        }
    }
    out
}

fn gaussian_matrix(seed: u64, stream: u64, rows: usize, scale: f64) -> Array2<f64> {
    let mut rng = seeded(seed, stream);
    Array2::from_shape_vec((rows, POOLED), normal_vec(&mut rng, rows * POOLED)).expect("shape")
        * (scale / (POOLED as f64).sqrt())
}

/// `embed(x) = W · pool(x)`, linear in the image.
#[derive(Debug, Clone)]
pub struct ToyIdentityEmbedder {
    weights: Array2<f64>,
}

impl ToyIdentityEmbedder {
    pub fn new(seed: u64, dim: usize, scale: f64) -> Self {
        Self {
            weights: gaussian_matrix(seed, streams::TOY_EMBEDDER, dim, scale),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }
}

pub fn toy_identity_embedder() -> ToyIdentityEmbedder {
    ToyIdentityEmbedder::new(crate::rng::DEFAULT_SEED, 64, 4.0)
}

impl IdentityEmbedder for ToyIdentityEmbedder {
    fn name(&self) -> &str {
        "toy"
    }

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.weights.dot(&pool(image.data())).to_vec())
    }

    fn embed_vjp(&self, image: &ImageTensor, grad: &[f64]) -> Result<Array3<f64>> {
        let g = self.weights.t().dot(&Array1::from(grad.to_vec()));
        Ok(pool_vjp(image.data().dim(), &g))
    }
}

/// Sigmoid of fixed linear functionals of the pooled image.
#[derive(Debug, Clone)]
pub struct ToyAttributePredictor {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl ToyAttributePredictor {
    pub fn new(seed: u64, count: usize, scale: f64) -> Self {
        let mut rng = seeded(seed, streams::TOY_ATTRIBUTES ^ 0xff);
        Self {
            weights: gaussian_matrix(seed, streams::TOY_ATTRIBUTES, count, scale),
            bias: Array1::from(normal_vec(&mut rng, count)) * 0.5,
        }
    }

    fn logits(&self, image: &ImageTensor) -> Array1<f64> {
        self.weights.dot(&pool(image.data())) + &self.bias
    }
}

pub fn toy_attribute_predictor() -> ToyAttributePredictor {
    ToyAttributePredictor::new(crate::rng::DEFAULT_SEED, crate::losses::N_ATTRIBUTES, 4.0)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl AttributePredictor for ToyAttributePredictor {
    fn name(&self) -> &str {
        "toy"
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.logits(image).mapv(sigmoid).to_vec())
    }

    fn predict_vjp(&self, image: &ImageTensor, grad: &[f64]) -> Result<Array3<f64>> {
        let logits = self.logits(image);
        let g = Array1::from_iter(logits.iter().zip(grad).map(|(l, g)| {
            let s = sigmoid(*l);
            g * s * (1.0 - s)
        }));
        Ok(pool_vjp(image.data().dim(), &self.weights.t().dot(&g)))
    }
}

/// Fixed centered soft ellipse, independent of image content.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyFaceParser;

pub fn toy_face_parser() -> ToyFaceParser {
    ToyFaceParser
}

impl FaceParser for ToyFaceParser {
    fn name(&self) -> &str {
        "toy"
    }

    fn parse(&self, image: &ImageTensor) -> Result<FaceMask> {
        FaceMask::new(soft_ellipse(image.height(), image.width()))
    }
}

pub const EMOTIONS: [&str; 7] = ["angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"];

/// Thresholded functionals for labels, linear functionals for angles, and
/// detectors that always fire.
#[derive(Debug, Clone)]
pub struct ToyEvalProviders {
    recog: Array2<f64>,
    emotion: Array2<f64>,
    gender: Array2<f64>,
    pose: Array2<f64>,
    gaze: Array2<f64>,
}

impl ToyEvalProviders {
    pub fn new(seed: u64) -> Self {
        let all = gaussian_matrix(seed, streams::TOY_EVAL, 128 + 7 + 1 + 3 + 2, 1.0);
        let rows = |a: usize, b: usize| all.slice(ndarray::s![a..b, ..]).to_owned();
        Self {
            recog: rows(0, 128),
            emotion: rows(128, 135),
            gender: rows(135, 136),
            pose: rows(136, 139) * 20.0,
            gaze: rows(139, 141) * 20.0,
        }
    }
}

pub fn toy_eval_providers() -> ToyEvalProviders {
    ToyEvalProviders::new(crate::rng::DEFAULT_SEED)
}

impl EvalProviders for ToyEvalProviders {
    fn name(&self) -> &str {
        "toy"
    }

    fn recog_embed(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.recog.dot(&pool(image.data())).to_vec())
    }

    fn emotion(&self, image: &ImageTensor) -> Result<String> {
        let scores = self.emotion.dot(&pool(image.data()));
        let best = scores
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc },
            )
            .0;
        Ok(EMOTIONS[best].to_string())
    }

    fn gender(&self, image: &ImageTensor) -> Result<String> {
        let s = self.gender.dot(&pool(image.data()))[0];
        Ok(if s >= 0.0 { "Man" } else { "Woman" }.to_string())
    }

    fn pose(&self, image: &ImageTensor) -> Result<[f64; 3]> {
        let v = self.pose.dot(&pool(image.data()));
        Ok([v[0], v[1], v[2]])
    }

    fn gaze(&self, image: &ImageTensor) -> Result<[f64; 2]> {
        let v = self.gaze.dot(&pool(image.data()));
        Ok([v[0], v[1]])
    }

    fn detect(&self, _image: &ImageTensor) -> Result<[bool; 2]> {
        Ok([true, true])
    }
}
