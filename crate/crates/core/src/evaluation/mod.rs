//! Identity-suppression and utility-preservation metrics and their
//! aggregation into a single overall score.

mod pca;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::providers::EvalProviders;

pub use pca::{pca_project, Pca};

pub const POSE_TAU: f64 = 5.0;
pub const GAZE_TAU: f64 = 15.0;
pub const HM_FLOOR: f64 = 1e-8;

/// Column order of the published comparison tables.
pub const COLUMNS: [&str; 7] = ["SID", "Detect", "Emotion", "Gender", "Pose", "Gaze", "Overall"];

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 − cos(e_src, e_gen)`, in `[0, 2]`.
pub fn sid(e_src: &[f64], e_gen: &[f64]) -> Result<f64> {
    if e_src.len() != e_gen.len() {
        return Err(Error::ShapeMismatch {
            context: "recognition embeddings",
            expected: vec![e_src.len()],
            actual: vec![e_gen.len()],
        });
    }
    let (a, b) = (l2(e_src), l2(e_gen));
    if a == 0.0 || b == 0.0 {
        return Err(Error::DegenerateInput("zero-norm recognition embedding"));
    }
    let cos = e_src.iter().zip(e_gen).map(|(x, y)| x * y).sum::<f64>() / (a * b);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// `√(Σδ²/n)`.
pub fn rms_deviation(deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::DegenerateInput("no angle deviations"));
    }
    Ok((deltas.iter().map(|d| d * d).sum::<f64>() / deltas.len() as f64).sqrt())
}

/// `max(0, 1 − rms/τ)`.
pub fn threshold_score(rms: f64, tau: f64) -> f64 {
    (1.0 - rms / tau).max(0.0)
}

/// Harmonic mean with each value floored at [`HM_FLOOR`].
pub fn hm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("harmonic mean of nothing"));
    }
    let inv: f64 = values.iter().map(|v| 1.0 / v.max(HM_FLOOR)).sum();
    Ok(values.len() as f64 / inv)
}

/// Harmonic mean of the four attribute-preservation scores.
pub fn hm_attr(emotion: f64, gender: f64, pose: f64, gaze: f64) -> Result<f64> {
    hm(&[emotion, gender, pose, gaze])
}

/// Harmonic mean of SID, detectability and the attribute harmonic mean.
pub fn hm_overall(sid: f64, detect: f64, attr: f64) -> Result<f64> {
    hm(&[sid, detect, attr])
}

/// Scores for one (original, edited) pair. `None` marks a metric whose
/// provider failed; the reason is kept in `errors`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub sid: Option<f64>,
    pub detect: Option<f64>,
    pub emotion: Option<f64>,
    pub gender: Option<f64>,
    pub pose: Option<f64>,
    pub gaze: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl PairScores {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn columns(&self) -> [Option<f64>; 6] {
        [self.sid, self.detect, self.emotion, self.gender, self.pose, self.gaze]
    }
}

fn indicator(a: &str, b: &str) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn angle_score(src: &[f64], gen: &[f64], tau: f64) -> Result<f64> {
    let deltas: Vec<f64> = src.iter().zip(gen).map(|(a, b)| a - b).collect();
    Ok(threshold_score(rms_deviation(&deltas)?, tau))
}

/// Scores one pair. Provider failures are recorded per metric instead of
/// aborting the pair.
pub fn evaluate_pair(x: &ImageTensor, x_hat: &ImageTensor, providers: &dyn EvalProviders) -> PairScores {
    let mut errors = Vec::new();
    let mut record = |metric: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{metric}: {e}"));
            None
        }
    };
    let sid_v = record(
        "sid",
        providers
            .recog_embed(x)
            .and_then(|a| providers.recog_embed(x_hat).and_then(|b| sid(&a, &b))),
    );
    let detect = record(
        "detect",
        providers
            .detect(x_hat)
            .map(|d| d.iter().filter(|&&hit| hit).count() as f64 / 2.0),
    );
    let emotion = record(
        "emotion",
        providers
            .emotion(x)
            .and_then(|a| providers.emotion(x_hat).map(|b| indicator(&a, &b))),
    );
    let gender = record(
        "gender",
        providers
            .gender(x)
            .and_then(|a| providers.gender(x_hat).map(|b| indicator(&a, &b))),
    );
    let pose = record(
        "pose",
        providers
            .pose(x)
            .and_then(|a| providers.pose(x_hat).and_then(|b| angle_score(&a, &b, POSE_TAU))),
    );
    let gaze = record(
        "gaze",
        providers
            .gaze(x)
            .and_then(|a| providers.gaze(x_hat).and_then(|b| angle_score(&a, &b, GAZE_TAU))),
    );
    PairScores {
        name: String::new(),
        sid: sid_v,
        detect,
        emotion,
        gender,
        pose,
        gaze,
        errors,
    }
}

/// Dataset-level column means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeans {
    pub sid: f64,
    pub detect: f64,
    pub emotion: f64,
    pub gender: f64,
    pub pose: f64,
    pub gaze: f64,
}

impl ColumnMeans {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            sid: v[0],
            detect: v[1],
            emotion: v[2],
            gender: v[3],
            pose: v[4],
            gaze: v[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.sid, self.detect, self.emotion, self.gender, self.pose, self.gaze]
    }
}

/// Per-column counts of excluded (missing) scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCounts {
    pub sid: usize,
    pub detect: usize,
    pub emotion: usize,
    pub gender: usize,
    pub pose: usize,
    pub gaze: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default)]
    pub images: Vec<PairScores>,
    pub means: ColumnMeans,
    #[serde(default)]
    pub missing: MissingCounts,
    pub hm_attr: f64,
    pub overall: f64,
}

impl MetricsReport {
    /// Builds the aggregate block from column means alone.
    pub fn from_means(means: ColumnMeans) -> Result<Self> {
        let attr = hm_attr(means.emotion, means.gender, means.pose, means.gaze)?;
        Ok(Self {
            images: Vec::new(),
            means,
            missing: MissingCounts::default(),
            hm_attr: attr,
            overall: hm_overall(means.sid, means.detect, attr)?,
        })
    }

    /// Aggregate row in [`COLUMNS`] order.
    pub fn row(&self) -> [f64; 7] {
        let m = self.means.to_array();
        [m[0], m[1], m[2], m[3], m[4], m[5], self.overall]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("<report>", e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }

    /// The aggregate row as CSV with a [`COLUMNS`] header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_table(path, &[("", self)], false)
    }
}

/// Writes one row per report in [`COLUMNS`] order, optionally led by a label column.
pub fn write_table(path: &Path, rows: &[(&str, &MetricsReport)], labelled: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut header: Vec<&str> = Vec::new();
    if labelled {
        header.push("label");
    }
    header.extend(COLUMNS);
    w.write_record(&header).map_err(|e| Error::format(path, e))?;
    for (label, report) in rows {
        let mut rec: Vec<String> = Vec::new();
        if labelled {
            rec.push(label.to_string());
        }
        rec.extend(report.row().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Column means over available scores, then the nested harmonic means of
/// those means.
pub fn aggregate(reports: &[PairScores]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::DegenerateInput("no image pairs to aggregate"));
    }
    let mut means = [0.0; 6];
    let mut missing = [0usize; 6];
    for (col, mean) in means.iter_mut().enumerate() {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.columns()[col]).collect();
        missing[col] = reports.len() - values.len();
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "every pair is missing its {} score",
                COLUMNS[col]
            )));
        }
        *mean = values.iter().sum::<f64>() / values.len() as f64;
    }
    let mut report = MetricsReport::from_means(ColumnMeans::from_array(means))?;
    report.images = reports.to_vec();
    report.missing = MissingCounts {
        sid: missing[0],
        detect: missing[1],
        emotion: missing[2],
        gender: missing[3],
        pose: missing[4],
        gaze: missing[5],
    };
    Ok(report)
}
