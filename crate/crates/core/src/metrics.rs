//! Cross-shot subject consistency (plain and copy-paste penalized) and
//! background–script alignment.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bank::{cosine, normalize, DescriptorProvider};
use crate::error::{Error, Result};
use crate::script::EntityId;
use crate::tensor::{Frame, PixelMask};

/// Cubic ramp `3t² − 2t³` from `a` to `b`.
pub fn smoothstep(a: f64, b: f64, x: f64) -> Result<f64> {
    if a.partial_cmp(&b) != Some(Ordering::Less) {
        return Err(Error::InvalidEdges { lower: a, upper: b });
    }
    if x <= a {
        return Ok(0.0);
    }
    if x >= b {
        return Ok(1.0);
    }
    let t = (x - a) / (b - a);
    Ok(t * t * (3.0 - 2.0 * t))
}

/// Crops `mask` to its tight bounding box and resizes it to `r × r` by
/// nearest neighbour (`src = floor(i · extent / r)`).
pub fn normalize_silhouette(mask: &PixelMask, r: usize) -> Result<PixelMask> {
    let (y0, x0, y1, x1) = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let (h, w) = (y1 - y0, x1 - x0);
    Ok(PixelMask::from_fn(r, r, |i, j| {
        mask.get(y0 + i * h / r, x0 + j * w / r)
    }))
}

/// IoU of two masks after tight-box normalization to `r × r`.
pub fn silhouette_iou(a: &PixelMask, b: &PixelMask, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidConfig(
            "silhouette resolution must be positive".into(),
        ));
    }
    let na = normalize_silhouette(a, r)?;
    let nb = normalize_silhouette(b, r)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, q) in na.bits().iter().zip(nb.bits()) {
        inter += usize::from(*p && *q);
        union += usize::from(*p || *q);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Average the provider's region embedding over the subject mask.
    PatchPooled,
    /// Zero every pixel outside the mask and embed the whole frame.
    MaskedImage,
}

impl EmbeddingMode {
    pub const ALL: [EmbeddingMode; 2] = [EmbeddingMode::PatchPooled, EmbeddingMode::MaskedImage];

    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingMode::PatchPooled => "patch_pooled",
            EmbeddingMode::MaskedImage => "masked_image",
        }
    }
}

pub const FRAMES_PER_OBSERVATION: usize = 4;

/// Four frame indices at relative positions `0, 1/3, 2/3, 1` of a shot of
/// `n` frames, rounded to the nearest index.
pub fn sample_frame_indices(n: usize) -> Result<[usize; FRAMES_PER_OBSERVATION]> {
    if n == 0 {
        return Err(Error::DegenerateInput(
            "cannot sample frames from an empty shot".into(),
        ));
    }
    let last = (n - 1) as f64;
    Ok([0, 1, 2, 3].map(|k| (last * k as f64 / 3.0).round() as usize))
}

/// Unit-norm shot-level subject embedding from four frame/mask pairs.
pub fn shot_subject_embedding(
    frames: &[Frame],
    masks: &[PixelMask],
    provider: &dyn DescriptorProvider,
    mode: EmbeddingMode,
) -> Result<Vec<f32>> {
    if frames.len() != FRAMES_PER_OBSERVATION || masks.len() != FRAMES_PER_OBSERVATION {
        return Err(Error::CountMismatch {
            expected: FRAMES_PER_OBSERVATION,
            found: frames.len().min(masks.len()),
        });
    }
    let mut sum: Vec<f64> = Vec::new();
    for (frame, mask) in frames.iter().zip(masks) {
        mask.check_dims(frame.height(), frame.width())?;
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let e = match mode {
            EmbeddingMode::PatchPooled => provider.embed_appearance(frame, mask)?,
            EmbeddingMode::MaskedImage => {
                let masked = Frame::from_fn(frame.height(), frame.width(), |y, x, c| {
                    if mask.get(y, x) {
                        frame.get(y, x, c)
                    } else {
                        0.0
                    }
                });
                provider
                    .embed_appearance(&masked, &PixelMask::full(frame.height(), frame.width()))?
            }
        };
        if sum.is_empty() {
            sum = vec![0.0; e.len()];
        }
        if e.len() != sum.len() {
            return Err(Error::dims("provider returned embeddings of varying width"));
        }
        sum.iter_mut()
            .zip(&e)
            .for_each(|(s, v)| *s += f64::from(*v));
    }
    Ok(normalize(
        &sum.iter()
            .map(|s| s / FRAMES_PER_OBSERVATION as f64)
            .collect::<Vec<_>>(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectObservation {
    pub subject: EntityId,
    pub shot: u32,
    pub embedding: Vec<f32>,
    /// Subject mask used for the silhouette comparison.
    pub silhouette: PixelMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundObservation {
    pub shot: u32,
    pub embedding: Vec<f32>,
    pub scene_text_embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Silhouette side length after normalization.
    pub resolution: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.88,
            alpha2: 0.96,
            beta1: 0.75,
            beta2: 0.90,
            resolution: 64,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha1.partial_cmp(&self.alpha2) != Some(Ordering::Less) {
            return Err(Error::InvalidEdges {
                lower: self.alpha1,
                upper: self.alpha2,
            });
        }
        if self.beta1.partial_cmp(&self.beta2) != Some(Ordering::Less) {
            return Err(Error::InvalidEdges {
                lower: self.beta1,
                upper: self.beta2,
            });
        }
        if self.resolution < 8 {
            return Err(Error::InvalidConfig(format!(
                "silhouette resolution {} is below 8",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Product of the identity and silhouette gates.
    pub fn duplicate_risk(&self, cos: f64, iou: f64) -> Result<f64> {
        Ok(smoothstep(self.alpha1, self.alpha2, cos)? * smoothstep(self.beta1, self.beta2, iou)?)
    }
}

/// One matched pair `(s, i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDiagnostic {
    pub subject: EntityId,
    pub shot_i: u32,
    pub shot_j: u32,
    pub cos: f64,
    pub iou: f64,
    pub duplicate_risk: f64,
    /// `cos · (1 − duplicate_risk)`.
    pub penalized: f64,
}

fn grouped(observations: &[SubjectObservation]) -> BTreeMap<&EntityId, Vec<&SubjectObservation>> {
    let mut groups: BTreeMap<&EntityId, Vec<&SubjectObservation>> = BTreeMap::new();
    for o in observations {
        groups.entry(&o.subject).or_default().push(o);
    }
    for v in groups.values_mut() {
        v.sort_by_key(|o| o.shot);
    }
    groups
}

/// All unordered pairs of shots per subject, ordered by subject then
/// `(i, j)`, with cosine, IoU and penalty terms.
pub fn pair_diagnostics(
    observations: &[SubjectObservation],
    config: &PenaltyConfig,
) -> Result<Vec<PairDiagnostic>> {
    config.validate()?;
    let mut out = Vec::new();
    for (subject, obs) in grouped(observations) {
        for (a, oi) in obs.iter().enumerate() {
            for oj in &obs[a + 1..] {
                if oi.shot == oj.shot {
                    return Err(Error::DegenerateInput(format!(
                        "{subject} observed twice in shot {}",
                        oi.shot
                    )));
                }
                let cos = cosine(&oi.embedding, &oj.embedding);
                let iou = silhouette_iou(&oi.silhouette, &oj.silhouette, config.resolution)?;
                let duplicate_risk = config.duplicate_risk(cos, iou)?;
                out.push(PairDiagnostic {
                    subject: subject.clone(),
                    shot_i: oi.shot,
                    shot_j: oj.shot,
                    cos,
                    iou,
                    duplicate_risk,
                    penalized: cos * (1.0 - duplicate_risk),
                });
            }
        }
    }
    Ok(out)
}

/// Mean pairwise cosine over matched pairs.
pub fn csc(observations: &[SubjectObservation]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for obs in grouped(observations).values() {
        for (a, oi) in obs.iter().enumerate() {
            for oj in &obs[a + 1..] {
                total += cosine(&oi.embedding, &oj.embedding);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyPairSet);
    }
    Ok(total / n as f64)
}

/// Mean penalized pairwise cosine over matched pairs.
pub fn csc_star(observations: &[SubjectObservation], config: &PenaltyConfig) -> Result<f64> {
    let pairs = pair_diagnostics(observations, config)?;
    if pairs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    Ok(pairs.iter().map(|p| p.penalized).sum::<f64>() / pairs.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput(
            "constant sequence has no rank correlation".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(
            "need at least two observations".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Pairwise visual and text similarity lists over shot pairs `i < j`, in
/// the order observations are given.
pub fn background_similarity_pairs(observations: &[BackgroundObservation]) -> (Vec<f64>, Vec<f64>) {
    let mut visual = Vec::new();
    let mut text = Vec::new();
    for (a, oi) in observations.iter().enumerate() {
        for oj in &observations[a + 1..] {
            visual.push(cosine(&oi.embedding, &oj.embedding));
            text.push(cosine(&oi.scene_text_embedding, &oj.scene_text_embedding));
        }
    }
    (visual, text)
}

/// Spearman correlation between pairwise background similarities and
/// pairwise scene-description similarities.
pub fn bga(observations: &[BackgroundObservation]) -> Result<f64> {
    if observations.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "background alignment needs at least 3 shots, got {}",
            observations.len()
        )));
    }
    let (visual, text) = background_similarity_pairs(observations);
    spearman(&visual, &text)
}

/// Per-mode consistency scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeScores {
    pub mode: EmbeddingMode,
    pub csc: Option<f64>,
    pub csc_star: Option<f64>,
    pub pairs: Vec<PairDiagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub modes: Vec<ModeScores>,
    pub bga: Option<f64>,
    pub subject_observations: usize,
    pub background_observations: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

impl MetricsReport {
    /// Scores both embedding modes; undefined values (no pairs, fewer than
    /// three shots, constant lists) are reported as `None`.
    pub fn compute(
        observations: &BTreeMap<EmbeddingMode, Vec<SubjectObservation>>,
        backgrounds: &[BackgroundObservation],
        config: &PenaltyConfig,
    ) -> Result<Self> {
        let mut modes = Vec::new();
        let mut subject_observations = 0;
        for (&mode, obs) in observations {
            subject_observations = subject_observations.max(obs.len());
            let pairs = pair_diagnostics(obs, config)?;
            let undefined = |r: Result<f64>| match r {
                Ok(v) => Ok(Some(v)),
                Err(Error::EmptyPairSet) => Ok(None),
                Err(e) => Err(e),
            };
            modes.push(ModeScores {
                mode,
                csc: undefined(csc(obs))?,
                csc_star: undefined(csc_star(obs, config))?,
                pairs,
            });
        }
        let bga = match bga(backgrounds) {
            Ok(v) => Some(v),
            Err(Error::DegenerateInput(msg)) => {
                log::info!("background alignment undefined: {msg}");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            modes,
            bga,
            subject_observations,
            background_observations: backgrounds.len(),
        })
    }

    /// Flat `key=value` document.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.modes {
            let _ = writeln!(s, "csc_{}={}", m.mode.as_str(), fmt_opt(m.csc));
            let _ = writeln!(s, "csc_star_{}={}", m.mode.as_str(), fmt_opt(m.csc_star));
            let _ = writeln!(s, "pairs_{}={}", m.mode.as_str(), m.pairs.len());
        }
        let _ = writeln!(s, "bga={}", fmt_opt(self.bga));
        let _ = writeln!(s, "subject_observations={}", self.subject_observations);
        let _ = writeln!(
            s,
            "background_observations={}",
            self.background_observations
        );
        s
    }

    /// Per-pair table rows `(mode, subject, shot_i, shot_j, cos, iou, duplicate_risk, penalized)`.
    pub fn pair_rows(&self) -> Vec<[String; 8]> {
        self.modes
            .iter()
            .flat_map(|m| {
                m.pairs.iter().map(move |p| {
                    [
                        m.mode.as_str().to_string(),
                        p.subject.to_string(),
                        p.shot_i.to_string(),
                        p.shot_j.to_string(),
                        format!("{:.6}", p.cos),
                        format!("{:.6}", p.iou),
                        format!("{:.6}", p.duplicate_risk),
                        format!("{:.6}", p.penalized),
                    ]
                })
            })
            .collect()
    }
}
