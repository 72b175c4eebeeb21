//! Temporal classification head, inference only.
//!
//! Per-frame encoder features (T×D_in) run through a stack of LSTM layers,
//! the final layer's hidden states are pooled with softmax attention, and
//! the pooled vector goes through an affine map plus inference-mode batch
//! normalisation. The 38-wide output is split into phase/task/action
//! logits in registry order.

mod correction;
mod params;

pub use correction::{correct_predictions, smooth_runs, Correction};
pub use params::{HeadDims, HeadParams, LayerRule, LstmLayer, NormStats, PARAMS_FORMAT, PARAMS_VERSION};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{Level, TaxonomyError, TaxonomyRegistry, Triplet};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("parameter file: {0}")]
    ParamFile(String),
    #[error("parameter file version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("parameter file checksum mismatch")]
    ChecksumMismatch,
    #[error("feature sequence must be non-empty and finite")]
    InvalidSequence,
    #[error("loss weights must be non-negative and not all zero")]
    InvalidLossWeights,
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("smoothing radius must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// T×D_in matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence(Array2<f64>);

impl FeatureSequence {
    pub fn new(values: Array2<f64>) -> Result<Self, HeadError> {
        if values.nrows() == 0 || values.ncols() == 0 || values.iter().any(|v| !v.is_finite()) {
            return Err(HeadError::InvalidSequence);
        }
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, HeadError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(HeadError::InvalidSequence);
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), d), flat).map_err(|_| HeadError::InvalidSequence)?;
        Self::new(values)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// One score vector per taxonomy level. Used for raw logits and for
/// per-level probability distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub phase: Vec<f64>,
    pub task: Vec<f64>,
    pub action: Vec<f64>,
}

pub type TripletLogits = LevelScores;
pub type TripletProbs = LevelScores;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

impl LevelScores {
    pub fn from_concat(values: &[f64], widths: [usize; 3]) -> Result<Self, HeadError> {
        let k: usize = widths.iter().sum();
        if values.len() != k {
            return Err(HeadError::DimensionMismatch(format!("{} scores for widths {widths:?}", values.len())));
        }
        let (p, rest) = values.split_at(widths[0]);
        let (t, a) = rest.split_at(widths[1]);
        Ok(Self {
            phase: p.to_vec(),
            task: t.to_vec(),
            action: a.to_vec(),
        })
    }

    pub fn get(&self, level: Level) -> &[f64] {
        match level {
            Level::Phase => &self.phase,
            Level::Task => &self.task,
            Level::Action => &self.action,
        }
    }

    fn get_mut(&mut self, level: Level) -> &mut Vec<f64> {
        match level {
            Level::Phase => &mut self.phase,
            Level::Task => &mut self.task,
            Level::Action => &mut self.action,
        }
    }

    pub fn widths(&self) -> [usize; 3] {
        [self.phase.len(), self.task.len(), self.action.len()]
    }

    pub fn concat(&self) -> Vec<f64> {
        [&self.phase[..], &self.task[..], &self.action[..]].concat()
    }

    /// Per-level softmax.
    pub fn softmax(&self) -> TripletProbs {
        Self {
            phase: softmax(&self.phase),
            task: softmax(&self.task),
            action: softmax(&self.action),
        }
    }

    /// Per-level argmax turned into a valid triplet; a task outside the
    /// winning phase is replaced by that phase's first task.
    pub fn predict(&self, registry: &TaxonomyRegistry) -> Result<(Triplet, bool), HeadError> {
        let pick = |level| argmax(self.get(level)).ok_or_else(|| HeadError::DimensionMismatch(format!("empty {level} scores")));
        Ok(registry.repaired_triplet(pick(Level::Phase)?, pick(Level::Task)?, pick(Level::Action)?)?)
    }
}

fn check_input(seq: &FeatureSequence, params: &HeadParams) -> Result<usize, HeadError> {
    let depth = params.layer_rule.layers_for(seq.len());
    if depth == 0 || depth > params.layers.len() {
        return Err(HeadError::DimensionMismatch(format!(
            "sequence of length {} needs {depth} layers, params hold {}",
            seq.len(),
            params.layers.len()
        )));
    }
    if seq.width() != params.input_width() {
        return Err(HeadError::DimensionMismatch(format!(
            "feature width {} != layer input width {}",
            seq.width(),
            params.input_width()
        )));
    }
    Ok(depth)
}

fn lstm_layer(input: ArrayView2<'_, f64>, layer: &LstmLayer) -> Array2<f64> {
    let hdim = layer.hidden();
    let mut h = Array1::<f64>::zeros(hdim);
    let mut c = Array1::<f64>::zeros(hdim);
    let mut out = Array2::<f64>::zeros((input.nrows(), hdim));
    for (t, x) in input.axis_iter(Axis(0)).enumerate() {
        let z = layer.w_ih.dot(&x) + &layer.b_ih + layer.w_hh.dot(&h) + &layer.b_hh;
        let i = z.slice(s![0..hdim]).mapv(sigmoid);
        let f = z.slice(s![hdim..2 * hdim]).mapv(sigmoid);
        let g = z.slice(s![2 * hdim..3 * hdim]).mapv(f64::tanh);
        let o = z.slice(s![3 * hdim..4 * hdim]).mapv(sigmoid);
        c = &f * &c + &i * &g;
        h = &o * &c.mapv(f64::tanh);
        out.row_mut(t).assign(&h);
    }
    out
}

/// Hidden states of the last active layer, T×H. The number of active
/// layers comes from `params.layer_rule` and the sequence length.
pub fn lstm_forward(seq: &FeatureSequence, params: &HeadParams) -> Result<Array2<f64>, HeadError> {
    let depth = check_input(seq, params)?;
    let mut hidden = lstm_layer(seq.values(), &params.layers[0]);
    for layer in &params.layers[1..depth] {
        hidden = lstm_layer(hidden.view(), layer);
    }
    Ok(hidden)
}

/// Softmax attention over time. Returns the pooled vector and the weights.
pub fn attention_pool(
    hidden: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> Result<(Array1<f64>, Array1<f64>), HeadError> {
    if hidden.ncols() != weights.len() || hidden.nrows() == 0 {
        return Err(HeadError::DimensionMismatch(format!(
            "hidden {:?} vs attention width {}",
            hidden.dim(),
            weights.len()
        )));
    }
    let scores = hidden.dot(&weights);
    let attn = Array1::from(softmax(scores.as_slice().expect("contiguous")));
    let pooled = attn.dot(&hidden);
    Ok((pooled, attn))
}

/// Affine output plus inference-mode normalisation, before the level split.
pub fn output_layer(pooled: ArrayView1<'_, f64>, params: &HeadParams) -> Result<Array1<f64>, HeadError> {
    if pooled.len() != params.output.nrows() {
        return Err(HeadError::DimensionMismatch(format!(
            "pooled width {} vs output rows {}",
            pooled.len(),
            params.output.nrows()
        )));
    }
    let n = &params.norm;
    let y = pooled.dot(&params.output);
    Ok((&y - &n.mean) / n.var.mapv(|v| (v + n.eps).sqrt()) * &n.gamma + &n.beta)
}

pub fn head_forward(seq: &FeatureSequence, params: &HeadParams) -> Result<TripletLogits, HeadError> {
    let hidden = lstm_forward(seq, params)?;
    let (pooled, _) = attention_pool(hidden.view(), params.attention.view())?;
    let y = output_layer(pooled.view(), params)?;
    LevelScores::from_concat(y.as_slice().expect("contiguous"), params.widths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, HeadError> {
        let w = [alpha, beta, gamma];
        if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().all(|&x| x == 0.0) {
            return Err(HeadError::InvalidLossWeights);
        }
        Ok(Self { alpha, beta, gamma })
    }
}

/// Cross-entropy of one slice: `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64, HeadError> {
    let x = logits
        .get(target)
        .ok_or_else(|| HeadError::DimensionMismatch(format!("target {target} outside {} classes", logits.len())))?;
    Ok(log_sum_exp(logits) - x)
}

/// `α·CE(phase) + β·CE(task) + γ·CE(action)`.
pub fn combined_loss(logits: &TripletLogits, target: &Triplet, w: &LossWeights) -> Result<f64, HeadError> {
    let ce = |level: Level| cross_entropy(logits.get(level), target.ordinal(level));
    Ok(w.alpha * ce(Level::Phase)? + w.beta * ce(Level::Task)? + w.gamma * ce(Level::Action)?)
}

/// Class-wise arithmetic mean of the members' per-level probabilities.
pub fn mean_ensemble(members: &[TripletProbs]) -> Result<TripletProbs, HeadError> {
    let first = members.first().ok_or(HeadError::EmptyEnsemble)?;
    let widths = first.widths();
    if let Some(m) = members.iter().find(|m| m.widths() != widths) {
        return Err(HeadError::DimensionMismatch(format!("member widths {:?} vs {widths:?}", m.widths())));
    }
    let n = members.len() as f64;
    let mut out = LevelScores {
        phase: vec![0.0; widths[0]],
        task: vec![0.0; widths[1]],
        action: vec![0.0; widths[2]],
    };
    for level in Level::ALL {
        let acc = out.get_mut(level);
        for m in members {
            for (a, v) in acc.iter_mut().zip(m.get(level)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(out)
}
