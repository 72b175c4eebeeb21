//! Head parameters and their on-disk container.
//!
//! The container is a JSON document:
//!
//! ```json
//! {
//!   "format": "esv-temporal-head",
//!   "version": 1,
//!   "layer_rule": { "adaptive": { "steps_per_layer": 4, "max_layers": 3 } },
//!   "widths": [5, 12, 21],
//!   "norm_eps": 1e-5,
//!   "tensors": [ { "name": "lstm.0.w_ih", "shape": [64, 32], "data": "<base64>" }, ... ],
//!   "checksum": "<sha256 hex>"
//! }
//! ```
//!
//! `data` is the row-major tensor as little-endian IEEE-754 f64, base64
//! encoded. The checksum is SHA-256 over, for each tensor in file order,
//! the UTF-8 name, a zero byte, each shape dimension as u64 LE and the raw
//! data bytes; followed by the three widths as u64 LE and `norm_eps` as
//! f64 LE.
//!
//! Tensor names: `lstm.{l}.w_ih` (4H×D_in), `lstm.{l}.w_hh` (4H×H),
//! `lstm.{l}.b_ih`, `lstm.{l}.b_hh` (4H), gate order input, forget, cell,
//! output; `attention.w` (H); `output.w` (H×K); `norm.mean`, `norm.var`,
//! `norm.gamma`, `norm.beta` (K), with K = sum of widths.

use std::collections::HashMap;
use std::path::Path;

use base64::Engine;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HeadError;

pub const PARAMS_FORMAT: &str = "esv-temporal-head";
pub const PARAMS_VERSION: u32 = 1;

/// How many stacked LSTM layers a sequence of length T runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRule {
    /// `clamp(ceil(T / steps_per_layer), 1, max_layers)`
    Adaptive { steps_per_layer: usize, max_layers: usize },
    Fixed(usize),
}

impl Default for LayerRule {
    fn default() -> Self {
        LayerRule::Adaptive {
            steps_per_layer: 4,
            max_layers: 3,
        }
    }
}

impl LayerRule {
    pub fn layers_for(&self, seq_len: usize) -> usize {
        match *self {
            LayerRule::Adaptive {
                steps_per_layer,
                max_layers,
            } => seq_len.div_ceil(steps_per_layer.max(1)).clamp(1, max_layers.max(1)),
            LayerRule::Fixed(n) => n,
        }
    }

    fn max_layers(&self) -> usize {
        match *self {
            LayerRule::Adaptive { max_layers, .. } => max_layers.max(1),
            LayerRule::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

impl LstmLayer {
    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }

    fn check(&self) -> Result<(), HeadError> {
        let h = self.hidden();
        let ok = self.w_hh.nrows() == 4 * h
            && self.w_ih.nrows() == 4 * h
            && self.b_ih.len() == 4 * h
            && self.b_hh.len() == 4 * h;
        if ok {
            Ok(())
        } else {
            Err(HeadError::DimensionMismatch(format!(
                "lstm layer shapes w_ih {:?}, w_hh {:?}, b_ih {}, b_hh {}",
                self.w_ih.dim(),
                self.w_hh.dim(),
                self.b_ih.len(),
                self.b_hh.len()
            )))
        }
    }
}

/// Inference-time normalisation statistics for the output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub layers: Vec<LstmLayer>,
    /// W_a, one weight per hidden unit.
    pub attention: Array1<f64>,
    /// W_h, hidden × output width.
    pub output: Array2<f64>,
    pub norm: NormStats,
    pub widths: [usize; 3],
    pub layer_rule: LayerRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadDims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub widths: [usize; 3],
}

impl HeadParams {
    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, LstmLayer::input)
    }

    pub fn hidden_width(&self) -> usize {
        self.attention.len()
    }

    pub fn output_width(&self) -> usize {
        self.widths.iter().sum()
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        let mismatch = |what: String| Err(HeadError::DimensionMismatch(what));
        if self.layers.is_empty() {
            return mismatch("no lstm layers".into());
        }
        let h = self.hidden_width();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            if layer.hidden() != h {
                return mismatch(format!("layer {i} hidden width {} != attention width {h}", layer.hidden()));
            }
            if i > 0 && layer.input() != h {
                return mismatch(format!("layer {i} input width {} != hidden width {h}", layer.input()));
            }
        }
        let k = self.output_width();
        if self.output.dim() != (h, k) {
            return mismatch(format!("output weight {:?}, expected ({h}, {k})", self.output.dim()));
        }
        let n = &self.norm;
        if [n.mean.len(), n.var.len(), n.gamma.len(), n.beta.len()].iter().any(|&l| l != k) {
            return mismatch("normalisation statistics width".into());
        }
        if n.var.iter().any(|&v| !(v > 0.0)) || !(n.eps >= 0.0) {
            return Err(HeadError::InvalidParams("variances must be positive and eps non-negative".into()));
        }
        if self.layer_rule.max_layers() > self.layers.len() {
            return Err(HeadError::InvalidParams(format!(
                "layer rule may use {} layers, file holds {}",
                self.layer_rule.max_layers(),
                self.layers.len()
            )));
        }
        let all_finite = self.layers.iter().all(|l| {
            l.w_ih.iter().chain(l.w_hh.iter()).chain(l.b_ih.iter()).chain(l.b_hh.iter()).all(|v| v.is_finite())
        }) && self.attention.iter().chain(self.output.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(HeadError::InvalidParams("non-finite weight".into()));
        }
        Ok(())
    }

    /// Uniform random weights in ±1/√H, seeded. Test and demo use only.
    pub fn random(dims: HeadDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dims.hidden as f64).sqrt();
        let mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..bound))
        };
        let h = dims.hidden;
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let input = if l == 0 { dims.input } else { h };
            let w_ih = mat(4 * h, input, &mut rng);
            let w_hh = mat(4 * h, h, &mut rng);
            let b_ih = Array1::from_shape_fn(4 * h, |_| rng.random_range(-bound..bound));
            let b_hh = Array1::from_shape_fn(4 * h, |_| rng.random_range(-bound..bound));
            layers.push(LstmLayer { w_ih, w_hh, b_ih, b_hh });
        }
        let k: usize = dims.widths.iter().sum();
        let attention = Array1::from_shape_fn(h, |_| rng.random_range(-1.0..1.0));
        let output = mat(h, k, &mut rng);
        let norm = NormStats {
            mean: Array1::from_shape_fn(k, |_| rng.random_range(-0.1..0.1)),
            var: Array1::from_shape_fn(k, |_| rng.random_range(0.5..1.5)),
            gamma: Array1::from_shape_fn(k, |_| rng.random_range(0.5..1.5)),
            beta: Array1::from_shape_fn(k, |_| rng.random_range(-0.1..0.1)),
            eps: 1e-5,
        };
        HeadParams {
            layers,
            attention,
            output,
            norm,
            widths: dims.widths,
            layer_rule: LayerRule::Adaptive {
                steps_per_layer: 4,
                max_layers: dims.layers,
            },
        }
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let m = |a: &Array2<f64>| (vec![a.nrows(), a.ncols()], a.iter().copied().collect::<Vec<_>>());
        let v = |a: &Array1<f64>| (vec![a.len()], a.to_vec());
        let mut out = Vec::new();
        let mut push = |name: String, (shape, data): (Vec<usize>, Vec<f64>)| out.push((name, shape, data));
        for (i, l) in self.layers.iter().enumerate() {
            push(format!("lstm.{i}.w_ih"), m(&l.w_ih));
            push(format!("lstm.{i}.w_hh"), m(&l.w_hh));
            push(format!("lstm.{i}.b_ih"), v(&l.b_ih));
            push(format!("lstm.{i}.b_hh"), v(&l.b_hh));
        }
        push("attention.w".into(), v(&self.attention));
        push("output.w".into(), m(&self.output));
        push("norm.mean".into(), v(&self.norm.mean));
        push("norm.var".into(), v(&self.norm.var));
        push("norm.gamma".into(), v(&self.norm.gamma));
        push("norm.beta".into(), v(&self.norm.beta));
        out
    }

    pub fn to_json(&self) -> String {
        let tensors: Vec<TensorRecord> = self
            .named_tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorRecord {
                name,
                shape,
                data: base64::engine::general_purpose::STANDARD.encode(f64_bytes(&data)),
            })
            .collect();
        let checksum = checksum(&tensors, self.widths, self.norm.eps).unwrap_or_default();
        let file = ParamsFile {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            layer_rule: self.layer_rule,
            widths: self.widths,
            norm_eps: self.norm.eps,
            tensors,
            checksum,
        };
        serde_json::to_string_pretty(&file).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, HeadError> {
        let file: ParamsFile = serde_json::from_str(text).map_err(|e| HeadError::ParamFile(e.to_string()))?;
        if file.format != PARAMS_FORMAT {
            return Err(HeadError::ParamFile(format!("unexpected format {:?}", file.format)));
        }
        if file.version != PARAMS_VERSION {
            return Err(HeadError::VersionMismatch {
                expected: PARAMS_VERSION,
                found: file.version,
            });
        }
        let expected = checksum(&file.tensors, file.widths, file.norm_eps)?;
        if expected != file.checksum {
            return Err(HeadError::ChecksumMismatch);
        }

        let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for t in file.tensors {
            let data = decode_tensor(&t)?;
            if tensors.insert(t.name.clone(), (t.shape, data)).is_some() {
                return Err(HeadError::ParamFile(format!("duplicate tensor {:?}", t.name)));
            }
        }
        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| HeadError::ParamFile(format!("missing tensor {name:?}")))
        };
        let matrix = |(shape, data): (Vec<usize>, Vec<f64>), name: &str| -> Result<Array2<f64>, HeadError> {
            match shape.as_slice() {
                [r, c] => Array2::from_shape_vec((*r, *c), data).map_err(|e| HeadError::ParamFile(format!("{name}: {e}"))),
                _ => Err(HeadError::ParamFile(format!("{name}: expected a matrix, shape {shape:?}"))),
            }
        };
        let vector = |(shape, data): (Vec<usize>, Vec<f64>), name: &str| -> Result<Array1<f64>, HeadError> {
            match shape.as_slice() {
                [_] => Ok(Array1::from(data)),
                _ => Err(HeadError::ParamFile(format!("{name}: expected a vector, shape {shape:?}"))),
            }
        };

        let mut layers = Vec::new();
        for i in 0.. {
            let name = format!("lstm.{i}.w_ih");
            let Ok(w_ih) = take(&name) else { break };
            let w_ih = matrix(w_ih, &name)?;
            let w_hh = matrix(take(&format!("lstm.{i}.w_hh"))?, "w_hh")?;
            let b_ih = vector(take(&format!("lstm.{i}.b_ih"))?, "b_ih")?;
            let b_hh = vector(take(&format!("lstm.{i}.b_hh"))?, "b_hh")?;
            layers.push(LstmLayer { w_ih, w_hh, b_ih, b_hh });
        }
        let params = HeadParams {
            layers,
            attention: vector(take("attention.w")?, "attention.w")?,
            output: matrix(take("output.w")?, "output.w")?,
            norm: NormStats {
                mean: vector(take("norm.mean")?, "norm.mean")?,
                var: vector(take("norm.var")?, "norm.var")?,
                gamma: vector(take("norm.gamma")?, "norm.gamma")?,
                beta: vector(take("norm.beta")?, "norm.beta")?,
                eps: file.norm_eps,
            },
            widths: file.widths,
            layer_rule: file.layer_rule,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(HeadError::ParamFile(format!("unexpected tensor {extra:?}")));
        }
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), HeadError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| HeadError::ParamFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, HeadError> {
        let text = std::fs::read_to_string(path).map_err(|e| HeadError::ParamFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    version: u32,
    layer_rule: LayerRule,
    widths: [usize; 3],
    norm_eps: f64,
    tensors: Vec<TensorRecord>,
    checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

fn f64_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_tensor(t: &TensorRecord) -> Result<Vec<f64>, HeadError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(&t.data)
        .map_err(|e| HeadError::ParamFile(format!("{}: {e}", t.name)))?;
    let expected: usize = t.shape.iter().product();
    if bytes.len() != expected * 8 {
        return Err(HeadError::ParamFile(format!(
            "{}: {} bytes for shape {:?}",
            t.name,
            bytes.len(),
            t.shape
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn checksum(tensors: &[TensorRecord], widths: [usize; 3], eps: f64) -> Result<String, HeadError> {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        h.update([0u8]);
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(f64_bytes(&decode_tensor(t)?));
    }
    for w in widths {
        h.update((w as u64).to_le_bytes());
    }
    h.update(eps.to_le_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
