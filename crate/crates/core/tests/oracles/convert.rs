//! Copies library parameter and output types into plain nested vectors.

use esv_core::head::{HeadParams, LayerRule};

use super::{Matrix, OracleLayer, OracleNorm};

pub fn layers(p: &HeadParams) -> Vec<OracleLayer> {
    p.layers
        .iter()
        .map(|l| OracleLayer {
            w_ih: l.w_ih.rows().into_iter().map(|r| r.to_vec()).collect(),
            w_hh: l.w_hh.rows().into_iter().map(|r| r.to_vec()).collect(),
            b_ih: l.b_ih.to_vec(),
            b_hh: l.b_hh.to_vec(),
        })
        .collect()
}

pub fn norm(p: &HeadParams) -> OracleNorm {
    OracleNorm {
        mean: p.norm.mean.to_vec(),
        var: p.norm.var.to_vec(),
        gamma: p.norm.gamma.to_vec(),
        beta: p.norm.beta.to_vec(),
        eps: p.norm.eps,
    }
}

pub fn output_weights(p: &HeadParams) -> Matrix {
    p.output.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn depth(p: &HeadParams, steps: usize) -> usize {
    match p.layer_rule {
        LayerRule::Adaptive {
            steps_per_layer,
            max_layers,
        } => super::adaptive_depth(steps, steps_per_layer, max_layers),
        LayerRule::Fixed(n) => n,
    }
}

/// Full head: LSTM stack, attention, output. Returns (logits, attention).
pub fn head(p: &HeadParams, xs: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let hidden = super::lstm_stack(xs, &layers(p), depth(p, xs.len()));
    let (pooled, attn) = super::attention(&hidden, &p.attention.to_vec());
    (super::output(&pooled, &output_weights(p), &norm(p)), attn)
}
