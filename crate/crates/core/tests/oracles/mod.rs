//! Independent reference implementations written as plain scalar loops
//! over `Vec`s. Shared by the property tests and the acceptance suite.
#![allow(dead_code)]

pub type Matrix = Vec<Vec<f64>>;

pub struct OracleLayer {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single LSTM layer with gate rows ordered input, forget, cell, output.
pub fn lstm_layer(xs: &Matrix, layer: &OracleLayer) -> Matrix {
    let hd = layer.w_hh[0].len();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut out = Vec::new();
    for x in xs {
        let mut z = vec![0.0; 4 * hd];
        for r in 0..4 * hd {
            let mut acc = layer.b_ih[r] + layer.b_hh[r];
            for (k, xv) in x.iter().enumerate() {
                acc += layer.w_ih[r][k] * xv;
            }
            for (k, hv) in h.iter().enumerate() {
                acc += layer.w_hh[r][k] * hv;
            }
            z[r] = acc;
        }
        let mut h_next = vec![0.0; hd];
        for j in 0..hd {
            let ig = sigmoid(z[j]);
            let fg = sigmoid(z[hd + j]);
            let gg = z[2 * hd + j].tanh();
            let og = sigmoid(z[3 * hd + j]);
            c[j] = fg * c[j] + ig * gg;
            h_next[j] = og * c[j].tanh();
        }
        h = h_next;
        out.push(h.clone());
    }
    out
}

/// Active depth: one layer per started block of `per_layer` steps, capped.
pub fn adaptive_depth(steps: usize, per_layer: usize, max_layers: usize) -> usize {
    let mut depth = 1;
    while depth * per_layer < steps {
        depth += 1;
    }
    depth.min(max_layers).max(1)
}

pub fn lstm_stack(xs: &Matrix, layers: &[OracleLayer], depth: usize) -> Matrix {
    let mut cur = xs.clone();
    for layer in &layers[..depth] {
        cur = lstm_layer(&cur, layer);
    }
    cur
}

/// Returns (pooled, weights).
pub fn attention(hidden: &Matrix, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut scores = Vec::new();
    for row in hidden {
        let mut s = 0.0;
        for j in 0..w.len() {
            s += row[j] * w[j];
        }
        scores.push(s);
    }
    let mut m = f64::NEG_INFINITY;
    for &s in &scores {
        if s > m {
            m = s;
        }
    }
    let mut total = 0.0;
    let mut weights = Vec::new();
    for &s in &scores {
        let e = (s - m).exp();
        weights.push(e);
        total += e;
    }
    for a in weights.iter_mut() {
        *a /= total;
    }
    let mut pooled = vec![0.0; w.len()];
    for (t, row) in hidden.iter().enumerate() {
        for j in 0..w.len() {
            pooled[j] += weights[t] * row[j];
        }
    }
    (pooled, weights)
}

pub struct OracleNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

/// `pooled · W` (W is hidden × out), then per-unit normalisation.
pub fn output(pooled: &[f64], w: &Matrix, norm: &OracleNorm) -> Vec<f64> {
    let k = w[0].len();
    let mut y = vec![0.0; k];
    for c in 0..k {
        let mut acc = 0.0;
        for (j, p) in pooled.iter().enumerate() {
            acc += p * w[j][c];
        }
        y[c] = (acc - norm.mean[c]) / (norm.var[c] + norm.eps).sqrt() * norm.gamma[c] + norm.beta[c];
    }
    y
}

/// `-ln(softmax(logits)[target])` evaluated as max-shifted sum of exps.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in logits {
        if x > m {
            m = x;
        }
    }
    let mut s = 0.0;
    for &x in logits {
        s += (x - m).exp();
    }
    -((logits[target] - m) - s.ln())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Pairwise AUC: P(score_pos > score_neg) + 0.5·P(equal).
pub fn mann_whitney_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if !positives[i] {
            continue;
        }
        for j in 0..scores.len() {
            if positives[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Per-class F1 by direct counting, and the macro over target classes.
pub fn f1_by_counting(preds: &[usize], targets: &[usize], n_classes: usize) -> (Vec<f64>, f64) {
    let mut per = Vec::new();
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..n_classes {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for i in 0..preds.len() {
            match (preds[i] == c, targets[i] == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let den = 2 * tp + fp + fn_;
        let f1 = if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 };
        per.push(f1);
        if tp + fn_ > 0 {
            sum += f1;
            present += 1;
        }
    }
    let macro_f1 = if present == 0 { 0.0 } else { sum / present as f64 };
    (per, macro_f1)
}

/// Two-pass mean and population deviation.
pub fn mean_dev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut s = 0.0;
    for v in values {
        s += v;
    }
    let mean = s / n;
    let mut q = 0.0;
    for v in values {
        q += (v - mean) * (v - mean);
    }
    (mean, (q / n).sqrt())
}

/// Cosine distance with the zero-vector conventions.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 && nb == 0.0 {
        return 0.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

/// Replays the keyframe rule, returning selected positions.
pub fn replay_keyframes(sigs: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::new();
    for i in 0..sigs.len() {
        match picked.last() {
            None => picked.push(i),
            Some(&a) => {
                if cosine_distance(&sigs[a], &sigs[i]) > threshold {
                    picked.push(i);
                }
            }
        }
    }
    picked
}

/// Breadth-first flood fill from every unvisited foreground pixel in raster
/// order; keeps the first strictly largest component. Returns
/// (x0, y0, x1, y1, area).
pub fn largest_component(width: usize, height: usize, fg: &[bool]) -> Option<(usize, usize, usize, usize, usize)> {
    let mut seen = vec![false; fg.len()];
    let mut best: Option<(usize, usize, usize, usize, usize)> = None;
    for y in 0..height {
        for x in 0..width {
            if !fg[y * width + x] || seen[y * width + x] {
                continue;
            }
            let mut queue = std::collections::VecDeque::new();
            queue.push_back((x, y));
            seen[y * width + x] = true;
            let (mut x0, mut y0, mut x1, mut y1, mut area) = (x, y, x, y, 0);
            while let Some((cx, cy)) = queue.pop_front() {
                area += 1;
                x0 = x0.min(cx);
                x1 = x1.max(cx);
                y0 = y0.min(cy);
                y1 = y1.max(cy);
                let mut nbrs = Vec::new();
                if cx > 0 {
                    nbrs.push((cx - 1, cy));
                }
                if cx + 1 < width {
                    nbrs.push((cx + 1, cy));
                }
                if cy > 0 {
                    nbrs.push((cx, cy - 1));
                }
                if cy + 1 < height {
                    nbrs.push((cx, cy + 1));
                }
                for (nx, ny) in nbrs {
                    let k = ny * width + nx;
                    if fg[k] && !seen[k] {
                        seen[k] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            if best.is_none_or(|b| area > b.4) {
                best = Some((x0, y0, x1, y1, area));
            }
        }
    }
    best
}

/// Position-by-position replay of the run smoothing rule on a working copy.
pub fn smooth(seq: &[usize], k: usize) -> Vec<usize> {
    let mut w = seq.to_vec();
    let n = w.len();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && w[j] == w[i] {
            j += 1;
        }
        if i > 0 && j < n && j - i <= k && w[i - 1] == w[j] {
            let fill = w[i - 1];
            for v in &mut w[i..j] {
                *v = fill;
            }
        }
        i = j;
    }
    w
}

/// Label at `t` by scanning every half-open segment.
pub fn linear_lookup<L: Copy>(segments: &[(f64, f64, L)], t: f64) -> Option<L> {
    let mut hit = None;
    for &(s, e, l) in segments {
        if s <= t && t < e {
            hit = Some(l);
        }
    }
    hit
}

pub mod convert;
pub mod index;
