use serde::{Deserialize, Serialize};

use super::{Frame, FrameError};

/// Default side of the square downsampled grid.
pub const SIGNATURE_SIDE: usize = 32;

/// Downsampled, L2-normalised grayscale image. An all-black frame maps to
/// the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameSignature(Vec<f64>);

impl FrameSignature {
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `1 - cos(a, b)`. Two zero vectors are at distance 0; a zero vector is at
/// distance 1 from anything else.
pub fn cosine_distance(a: &FrameSignature, b: &FrameSignature) -> Result<f64, FrameError> {
    if a.len() != b.len() {
        return Err(FrameError::SignatureLength {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(if na == nb { 0.0 } else { 1.0 });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// Per output cell, the contributing source indices and their overlap.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = hi.min(s as f64 + 1.0) - lo.max(s as f64);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

pub fn frame_signature(frame: &Frame) -> FrameSignature {
    frame_signature_with(frame, SIGNATURE_SIDE)
}

/// Luma, area-averaged onto a `side`×`side` grid, flattened row-major and
/// L2-normalised.
pub fn frame_signature_with(frame: &Frame, side: usize) -> FrameSignature {
    assert!(side > 0, "signature side must be positive");
    let luma = frame.luma();
    let w = frame.width();
    let wx = area_weights(w, side);
    let wy = area_weights(frame.height(), side);

    let mut v = Vec::with_capacity(side * side);
    for row in &wy {
        for col in &wx {
            let mut acc = 0.0;
            for &(y, fy) in row {
                let line = &luma[y * w..(y + 1) * w];
                for &(x, fx) in col {
                    acc += fy * fx * line[x];
                }
            }
            v.push(acc);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    FrameSignature(v)
}

#[cfg(test)]
mod tests {
    use super::super::Channels;
    use super::*;

    #[test]
    fn uniform_gray_is_flat_unit_vector() {
        let f = Frame::filled(100, 75, Channels::Rgb, 128, 0.0).unwrap();
        let s = frame_signature(&f);
        assert_eq!(s.len(), 1024);
        assert!((s.norm() - 1.0).abs() < 1e-9);
        let first = s.as_slice()[0];
        assert!(s.as_slice().iter().all(|&x| (x - first).abs() < 1e-12));
    }

    #[test]
    fn black_is_zero_vector() {
        let f = Frame::filled(64, 64, Channels::Gray, 0, 0.0).unwrap();
        let s = frame_signature(&f);
        assert!(s.as_slice().iter().all(|&x| x == 0.0));
        assert_eq!(cosine_distance(&s, &s).unwrap(), 0.0);
        let g = frame_signature(&Frame::filled(64, 64, Channels::Gray, 9, 0.0).unwrap());
        assert_eq!(cosine_distance(&s, &g).unwrap(), 1.0);
    }

    #[test]
    fn identical_frames_zero_distance() {
        let px: Vec<u8> = (0..48 * 48).map(|i| (i * 31 % 251) as u8).collect();
        let a = Frame::new(48, 48, Channels::Gray, px.clone(), 0.0).unwrap();
        let b = Frame::new(48, 48, Channels::Gray, px, 1.0).unwrap();
        let d = cosine_distance(&frame_signature(&a), &frame_signature(&b)).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn exact_block_average_when_divisible() {
        // 64x64 -> 32x32 averages 2x2 blocks
        let px: Vec<u8> = (0..64 * 64).map(|i| ((i % 64) * 4 % 256) as u8).collect();
        let f = Frame::new(64, 64, Channels::Gray, px.clone(), 0.0).unwrap();
        let s = frame_signature(&f);
        let mut raw = Vec::new();
        for by in 0..32 {
            for bx in 0..32 {
                let mut acc = 0.0;
                for y in 0..2 {
                    for x in 0..2 {
                        acc += px[(by * 2 + y) * 64 + bx * 2 + x] as f64;
                    }
                }
                raw.push(acc / 4.0);
            }
        }
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in s.as_slice().iter().zip(&raw) {
            assert!((a - b / n).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        let a = FrameSignature::from_vec(vec![1.0]);
        let b = FrameSignature::from_vec(vec![1.0, 0.0]);
        assert!(matches!(cosine_distance(&a, &b), Err(FrameError::SignatureLength { .. })));
    }

    #[test]
    fn area_weights_sum_to_one() {
        for (src, dst) in [(100, 32), (7, 32), (32, 32), (1000, 3)] {
            for cell in area_weights(src, dst) {
                let s: f64 = cell.iter().map(|(_, w)| w).sum();
                assert!((s - 1.0).abs() < 1e-9, "{src}->{dst}: {s}");
            }
        }
    }
}
