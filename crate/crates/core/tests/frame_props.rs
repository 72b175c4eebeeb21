mod oracles;

use esv_core::frame::{
    cosine_distance, crop_surgical_view, cutout_window, frame_signature, largest_component, select_keyframes, Channels,
    Frame, FrameError, FrameSignature, CUTOUT_SECONDS, DEFAULT_KEYFRAME_THRESHOLD,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random 8×8-block binary pattern: one "scene".
fn scene(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<u8> {
    let bw = w.div_ceil(8);
    let blocks: Vec<bool> = (0..bw * h.div_ceil(8)).map(|_| rng.random_bool(0.5)).collect();
    let mut px = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            px[y * w + x] = if blocks[(y / 8) * bw + x / 8] { 230 } else { 20 };
        }
    }
    px
}

fn jitter(rng: &mut ChaCha8Rng, base: &[u8]) -> Vec<u8> {
    base.iter().map(|&v| v.saturating_add_signed(rng.random_range(-3..=3))).collect()
}

/// A clip of `frames` frames with hard cuts at the given positions.
fn scripted_clip(seed: u64, frames: usize, cuts: &[usize]) -> Vec<(f64, FrameSignature)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (64, 48);
    let mut base = scene(&mut rng, w, h);
    (0..frames)
        .map(|i| {
            if cuts.contains(&i) {
                base = scene(&mut rng, w, h);
            }
            let f = Frame::new(w, h, Channels::Gray, jitter(&mut rng, &base), i as f64 / 25.0).unwrap();
            (f.timestamp_s, frame_signature(&f))
        })
        .collect()
}

fn indices(stream: Vec<(f64, FrameSignature)>, threshold: f64) -> Vec<u64> {
    select_keyframes("s", "c", stream, threshold)
        .unwrap()
        .into_iter()
        .map(|k| k.frame_index)
        .collect()
}

#[test]
fn scripted_scene_changes_give_one_keyframe_per_scene() {
    for seed in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rng.random_range(0..6);
        let mut cuts: Vec<usize> = (0..s).map(|_| rng.random_range(1..120)).collect();
        cuts.sort();
        cuts.dedup();
        let picked = indices(scripted_clip(seed, 120, &cuts), DEFAULT_KEYFRAME_THRESHOLD);
        let mut want = vec![0u64];
        want.extend(cuts.iter().map(|&c| c as u64));
        assert_eq!(picked, want, "seed {seed}");
    }
}

#[test]
fn scene_change_at_forty() {
    assert_eq!(indices(scripted_clip(5, 100, &[40]), 0.05), vec![0, 40]);
    assert_eq!(indices(scripted_clip(6, 100, &[]), 0.05), vec![0]);
}

#[test]
fn higher_threshold_selects_subset_on_scripted_clips() {
    for seed in 0..8 {
        let stream = scripted_clip(seed, 90, &[10, 30, 31, 60]);
        let low = indices(stream.clone(), 0.01);
        for t in [0.05, 0.2, 0.3] {
            let high = indices(stream.clone(), t);
            assert!(high.iter().all(|i| low.contains(i)), "seed {seed}, threshold {t}");
        }
    }
}

#[test]
fn empty_stream_rejected() {
    assert!(matches!(
        select_keyframes("s", "c", Vec::new(), 0.05),
        Err(FrameError::EmptyStream)
    ));
}

#[test]
fn inverted_binary_pattern_distance_matches_oracle() {
    let (w, h) = (64, 64);
    let px: Vec<u8> = (0..w * h).map(|i| if (i % w / 8 + i / w / 8) % 2 == 0 { 255 } else { 0 }).collect();
    let inv: Vec<u8> = px.iter().map(|v| 255 - v).collect();
    let a = frame_signature(&Frame::new(w, h, Channels::Gray, px, 0.0).unwrap());
    let b = frame_signature(&Frame::new(w, h, Channels::Gray, inv, 0.0).unwrap());
    let got = cosine_distance(&a, &b).unwrap();
    assert!((got - oracles::cosine_distance(a.as_slice(), b.as_slice())).abs() < 1e-12);
    assert!((a.norm() - 1.0).abs() < 1e-9 && (b.norm() - 1.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn keyframes_replay_oracle(seed in any::<u64>(), n in 1usize..200, dim in 2usize..16, threshold in 0.01f64..0.5) {
        // random walk with occasional jumps, sometimes hitting zero vectors
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cur: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut sigs = Vec::with_capacity(n);
        for _ in 0..n {
            if rng.random_bool(0.05) {
                cur = (0..dim).map(|_| rng.random::<f64>()).collect();
            } else if rng.random_bool(0.02) {
                cur = vec![0.0; dim];
            } else {
                for v in &mut cur {
                    *v = (*v + rng.random_range(-0.05..0.05)).max(0.0);
                }
            }
            sigs.push(cur.clone());
        }
        let stream: Vec<(f64, FrameSignature)> =
            sigs.iter().enumerate().map(|(i, s)| (i as f64 * 0.04, FrameSignature::from_vec(s.clone()))).collect();
        let got: Vec<usize> = indices(stream, threshold).into_iter().map(|i| i as usize).collect();
        prop_assert_eq!(got, oracles::replay_keyframes(&sigs, threshold));
    }

    #[test]
    fn largest_component_matches_flood_fill(seed in any::<u64>(), w in 1usize..=64, h in 1usize..=64, density in 0.05f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fg: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let got = largest_component(w, h, &fg).map(|c| (c.x0, c.y0, c.x1, c.y1, c.area));
        prop_assert_eq!(got, oracles::largest_component(w, h, &fg));
        if let Some(c) = largest_component(w, h, &fg) {
            prop_assert_eq!(c.mask.iter().filter(|&&m| m).count(), c.area);
        }
    }

    #[test]
    fn crop_keeps_dimensions(seed in any::<u64>(), w in 2usize..80, h in 2usize..80, rgb in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = if rgb { Channels::Rgb } else { Channels::Gray };
        let px: Vec<u8> = (0..w * h * channels.count()).map(|_| if rng.random_bool(0.3) { rng.random() } else { 0 }).collect();
        let frame = Frame::new(w, h, channels, px, 1.5).unwrap();
        match crop_surgical_view(&frame) {
            Ok(out) => {
                prop_assert_eq!((out.width(), out.height(), out.channels()), (w, h, channels));
                prop_assert_eq!(out.timestamp_s, 1.5);
            }
            Err(FrameError::NoForeground) => prop_assert!(frame.luma().iter().all(|&l| l <= 10.0)),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn cutout_law(ts in 0.0f64..7200.0) {
        let (start, dur) = cutout_window(ts);
        prop_assert_eq!(start, (ts - 30.0).max(0.0));
        prop_assert!(start >= 0.0 && dur <= CUTOUT_SECONDS);
        if ts >= 30.0 {
            prop_assert!((start + dur - ts).abs() <= 1e-9);
        }
    }
}
