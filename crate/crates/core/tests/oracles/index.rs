//! Brute-force search over an index: cut each surgery at every segment
//! boundary and window edge, test each elementary interval at its midpoint,
//! and join consecutive passing intervals of the same target segment.

use esv_core::index::{IndexSegment, ResolvedQuery, SurgeryIndex, TimelineIndex};
use esv_core::Level;

fn segment_at(segs: &[IndexSegment], t: f64) -> Option<usize> {
    segs.iter().position(|s| s.start_s <= t && t < s.end_s)
}

fn search_surgery(s: &SurgeryIndex, q: &ResolvedQuery, out: &mut Vec<IndexSegment>) {
    let mut cuts: Vec<f64> = Vec::new();
    for level in Level::ALL {
        for seg in s.level(level) {
            cuts.push(seg.start_s);
            cuts.push(seg.end_s);
        }
    }
    for w in [q.from, q.to] {
        if w.is_finite() && s.start_s < w && w < s.end_s {
            cuts.push(w);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let finest = Level::ALL.into_iter().rev().find(|l| q.labels[l.index()].is_some());
    let targets: Vec<Level> = match finest {
        Some(l) => vec![l],
        None => Level::ALL.to_vec(),
    };
    for target in targets {
        let segs = s.level(target);
        let mut open: Option<(usize, f64, f64)> = None;
        let flush = |open: &mut Option<(usize, f64, f64)>, out: &mut Vec<IndexSegment>| {
            if let Some((i, a, b)) = open.take() {
                if b - a >= q.min_duration {
                    out.push(IndexSegment { start_s: a, end_s: b, ..segs[i].clone() });
                }
            }
        };
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let inside_window = a >= q.from && b <= q.to;
            let ok = inside_window
                && Level::ALL.into_iter().all(|l| match q.labels[l.index()] {
                    None => true,
                    Some(want) => segment_at(s.level(l), mid).is_some_and(|i| s.level(l)[i].label == want),
                });
            let here = segment_at(segs, mid);
            match (ok, here, open) {
                (true, Some(i), Some((j, start, end))) if i == j && end == a => open = Some((j, start, b)),
                (true, Some(i), _) => {
                    flush(&mut open, out);
                    open = Some((i, a, b));
                }
                _ => flush(&mut open, out),
            }
        }
        flush(&mut open, out);
    }
}

pub fn search(index: &TimelineIndex, surgery: Option<&str>, q: &ResolvedQuery) -> Vec<IndexSegment> {
    let mut out = Vec::new();
    for s in &index.surgeries {
        if surgery.is_none_or(|id| id == s.surgery_id) {
            search_surgery(s, q, &mut out);
        }
    }
    out.sort_by(|x, y| {
        x.surgery_id
            .cmp(&y.surgery_id)
            .then(x.start_s.total_cmp(&y.start_s))
            .then(x.level.cmp(&y.level))
    });
    out
}

/// Sweep check: every level of every surgery tiles `[start_s, end_s)`
/// with positive-length, gap-free, overlap-free segments.
pub fn partitions(index: &TimelineIndex) -> Result<(), String> {
    for s in &index.surgeries {
        for level in Level::ALL {
            let segs = s.level(level);
            let mut cursor = s.start_s;
            for seg in segs {
                if seg.start_s != cursor {
                    return Err(format!("{} {level}: gap or overlap at {cursor}", s.surgery_id));
                }
                if !(seg.start_s < seg.end_s) {
                    return Err(format!("{} {level}: empty segment at {cursor}", s.surgery_id));
                }
                cursor = seg.end_s;
            }
            if cursor != s.end_s {
                return Err(format!("{} {level}: ends at {cursor}, extent {}", s.surgery_id, s.end_s));
            }
        }
    }
    Ok(())
}

/// Label stream for a few surgeries: irregular sampling times, runs of
/// repeated triplets, surgeries interleaved.
pub fn random_stream(seed: u64, surgeries: usize) -> Vec<(String, f64, esv_core::Triplet)> {
    use rand::{Rng, SeedableRng};
    let all = esv_core::TaxonomyRegistry::builtin().all_triplets();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut per: Vec<Vec<(String, f64, esv_core::Triplet)>> = Vec::new();
    for s in 0..surgeries {
        let id = format!("surg-{:02}", rng.random_range(0..100) * 100 + s);
        let n = rng.random_range(1..80);
        let mut t = rng.random_range(0.0..5.0);
        let mut label = all[rng.random_range(0..all.len())];
        let mut v = Vec::new();
        for _ in 0..n {
            if rng.random_bool(0.25) {
                label = all[rng.random_range(0..all.len())];
            }
            v.push((id.clone(), t, label));
            t += rng.random_range(0.2..6.0);
        }
        per.push(v);
    }
    // round-robin interleave
    let mut out = Vec::new();
    let mut cursors = vec![0; per.len()];
    while out.len() < per.iter().map(Vec::len).sum::<usize>() {
        for (i, v) in per.iter().enumerate() {
            if cursors[i] < v.len() {
                out.push(v[cursors[i]].clone());
                cursors[i] += 1;
            }
        }
    }
    out
}
