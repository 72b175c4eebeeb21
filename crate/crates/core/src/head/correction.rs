use crate::taxonomy::{Level, TaxonomyRegistry, Triplet};

use super::HeadError;

/// Smoothed labels plus the number of hierarchy repairs applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub labels: Vec<Triplet>,
    pub repairs: usize,
}

/// Replaces every maximal run of length ≤ `k` whose neighbouring runs carry
/// the same label with that label. One left-to-right pass; a replaced run
/// merges into its left neighbour before the next run is examined.
pub fn smooth_runs(seq: &[usize], k: usize) -> Vec<usize> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &x in seq {
        match runs.last_mut() {
            Some((label, len)) if *label == x => *len += 1,
            _ => runs.push((x, 1)),
        }
    }

    let mut out: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for (i, &(label, len)) in runs.iter().enumerate() {
        let flanked = match (out.last(), runs.get(i + 1)) {
            (Some(&(left, _)), Some(&(right, _))) => left == right,
            _ => false,
        };
        let label = if flanked && len <= k { out.last().expect("left run").0 } else { label };
        match out.last_mut() {
            Some((prev, n)) if *prev == label => *n += len,
            _ => out.push((label, len)),
        }
    }
    out.into_iter().flat_map(|(label, len)| std::iter::repeat_n(label, len)).collect()
}

/// Repeats [`smooth_runs`] until the sequence stops changing. Every pass
/// that changes something removes at least two runs, so this terminates.
fn smooth_until_stable(mut seq: Vec<usize>, k: usize) -> Vec<usize> {
    loop {
        let next = smooth_runs(&seq, k);
        if next == seq {
            return seq;
        }
        seq = next;
    }
}

/// Removes sporadic short label flips, each taxonomy level independently,
/// then recombines the levels into valid triplets.
///
/// Each level is smoothed until stable rather than once, and the task level
/// is smoothed again after hierarchy repair. Both are needed for the result
/// to be a fixed point (a second call changes nothing). The second task pass
/// never breaks the hierarchy again: a replaced task run is flanked by one
/// task, hence one phase, and the phase level has no short run inside it.
pub fn correct_predictions(labels: &[Triplet], k: usize, registry: &TaxonomyRegistry) -> Result<Correction, HeadError> {
    if k < 1 {
        return Err(HeadError::InvalidWindow);
    }
    let level = |l: Level| smooth_until_stable(labels.iter().map(|t| t.ordinal(l)).collect(), k);
    let (phases, tasks, actions) = (level(Level::Phase), level(Level::Task), level(Level::Action));
    let mut repairs = 0;
    let mut repaired_tasks = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let (t, repaired) = registry.repaired_triplet(phases[i], tasks[i], actions[i])?;
        repairs += repaired as usize;
        repaired_tasks.push(t.ordinal(Level::Task));
    }
    let tasks = if repairs > 0 { smooth_until_stable(repaired_tasks, k) } else { repaired_tasks };
    let out = (0..labels.len())
        .map(|i| registry.triplet(phases[i], tasks[i], actions[i]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Correction { labels: out, repairs })
}
