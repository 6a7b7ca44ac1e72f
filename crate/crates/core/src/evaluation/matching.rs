use crate::dataio::NoteSequence;

use super::Tolerance;

/// Guards tolerance comparisons against representation error in
/// differences of seconds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Onset,
    OnsetOffset,
}

/// Maximum-cardinality bipartite matching by augmenting paths. `adj[i]`
/// lists the right-hand vertices admissible for left vertex `i`. Returns
/// `(left, right)` pairs.
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    for left in 0..adj.len() {
        let mut seen = vec![false; n_right];
        augment(left, adj, &mut owner, &mut seen);
    }
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(r, l)| l.map(|l| (l, r)))
        .collect();
    pairs.sort_unstable();
    pairs
}

fn augment(left: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &r in &adj[left] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        if owner[r].is_none_or(|other| augment(other, adj, owner, seen)) {
            owner[r] = Some(left);
            return true;
        }
    }
    false
}

/// Optimal one-to-one matching of predicted to reference notes;
/// `(pred, truth)` index pairs.
pub fn match_notes(pred: &NoteSequence, truth: &NoteSequence, tol: &Tolerance, mode: MatchMode) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = pred
        .notes
        .iter()
        .map(|p| {
            truth
                .notes
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    if p.pitch != t.pitch || (p.onset - t.onset).abs() > tol.onset + TIME_EPS {
                        return false;
                    }
                    match mode {
                        MatchMode::Onset => true,
                        MatchMode::OnsetOffset => {
                            let limit = tol.offset_abs.max(tol.offset_ratio * t.duration());
                            (p.offset - t.offset).abs() <= limit + TIME_EPS
                        }
                    }
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    max_matching(&adj, truth.len())
}
