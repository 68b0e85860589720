//! Greedy two-phase chunk reorganization.
//!
//! Phase 1 keeps partition 0's chunk order and, for every later partition,
//! walks the batch positions in order, giving each position the remaining
//! chunk with the largest overlap with that batch's running union. Phase 2
//! keeps batch 0 first and repeatedly appends the remaining batch whose
//! union overlaps most with the batch placed last. Ties go to the smallest
//! id, so the result is deterministic.

use serde::{Deserialize, Serialize};

use crate::sets;

/// `order[i][j]`: original chunk index of partition `i` run at batch `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub order: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn identity(m: usize, n: usize) -> Self {
        Self {
            order: vec![(0..n).collect(); m],
        }
    }

    pub fn m(&self) -> usize {
        self.order.len()
    }

    pub fn n(&self) -> usize {
        self.order.first().map_or(0, Vec::len)
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().all(|row| row.iter().enumerate().all(|(j, &c)| j == c))
    }

    /// Applies the schedule to a grid indexed `[partition][original chunk]`.
    pub fn apply<T: Clone>(&self, grid: &[Vec<T>]) -> Vec<Vec<T>> {
        self.order
            .iter()
            .zip(grid)
            .map(|(row, src)| row.iter().map(|&c| src[c].clone()).collect())
            .collect()
    }

    /// True when every row is a permutation of `0..n`.
    pub fn is_valid(&self) -> bool {
        let n = self.n();
        self.order.iter().all(|row| {
            let mut seen = vec![false; n];
            row.len() == n
                && row.iter().all(|&c| c < n && !std::mem::replace(&mut seen[c], true))
        })
    }
}

/// How phase 2 reassigns rows once a batch permutation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Phase2Mode {
    /// Move complete batches (all rows).
    #[default]
    WholeBatch,
    /// Move only rows `1..m`; row 0 keeps its phase-1 order.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reorganization {
    pub schedule: Schedule,
    /// Phase-1 grid: `phase1[i][j]` is the chunk given to batch `j`.
    pub phase1: Vec<Vec<usize>>,
    /// Phase-1 batch unions, indexed by phase-1 batch id.
    pub phase1_unions: Vec<Vec<usize>>,
    /// Phase-2 batch order (phase-1 batch ids).
    pub batch_order: Vec<usize>,
}

/// First index with the largest score; `None` on an empty candidate list.
fn argmax_first(candidates: &[usize], score: impl Fn(usize) -> usize) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for &c in candidates {
        let s = score(c);
        if best.is_none_or(|(bs, _)| s > bs) {
            best = Some((s, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Reorganizes chunks given neighbor sets in original order `[i][chunk]`.
pub fn reorganize(nbrs: &[Vec<Vec<usize>>], mode: Phase2Mode) -> Reorganization {
    let m = nbrs.len();
    let n = nbrs.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Reorganization {
            schedule: Schedule::identity(m, n),
            phase1: vec![Vec::new(); m],
            phase1_unions: Vec::new(),
            batch_order: (0..n).collect(),
        };
    }

    let mut phase1 = vec![vec![0usize; n]; m];
    phase1[0] = (0..n).collect();
    let mut unions: Vec<Vec<usize>> = nbrs[0].clone();
    for i in 1..m {
        // candidates kept ascending so ties resolve to the smallest id
        let mut remaining: Vec<usize> = (0..n).collect();
        for j in 0..n {
            let k = argmax_first(&remaining, |k| sets::intersection_len(&nbrs[i][k], &unions[j]))
                .expect("one chunk left per batch");
            phase1[i][j] = k;
            unions[j] = sets::union(&unions[j], &nbrs[i][k]);
            remaining.retain(|&c| c != k);
        }
    }

    let mut batch_order = vec![0usize];
    let mut remaining: Vec<usize> = (1..n).collect();
    while !remaining.is_empty() {
        let prev = *batch_order.last().unwrap();
        let k = argmax_first(&remaining, |k| sets::intersection_len(&unions[k], &unions[prev]))
            .expect("non-empty");
        batch_order.push(k);
        remaining.retain(|&c| c != k);
    }

    let order = (0..m)
        .map(|i| {
            if i == 0 && mode == Phase2Mode::Literal {
                phase1[0].clone()
            } else {
                batch_order.iter().map(|&b| phase1[i][b]).collect()
            }
        })
        .collect();

    Reorganization {
        schedule: Schedule { order },
        phase1,
        phase1_unions: unions,
        batch_order,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_batch_is_identity() {
        let nbrs = vec![vec![vec![1, 2]], vec![vec![3]], vec![vec![]]];
        let r = reorganize(&nbrs, Phase2Mode::WholeBatch);
        assert!(r.schedule.is_identity());
    }

    #[test]
    fn crafted_phase_one_matching() {
        let nbrs = vec![
            vec![vec![0, 1, 2], vec![5, 6], vec![8, 9]],
            vec![vec![9], vec![0, 1], vec![5]],
        ];
        let r = reorganize(&nbrs, Phase2Mode::WholeBatch);
        assert_eq!(r.phase1[1], vec![1, 2, 0]);

        // every greedy step attains the maximum over its remaining options
        let mut best_total = 0;
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let total: usize = (0..3)
                .map(|j| sets::intersection_len(&nbrs[1][perm[j]], &nbrs[0][j]))
                .sum();
            best_total = best_total.max(total);
        }
        let greedy_total: usize = (0..3)
            .map(|j| sets::intersection_len(&nbrs[1][r.phase1[1][j]], &nbrs[0][j]))
            .sum();
        assert_eq!(greedy_total, best_total);
        assert!(r.schedule.is_valid());
    }

    #[test]
    fn phase_two_chains_overlaps() {
        // batch unions: {0,1}, {10,11}, {1,2}; batch 2 should follow batch 0
        let nbrs = vec![vec![vec![0, 1], vec![10, 11], vec![1, 2]]];
        let r = reorganize(&nbrs, Phase2Mode::WholeBatch);
        assert_eq!(r.batch_order, vec![0, 2, 1]);
        assert_eq!(r.schedule.order, vec![vec![0, 2, 1]]);

        let lit = reorganize(&nbrs, Phase2Mode::Literal);
        assert_eq!(lit.schedule.order, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn ties_pick_smallest() {
        let nbrs = vec![vec![vec![], vec![], vec![]], vec![vec![], vec![], vec![]]];
        let r = reorganize(&nbrs, Phase2Mode::WholeBatch);
        assert!(r.schedule.is_identity());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::identity(3, 4).is_valid());
        assert!(!Schedule { order: vec![vec![0, 0]] }.is_valid());
    }
}
