//! Exact enumeration of the `T` full codewords nearest to a vector.
//!
//! Each subspace contributes a list of its `K` codewords sorted by distance
//! to the matching slice of the query. A full codeword is a choice of one
//! position per list and its distance is the sum of the chosen entries, so
//! the nearest combinations can be produced best-first with a heap (the
//! multi-sequence algorithm) without scoring all `K^M` codes.
//!
//! Every combination is pushed exactly once, from its canonical parent: the
//! combination obtained by decrementing its last non-zero position. The
//! parent is never farther than the child and, on equal distance, has a
//! lexicographically smaller code, so pops come out in exact
//! `(distance, code)` order. Sums are taken in f64, where adding at most a
//! handful of f32 terms is exact in practice, so a strictly smaller entry
//! always yields a strictly smaller total.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{Codebook, PqCode};
use crate::error::{Error, Result};

/// A full codeword and its squared distance to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub code: PqCode,
    pub sq_distance: f64,
}

#[derive(Debug)]
struct Candidate {
    distance: f64,
    code: Vec<u16>,
    positions: Vec<u16>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.code.cmp(&other.code))
    }
}

/// The `count` full codewords nearest to `y`, ascending by squared distance,
/// ties in lexicographic code order.
///
/// Distances are the f64 sum over subspaces (in subspace order) of the f32
/// per-subspace squared distances of the ADC table.
pub fn enumerate_neighbor_codewords(cb: &Codebook, y: &[f32], count: usize) -> Result<Vec<Neighbor>> {
    let m = cb.num_subspaces();
    let k = cb.num_codewords();
    let total = (k as f64).powi(m as i32);
    if count == 0 || count as f64 > total {
        return Err(Error::InvalidParameter(format!(
            "neighbor count {count} outside [1, K^M = {total}]"
        )));
    }
    let table = cb.distance_table(y)?;

    // sorted[s][p] = (distance, codeword index) at position p of subspace s
    let sorted: Vec<Vec<(f32, u16)>> = (0..m)
        .map(|s| {
            let mut row: Vec<(f32, u16)> = table
                .row(s)
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, i as u16))
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row
        })
        .collect();

    let make = |positions: Vec<u16>| -> Candidate {
        let mut distance = 0.0f64;
        let mut code = Vec::with_capacity(m);
        for (s, &p) in positions.iter().enumerate() {
            let (d, idx) = sorted[s][p as usize];
            distance += d as f64;
            code.push(idx);
        }
        Candidate {
            distance,
            code,
            positions,
        }
    };

    let mut heap = BinaryHeap::new();
    heap.push(Reverse(make(vec![0; m])));
    let mut out = Vec::with_capacity(count);
    while let Some(Reverse(best)) = heap.pop() {
        let last_nonzero = best.positions.iter().rposition(|&p| p != 0).unwrap_or(0);
        for s in last_nonzero..m {
            let next = best.positions[s] as usize + 1;
            if next < k {
                let mut positions = best.positions.clone();
                positions[s] = next as u16;
                heap.push(Reverse(make(positions)));
            }
        }
        out.push(Neighbor {
            code: PqCode(best.code),
            sq_distance: best.distance,
        });
        if out.len() == count {
            break;
        }
    }
    Ok(out)
}
