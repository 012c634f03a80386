//! Exact k-nearest-neighbor search under squared Euclidean distance.

use std::cmp::Ordering;

use crate::error::{Result, TsneError};
use crate::par::*;
use crate::real::Real;
use crate::tensor_io::InputMatrix;

/// Queries handled by one work item; one scratch buffer is reused across them.
const QUERY_BLOCK: usize = 32;

/// `k` neighbors per point, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph<T> {
    pub k: usize,
    /// N×k row-major point ids.
    pub indices: Vec<u32>,
    /// N×k row-major squared distances, non-decreasing per row.
    pub sq_distances: Vec<T>,
}

impl<T: Real> NeighborGraph<T> {
    pub fn n_points(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[T] {
        &self.sq_distances[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Distance first, then lower id.
#[inline]
fn closer<T: Real>(a: &(T, u32), b: &(T, u32)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Brute-force search: every query scans all points and keeps the `k` smallest
/// via partial selection. Ties on distance go to the lower point id.
pub fn knn_exact<T: Real>(x: &InputMatrix<T>, k: usize) -> Result<NeighborGraph<T>> {
    let n = x.n_points();
    if k == 0 || k >= n {
        return Err(TsneError::Parameter(format!("k must be in [1, {}], got {k}", n - 1)));
    }
    if n > u32::MAX as usize {
        return Err(TsneError::Shape(format!("too many points ({n})")));
    }

    let mut indices = vec![0u32; n * k];
    let mut sq_distances = vec![T::zero(); n * k];

    indices
        .par_chunks_mut(QUERY_BLOCK * k)
        .zip(sq_distances.par_chunks_mut(QUERY_BLOCK * k))
        .enumerate()
        .for_each(|(block, (idx_out, dist_out))| {
            let mut scratch: Vec<(T, u32)> = Vec::with_capacity(n - 1);
            let first = block * QUERY_BLOCK;
            for (local, (idx_row, dist_row)) in idx_out.chunks_mut(k).zip(dist_out.chunks_mut(k)).enumerate() {
                let i = first + local;
                let xi = x.row(i);
                scratch.clear();
                scratch.extend((0..n).filter(|&j| j != i).map(|j| (sq_dist(xi, x.row(j)), j as u32)));
                if k < scratch.len() {
                    scratch.select_nth_unstable_by(k - 1, closer);
                }
                let best = &mut scratch[..k];
                best.sort_unstable_by(closer);
                for (slot, &(d, j)) in best.iter().enumerate() {
                    idx_row[slot] = j;
                    dist_row[slot] = d;
                }
            }
        });

    Ok(NeighborGraph {
        k,
        indices,
        sq_distances,
    })
}
