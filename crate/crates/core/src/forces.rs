//! Gradient force terms.
//!
//! The gradient splits into an attractive part, a sum over the sparse
//! affinity rows, and a repulsive part over all pairs that is approximated
//! with the summarized quadtree. Both passes run independently per point and
//! write disjoint outputs, so results do not depend on the worker count.

use crate::affinity::SparseAffinity;
use crate::error::{Result, TsneError};
use crate::par::*;
use crate::points::Points;
use crate::quadtree::MortonQuadtree;
use crate::real::Real;

/// CSR entries to look ahead when prefetching neighbor coordinates.
pub const PREFETCH_DISTANCE: usize = 16;

/// Per-point force accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffers<T> {
    pub attr: Points<T>,
    /// Unnormalized repulsion, `sum_j k_ij^2 (y_i - y_j)`.
    pub rep: Points<T>,
    /// Per-point share of the normalization, `sum_j k_ij`.
    pub z_partial: Vec<T>,
    pub z: f64,
}

impl<T: Real> GradientBuffers<T> {
    pub fn new(n: usize) -> Self {
        GradientBuffers {
            attr: Points::zeros(n),
            rep: Points::zeros(n),
            z_partial: vec![T::zero(); n],
            z: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.z_partial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_partial.is_empty()
    }

    fn reduce_z(&mut self) {
        let mut z = 0.0f64;
        for &v in &self.z_partial {
            z += v.as_f64();
        }
        self.z = z;
    }
}

#[inline(always)]
fn prefetch<T>(ptr: *const T) {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch::<_MM_HINT_T0>(ptr as *const i8);
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = ptr;
}

/// `attr[i] = sum over row i of p_ij (1 + |y_i - y_j|^2)^-1 (y_i - y_j)`.
///
/// Each row is summed sequentially in CSR order; rows are spread over workers.
pub fn attractive<T: Real>(p: &SparseAffinity<T>, y: &Points<T>, out: &mut GradientBuffers<T>) -> Result<()> {
    let n = y.len();
    if p.n != n || out.len() != n {
        return Err(TsneError::Shape(format!(
            "affinity over {} points, embedding has {n}, buffers {}",
            p.n,
            out.len()
        )));
    }
    let [y0, y1] = &y.coords;
    let cols = &p.col_indices;
    let nnz = cols.len();
    let [a0, a1] = &mut out.attr.coords;
    a0.par_iter_mut()
        .zip(a1.par_iter_mut())
        .enumerate()
        .for_each(|(i, (f0, f1))| {
            let (xi, yi) = (y0[i], y1[i]);
            let (mut s0, mut s1) = (T::zero(), T::zero());
            for ind in p.row_offsets[i]..p.row_offsets[i + 1] {
                let ahead = ind + PREFETCH_DISTANCE;
                if ahead < nnz {
                    let j = cols[ahead] as usize;
                    prefetch(y0.as_ptr().wrapping_add(j));
                    prefetch(y1.as_ptr().wrapping_add(j));
                }
                let j = cols[ind] as usize;
                let d0 = xi - y0[j];
                let d1 = yi - y1[j];
                let pq = p.values[ind] / (T::one() + d0 * d0 + d1 * d1);
                s0 += pq * d0;
                s1 += pq * d1;
            }
            *f0 = s0;
            *f1 = s1;
        });
    Ok(())
}

/// Barnes-Hut repulsion. Each point walks the tree depth-first; a cell is
/// replaced by its summary when `r_cell^2 < theta^2 |y_i - com|^2` and the
/// cell does not contain the point itself. Leaves contribute their points
/// directly. Points are visited in Morton order so consecutive walks touch
/// the same nodes.
pub fn repulsive_bh<T: Real>(
    tree: &MortonQuadtree<T>,
    y: &Points<T>,
    theta: T,
    out: &mut GradientBuffers<T>,
) -> Result<()> {
    if !tree.summarized {
        return Err(TsneError::Contract("repulsion needs a summarized tree".into()));
    }
    if !(theta >= T::zero()) {
        return Err(TsneError::Parameter(format!("theta must be >= 0, got {theta}")));
    }
    let n = y.len();
    if tree.codes.len() != n || out.len() != n {
        return Err(TsneError::Shape(format!(
            "tree over {} points, embedding has {n}, buffers {}",
            tree.codes.len(),
            out.len()
        )));
    }
    let theta2 = theta * theta;
    let radii2: Vec<T> = tree.radii.iter().map(|&r| r * r).collect();
    let sorted = &tree.sorted_points;

    let per_point: Vec<([T; 2], T)> = (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(256),
            |stack: &mut Vec<(u32, u8)>, pos| {
                let pi = [sorted.coords[0][pos], sorted.coords[1][pos]];
                let mut f = [T::zero(); 2];
                let mut z = T::zero();
                stack.clear();
                stack.push((0, 0));
                while let Some((idx, depth)) = stack.pop() {
                    let node = &tree.nodes[idx as usize];
                    if node.is_leaf() {
                        for q in node.start as usize..node.end as usize {
                            if q == pos {
                                continue;
                            }
                            let d0 = pi[0] - sorted.coords[0][q];
                            let d1 = pi[1] - sorted.coords[1][q];
                            let k = T::one() / (T::one() + d0 * d0 + d1 * d1);
                            z += k;
                            let k2 = k * k;
                            f[0] += k2 * d0;
                            f[1] += k2 * d1;
                        }
                        continue;
                    }
                    let d0 = pi[0] - node.com[0];
                    let d1 = pi[1] - node.com[1];
                    let dist2 = d0 * d0 + d1 * d1;
                    let holds_self = (node.start as usize..node.end as usize).contains(&pos);
                    if !holds_self && radii2[depth as usize] < theta2 * dist2 {
                        let k = T::one() / (T::one() + dist2);
                        let mk = node.mass * k;
                        z += mk;
                        let mk2 = mk * k;
                        f[0] += mk2 * d0;
                        f[1] += mk2 * d1;
                    } else {
                        for c in node.children().rev() {
                            stack.push((c as u32, depth + 1));
                        }
                    }
                }
                (f, z)
            },
        )
        .collect();

    for (pos, &i) in tree.codes.order.iter().enumerate() {
        let i = i as usize;
        let (f, z) = per_point[pos];
        out.rep.coords[0][i] = f[0];
        out.rep.coords[1][i] = f[1];
        out.z_partial[i] = z;
    }
    out.reduce_z();
    Ok(())
}

/// All-pairs repulsion, O(N^2). Reference for [`repulsive_bh`].
pub fn repulsive_exact<T: Real>(y: &Points<T>, out: &mut GradientBuffers<T>) -> Result<()> {
    let n = y.len();
    if n < 2 {
        return Err(TsneError::Shape(format!("need at least 2 points, got {n}")));
    }
    if out.len() != n {
        return Err(TsneError::Shape(format!("buffers sized {} for {n} points", out.len())));
    }
    let [y0, y1] = &y.coords;
    let [r0, r1] = &mut out.rep.coords;
    r0.par_iter_mut()
        .zip(r1.par_iter_mut())
        .zip(out.z_partial.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((f0, f1), zi))| {
            let (mut s0, mut s1, mut z) = (T::zero(), T::zero(), T::zero());
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d0 = y0[i] - y0[j];
                let d1 = y1[i] - y1[j];
                let k = T::one() / (T::one() + d0 * d0 + d1 * d1);
                z += k;
                s0 += k * k * d0;
                s1 += k * k * d1;
            }
            *f0 = s0;
            *f1 = s1;
            *zi = z;
        });
    out.reduce_z();
    Ok(())
}
