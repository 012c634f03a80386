//! Input-space similarities: per-point bandwidth calibration against a target
//! perplexity, then symmetrization into a sparse CSR matrix.

use crate::error::{Result, TsneError};
use crate::knn::NeighborGraph;
use crate::par::*;
use crate::real::Real;

pub const DEFAULT_MAX_ITER: usize = 200;
/// Entropy tolerance, in bits.
pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityResult<T> {
    /// Precision of each Gaussian kernel, `1 / (2 sigma^2)`.
    pub betas: Vec<T>,
    /// N×k conditionals `p(j|i)`, aligned with the neighbor graph rows.
    pub conditional: Vec<T>,
    pub k: usize,
}

/// Conditional distribution of one row at a given beta, plus its entropy in
/// bits. `shifted` holds squared distances minus the row minimum.
fn row_distribution<T: Real>(shifted: &[T], beta: T, out: &mut [T]) -> T {
    let mut sum = T::zero();
    let mut weighted = T::zero();
    for (o, &d) in out.iter_mut().zip(shifted) {
        let w = (-beta * d).exp();
        *o = w;
        sum += w;
        weighted += w * d;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    (sum.ln() + beta * weighted / sum) / T::lit(std::f64::consts::LN_2)
}

/// Bisection over beta for one row. Returns the beta whose distribution was
/// left in `out`.
fn calibrate_row<T: Real>(dist: &[T], target_bits: T, max_iter: usize, tol: T, out: &mut [T]) -> T {
    let k = dist.len();
    let d_min = dist.iter().copied().fold(T::infinity(), T::min);
    let shifted: Vec<T> = dist.iter().map(|&d| d - d_min).collect();

    // All neighbors equidistant (e.g. duplicate points): every beta gives the
    // uniform distribution.
    if shifted.iter().all(|&d| d == T::zero()) {
        let u = T::one() / T::lit(k as f64);
        out.iter_mut().for_each(|o| *o = u);
        return T::one();
    }

    let two = T::lit(2.0);
    let mut beta = T::one();
    let mut lo = T::zero();
    let mut hi = T::infinity();
    for it in 0..max_iter.max(1) {
        let h = row_distribution(&shifted, beta, out);
        if (h - target_bits).abs() <= tol || it + 1 == max_iter.max(1) {
            break;
        }
        if h > target_bits {
            lo = beta;
            beta = if hi.is_infinite() { beta * two } else { (lo + hi) / two };
        } else {
            hi = beta;
            beta = (lo + hi) / two;
        }
    }
    beta
}

/// Find, independently for each point, the bandwidth whose conditional
/// distribution over its neighbors has perplexity `perplexity`.
pub fn calibrate_perplexity<T: Real>(
    g: &NeighborGraph<T>,
    perplexity: f64,
    max_iter: usize,
    tol: f64,
) -> Result<PerplexityResult<T>> {
    let k = g.k;
    if !(perplexity > 1.0) {
        return Err(TsneError::Parameter(format!(
            "perplexity must satisfy u > 1, got {perplexity}"
        )));
    }
    if perplexity > k as f64 {
        return Err(TsneError::Parameter(format!(
            "perplexity exceeds neighborhood size ({perplexity} > {k})"
        )));
    }
    if !(tol > 0.0) {
        return Err(TsneError::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let n = g.n_points();
    let target = T::lit(perplexity.log2());
    let tol = T::lit(tol);
    let mut betas = vec![T::zero(); n];
    let mut conditional = vec![T::zero(); n * k];

    conditional
        .par_chunks_mut(k)
        .zip(betas.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, beta))| {
            *beta = calibrate_row(g.distances(i), target, max_iter, tol, row);
        });

    Ok(PerplexityResult { betas, conditional, k })
}

/// Symmetric joint similarities `p_ij` in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity<T> {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<u32>,
    pub values: Vec<T>,
    /// Multiplier currently folded into `values`.
    pub exaggeration: T,
}

impl<T: Real> SparseAffinity<T> {
    /// Wrap raw CSR arrays, checking the structural invariants that the
    /// force kernels rely on (offsets, column range, no diagonal).
    pub fn from_csr(n: usize, row_offsets: Vec<usize>, col_indices: Vec<u32>, values: Vec<T>) -> Result<Self> {
        if row_offsets.len() != n + 1 || row_offsets[0] != 0 {
            return Err(TsneError::Shape(
                "row_offsets must have N+1 entries starting at 0".into(),
            ));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(TsneError::Shape("row_offsets must be non-decreasing".into()));
        }
        let nnz = row_offsets[n];
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(TsneError::Shape(format!(
                "nnz {nnz} disagrees with {} columns / {} values",
                col_indices.len(),
                values.len()
            )));
        }
        for i in 0..n {
            for &j in &col_indices[row_offsets[i]..row_offsets[i + 1]] {
                if j as usize >= n || j as usize == i {
                    return Err(TsneError::Shape(format!("bad column {j} in row {i}")));
                }
            }
        }
        Ok(SparseAffinity {
            n,
            row_offsets,
            col_indices,
            values,
            exaggeration: T::one(),
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline(always)]
    pub fn row(&self, i: usize) -> (&[u32], &[T]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    /// Sum of stored values, accumulated in f64.
    pub fn value_sum(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum()
    }

    /// Rescale values so they sum to `factor` (with `factor = 1` restoring the
    /// plain joint distribution).
    pub fn set_exaggeration(&mut self, factor: T) -> Result<()> {
        if !(factor > T::zero()) || !factor.is_finite() {
            return Err(TsneError::Parameter(format!(
                "exaggeration must be positive, got {factor}"
            )));
        }
        if factor == self.exaggeration {
            return Ok(());
        }
        let current = self.exaggeration;
        if current == T::one() {
            self.values.par_iter_mut().for_each(|v| *v *= factor);
        } else if factor == T::one() {
            self.values.par_iter_mut().for_each(|v| *v /= current);
        } else {
            self.values.par_iter_mut().for_each(|v| *v = *v / current * factor);
        }
        self.exaggeration = factor;
        Ok(())
    }

    pub fn with_exaggeration(mut self, factor: T) -> Result<Self> {
        self.set_exaggeration(factor)?;
        Ok(self)
    }
}

/// Walk the union of a row's forward (`p(j|i)`) and reverse (`p(i|j)`) edges
/// in column order; a missing direction contributes zero.
fn merge_row<T: Real>(fwd: &[(u32, T)], rev: &[(u32, T)], mut emit: impl FnMut(u32, T, T)) {
    let (mut a, mut b) = (0, 0);
    while a < fwd.len() || b < rev.len() {
        let ca = fwd.get(a).map_or(u32::MAX, |e| e.0);
        let cb = rev.get(b).map_or(u32::MAX, |e| e.0);
        if ca == cb {
            emit(ca, fwd[a].1, rev[b].1);
            a += 1;
            b += 1;
        } else if ca < cb {
            emit(ca, fwd[a].1, T::zero());
            a += 1;
        } else {
            emit(cb, T::zero(), rev[b].1);
            b += 1;
        }
    }
}

/// Build `p_ij = (p(j|i) + p(i|j)) / 2N` over the symmetric closure of the
/// neighbor graph. Columns within a row are ascending.
pub fn symmetrize<T: Real>(pr: &PerplexityResult<T>, g: &NeighborGraph<T>) -> Result<SparseAffinity<T>> {
    let n = g.n_points();
    let k = g.k;
    if pr.k != k || pr.conditional.len() != n * k || pr.betas.len() != n {
        return Err(TsneError::Shape(format!(
            "perplexity result ({} x {}) does not match neighbor graph ({n} x {k})",
            pr.betas.len(),
            pr.k
        )));
    }

    // Forward edges i -> j sorted by column.
    let mut forward: Vec<(u32, T)> = vec![(0, T::zero()); n * k];
    forward.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let cond = &pr.conditional[i * k..(i + 1) * k];
        for (slot, (&j, &p)) in row.iter_mut().zip(g.neighbors(i).iter().zip(cond)) {
            *slot = (j, p);
        }
        row.sort_unstable_by_key(|e| e.0);
    });

    // Reverse edges: for each j, the sources i with j in N_i, ascending by i.
    let mut rev_offsets = vec![0usize; n + 1];
    for &j in &g.indices {
        rev_offsets[j as usize + 1] += 1;
    }
    for i in 0..n {
        rev_offsets[i + 1] += rev_offsets[i];
    }
    let mut cursor = rev_offsets.clone();
    let mut reverse: Vec<(u32, T)> = vec![(0, T::zero()); n * k];
    for i in 0..n {
        for &(j, p) in &forward[i * k..(i + 1) * k] {
            let slot = &mut cursor[j as usize];
            reverse[*slot] = (i as u32, p);
            *slot += 1;
        }
    }

    let edges = |i: usize| {
        (
            &forward[i * k..(i + 1) * k],
            &reverse[rev_offsets[i]..rev_offsets[i + 1]],
        )
    };

    // Pass 1: row sizes.
    let counts: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (fwd, rev) = edges(i);
            let mut c = 0;
            merge_row(fwd, rev, |_, _, _| c += 1);
            c
        })
        .collect();
    let mut row_offsets = vec![0usize; n + 1];
    for i in 0..n {
        row_offsets[i + 1] = row_offsets[i] + counts[i];
    }
    let nnz = row_offsets[n];

    // Pass 2: fill disjoint row slices.
    let two_n = T::lit(2.0 * n as f64);
    let mut col_indices = vec![0u32; nnz];
    let mut values = vec![T::zero(); nnz];
    let col_rows = split_by_offsets(&mut col_indices, &row_offsets);
    let val_rows = split_by_offsets(&mut values, &row_offsets);
    col_rows
        .into_par_iter()
        .zip(val_rows.into_par_iter())
        .enumerate()
        .for_each(|(i, (cols, vals))| {
            let (fwd, rev) = edges(i);
            let mut pos = 0;
            merge_row(fwd, rev, |j, p_ji, p_ij| {
                cols[pos] = j;
                vals[pos] = (p_ji + p_ij) / two_n;
                pos += 1;
            });
        });

    Ok(SparseAffinity {
        n,
        row_offsets,
        col_indices,
        values,
        exaggeration: T::one(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::knn_exact;
    use crate::tensor_io::InputMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(k: usize, rows: Vec<(Vec<u32>, Vec<f64>)>) -> NeighborGraph<f64> {
        let mut indices = Vec::new();
        let mut sq_distances = Vec::new();
        for (i, d) in rows {
            assert_eq!(i.len(), k);
            indices.extend(i);
            sq_distances.extend(d);
        }
        NeighborGraph {
            k,
            indices,
            sq_distances,
        }
    }

    fn entropy_bits(p: &[f64]) -> f64 {
        -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
    }

    #[test]
    fn equidistant_pair_is_uniform() {
        let g = graph(
            2,
            vec![
                (vec![1, 2], vec![3.0, 3.0]),
                (vec![0, 2], vec![3.0, 3.0]),
                (vec![0, 1], vec![3.0, 3.0]),
            ],
        );
        let pr = calibrate_perplexity(&g, 2.0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(&pr.conditional[..2], &[0.5, 0.5]);
        assert_eq!(entropy_bits(&pr.conditional[..2]), 1.0);
    }

    /// Plain bisection over beta on the unshifted kernel, 200 steps from a
    /// fixed wide bracket.
    fn bisection_oracle(d: &[f64], u: f64) -> f64 {
        let h = |beta: f64| {
            let w: Vec<f64> = d.iter().map(|&x| (-beta * x).exp()).collect();
            let s: f64 = w.iter().sum();
            entropy_bits(&w.iter().map(|v| v / s).collect::<Vec<_>>())
        };
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > u.log2() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn three_neighbors_match_bisection_oracle() {
        let d = vec![1.0, 4.0, 9.0];
        let g = graph(3, vec![(vec![1, 2, 3], d.clone()); 4]);
        let pr = calibrate_perplexity(&g, 2.0, DEFAULT_MAX_ITER, 1e-13).unwrap();
        let beta = bisection_oracle(&d, 2.0);
        assert!((pr.betas[0] - beta).abs() / beta < 1e-6, "{} vs {beta}", pr.betas[0]);
    }

    #[test]
    fn rows_normalized_and_on_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = (0..400 * 6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = InputMatrix::new(400, 6, data).unwrap();
        let g = knn_exact(&x, 45).unwrap();
        let pr = calibrate_perplexity(&g, 15.0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        for i in 0..400 {
            let row = &pr.conditional[i * 45..(i + 1) * 45];
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let perp = 2f64.powf(entropy_bits(row));
            assert!((perp - 15.0).abs() / 15.0 <= 1e-4);
            assert!(pr.betas[i] > 0.0);
        }
    }

    #[test]
    fn duplicates_get_uniform_rows() {
        let g = graph(3, vec![(vec![1, 2, 3], vec![0.0; 3]); 4]);
        let pr = calibrate_perplexity(&g, 2.0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!(pr.conditional.iter().all(|&p| p == 1.0 / 3.0));
    }

    #[test]
    fn perplexity_bounds() {
        let g = graph(2, vec![(vec![1, 2], vec![1.0, 2.0]); 3]);
        let err = calibrate_perplexity(&g, 3.0, 200, 1e-5).unwrap_err();
        assert!(err.to_string().contains("perplexity exceeds neighborhood size"));
        assert!(calibrate_perplexity(&g, 1.0, 200, 1e-5).is_err());
        assert!(calibrate_perplexity(&g, 2.0, 200, 0.0).is_err());
    }

    #[test]
    fn two_points_closed_form() {
        let g = graph(1, vec![(vec![1], vec![4.0]), (vec![0], vec![4.0])]);
        let pr = PerplexityResult {
            betas: vec![1.0, 1.0],
            conditional: vec![1.0, 1.0],
            k: 1,
        };
        let p = symmetrize(&pr, &g).unwrap();
        assert_eq!(p.row_offsets, vec![0, 1, 2]);
        assert_eq!(p.col_indices, vec![1, 0]);
        assert_eq!(p.values, vec![0.5, 0.5]);
    }

    #[test]
    fn one_sided_edge_appears_both_ways() {
        // 0 -> 1, 1 -> 2, 2 -> 1: edge (0,1) is one-sided.
        let g = graph(
            1,
            vec![(vec![1], vec![1.0]), (vec![2], vec![1.0]), (vec![1], vec![1.0])],
        );
        let pr = PerplexityResult {
            betas: vec![1.0; 3],
            conditional: vec![1.0; 3],
            k: 1,
        };
        let p = symmetrize(&pr, &g).unwrap();
        let (c0, v0) = p.row(0);
        assert_eq!((c0, v0), (&[1u32][..], &[1.0 / 6.0][..]));
        let (c1, v1) = p.row(1);
        assert_eq!(c1, &[0, 2]);
        assert_eq!(v1, &[1.0 / 6.0, 2.0 / 6.0]);
        assert!((p.value_sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_symmetrization_oracle() {
        let n = 50;
        let k = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = InputMatrix::new(n, 3, data).unwrap();
        let g = knn_exact(&x, k).unwrap();
        let pr = calibrate_perplexity(&g, 4.0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let p = symmetrize(&pr, &g).unwrap();

        let mut cond = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for (s, &j) in g.neighbors(i).iter().enumerate() {
                cond[i][j as usize] = pr.conditional[i * k + s];
            }
        }
        let mut seen = 0;
        for i in 0..n {
            let (cols, vals) = p.row(i);
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
            for j in 0..n {
                let dense = (cond[i][j] + cond[j][i]) / (2.0 * n as f64);
                match cols.iter().position(|&c| c as usize == j) {
                    Some(pos) => {
                        assert!((vals[pos] - dense).abs() <= 1e-15);
                        seen += 1;
                    }
                    None => assert_eq!(dense, 0.0),
                }
            }
        }
        assert_eq!(seen, p.nnz());
        assert!((p.value_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = (0..300 * 4).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = InputMatrix::<f64>::new(300, 4, data).unwrap();
        let g = knn_exact(&x, 20).unwrap();
        let pr = calibrate_perplexity(&g, 6.0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let p = symmetrize(&pr, &g).unwrap();
        for i in 0..300 {
            let (cols, vals) = p.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                assert!(v > 0.0);
                assert_ne!(j as usize, i);
                let (cj, vj) = p.row(j as usize);
                let back = cj.iter().position(|&c| c as usize == i).expect("symmetric structure");
                assert_eq!(vj[back].to_bits(), v.to_bits());
            }
        }
    }

    fn toy_affinity() -> SparseAffinity<f64> {
        let g = graph(
            1,
            vec![(vec![1], vec![1.0]), (vec![2], vec![2.0]), (vec![1], vec![3.0])],
        );
        let pr = PerplexityResult {
            betas: vec![1.0; 3],
            conditional: vec![1.0; 3],
            k: 1,
        };
        let mut p = symmetrize(&pr, &g).unwrap();
        p.values = vec![0.11, 0.13, 0.37, 0.39];
        let s = p.value_sum();
        p.values.iter_mut().for_each(|v| *v /= s);
        p
    }

    #[test]
    fn exaggeration_round_trip() {
        let p = toy_affinity();
        let mut q = p.clone();
        q.set_exaggeration(12.0).unwrap();
        assert!((q.value_sum() - 12.0).abs() <= 1e-12);
        assert_eq!(q.exaggeration, 12.0);
        q.set_exaggeration(1.0).unwrap();
        for (a, b) in p.values.iter().zip(&q.values) {
            assert!((a.to_bits() as i64 - b.to_bits() as i64).abs() <= 1);
        }
        let same = p.clone().with_exaggeration(1.0).unwrap();
        assert_eq!(same, p);
        assert!(p.clone().set_exaggeration(0.0).is_err());
    }

    #[test]
    fn from_csr_rejects_diagonal() {
        assert!(SparseAffinity::<f64>::from_csr(2, vec![0, 1, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseAffinity::<f64>::from_csr(2, vec![0, 1, 2], vec![1, 0], vec![0.5, 0.5]).is_ok());
    }
}
