//! Morton (Z-order) codes for 2-D points and their parallel radix sort.

use crate::error::{Result, TsneError};
use crate::par::*;
use crate::points::Points;
use crate::real::Real;

/// Per-dimension grid resolution: coordinates map onto `[0, 2^32)`.
pub const GRID_BITS: u32 = 32;
const GRID_MAX: f64 = 4_294_967_295.0;

const RADIX_BITS: u32 = 8;
const BUCKETS: usize = 1 << RADIX_BITS;
const SORT_BLOCK: usize = 1 << 14;

/// Codes for a point set, plus the permutation that sorts them.
#[derive(Debug, Clone, PartialEq)]
pub struct MortonCodes<T> {
    /// Code of each point, by point id.
    pub codes: Vec<u64>,
    /// Point ids in ascending (code, id) order.
    pub order: Vec<u32>,
    /// `codes[order[p]]`, kept contiguous for the tree builder.
    pub sorted_codes: Vec<u64>,
    pub center: [T; 2],
    pub r_span: T,
}

impl<T> MortonCodes<T> {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Bounding square of the points: midpoint of the per-dimension extremes and
/// the largest half-extent, inflated slightly so every point lies strictly
/// inside. A degenerate (single-location) cloud gets a small positive floor.
pub fn compute_bounds<T: Real>(y: &Points<T>) -> Result<([T; 2], T)> {
    if y.is_empty() {
        return Err(TsneError::Shape("cannot bound an empty point set".into()));
    }
    let mut center = [T::zero(); 2];
    let mut half = 0.0f64;
    let mut magnitude = 1.0f64;
    for (c, slot) in center.iter_mut().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, &v) in y.coords[c].iter().enumerate() {
            if !v.is_finite() {
                return Err(TsneError::NonFinite { row: i, col: c });
            }
            let v = v.as_f64();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let mid = 0.5 * (lo + hi);
        *slot = T::lit(mid);
        half = half.max(0.5 * (hi - lo));
        magnitude = magnitude.max(lo.abs()).max(hi.abs());
    }
    let eps = T::epsilon().as_f64();
    let r_span = (half * (1.0 + 16.0 * eps)).max(magnitude * 64.0 * eps);
    Ok((center, T::lit(r_span)))
}

/// Map each point onto the 2^32 x 2^32 grid anchored at `center - r_span`.
pub fn grid_coords<T: Real>(y: &Points<T>, center: [T; 2], r_span: T) -> Vec<[u32; 2]> {
    let r = r_span.as_f64();
    let root = [center[0].as_f64() - r, center[1].as_f64() - r];
    let scale = 2f64.powi(31) / r;
    (0..y.len())
        .into_par_iter()
        .map(|i| {
            let mut g = [0u32; 2];
            for (c, slot) in g.iter_mut().enumerate() {
                let m = (y.coords[c][i].as_f64() - root[c]) * scale;
                *slot = m.clamp(0.0, GRID_MAX) as u32;
            }
            g
        })
        .collect()
}

/// Spread the low 32 bits of `m` onto the even bit positions of a u64.
#[inline(always)]
pub fn spread_bits(m: u64) -> u64 {
    let mut m = m & 0x0000_0000_ffff_ffff;
    m = (m | (m << 16)) & 0x0000_ffff_0000_ffff;
    m = (m | (m << 8)) & 0x00ff_00ff_00ff_00ff;
    m = (m | (m << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    m = (m | (m << 2)) & 0x3333_3333_3333_3333;
    (m | (m << 1)) & 0x5555_5555_5555_5555
}

/// Inverse of [`spread_bits`]: gather the even bits of `m`.
#[inline(always)]
pub fn compact_bits(m: u64) -> u64 {
    let mut m = m & 0x5555_5555_5555_5555;
    m = (m | (m >> 1)) & 0x3333_3333_3333_3333;
    m = (m | (m >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    m = (m | (m >> 4)) & 0x00ff_00ff_00ff_00ff;
    m = (m | (m >> 8)) & 0x0000_ffff_0000_ffff;
    (m | (m >> 16)) & 0x0000_0000_ffff_ffff
}

/// Dimension 0 on even bits, dimension 1 on odd bits.
#[inline(always)]
pub fn interleave(dim0: u32, dim1: u32) -> u64 {
    spread_bits(dim0 as u64) | (spread_bits(dim1 as u64) << 1)
}

pub fn morton_codes<T: Real>(y: &Points<T>, center: [T; 2], r_span: T) -> MortonCodes<T> {
    let codes: Vec<u64> = grid_coords(y, center, r_span)
        .into_par_iter()
        .map(|g| interleave(g[0], g[1]))
        .collect();
    let keyed: Vec<(u64, u32)> = codes.par_iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
    let sorted = radix_sort(keyed);
    let (sorted_codes, order) = sorted.into_iter().unzip();
    MortonCodes {
        codes,
        order,
        sorted_codes,
        center,
        r_span,
    }
}

/// Stable LSD radix sort on the code, 8 bits per pass. Input arrives in id
/// order, so stability yields ties broken by id.
///
/// Each pass histograms fixed-size blocks in parallel, prefix-sums the
/// per-(digit, block) counts, then scatters every block into its reserved
/// slots in parallel.
pub fn radix_sort(mut keys: Vec<(u64, u32)>) -> Vec<(u64, u32)> {
    let n = keys.len();
    let mut scratch = vec![(0u64, 0u32); n];
    for pass in 0..(64 / RADIX_BITS) {
        let shift = pass * RADIX_BITS;
        let digit = |k: &(u64, u32)| ((k.0 >> shift) as usize) & (BUCKETS - 1);

        let hists: Vec<[usize; BUCKETS]> = keys
            .par_chunks(SORT_BLOCK)
            .map(|block| {
                let mut h = [0usize; BUCKETS];
                for k in block {
                    h[digit(k)] += 1;
                }
                h
            })
            .collect();

        let mut totals = [0usize; BUCKETS];
        for h in &hists {
            for (t, c) in totals.iter_mut().zip(h) {
                *t += c;
            }
        }
        if totals.contains(&n) {
            continue;
        }

        let mut offsets = vec![[0usize; BUCKETS]; hists.len()];
        let mut running = 0;
        for d in 0..BUCKETS {
            for (b, h) in hists.iter().enumerate() {
                offsets[b][d] = running;
                running += h[d];
            }
        }

        let out = DisjointPtr::new(&mut scratch);
        keys.par_chunks(SORT_BLOCK)
            .zip(offsets.into_par_iter())
            .for_each(|(block, mut cursor)| {
                for k in block {
                    let d = digit(k);
                    // SAFETY: every (block, digit) owns the disjoint slot range
                    // reserved by the prefix sum above.
                    unsafe { out.write(cursor[d], *k) };
                    cursor[d] += 1;
                }
            });
        std::mem::swap(&mut keys, &mut scratch);
    }
    keys
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bit-by-bit interleave.
    fn naive_interleave(a: u32, b: u32) -> u64 {
        let mut out = 0u64;
        for bit in 0..32 {
            out |= (((a >> bit) & 1) as u64) << (2 * bit);
            out |= (((b >> bit) & 1) as u64) << (2 * bit + 1);
        }
        out
    }

    fn cloud(n: usize, seed: u64) -> Points<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Points::new(
            (0..n).map(|_| rng.random_range(-50.0..30.0)).collect(),
            (0..n).map(|_| rng.random_range(-3.0..9.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn worked_example_is_47() {
        assert_eq!(interleave(3, 7), 47);
        assert_eq!(interleave(3, 7), 0b101111);
        assert_eq!(interleave(0, 0), 0);
    }

    #[test]
    fn spread_and_compact_invert() {
        for v in [0u32, 1, 2, 0xdead_beef, u32::MAX, 0x8000_0000] {
            assert_eq!(compact_bits(spread_bits(v as u64)), v as u64);
            assert_eq!(interleave(v, 0), naive_interleave(v, 0));
            assert_eq!(interleave(0, v), naive_interleave(0, v));
        }
    }

    #[test]
    fn codes_match_naive_interleave() {
        let y = cloud(1000, 1);
        let (c, r) = compute_bounds(&y).unwrap();
        let mc = morton_codes(&y, c, r);
        let grid = grid_coords(&y, c, r);
        for (code, g) in mc.codes.iter().zip(&grid) {
            assert_eq!(*code, naive_interleave(g[0], g[1]));
        }
    }

    #[test]
    fn bounds_of_diagonal_pair() {
        let y = Points::from_pairs(&[[0.0f64, 0.0], [2.0, 2.0]]);
        let (c, r) = compute_bounds(&y).unwrap();
        assert_eq!(c, [1.0, 1.0]);
        assert!(r >= 1.0);
    }

    #[test]
    fn degenerate_cloud_has_positive_span() {
        let y = Points::from_pairs(&[[3.5f64, -2.0]; 6]);
        let (c, r) = compute_bounds(&y).unwrap();
        assert_eq!(c, [3.5, -2.0]);
        assert!(r > 0.0 && r < 1e-10);
        let scale = 2f64.powi(31) / r;
        assert!(scale.is_finite());
        let mc = morton_codes(&y, c, r);
        assert!(mc.codes.iter().all(|&m| m == mc.codes[0]));
        let y32 = Points::from_pairs(&[[3.5f32, -2.0]; 3]);
        let (_, r32) = compute_bounds(&y32).unwrap();
        assert!(r32 > 0.0 && (2f64.powi(31) / r32 as f64).is_finite());
    }

    #[test]
    fn scaled_coordinates_inside_grid() {
        for seed in 0..5 {
            let y = cloud(2000, seed);
            let (c, r) = compute_bounds(&y).unwrap();
            let root = [c[0] - r, c[1] - r];
            let scale = 2f64.powi(31) / r;
            for i in 0..y.len() {
                for d in 0..2 {
                    let m = (y.coords[d][i] - root[d]) * scale;
                    assert!((0.0..4_294_967_296.0).contains(&m), "{m}");
                }
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let y = Points::from_pairs(&[[0.0f64, 1.0], [f64::NAN, 0.0]]);
        assert!(matches!(
            compute_bounds(&y),
            Err(TsneError::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn radix_matches_std_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // few distinct high bits to force ties and skipped passes
        let keys: Vec<(u64, u32)> = (0..50_000u32)
            .map(|i| ((rng.random::<u64>() & 0xff00_0000_0000_ffff) >> (i % 3), i))
            .collect();
        let mut expect = keys.clone();
        expect.sort();
        assert_eq!(radix_sort(keys), expect);
        assert!(radix_sort(Vec::new()).is_empty());
    }

    #[test]
    fn order_is_lexicographic_z_order() {
        let y = cloud(3000, 4);
        let (c, r) = compute_bounds(&y).unwrap();
        let mc = morton_codes(&y, c, r);
        for w in mc.order.windows(2) {
            let (a, b) = (w[0] as usize, w[1] as usize);
            assert!((mc.codes[a], a) < (mc.codes[b], b));
        }
        assert!(mc.sorted_codes.windows(2).all(|w| w[0] <= w[1]));
    }
}
