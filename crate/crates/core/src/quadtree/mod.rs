//! Quadtree over Morton-sorted points.
//!
//! Every node is a contiguous range of the sorted codes; its four children are
//! the sub-ranges sharing the next two code bits, located by binary search.
//! Nodes are stored level by level in one array, so a level is a contiguous
//! region and child links are plain indices.
//!
//! Construction expands the top of the tree breadth-first until a level holds
//! enough open nodes to feed every worker, then builds the remaining subtrees
//! independently and splices them into their levels. The result depends only
//! on the sorted codes, not on the number of workers.

mod morton;

use std::fmt::Write as _;

pub use morton::{
    compact_bits, compute_bounds, grid_coords, interleave, morton_codes, radix_sort, spread_bits, MortonCodes,
    GRID_BITS,
};

use crate::error::{Result, TsneError};
use crate::par::*;
use crate::points::Points;
use crate::real::Real;

/// Cells at this depth are one grid unit wide and are never split.
pub const MAX_DEPTH: usize = GRID_BITS as usize;
pub const NO_CHILD: u32 = u32::MAX;

/// Top-phase expansion stops once a level has this many open nodes per worker.
const NODES_PER_THREAD: usize = 8;
const MAX_TOP_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadNode<T> {
    /// Range into the Morton order.
    pub start: u32,
    pub end: u32,
    /// Global index of the first child; children are contiguous.
    pub first_child: u32,
    pub n_children: u8,
    pub center: [T; 2],
    /// Point count once summarized.
    pub mass: T,
    pub com: [T; 2],
}

impl<T: Real> QuadNode<T> {
    #[inline(always)]
    pub fn is_leaf(&self) -> bool {
        self.first_child == NO_CHILD
    }

    #[inline(always)]
    pub fn count(&self) -> usize {
        (self.end - self.start) as usize
    }

    #[inline(always)]
    pub fn children(&self) -> std::ops::Range<usize> {
        if self.is_leaf() {
            0..0
        } else {
            let f = self.first_child as usize;
            f..f + self.n_children as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortonQuadtree<T> {
    pub nodes: Vec<QuadNode<T>>,
    /// Level `d` occupies `nodes[level_offsets[d]..level_offsets[d + 1]]`.
    pub level_offsets: Vec<usize>,
    /// Half side length of the cells at each level.
    pub radii: Vec<T>,
    pub codes: MortonCodes<T>,
    /// Points gathered into Morton order (filled by [`summarize`]).
    pub sorted_points: Points<T>,
    pub summarized: bool,
}

impl<T: Real> MortonQuadtree<T> {
    pub fn n_levels(&self) -> usize {
        self.level_offsets.len() - 1
    }

    pub fn level(&self, d: usize) -> &[QuadNode<T>] {
        &self.nodes[self.level_offsets[d]..self.level_offsets[d + 1]]
    }

    pub fn root(&self) -> &QuadNode<T> {
        &self.nodes[0]
    }

    /// Depth of a node given its global index.
    pub fn depth_of(&self, index: usize) -> usize {
        self.level_offsets.partition_point(|&o| o <= index) - 1
    }

    /// Morton prefix (top `2 * depth` bits) shared by every point in the node.
    pub fn prefix(&self, node: &QuadNode<T>, depth: usize) -> u64 {
        if depth == 0 {
            0
        } else {
            self.codes.sorted_codes[node.start as usize] >> (64 - 2 * depth)
        }
    }

    /// Text dump, depth-first: indentation, depth, prefix bits, point count
    /// and center of mass.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((idx, depth)) = stack.pop() {
            let node = &self.nodes[idx];
            let prefix = self.prefix(node, depth);
            let bits = if depth == 0 {
                "-".to_string()
            } else {
                format!("{:0width$b}", prefix, width = 2 * depth)
            };
            writeln!(
                out,
                "{:indent$}{depth} {bits} n={} com=({:.6}, {:.6})",
                "",
                node.count(),
                node.com[0],
                node.com[1],
                indent = depth
            )
            .expect("write to String");
            for c in node.children().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }
}

/// Node under construction; `first_child` indexes the next level of whatever
/// level list it lives in.
#[derive(Debug, Clone, Copy)]
struct Proto {
    start: u32,
    end: u32,
    first_child: u32,
    n_children: u8,
}

impl Proto {
    fn open(start: u32, end: u32) -> Self {
        Proto {
            start,
            end,
            first_child: NO_CHILD,
            n_children: 0,
        }
    }

    fn splits(&self, depth: usize) -> bool {
        self.end - self.start > 1 && depth < MAX_DEPTH
    }
}

/// Non-empty quadrant sub-ranges of `[start, end)` at `depth`.
fn quadrants(codes: &[u64], start: u32, end: u32, depth: usize) -> impl Iterator<Item = (u32, u32)> {
    let shift = 62 - 2 * depth as u32;
    let slice = &codes[start as usize..end as usize];
    let quad = |c: &u64| (c >> shift) & 3;
    let b1 = slice.partition_point(|c| quad(c) < 1) as u32;
    let b2 = slice.partition_point(|c| quad(c) < 2) as u32;
    let b3 = slice.partition_point(|c| quad(c) < 3) as u32;
    let len = end - start;
    [(0, b1), (b1, b2), (b2, b3), (b3, len)]
        .into_iter()
        .filter(|(a, b)| a < b)
        .map(move |(a, b)| (start + a, start + b))
}

/// Split every open node of `level` (at `depth`), returning the next level.
fn expand(codes: &[u64], level: &mut [Proto], depth: usize) -> Vec<Proto> {
    let mut next = Vec::new();
    for node in level.iter_mut() {
        if !node.splits(depth) {
            continue;
        }
        node.first_child = next.len() as u32;
        let before = next.len();
        next.extend(quadrants(codes, node.start, node.end, depth).map(|(a, b)| Proto::open(a, b)));
        node.n_children = (next.len() - before) as u8;
    }
    next
}

/// Breadth-first levels of the subtree rooted at `root` (local level 0).
fn build_subtree(codes: &[u64], root: Proto, depth: usize) -> Vec<Vec<Proto>> {
    let mut levels = vec![vec![root]];
    let mut d = depth;
    loop {
        let last = levels.last_mut().expect("non-empty");
        let next = expand(codes, last, d);
        if next.is_empty() {
            break;
        }
        levels.push(next);
        d += 1;
    }
    levels
}

pub fn build_tree<T: Real>(mc: MortonCodes<T>) -> Result<MortonQuadtree<T>> {
    let n = mc.len();
    if n == 0 {
        return Err(TsneError::Shape("cannot build a tree over zero points".into()));
    }
    if n > u32::MAX as usize - 1 {
        return Err(TsneError::Shape(format!("too many points ({n})")));
    }
    let codes = &mc.sorted_codes;
    let target = NODES_PER_THREAD * current_num_threads();

    // Top phase: breadth-first until a level has enough open nodes.
    let mut top: Vec<Vec<Proto>> = vec![vec![Proto::open(0, n as u32)]];
    let cut = loop {
        let d = top.len() - 1;
        let open = top[d].iter().filter(|p| p.splits(d)).count();
        if open == 0 {
            break d;
        }
        if open >= target || d >= MAX_TOP_DEPTH {
            break d;
        }
        let next = expand(codes, &mut top[d], d);
        top.push(next);
    };

    // Subtree phase: each open node at the cut level grows independently.
    let pending: Vec<usize> = top[cut]
        .iter()
        .enumerate()
        .filter(|(_, p)| p.splits(cut))
        .map(|(i, _)| i)
        .collect();
    let subtrees: Vec<Vec<Vec<Proto>>> = pending
        .par_iter()
        .map(|&i| build_subtree(codes, top[cut][i], cut))
        .collect();
    for (&i, sub) in pending.iter().zip(&subtrees) {
        top[cut][i] = sub[0][0];
    }

    // Level sizes and, per subtree, where its slice of each level begins.
    let n_levels = subtrees.iter().map(|s| cut + s.len()).max().unwrap_or(0).max(top.len());
    let mut level_len = vec![0usize; n_levels];
    for (d, lvl) in top.iter().enumerate() {
        level_len[d] = lvl.len();
    }
    let mut sub_start = vec![vec![0usize; n_levels]; subtrees.len()];
    for d in cut + 1..n_levels {
        for (s, sub) in subtrees.iter().enumerate() {
            sub_start[s][d] = level_len[d];
            if let Some(lvl) = sub.get(d - cut) {
                level_len[d] += lvl.len();
            }
        }
    }
    let mut level_offsets = vec![0usize; n_levels + 1];
    for d in 0..n_levels {
        level_offsets[d + 1] = level_offsets[d] + level_len[d];
    }

    let r_span = mc.r_span.as_f64();
    let root_corner = [mc.center[0].as_f64() - r_span, mc.center[1].as_f64() - r_span];
    let radii: Vec<T> = (0..n_levels).map(|d| T::lit(r_span / 2f64.powi(d as i32))).collect();

    let placeholder = QuadNode {
        start: 0,
        end: 0,
        first_child: NO_CHILD,
        n_children: 0,
        center: [T::zero(); 2],
        mass: T::zero(),
        com: [T::zero(); 2],
    };
    let mut nodes = vec![placeholder; level_offsets[n_levels]];
    let finish = |p: &Proto, depth: usize, child_base: usize| -> QuadNode<T> {
        let first_child = if p.first_child == NO_CHILD {
            NO_CHILD
        } else {
            (child_base + p.first_child as usize) as u32
        };
        let side = 2.0 * r_span / 2f64.powi(depth as i32);
        let prefix = if depth == 0 {
            0
        } else {
            codes[p.start as usize] >> (64 - 2 * depth)
        };
        let cell = [compact_bits(prefix), compact_bits(prefix >> 1)];
        QuadNode {
            start: p.start,
            end: p.end,
            first_child,
            n_children: p.n_children,
            center: [
                T::lit(root_corner[0] + (cell[0] as f64 + 0.5) * side),
                T::lit(root_corner[1] + (cell[1] as f64 + 0.5) * side),
            ],
            mass: T::zero(),
            com: [T::zero(); 2],
        }
    };

    let pending_slot: Vec<Option<usize>> = {
        let mut slot = vec![None; top[cut].len()];
        for (s, &i) in pending.iter().enumerate() {
            slot[i] = Some(s);
        }
        slot
    };
    split_by_offsets(&mut nodes, &level_offsets)
        .into_par_iter()
        .enumerate()
        .for_each(|(d, out)| {
            let next_base = level_offsets.get(d + 1).copied().unwrap_or(0);
            if d < cut {
                for (o, p) in out.iter_mut().zip(&top[d]) {
                    *o = finish(p, d, next_base);
                }
            } else if d == cut {
                for (i, (o, p)) in out.iter_mut().zip(&top[d]).enumerate() {
                    let base = match pending_slot[i] {
                        Some(s) if d + 1 < n_levels => next_base + sub_start[s][d + 1],
                        _ => next_base,
                    };
                    *o = finish(p, d, base);
                }
            } else {
                for (s, sub) in subtrees.iter().enumerate() {
                    let Some(lvl) = sub.get(d - cut) else { continue };
                    let base = if d + 1 < n_levels {
                        next_base + sub_start[s][d + 1]
                    } else {
                        next_base
                    };
                    let at = sub_start[s][d];
                    for (o, p) in out[at..at + lvl.len()].iter_mut().zip(lvl) {
                        *o = finish(p, d, base);
                    }
                }
            }
        });

    Ok(MortonQuadtree {
        nodes,
        level_offsets,
        radii,
        codes: mc,
        sorted_points: Points::zeros(0),
        summarized: false,
    })
}

/// Bottom-up mass and center-of-mass, one level at a time, all nodes of a
/// level in parallel. Also gathers `y` into Morton order for the traversal.
pub fn summarize<T: Real>(tree: &mut MortonQuadtree<T>, y: &Points<T>) -> Result<()> {
    let n = tree.codes.len();
    if y.len() != n {
        return Err(TsneError::Shape(format!("tree built over {n} points, got {}", y.len())));
    }
    let order = &tree.codes.order;
    let gather = |c: usize| -> Vec<T> { order.par_iter().map(|&i| y.coords[c][i as usize]).collect() };
    tree.sorted_points = Points {
        coords: [gather(0), gather(1)],
    };

    let sorted = &tree.sorted_points;
    for d in (0..tree.n_levels()).rev() {
        let (upper, lower) = tree.nodes.split_at_mut(tree.level_offsets[d + 1]);
        let below = tree.level_offsets[d + 1];
        upper[tree.level_offsets[d]..].par_iter_mut().for_each(|node| {
            if node.is_leaf() {
                let range = node.start as usize..node.end as usize;
                let count = T::lit(range.len() as f64);
                let mut com = [T::zero(); 2];
                for (c, slot) in com.iter_mut().enumerate() {
                    for &v in &sorted.coords[c][range.clone()] {
                        *slot += v;
                    }
                    *slot /= count;
                }
                node.mass = count;
                node.com = com;
            } else {
                let mut mass = T::zero();
                let mut acc = [T::zero(); 2];
                for c in node.children() {
                    let child = &lower[c - below];
                    mass += child.mass;
                    acc[0] += child.mass * child.com[0];
                    acc[1] += child.mass * child.com[1];
                }
                node.mass = mass;
                node.com = [acc[0] / mass, acc[1] / mass];
            }
        });
    }
    tree.summarized = true;
    Ok(())
}

/// Bounds, codes, build and summarize in one call.
pub fn build_summarized<T: Real>(y: &Points<T>) -> Result<MortonQuadtree<T>> {
    let (center, r_span) = compute_bounds(y)?;
    let mut tree = build_tree(morton_codes(y, center, r_span))?;
    summarize(&mut tree, y)?;
    Ok(tree)
}
