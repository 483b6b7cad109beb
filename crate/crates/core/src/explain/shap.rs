//! Partition (Owen value) explainer over a balanced binary hierarchy of
//! segments, and a brute-force Shapley oracle for small games.
//!
//! A node `N` with children `L`, `R` entered with context `S` (segments
//! switched on outside `N`) passes credit to its children with two-sided
//! differences:
//!
//! ```text
//! L: 1/2 [ (v(S+L) - v(S)) + (v(S+L+R) - v(S+R)) ]
//! R: 1/2 [ (v(S+R) - v(S)) + (v(S+L+R) - v(S+L)) ]
//! ```
//!
//! realised by recursing into each child once with context `S` and once
//! with its sibling switched on, at half weight. The root is entered with
//! the empty context, so attributions always sum to `v(all) - v(empty)`.
//!
//! Expansion follows a max-heap on `|v(S+N) - v(S)| * weight`. Once the
//! evaluation budget is spent, pending nodes spread their credit evenly
//! over their segments, which keeps the sum exact.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;

use super::segments::{Baseline, CoalitionGame, Scorer, SegmentGrid};
use super::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// Largest game the brute-force oracle accepts.
pub const MAX_EXACT_SEGMENTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapConfig {
    /// Distinct coalition evaluations before pending nodes stop expanding.
    /// `None` expands the full hierarchy (exact Owen values).
    pub max_evals: Option<usize>,
    pub max_exact_segments: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        Self {
            max_evals: Some(500),
            max_exact_segments: MAX_EXACT_SEGMENTS,
        }
    }
}

impl ShapConfig {
    pub fn exact() -> Self {
        Self {
            max_evals: None,
            ..Self::default()
        }
    }
}

/// Balanced binary partition of segment ids `0..m` in row-major order.
/// Nodes are half-open id ranges; the left child of `[lo, hi)` is
/// `[lo, lo + (hi - lo) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionNode {
    pub lo: usize,
    pub hi: usize,
}

impl PartitionNode {
    pub fn root(m: usize) -> Self {
        Self { lo: 0, hi: m }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn is_leaf(&self) -> bool {
        self.len() == 1
    }

    pub fn children(&self) -> Result<(PartitionNode, PartitionNode)> {
        if self.len() < 2 {
            return Err(Error::Internal(format!("cannot split node [{}, {})", self.lo, self.hi)));
        }
        let mid = self.lo + self.len() / 2;
        Ok((
            PartitionNode { lo: self.lo, hi: mid },
            PartitionNode { lo: mid, hi: self.hi },
        ))
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::Internal("empty partition node".into()));
        }
        if self.is_leaf() {
            return Ok(vec![self.lo]);
        }
        let (l, r) = self.children()?;
        let mut out = l.leaves()?;
        out.extend(r.leaves()?);
        Ok(out)
    }
}

struct Pending {
    priority: f64,
    seq: u64,
    node: PartitionNode,
    context: Vec<bool>,
    f_context: f64,
    f_with: f64,
    weight: f64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // larger priority first, then earlier insertion
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct MemoGame<'a, S: Scorer + ?Sized> {
    game: CoalitionGame<'a, S>,
    cache: HashMap<Vec<bool>, f64>,
}

impl<S: Scorer + ?Sized> MemoGame<'_, S> {
    fn evals(&self) -> usize {
        self.cache.len()
    }

    fn value(&mut self, bits: &[bool]) -> Result<f64> {
        if let Some(v) = self.cache.get(bits) {
            return Ok(*v);
        }
        let v = self.game.value(bits)?;
        self.cache.insert(bits.to_vec(), v);
        Ok(v)
    }

    /// Evaluates two coalitions, concurrently when both are new.
    fn value_pair(&mut self, a: &[bool], b: &[bool]) -> Result<(f64, f64)> {
        match (self.cache.get(a).copied(), self.cache.get(b).copied()) {
            (Some(x), Some(y)) => Ok((x, y)),
            (None, None) if a != b => {
                let game = &self.game;
                let (x, y) = rayon::join(|| game.value(a), || game.value(b));
                let (x, y) = (x?, y?);
                self.cache.insert(a.to_vec(), x);
                self.cache.insert(b.to_vec(), y);
                Ok((x, y))
            }
            _ => Ok((self.value(a)?, self.value(b)?)),
        }
    }
}

fn with_range(bits: &[bool], node: PartitionNode) -> Vec<bool> {
    let mut out = bits.to_vec();
    out[node.lo..node.hi].iter_mut().for_each(|b| *b = true);
    out
}

/// Per-segment partition attributions of `v`.
pub fn owen_values<S: Scorer + ?Sized>(game: CoalitionGame<'_, S>, cfg: &ShapConfig) -> Result<Vec<f64>> {
    let m = game.players();
    if m == 0 {
        return Err(Error::Internal("partition over zero segments".into()));
    }
    let mut memo = MemoGame {
        game,
        cache: HashMap::new(),
    };
    let empty = vec![false; m];
    let (f_empty, f_full) = memo.value_pair(&empty, &vec![true; m])?;
    let mut values = vec![0.0; m];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Pending>, node, context, f_context: f64, f_with: f64, weight: f64| {
        heap.push(Pending {
            priority: (f_with - f_context).abs() * weight,
            seq,
            node,
            context,
            f_context,
            f_with,
            weight,
        });
        seq += 1;
    };
    push(&mut heap, PartitionNode::root(m), empty, f_empty, f_full, 1.0);

    while let Some(item) = heap.pop() {
        let credit = (item.f_with - item.f_context) * item.weight;
        if item.node.is_empty() {
            return Err(Error::Internal("empty partition node".into()));
        }
        if item.node.is_leaf() {
            values[item.node.lo] += credit;
            continue;
        }
        if cfg.max_evals.is_some_and(|budget| memo.evals() >= budget) {
            let share = credit / item.node.len() as f64;
            values[item.node.lo..item.node.hi].iter_mut().for_each(|v| *v += share);
            continue;
        }
        let (left, right) = item.node.children()?;
        let ctx_left = with_range(&item.context, left);
        let ctx_right = with_range(&item.context, right);
        let (f_left, f_right) = memo.value_pair(&ctx_left, &ctx_right)?;
        let half = item.weight / 2.0;
        push(&mut heap, left, item.context.clone(), item.f_context, f_left, half);
        push(&mut heap, left, ctx_right.clone(), f_right, item.f_with, half);
        push(&mut heap, right, item.context, item.f_context, f_right, half);
        push(&mut heap, right, ctx_left, f_left, item.f_with, half);
    }
    Ok(values)
}

/// Partition-explainer map: each segment's value broadcast to its pixels.
pub fn explain_shap_partition<S: Scorer + ?Sized>(
    scorer: &S,
    image: &ImageGrid,
    segs: &SegmentGrid,
    baseline: &Baseline,
    cfg: &ShapConfig,
) -> Result<AttributionMap> {
    let game = CoalitionGame {
        scorer,
        image,
        segs,
        baseline,
    };
    let per_segment = owen_values(game, cfg)?;
    AttributionMap::new(
        image.height(),
        image.width(),
        segs.broadcast(&per_segment),
        Method::Shap,
    )
}

/// Shapley values by enumerating all `2^M` coalitions.
pub fn exact_shapley<S: Scorer + ?Sized>(
    scorer: &S,
    image: &ImageGrid,
    segs: &SegmentGrid,
    baseline: &Baseline,
) -> Result<Vec<f64>> {
    let game = CoalitionGame {
        scorer,
        image,
        segs,
        baseline,
    };
    shapley_by_enumeration(&game, MAX_EXACT_SEGMENTS)
}

pub(crate) fn shapley_by_enumeration<S: Scorer + ?Sized>(
    game: &CoalitionGame<'_, S>,
    limit: usize,
) -> Result<Vec<f64>> {
    let m = game.players();
    if m > limit {
        return Err(Error::Size(format!("{m} segments exceed the exact limit of {limit}")));
    }
    let v = (0..1usize << m)
        .into_par_iter()
        .map(|mask| {
            let bits: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
            game.value(&bits)
        })
        .collect::<Result<Vec<f64>>>()?;
    // |S|! (M - |S| - 1)! / M!
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    let weight: Vec<f64> = (0..m).map(|s| fact(s) * fact(m - s - 1) / fact(m)).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << m {
            if mask >> i & 1 == 0 {
                *p += weight[mask.count_ones() as usize] * (v[mask | 1 << i] - v[mask]);
            }
        }
    }
    Ok(phi)
}
