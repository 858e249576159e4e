//! Range-join cardinality estimation over per-table grid cells: three-way
//! condition classification between cell bound boxes, sampling for partial
//! overlaps, sorted early termination, and left-to-right chaining for
//! multi-table joins.

use std::time::{Duration, Instant};

use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::PointDensity;
use crate::estimator::{CardGrid, EngineError, SingleTableQuery};
use crate::seed;

#[derive(Debug, Error)]
pub enum JoinError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("expression on '{0}' has zero scale; affine expressions must be invertible")]
    ZeroScale(String),
    #[error("a join needs at least one condition")]
    EmptyConditions,
    #[error("chain of {pairs} pairs needs {} tables, got {tables}", pairs + 1)]
    BadChain { tables: usize, pairs: usize },
    #[error("chain joins support at most 5 tables, got {0}")]
    TooManyTables(usize),
}

/// Inequality operators; equality is not a range-join operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

/// Monotone affine expression `scale * x + offset` applied to a join
/// attribute. Interval images are exact: endpoints map to endpoints,
/// swapped when the scale is negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl AffineExpr {
    pub fn identity() -> Self {
        AffineExpr {
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn invert(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn apply_interval(&self, (lo, hi): (f64, f64)) -> (f64, f64) {
        let a = self.apply(lo);
        let b = self.apply(hi);
        if self.scale >= 0.0 {
            (a, b)
        } else {
            (b, a)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnExpr {
    pub column: String,
    #[serde(flatten)]
    pub expr: AffineExpr,
}

impl ColumnExpr {
    pub fn plain(column: impl Into<String>) -> Self {
        ColumnExpr {
            column: column.into(),
            expr: AffineExpr::identity(),
        }
    }
}

/// One join condition `f(left.column) op g(right.column)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinCondition {
    pub left: ColumnExpr,
    pub op: JoinOp,
    pub right: ColumnExpr,
}

fn default_samples() -> usize {
    1000
}

/// Two-table join query: per-table subqueries plus the join conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinQuery {
    pub left: SingleTableQuery,
    pub right: SingleTableQuery,
    pub conditions: Vec<JoinCondition>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPair {
    pub conditions: Vec<JoinCondition>,
}

/// Chain join query over `tables.len()` tables; `pairs[i]` joins table i to
/// table i+1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainJoinQuery {
    pub tables: Vec<SingleTableQuery>,
    pub pairs: Vec<ChainPair>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionStatus {
    Unsatisfied,
    Satisfied,
    Partial,
}

/// Classifies a condition between two post-expression bound intervals:
/// fully satisfied when every point pair satisfies it, unsatisfied when
/// none does, partial otherwise.
pub fn check_condition(op: JoinOp, left: (f64, f64), right: (f64, f64)) -> ConditionStatus {
    let (lmin, lmax) = left;
    let (rmin, rmax) = right;
    match op {
        JoinOp::Lt => {
            if lmax < rmin {
                ConditionStatus::Satisfied
            } else if lmin >= rmax {
                ConditionStatus::Unsatisfied
            } else {
                ConditionStatus::Partial
            }
        }
        JoinOp::Le => {
            if lmax <= rmin {
                ConditionStatus::Satisfied
            } else if lmin > rmax {
                ConditionStatus::Unsatisfied
            } else {
                ConditionStatus::Partial
            }
        }
        JoinOp::Gt => {
            if lmin > rmax {
                ConditionStatus::Satisfied
            } else if lmax <= rmin {
                ConditionStatus::Unsatisfied
            } else {
                ConditionStatus::Partial
            }
        }
        JoinOp::Ge => {
            if lmin >= rmax {
                ConditionStatus::Satisfied
            } else if lmax < rmin {
                ConditionStatus::Unsatisfied
            } else {
                ConditionStatus::Partial
            }
        }
    }
}

fn op_holds(op: JoinOp, a: f64, b: f64) -> bool {
    match op {
        JoinOp::Lt => a < b,
        JoinOp::Le => a <= b,
        JoinOp::Gt => a > b,
        JoinOp::Ge => a >= b,
    }
}

fn sample_in(rng: &mut StdRng, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Probability that `x op y` holds for `x` uniform in the left interval and
/// `y` uniform in the right one, estimated from `n` seeded sample pairs.
pub fn overlap_probability(op: JoinOp, x: (f64, f64), y: (f64, f64), n: usize, seed: u64) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n {
        let xs = sample_in(&mut rng, x);
        let ys = sample_in(&mut rng, y);
        if op_holds(op, xs, ys) {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub satisfied: u64,
    pub unsatisfied: u64,
    pub partial: u64,
}

impl PairStats {
    fn absorb(&mut self, other: PairStats) {
        self.satisfied += other.satisfied;
        self.unsatisfied += other.unsatisfied;
        self.partial += other.partial;
    }
}

#[derive(Debug, Clone)]
pub struct JoinEstimate {
    pub cardinality: f64,
    pub pairs: PairStats,
    pub forward_passes: u64,
    pub duration: Duration,
}

/// One side of a join: the table's engine plus the density backend to
/// evaluate per-cell cardinalities with.
pub struct JoinSide<'a> {
    pub engine: &'a CardGrid,
    pub backend: &'a dyn PointDensity,
}

/// Cells flowing through the chain: estimated cardinality, stable id, and
/// per-dimension bounds in the owning table's dimension order.
#[derive(Debug, Clone)]
struct StageCells {
    ids: Vec<u64>,
    cards: Vec<f64>,
    bounds: Vec<Vec<(f64, f64)>>,
}

impl StageCells {
    fn len(&self) -> usize {
        self.ids.len()
    }
}

struct ResolvedCond {
    left_slot: usize,
    left_expr: AffineExpr,
    op: JoinOp,
    right_slot: usize,
    right_expr: AffineExpr,
}

fn resolve_conditions(
    conds: &[JoinCondition],
    left: &CardGrid,
    right: &CardGrid,
) -> Result<Vec<ResolvedCond>, JoinError> {
    if conds.is_empty() {
        return Err(JoinError::EmptyConditions);
    }
    conds
        .iter()
        .map(|c| {
            if c.left.expr.scale == 0.0 {
                return Err(JoinError::ZeroScale(c.left.column.clone()));
            }
            if c.right.expr.scale == 0.0 {
                return Err(JoinError::ZeroScale(c.right.column.clone()));
            }
            Ok(ResolvedCond {
                left_slot: left.cr_slot_of(&c.left.column)?,
                left_expr: c.left.expr,
                op: c.op,
                right_slot: right.cr_slot_of(&c.right.column)?,
                right_expr: c.right.expr,
            })
        })
        .collect()
}

struct StageOutput {
    /// Accumulated cardinality per right cell.
    acc: Vec<f64>,
    /// Per condition, per right cell: min lower / max upper transformed
    /// left bound over contributing partners.
    env_lo: Vec<Vec<f64>>,
    env_hi: Vec<Vec<f64>>,
    stats: PairStats,
}

/// Core of the join algorithm: for every left cell, an accumulator per
/// right cell starts at the left cell's cardinality, every condition either
/// zeroes it, leaves it (fully satisfied), or scales it by the sampled
/// overlap probability; right cells are walked in per-condition sorted
/// order so that a fully-satisfied comparison ends the walk.
fn run_stage(
    left: &StageCells,
    right: &StageCells,
    conds: &[ResolvedCond],
    samples: usize,
    stage_seed: u64,
    early_break: bool,
) -> StageOutput {
    let n_right = right.len();
    // Transformed right intervals and sort orders, shared by all left cells.
    let r_ints: Vec<Vec<(f64, f64)>> = conds
        .iter()
        .map(|c| {
            (0..n_right)
                .map(|j| c.right_expr.apply_interval(right.bounds[j][c.right_slot]))
                .collect()
        })
        .collect();
    let orders: Vec<Vec<usize>> = conds
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut order: Vec<usize> = (0..n_right).collect();
            match c.op {
                // Satisfied means lmax < rmin: ascending rmin puts every
                // cell after the first satisfied one in the satisfied set.
                JoinOp::Lt | JoinOp::Le => order.sort_by(|&a, &b| {
                    r_ints[ci][a]
                        .0
                        .partial_cmp(&r_ints[ci][b].0)
                        .unwrap()
                        .then(a.cmp(&b))
                }),
                // Satisfied means lmin > rmax: descending rmax.
                JoinOp::Gt | JoinOp::Ge => order.sort_by(|&a, &b| {
                    r_ints[ci][b]
                        .1
                        .partial_cmp(&r_ints[ci][a].1)
                        .unwrap()
                        .then(a.cmp(&b))
                }),
            }
            order
        })
        .collect();

    let indices: Vec<usize> = (0..left.len()).collect();
    const CHUNK: usize = 8;
    let partials: Vec<StageOutput> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = StageOutput {
                acc: vec![0.0; n_right],
                env_lo: vec![vec![f64::INFINITY; n_right]; conds.len()],
                env_hi: vec![vec![f64::NEG_INFINITY; n_right]; conds.len()],
                stats: PairStats::default(),
            };
            let mut op_vec = vec![0.0f64; n_right];
            for &i in chunk {
                let l_ints: Vec<(f64, f64)> = conds
                    .iter()
                    .map(|c| c.left_expr.apply_interval(left.bounds[i][c.left_slot]))
                    .collect();
                op_vec.iter_mut().for_each(|v| *v = left.cards[i]);
                for (ci, c) in conds.iter().enumerate() {
                    let order = &orders[ci];
                    let mut pos = 0;
                    while pos < order.len() {
                        let j = order[pos];
                        if op_vec[j] != 0.0 {
                            match check_condition(c.op, l_ints[ci], r_ints[ci][j]) {
                                ConditionStatus::Unsatisfied => {
                                    op_vec[j] = 0.0;
                                    out.stats.unsatisfied += 1;
                                }
                                ConditionStatus::Satisfied => {
                                    if early_break {
                                        // Sort order guarantees the rest of
                                        // the walk is satisfied too; count
                                        // the live ones and stop comparing.
                                        let live = order[pos..]
                                            .iter()
                                            .filter(|&&jj| op_vec[jj] != 0.0)
                                            .count();
                                        out.stats.satisfied += live as u64;
                                        break;
                                    }
                                    out.stats.satisfied += 1;
                                }
                                ConditionStatus::Partial => {
                                    let pair_seed = seed::mix(
                                        seed::mix(seed::mix(stage_seed, left.ids[i]), right.ids[j]),
                                        ci as u64,
                                    );
                                    op_vec[j] *= overlap_probability(
                                        c.op,
                                        l_ints[ci],
                                        r_ints[ci][j],
                                        samples,
                                        pair_seed,
                                    );
                                    out.stats.partial += 1;
                                }
                            }
                        }
                        pos += 1;
                    }
                }
                for j in 0..n_right {
                    if op_vec[j] > 0.0 {
                        out.acc[j] += op_vec[j] * right.cards[j];
                        for ci in 0..conds.len() {
                            out.env_lo[ci][j] = out.env_lo[ci][j].min(l_ints[ci].0);
                            out.env_hi[ci][j] = out.env_hi[ci][j].max(l_ints[ci].1);
                        }
                    }
                }
            }
            out
        })
        .collect();

    // Ordered merge keeps totals independent of worker count.
    let mut merged = StageOutput {
        acc: vec![0.0; n_right],
        env_lo: vec![vec![f64::INFINITY; n_right]; conds.len()],
        env_hi: vec![vec![f64::NEG_INFINITY; n_right]; conds.len()],
        stats: PairStats::default(),
    };
    for p in partials {
        for j in 0..n_right {
            merged.acc[j] += p.acc[j];
        }
        for ci in 0..conds.len() {
            for j in 0..n_right {
                merged.env_lo[ci][j] = merged.env_lo[ci][j].min(p.env_lo[ci][j]);
                merged.env_hi[ci][j] = merged.env_hi[ci][j].max(p.env_hi[ci][j]);
            }
        }
        merged.stats.absorb(p.stats);
    }
    merged
}

/// Clips a surviving right cell's bounds to the envelope compatible with at
/// least one contributing left partner. For `f(x) < g(y)` a point y is
/// compatible when `g(y)` exceeds the smallest partner `f` lower bound;
/// symmetric for the other operators.
fn clip_bounds(
    bounds: &mut [(f64, f64)],
    conds: &[ResolvedCond],
    env_lo: &[Vec<f64>],
    env_hi: &[Vec<f64>],
    j: usize,
) -> bool {
    for (ci, c) in conds.iter().enumerate() {
        let slot = c.right_slot;
        let (mut lo, mut hi) = bounds[slot];
        match c.op {
            JoinOp::Lt | JoinOp::Le => {
                let t = env_lo[ci][j];
                if t.is_finite() {
                    // g(y) >= t
                    let y = c.right_expr.invert(t);
                    if c.right_expr.scale > 0.0 {
                        lo = lo.max(y);
                    } else {
                        hi = hi.min(y);
                    }
                }
            }
            JoinOp::Gt | JoinOp::Ge => {
                let t = env_hi[ci][j];
                if t.is_finite() {
                    // g(y) <= t
                    let y = c.right_expr.invert(t);
                    if c.right_expr.scale > 0.0 {
                        hi = hi.min(y);
                    } else {
                        lo = lo.max(y);
                    }
                }
            }
        }
        if lo > hi {
            return false;
        }
        bounds[slot] = (lo, hi);
    }
    true
}

fn stage_cells_from_query(
    side: &JoinSide,
    query: &SingleTableQuery,
) -> Result<(StageCells, u64), JoinError> {
    let out = side.engine.per_cell_cardinalities(query, side.backend)?;
    let mut cells = StageCells {
        ids: Vec::with_capacity(out.cells.len()),
        cards: Vec::with_capacity(out.cells.len()),
        bounds: Vec::with_capacity(out.cells.len()),
    };
    for c in out.cells {
        cells.ids.push(c.cell_id);
        cells.cards.push(c.card);
        cells.bounds.push(c.bounds);
    }
    Ok((cells, out.forward_passes))
}

/// Two-table range-join estimate (a one-pair chain).
pub fn range_join_estimate(
    query: &JoinQuery,
    left: JoinSide,
    right: JoinSide,
) -> Result<JoinEstimate, JoinError> {
    chain_join_estimate_opts(
        &[left, right],
        &[query.left.clone(), query.right.clone()],
        std::slice::from_ref(&query.conditions),
        query.samples,
        query.seed,
        true,
    )
}

pub fn range_join_estimate_opts(
    query: &JoinQuery,
    left: JoinSide,
    right: JoinSide,
    early_break: bool,
) -> Result<JoinEstimate, JoinError> {
    chain_join_estimate_opts(
        &[left, right],
        &[query.left.clone(), query.right.clone()],
        std::slice::from_ref(&query.conditions),
        query.samples,
        query.seed,
        early_break,
    )
}

/// Chain multi-table join: pairs are processed left to right; after each
/// pair every right cell carries the cardinality accumulated over its left
/// partners and its join-relevant bounds clipped to the partner-compatible
/// envelope; zero cells drop out. The final pair's accumulation sums to the
/// estimate.
pub fn chain_join_estimate(
    sides: &[JoinSide],
    queries: &[SingleTableQuery],
    pairs: &[Vec<JoinCondition>],
    samples: usize,
    seed_value: u64,
) -> Result<JoinEstimate, JoinError> {
    chain_join_estimate_opts(sides, queries, pairs, samples, seed_value, true)
}

pub fn chain_join_estimate_opts(
    sides: &[JoinSide],
    queries: &[SingleTableQuery],
    pairs: &[Vec<JoinCondition>],
    samples: usize,
    seed_value: u64,
    early_break: bool,
) -> Result<JoinEstimate, JoinError> {
    let start = Instant::now();
    if sides.len() != pairs.len() + 1 || queries.len() != sides.len() || pairs.is_empty() {
        return Err(JoinError::BadChain {
            tables: sides.len(),
            pairs: pairs.len(),
        });
    }
    if sides.len() > 5 {
        return Err(JoinError::TooManyTables(sides.len()));
    }
    let samples = samples.max(1);

    let mut forward_passes = 0u64;
    let (mut current, passes) = stage_cells_from_query(&sides[0], &queries[0])?;
    forward_passes += passes;
    let mut stats = PairStats::default();
    let mut total = 0.0;

    for (stage, conds) in pairs.iter().enumerate() {
        let resolved = resolve_conditions(conds, sides[stage].engine, sides[stage + 1].engine)?;
        let (right, passes) = stage_cells_from_query(&sides[stage + 1], &queries[stage + 1])?;
        forward_passes += passes;

        let stage_seed = seed::mix(seed_value, 0x1000 + stage as u64);
        let out = run_stage(
            &current,
            &right,
            &resolved,
            samples,
            stage_seed,
            early_break,
        );
        stats.absorb(out.stats);

        if stage + 1 == pairs.len() {
            // max(0.0) normalizes the empty-accumulator sum identity (-0.0).
            total = out.acc.iter().sum::<f64>().max(0.0);
        } else {
            let mut next = StageCells {
                ids: Vec::new(),
                cards: Vec::new(),
                bounds: Vec::new(),
            };
            for j in 0..right.len() {
                if out.acc[j] > 0.0 {
                    let mut bounds = right.bounds[j].clone();
                    if clip_bounds(&mut bounds, &resolved, &out.env_lo, &out.env_hi, j) {
                        next.ids.push(right.ids[j]);
                        next.cards.push(out.acc[j]);
                        next.bounds.push(bounds);
                    }
                }
            }
            current = next;
        }
    }

    Ok(JoinEstimate {
        cardinality: total,
        pairs: stats,
        forward_passes,
        duration: start.elapsed(),
    })
}
