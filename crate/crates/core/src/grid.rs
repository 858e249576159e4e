//! The multi-dimensional grid over the continuous columns: per-dimension
//! bucket layouts (uniform or CDF-tree), tuple-to-cell assignment, cell
//! lookup for range queries, and per-cell overlap volumes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Table;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot fit cdf tree on empty input")]
    EmptyCdfInput,
    #[error("cannot build grid over empty table")]
    EmptyTable,
    #[error("bucket count must be >= 1 for dimension {0}")]
    ZeroBuckets(usize),
    #[error("bucket index {bucket} out of range for dimension {dim} (m = {m})")]
    BucketOutOfRange { dim: usize, bucket: u32, m: usize },
    #[error("dimension {dim}: inverted interval [{min}, {max}]")]
    InvertedInterval { dim: usize, min: f64, max: f64 },
    #[error("grid has {expected} dimensions, query has {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Binary regression tree approximating a column's empirical CDF.
/// Split thresholds minimize the summed child squared error; leaves predict
/// the mean target of their training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfModel {
    pub nodes: Vec<CdfNode>,
    pub root: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CdfNode {
    Split {
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
    },
}

impl CdfModel {
    pub fn predict(&self, value: f64) -> f64 {
        let mut idx = self.root;
        loop {
            match &self.nodes[idx] {
                CdfNode::Split {
                    threshold,
                    left,
                    right,
                } => {
                    idx = if value <= *threshold { *left } else { *right };
                }
                CdfNode::Leaf { prediction } => return *prediction,
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, CdfNode::Leaf { .. }))
            .count()
    }
}

/// Distinct sorted values of a column and the empirical CDF at each:
/// `cdf[i]` = fraction of rows with value <= `distinct[i]`.
pub fn empirical_cdf(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut distinct = Vec::new();
    let mut cdf = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        distinct.push(v);
        cdf.push(j as f64 / n);
        i = j;
    }
    (distinct, cdf)
}

/// Fits the per-dimension CDF tree on `(value, empirical-CDF(value))` pairs
/// over the distinct values of `values`.
pub fn fit_cdf_tree(values: &[f64], max_depth: usize) -> Result<CdfModel, GridError> {
    if values.is_empty() {
        return Err(GridError::EmptyCdfInput);
    }
    let (xs, ys) = empirical_cdf(values);

    // Prefix sums of y and y^2 for O(1) squared-error of any range.
    let mut psum = vec![0.0; ys.len() + 1];
    let mut psq = vec![0.0; ys.len() + 1];
    for (i, &y) in ys.iter().enumerate() {
        psum[i + 1] = psum[i] + y;
        psq[i + 1] = psq[i] + y * y;
    }
    let sse = |lo: usize, hi: usize| -> f64 {
        let n = (hi - lo) as f64;
        let s = psum[hi] - psum[lo];
        let q = psq[hi] - psq[lo];
        (q - s * s / n).max(0.0)
    };
    let mean = |lo: usize, hi: usize| (psum[hi] - psum[lo]) / (hi - lo) as f64;

    let mut nodes = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn build(
        nodes: &mut Vec<CdfNode>,
        xs: &[f64],
        lo: usize,
        hi: usize,
        depth: usize,
        max_depth: usize,
        sse: &dyn Fn(usize, usize) -> f64,
        mean: &dyn Fn(usize, usize) -> f64,
    ) -> usize {
        let node_sse = sse(lo, hi);
        if depth == max_depth || hi - lo == 1 || node_sse <= 1e-15 {
            nodes.push(CdfNode::Leaf {
                prediction: mean(lo, hi),
            });
            return nodes.len() - 1;
        }
        // Best split: minimize summed child squared error (equivalently the
        // weighted child variance); ties resolve to the lowest threshold.
        let mut best_i = lo;
        let mut best_cost = f64::INFINITY;
        for i in lo..hi - 1 {
            let cost = sse(lo, i + 1) + sse(i + 1, hi);
            if cost < best_cost {
                best_cost = cost;
                best_i = i;
            }
        }
        let threshold = 0.5 * (xs[best_i] + xs[best_i + 1]);
        let slot = nodes.len();
        nodes.push(CdfNode::Leaf { prediction: 0.0 }); // placeholder
        let left = build(nodes, xs, lo, best_i + 1, depth + 1, max_depth, sse, mean);
        let right = build(nodes, xs, best_i + 1, hi, depth + 1, max_depth, sse, mean);
        nodes[slot] = CdfNode::Split {
            threshold,
            left,
            right,
        };
        slot
    }
    let root = build(&mut nodes, &xs, 0, xs.len(), 0, max_depth, &sse, &mean);
    Ok(CdfModel {
        nodes,
        root,
        max_depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Uniform,
    Cdf,
}

/// Bucket layout of one grid dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionLayout {
    pub mode: GridMode,
    /// Bucket count m.
    pub m: usize,
    /// Observed value range of the dimension.
    pub min: f64,
    pub max: f64,
    /// Uniform mode only: (max - min + 1) / m.
    pub bucket_size: f64,
    /// CDF mode only.
    pub cdf: Option<CdfModel>,
    /// m + 1 ascending bucket edges; `boundaries[b]..boundaries[b+1]` is the
    /// value interval of bucket b. Adjacent edges may coincide for empty
    /// buckets.
    pub boundaries: Vec<f64>,
}

impl DimensionLayout {
    pub fn uniform(values: &[f64], m: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bucket_size = (max - min + 1.0) / m as f64;
        let boundaries = (0..=m).map(|i| min + i as f64 * bucket_size).collect();
        DimensionLayout {
            mode: GridMode::Uniform,
            m,
            min,
            max,
            bucket_size,
            cdf: None,
            boundaries,
        }
    }

    pub fn cdf(values: &[f64], m: usize, tree_depth: usize) -> Result<Self, GridError> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let model = fit_cdf_tree(values, tree_depth)?;
        let (distinct, _) = empirical_cdf(values);

        // boundaries[j] = smallest distinct value mapped to bucket >= j.
        // Empty leading buckets collapse onto min, empty trailing ones onto
        // max; the bucket-of-value function is monotone so each set of
        // values with bucket >= j is a suffix of the sorted distinct values.
        let bucket_of = |v: f64| -> usize {
            let b = (model.predict(v) * m as f64).floor() as i64;
            b.clamp(0, m as i64 - 1) as usize
        };
        let mut boundaries = Vec::with_capacity(m + 1);
        boundaries.push(min);
        let mut cursor = 0usize;
        for j in 1..m {
            while cursor < distinct.len() && bucket_of(distinct[cursor]) < j {
                cursor += 1;
            }
            boundaries.push(if cursor < distinct.len() {
                distinct[cursor]
            } else {
                max
            });
        }
        boundaries.push(max);

        Ok(DimensionLayout {
            mode: GridMode::Cdf,
            m,
            min,
            max,
            bucket_size: 0.0,
            cdf: Some(model),
            boundaries,
        })
    }

    /// Maps a value to its bucket index, clamped to `[0, m-1]`. Out-of-range
    /// values are allowed (query endpoints may fall outside the data range).
    pub fn bucket_of(&self, value: f64) -> usize {
        let raw = match self.mode {
            GridMode::Uniform => ((value - self.min) / self.bucket_size).floor() as i64,
            GridMode::Cdf => {
                let f = self.cdf.as_ref().expect("cdf layout").predict(value);
                (f * self.m as f64).floor() as i64
            }
        };
        raw.clamp(0, self.m as i64 - 1) as usize
    }

    /// Value interval of bucket `b` (closed on both edges).
    pub fn bucket_interval(&self, b: usize) -> (f64, f64) {
        (self.boundaries[b], self.boundaries[b + 1])
    }

    /// Contiguous range of buckets whose interval intersects the closed
    /// query interval `[qmin, qmax]`, or None when no bucket does.
    pub fn bucket_range(&self, qmin: f64, qmax: f64) -> Option<(usize, usize)> {
        // First bucket b with boundaries[b+1] >= qmin.
        let lo = self.boundaries[1..].partition_point(|&e| e < qmin);
        // One past the last bucket b with boundaries[b] <= qmax.
        let hi = self.boundaries[..self.m].partition_point(|&e| e <= qmax);
        if lo >= hi {
            None
        } else {
            Some((lo, hi - 1))
        }
    }
}

/// One non-empty grid cell: its flattened id, bucket vector, and the
/// observed per-dimension min/max over member tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: u64,
    pub buckets: Vec<u32>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub tuple_count: u64,
}

/// Closed per-dimension query intervals; unconstrained dimensions span
/// the full range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBox {
    pub bounds: Vec<(f64, f64)>,
}

impl RangeBox {
    pub fn full(dims: usize) -> Self {
        RangeBox {
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); dims],
        }
    }

    /// Intersects dimension `dim` with `[lo, hi]`.
    pub fn constrain(&mut self, dim: usize, lo: f64, hi: f64) {
        let b = &mut self.bounds[dim];
        b.0 = b.0.max(lo);
        b.1 = b.1.min(hi);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub layouts: Vec<DimensionLayout>,
    /// Non-empty cells only, ascending by id. A cell's position in this
    /// vector is its dense index, used as the model's cell vocabulary.
    pub cells: Vec<GridCell>,
    #[serde(skip)]
    id_index: HashMap<u64, usize>,
}

impl Grid {
    pub fn dims(&self) -> usize {
        self.layouts.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Dense index of a cell id among the non-empty cells.
    pub fn dense_index(&self, id: u64) -> Option<usize> {
        self.id_index.get(&id).copied()
    }

    pub fn rebuild_index(&mut self) {
        self.id_index = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id, i))
            .collect();
    }

    /// Row-major flattening of a bucket vector:
    /// `id = sum_d buckets[d] * prod_{e>d} m_e`.
    pub fn cell_id_of(&self, buckets: &[u32]) -> Result<u64, GridError> {
        if buckets.len() != self.dims() {
            return Err(GridError::DimensionMismatch {
                expected: self.dims(),
                found: buckets.len(),
            });
        }
        let mut id = 0u64;
        for (d, (&b, layout)) in buckets.iter().zip(&self.layouts).enumerate() {
            if b as usize >= layout.m {
                return Err(GridError::BucketOutOfRange {
                    dim: d,
                    bucket: b,
                    m: layout.m,
                });
            }
            id = id * layout.m as u64 + b as u64;
        }
        Ok(id)
    }

    /// Inverse of `cell_id_of`.
    pub fn buckets_of_id(&self, mut id: u64) -> Vec<u32> {
        let mut buckets = vec![0u32; self.dims()];
        for d in (0..self.dims()).rev() {
            let m = self.layouts[d].m as u64;
            buckets[d] = (id % m) as u32;
            id /= m;
        }
        buckets
    }

    /// Dense indices of the non-empty cells whose bucket interval intersects
    /// the query box in every dimension. Candidate buckets are located per
    /// dimension by binary search on the stored boundaries and the
    /// per-dimension sets intersected.
    pub fn cells_for_query(&self, query: &RangeBox) -> Result<Vec<usize>, GridError> {
        if query.bounds.len() != self.dims() {
            return Err(GridError::DimensionMismatch {
                expected: self.dims(),
                found: query.bounds.len(),
            });
        }
        let mut ranges = Vec::with_capacity(self.dims());
        for (d, &(qmin, qmax)) in query.bounds.iter().enumerate() {
            if qmin > qmax {
                return Err(GridError::InvertedInterval {
                    dim: d,
                    min: qmin,
                    max: qmax,
                });
            }
            match self.layouts[d].bucket_range(qmin, qmax) {
                Some(r) => ranges.push(r),
                None => return Ok(Vec::new()),
            }
        }
        let hits = self
            .cells
            .iter()
            .enumerate()
            .filter(|(_, cell)| {
                cell.buckets
                    .iter()
                    .zip(&ranges)
                    .all(|(&b, &(lo, hi))| (b as usize) >= lo && (b as usize) <= hi)
            })
            .map(|(i, _)| i)
            .collect();
        Ok(hits)
    }
}

/// Fraction of the cell's volume covered by the query box, using the cell's
/// observed tuple min/max as the volume bounds. Zero-extent dimensions
/// contribute 1 when the point lies inside the query interval, else 0.
pub fn cell_estimate(cell: &GridCell, query: &RangeBox) -> f64 {
    let mut volume = 1.0;
    for (d, &(qmin, qmax)) in query.bounds.iter().enumerate() {
        let (cmin, cmax) = (cell.min[d], cell.max[d]);
        let frac = if cmax > cmin {
            let lo = cmin.max(qmin);
            let hi = cmax.min(qmax);
            ((hi - lo) / (cmax - cmin)).clamp(0.0, 1.0)
        } else if cmin >= qmin && cmin <= qmax {
            1.0
        } else {
            0.0
        };
        volume *= frac;
    }
    volume
}

/// Builds the grid: lays out every CR dimension with `bucket_counts[d]`
/// buckets, assigns each row to a cell, and materializes only non-empty
/// cells with their per-dimension observed min/max.
pub fn build_grid(
    table: &Table,
    bucket_counts: &[usize],
    mode: GridMode,
    tree_depth: usize,
) -> Result<Grid, GridError> {
    if table.row_count == 0 {
        return Err(GridError::EmptyTable);
    }
    assert_eq!(
        bucket_counts.len(),
        table.cr_data.len(),
        "one bucket count per CR dimension"
    );
    let mut layouts = Vec::with_capacity(bucket_counts.len());
    for (d, &m) in bucket_counts.iter().enumerate() {
        if m == 0 {
            return Err(GridError::ZeroBuckets(d));
        }
        let values = table.cr_column(d);
        let layout = match mode {
            GridMode::Uniform => DimensionLayout::uniform(values, m),
            GridMode::Cdf => DimensionLayout::cdf(values, m, tree_depth)?,
        };
        layouts.push(layout);
    }

    struct Accum {
        buckets: Vec<u32>,
        min: Vec<f64>,
        max: Vec<f64>,
        count: u64,
    }
    let dims = layouts.len();
    let mut accums: HashMap<u64, Accum> = HashMap::new();
    let mut buckets = vec![0u32; dims];
    for row in 0..table.row_count {
        let mut id = 0u64;
        for d in 0..dims {
            let b = layouts[d].bucket_of(table.cr_column(d)[row]) as u32;
            buckets[d] = b;
            id = id * layouts[d].m as u64 + b as u64;
        }
        let acc = accums.entry(id).or_insert_with(|| Accum {
            buckets: buckets.clone(),
            min: vec![f64::INFINITY; dims],
            max: vec![f64::NEG_INFINITY; dims],
            count: 0,
        });
        for d in 0..dims {
            let v = table.cr_column(d)[row];
            acc.min[d] = acc.min[d].min(v);
            acc.max[d] = acc.max[d].max(v);
        }
        acc.count += 1;
    }

    let mut cells: Vec<GridCell> = accums
        .into_iter()
        .map(|(id, a)| GridCell {
            id,
            buckets: a.buckets,
            min: a.min,
            max: a.max,
            tuple_count: a.count,
        })
        .collect();
    cells.sort_by_key(|c| c.id);

    let mut grid = Grid {
        layouts,
        cells,
        id_index: HashMap::new(),
    };
    grid.rebuild_index();
    Ok(grid)
}
