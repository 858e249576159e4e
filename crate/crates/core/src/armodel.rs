//! Masked autoregressive density model over the transformed tuple
//! `(gc_id, ce_1, ..., ce_l)`: MADE-style masked layers, mini-batch gradient
//! descent training with wildcard input dropout, and batched point-density
//! evaluation.
//!
//! Each input column owns an embedding table with one extra row for the
//! reserved wildcard token. Output heads score only the real values of a
//! column, so every conditional is a proper distribution over the column's
//! observed domain and the joint over an enumerable domain sums to one.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ColumnSplit;
use crate::matrix::{matmul_nn, matmul_nt, matmul_nt_rect, matmul_tn, Mat};
use crate::seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model needs at least one column")]
    NoColumns,
    #[error("hidden width {width} is smaller than the number of columns {columns}")]
    WidthTooSmall { width: usize, columns: usize },
    #[error("column {column}: code {code} outside domain of size {domain}")]
    OutOfDomain {
        column: usize,
        code: u32,
        domain: usize,
    },
    #[error("grid cell position cannot be a wildcard")]
    WildcardGc,
    #[error("cell index {0} out of range ({1} cells)")]
    CellOutOfRange(usize, usize),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("invalid train config: {0}")]
    BadConfig(String),
}

/// One autoregressive input column after factorization expansion.
///
/// `domain` counts the reserved wildcard token, so the embedding table has
/// `domain` rows, the wildcard is code `domain - 1`, and the output head
/// scores the `domain - 1` real values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub domain: usize,
    pub emb_dim: usize,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, values: usize, emb_dim: usize) -> Self {
        ColumnSpec {
            name: name.into(),
            domain: values + 1,
            emb_dim,
        }
    }

    /// Number of real (non-wildcard) values.
    pub fn values(&self) -> usize {
        self.domain - 1
    }

    pub fn wildcard(&self) -> u32 {
        (self.domain - 1) as u32
    }
}

/// A pre-factorization model column: the grid-cell column or one
/// categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentColumn {
    pub name: String,
    /// Distinct real values.
    pub cardinality: usize,
    pub split: ColumnSplit,
}

/// Column layout of the model: parent columns (grid cell first, then the
/// categorical columns) and their expansion into autoregressive columns,
/// factorized parents contributing adjacent (hi, lo) subcolumns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArLayout {
    pub parents: Vec<ParentColumn>,
    pub specs: Vec<ColumnSpec>,
    /// Parent index of each autoregressive column.
    pub parent_of: Vec<usize>,
}

impl ArLayout {
    pub fn new(parents: Vec<ParentColumn>, emb_dim: usize) -> Self {
        let mut specs = Vec::new();
        let mut parent_of = Vec::new();
        for (p, parent) in parents.iter().enumerate() {
            let domains = parent.split.subdomains(parent.cardinality);
            match parent.split {
                ColumnSplit::Identity => {
                    specs.push(ColumnSpec::new(parent.name.clone(), domains[0], emb_dim));
                    parent_of.push(p);
                }
                ColumnSplit::Factorized { .. } => {
                    specs.push(ColumnSpec::new(
                        format!("{}.hi", parent.name),
                        domains[0],
                        emb_dim,
                    ));
                    specs.push(ColumnSpec::new(
                        format!("{}.lo", parent.name),
                        domains[1],
                        emb_dim,
                    ));
                    parent_of.push(p);
                    parent_of.push(p);
                }
            }
        }
        ArLayout {
            parents,
            specs,
            parent_of,
        }
    }

    pub fn columns(&self) -> usize {
        self.specs.len()
    }

    /// Expands one parent-level row into autoregressive codes; `None`
    /// becomes the wildcard token of every subcolumn.
    pub fn expand_into(&self, parent_codes: &[Option<u32>], out: &mut Vec<u32>) {
        let mut ar = 0;
        for (p, parent) in self.parents.iter().enumerate() {
            let n_sub = parent.split.subdomains(parent.cardinality).len();
            match parent_codes[p] {
                Some(v) => {
                    let (hi, lo) = parent.split.encode(v);
                    out.push(hi);
                    if let Some(lo) = lo {
                        out.push(lo);
                    }
                }
                None => {
                    for s in 0..n_sub {
                        out.push(self.specs[ar + s].wildcard());
                    }
                }
            }
            ar += n_sub;
        }
    }
}

/// Row-major block of encoded rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowBlock {
    pub n: usize,
    pub stride: usize,
    pub codes: Vec<u32>,
}

impl RowBlock {
    pub fn new(stride: usize) -> Self {
        RowBlock {
            n: 0,
            stride,
            codes: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[u32]) {
        assert_eq!(row.len(), self.stride);
        self.codes.extend_from_slice(row);
        self.n += 1;
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.codes[i * self.stride..(i + 1) * self.stride]
    }
}

/// MADE connectivity degrees: input columns are numbered 1..=K in
/// autoregressive order; hidden units carry degrees in 1..=K-1 so that a
/// unit of degree d sees exactly the first d columns; the head of column i
/// connects only to hidden units of degree < i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadeMasks {
    pub columns: usize,
    pub hidden_degrees: Vec<Vec<usize>>,
}

/// Assigns connectivity degrees for `columns` autoregressive columns.
/// Each hidden layer receives a balanced multiset covering every degree
/// (guaranteeing head i a path from every column < i), stored in ascending
/// order so that the units relevant to a head prefix form a leading
/// submatrix of every layer. The assignment is deterministic; the seed is
/// part of the interface but does not influence it.
pub fn build_masks(
    columns: usize,
    hidden_sizes: &[usize],
    seed: u64,
) -> Result<MadeMasks, ModelError> {
    let _ = seed;
    if columns == 0 {
        return Err(ModelError::NoColumns);
    }
    for &width in hidden_sizes {
        if width < columns {
            return Err(ModelError::WidthTooSmall { width, columns });
        }
    }
    let mut hidden_degrees = Vec::with_capacity(hidden_sizes.len());
    for &width in hidden_sizes {
        let span = (columns - 1).max(1);
        let mut degrees: Vec<usize> = (0..width).map(|u| 1 + u % span).collect();
        degrees.sort_unstable();
        hidden_degrees.push(degrees);
    }
    Ok(MadeMasks {
        columns,
        hidden_degrees,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    w: Mat,
    b: Vec<f64>,
    mask: Mat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub wildcard_dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults(seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-2,
            wildcard_dropout: 0.25,
            seed,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::BadConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::BadConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.wildcard_dropout) {
            return Err(ModelError::BadConfig(
                "wildcard_dropout must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter-group gradients; masked weight entries are zeroed.
pub struct Grads {
    pub embeddings: Vec<Mat>,
    pub layers: Vec<(Mat, Vec<f64>)>,
    pub head_w: Mat,
    pub head_b: Vec<f64>,
}

/// One free (unmasked) parameter coordinate, for verification tooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Embedding { col: usize, idx: usize },
    Weight { layer: usize, idx: usize },
    Bias { layer: usize, idx: usize },
    HeadW { idx: usize },
    HeadB { idx: usize },
}

#[derive(Debug)]
pub struct MaskedARModel {
    pub layout: ArLayout,
    pub hidden_sizes: Vec<usize>,
    pub masks: MadeMasks,
    pub seed: u64,
    embeddings: Vec<Mat>,
    layers: Vec<DenseLayer>,
    head_w: Mat,
    head_b: Vec<f64>,
    head_mask: Mat,
    /// Start offset of each column's logit range; last entry = total logits.
    head_offsets: Vec<usize>,
    forward_passes: AtomicU64,
}

fn glorot(rng: &mut StdRng, fan_in: usize, fan_out: usize) -> f64 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.gen_range(-bound..bound)
}

impl MaskedARModel {
    /// Builds a model with seeded Glorot-uniform masked layers and
    /// zero-initialized output heads (an untrained model is exactly uniform
    /// per conditional).
    pub fn new(layout: ArLayout, hidden_sizes: Vec<usize>, seed: u64) -> Result<Self, ModelError> {
        let k = layout.columns();
        let masks = build_masks(k, &hidden_sizes, seed::mix(seed, 0xA5))?;
        let mut rng = StdRng::seed_from_u64(seed::mix(seed, 0x11));

        let embeddings: Vec<Mat> = layout
            .specs
            .iter()
            .map(|spec| {
                let mut m = Mat::zeros(spec.domain, spec.emb_dim);
                for v in m.data.iter_mut() {
                    *v = glorot(&mut rng, spec.domain, spec.emb_dim);
                }
                m
            })
            .collect();

        // Input slot degrees: every embedding dimension of column j carries
        // degree j+1.
        let input_degrees: Vec<usize> = layout
            .specs
            .iter()
            .enumerate()
            .flat_map(|(j, spec)| std::iter::repeat_n(j + 1, spec.emb_dim))
            .collect();
        let d_in = input_degrees.len();

        let mut layers = Vec::with_capacity(hidden_sizes.len());
        let mut prev_degrees = input_degrees;
        let mut prev_width = d_in;
        for (l, &width) in hidden_sizes.iter().enumerate() {
            let degrees = &masks.hidden_degrees[l];
            let mut w = Mat::zeros(width, prev_width);
            let mut mask = Mat::zeros(width, prev_width);
            for u in 0..width {
                for v in 0..prev_width {
                    if degrees[u] >= prev_degrees[v] {
                        mask.row_mut(u)[v] = 1.0;
                        w.row_mut(u)[v] = glorot(&mut rng, prev_width, width);
                    }
                }
            }
            layers.push(DenseLayer {
                w,
                b: vec![0.0; width],
                mask,
            });
            prev_degrees = degrees.clone();
            prev_width = width;
        }

        let mut head_offsets = Vec::with_capacity(k + 1);
        let mut total = 0usize;
        for spec in &layout.specs {
            head_offsets.push(total);
            total += spec.values();
        }
        head_offsets.push(total);

        let last_degrees = masks.hidden_degrees.last().cloned().unwrap_or_default();
        let last_width = *hidden_sizes.last().unwrap_or(&0);
        let mut head_mask = Mat::zeros(total, last_width.max(1));
        if last_width > 0 {
            for (j, spec) in layout.specs.iter().enumerate() {
                for r in head_offsets[j]..head_offsets[j] + spec.values() {
                    for v in 0..last_width {
                        // Head of column j (1-based j+1) sees degrees < j+1.
                        if last_degrees[v] < j + 1 {
                            head_mask.row_mut(r)[v] = 1.0;
                        }
                    }
                }
            }
        }
        let head_w = Mat::zeros(total, last_width.max(1));

        Ok(MaskedARModel {
            layout,
            hidden_sizes,
            masks,
            seed,
            embeddings,
            layers,
            head_w,
            head_b: vec![0.0; total],
            head_mask,
            head_offsets,
            forward_passes: AtomicU64::new(0),
        })
    }

    /// Randomizes the zero-initialized output heads (verification tooling;
    /// trained models get there by gradient descent).
    pub fn randomize_heads(&mut self, seed: u64) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (rows, cols) = (self.head_w.rows, self.head_w.cols);
        for r in 0..rows {
            for c in 0..cols {
                if self.head_mask.row(r)[c] != 0.0 {
                    self.head_w.row_mut(r)[c] = glorot(&mut rng, cols, rows);
                }
            }
        }
        for b in self.head_b.iter_mut() {
            *b = glorot(&mut rng, rows, rows);
        }
    }

    pub fn columns(&self) -> usize {
        self.layout.columns()
    }

    pub fn total_logits(&self) -> usize {
        *self.head_offsets.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.free_parameter_slots().len()
    }

    /// Number of batched forward passes executed so far.
    pub fn forward_passes(&self) -> u64 {
        self.forward_passes.load(Ordering::Relaxed)
    }

    fn check_batch(&self, batch: &RowBlock) -> Result<(), ModelError> {
        if batch.stride != self.columns() {
            return Err(ModelError::BadConfig(format!(
                "batch stride {} != column count {}",
                batch.stride,
                self.columns()
            )));
        }
        for i in 0..batch.n {
            for (j, &code) in batch.row(i).iter().enumerate() {
                if code as usize >= self.layout.specs[j].domain {
                    return Err(ModelError::OutOfDomain {
                        column: j,
                        code,
                        domain: self.layout.specs[j].domain,
                    });
                }
            }
        }
        Ok(())
    }

    /// Embeds the first `n_cols` columns of every row (the input slots of
    /// later columns feed only higher-degree units).
    fn embed_cols(&self, batch: &RowBlock, n_cols: usize) -> Mat {
        let d_in: usize = self
            .layout
            .specs
            .iter()
            .take(n_cols)
            .map(|s| s.emb_dim)
            .sum();
        let mut x = Mat::zeros(batch.n, d_in);
        for i in 0..batch.n {
            let row = batch.row(i);
            let out = x.row_mut(i);
            let mut offset = 0;
            for (j, spec) in self.layout.specs.iter().take(n_cols).enumerate() {
                let emb = self.embeddings[j].row(row[j] as usize);
                out[offset..offset + spec.emb_dim].copy_from_slice(emb);
                offset += spec.emb_dim;
            }
        }
        x
    }

    fn embed(&self, batch: &RowBlock) -> Mat {
        self.embed_cols(batch, self.layout.specs.len())
    }

    /// Units of `layer` with degree <= `max_degree`; ascending degree order
    /// makes this a leading prefix.
    fn degree_cut(&self, layer: usize, max_degree: usize) -> usize {
        self.masks.hidden_degrees[layer].partition_point(|&d| d <= max_degree)
    }

    /// Hidden stack: returns (x0, pre-activations, activations).
    fn hidden_states(&self, x0: Mat) -> (Mat, Vec<Mat>, Vec<Mat>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut hs: Vec<Mat> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { &x0 } else { &hs[l - 1] };
            let mut z = matmul_nt(input, &layer.w);
            for r in 0..z.rows {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.b) {
                    *v += b;
                }
            }
            let mut h = z.clone();
            for v in h.data.iter_mut() {
                if !(*v > 0.0) {
                    *v = 0.0;
                }
            }
            zs.push(z);
            hs.push(h);
        }
        (x0, zs, hs)
    }

    fn logits_for_heads(&self, h_last: &Mat, heads: &[usize]) -> Vec<Mat> {
        // Stack the selected heads' weight rows, one product, then split.
        // `h_last` may be degree-restricted (narrower than the head matrix);
        // the excluded trailing weights are mask-zero for these heads.
        let total: usize = heads.iter().map(|&j| self.layout.specs[j].values()).sum();
        let mut u = Mat::zeros(total, self.head_w.cols);
        let mut b = Vec::with_capacity(total);
        let mut cursor = 0;
        for &j in heads {
            let lo = self.head_offsets[j];
            let hi = self.head_offsets[j + 1];
            for r in lo..hi {
                u.row_mut(cursor).copy_from_slice(self.head_w.row(r));
                b.push(self.head_b[r]);
                cursor += 1;
            }
        }
        let mut logits = matmul_nt_rect(h_last, &u, u.rows);
        for r in 0..logits.rows {
            let row = logits.row_mut(r);
            for (v, bias) in row.iter_mut().zip(&b) {
                *v += bias;
            }
        }
        // Split back into per-head matrices.
        let mut out = Vec::with_capacity(heads.len());
        let mut offset = 0;
        for &j in heads {
            let width = self.layout.specs[j].values();
            let mut m = Mat::zeros(logits.rows, width);
            for r in 0..logits.rows {
                m.row_mut(r)
                    .copy_from_slice(&logits.row(r)[offset..offset + width]);
            }
            out.push(m);
            offset += width;
        }
        out
    }

    fn softmax_rows(m: &mut Mat) {
        for r in 0..m.rows {
            let row = m.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }

    /// Batched forward pass: per-row, per-column conditional distributions
    /// (softmax over each column's real values). Counts as one forward pass.
    pub fn forward(&self, batch: &RowBlock) -> Result<Vec<Mat>, ModelError> {
        self.check_batch(batch)?;
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        let all: Vec<usize> = (0..self.columns()).collect();
        Ok(self.forward_heads(batch, &all))
    }

    /// Inference-only pass restricted to the units that can reach the
    /// requested heads: head j reads hidden degrees < j+1, so only units of
    /// degree <= max(j) and input columns < max(j) participate. Bit-equal to
    /// evaluating the full network for those heads (everything excluded is
    /// mask-zero on every path to them).
    fn forward_heads(&self, batch: &RowBlock, heads: &[usize]) -> Vec<Mat> {
        let max_degree = heads.iter().copied().max().unwrap_or(0);
        let x0 = self.embed_cols(batch, max_degree.min(self.columns()));
        let mut h = x0;
        for (l, layer) in self.layers.iter().enumerate() {
            let cut = self.degree_cut(l, max_degree);
            let mut z = matmul_nt_rect(&h, &layer.w, cut);
            for r in 0..z.rows {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.b[..cut]) {
                    *v += b;
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
            }
            h = z;
        }
        let mut out = self.logits_for_heads(&h, heads);
        for m in out.iter_mut() {
            Self::softmax_rows(m);
        }
        out
    }

    /// Batched point density with per-parent wildcards: probability of the
    /// fixed assignment, `prod_i P(x_i = v_i | fixed x_<i)` over the fixed
    /// parents' subcolumns. One forward pass per call regardless of batch
    /// size. `items[k]` holds one `Option<u32>` per parent column; parent 0
    /// (the grid cell) must be fixed.
    pub fn point_density_parents(
        &self,
        items: &[Vec<Option<u32>>],
    ) -> Result<Vec<f64>, ModelError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let parents = self.layout.parents.len();
        let mut batch = RowBlock::new(self.columns());
        let mut row = Vec::with_capacity(self.columns());
        for item in items {
            if item.len() != parents {
                return Err(ModelError::BadConfig(format!(
                    "density item has {} parents, model has {}",
                    item.len(),
                    parents
                )));
            }
            if item[0].is_none() {
                return Err(ModelError::WildcardGc);
            }
            for (p, code) in item.iter().enumerate() {
                if let Some(v) = code {
                    if *v as usize >= self.layout.parents[p].cardinality {
                        return Err(ModelError::OutOfDomain {
                            column: p,
                            code: *v,
                            domain: self.layout.parents[p].cardinality,
                        });
                    }
                }
            }
            row.clear();
            self.layout.expand_into(item, &mut row);
            batch.push_row(&row);
        }

        // Heads are needed only for columns whose parent is fixed in at
        // least one item; with a shared assignment that is the fixed set.
        let fixed_heads: Vec<usize> = (0..self.columns())
            .filter(|&j| {
                let p = self.layout.parent_of[j];
                items.iter().any(|item| item[p].is_some())
            })
            .collect();

        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        let dists = self.forward_heads(&batch, &fixed_heads);

        let mut probs = vec![1.0; items.len()];
        for (slot, &j) in fixed_heads.iter().enumerate() {
            let p = self.layout.parent_of[j];
            for (i, item) in items.iter().enumerate() {
                if item[p].is_some() {
                    let target = batch.row(i)[j] as usize;
                    probs[i] *= dists[slot].row(i)[target];
                }
            }
        }
        Ok(probs)
    }

    /// Convenience wrapper: a shared categorical assignment evaluated for a
    /// batch of grid cells.
    pub fn point_density(
        &self,
        cells: &[usize],
        ce_assignment: &[Option<u32>],
    ) -> Result<Vec<f64>, ModelError> {
        let cell_count = self.layout.parents[0].cardinality;
        let mut items = Vec::with_capacity(cells.len());
        for &c in cells {
            if c >= cell_count {
                return Err(ModelError::CellOutOfRange(c, cell_count));
            }
            let mut item = Vec::with_capacity(self.layout.parents.len());
            item.push(Some(c as u32));
            item.extend_from_slice(ce_assignment);
            items.push(item);
        }
        self.point_density_parents(&items)
    }

    /// Mean negative log-likelihood (natural log) of fully-observed
    /// parent-level rows.
    pub fn mean_nll(&self, rows: &RowBlock) -> Result<f64, ModelError> {
        if rows.n == 0 {
            return Err(ModelError::EmptyTraining);
        }
        let ar = self.expand_rows(rows);
        let include = vec![true; ar.n * ar.stride];
        Ok(self.batch_loss(&ar, &include))
    }

    fn expand_rows(&self, parent_rows: &RowBlock) -> RowBlock {
        let mut out = RowBlock::new(self.columns());
        let mut row = Vec::with_capacity(self.columns());
        let mut parent_buf: Vec<Option<u32>> = Vec::with_capacity(parent_rows.stride);
        for i in 0..parent_rows.n {
            parent_buf.clear();
            parent_buf.extend(parent_rows.row(i).iter().map(|&v| Some(v)));
            row.clear();
            self.layout.expand_into(&parent_buf, &mut row);
            out.push_row(&row);
        }
        out
    }

    /// Mean (over rows) summed NLL of the included positions of an
    /// AR-expanded batch. `include` is row-major `n x columns`.
    pub fn batch_loss(&self, ar_rows: &RowBlock, include: &[bool]) -> f64 {
        let all: Vec<usize> = (0..self.columns()).collect();
        let dists = self.forward_heads(ar_rows, &all);
        let mut total = 0.0;
        for i in 0..ar_rows.n {
            for (j, dist) in dists.iter().enumerate() {
                if include[i * ar_rows.stride + j] {
                    let target = ar_rows.row(i)[j] as usize;
                    total -= dist.row(i)[target].ln();
                }
            }
        }
        total / ar_rows.n as f64
    }

    /// Loss plus analytic gradients (masked entries zeroed) for an
    /// AR-expanded batch.
    pub fn batch_loss_and_grads(&self, ar_rows: &RowBlock, include: &[bool]) -> (f64, Grads) {
        let n = ar_rows.n;
        let x0 = self.embed(ar_rows);
        let (x0, zs, hs) = self.hidden_states(x0);
        let h_last = hs.last().unwrap_or(&x0);

        // Full logits in one product.
        let mut logits = matmul_nt(h_last, &self.head_w);
        for r in 0..logits.rows {
            let row = logits.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.head_b) {
                *v += b;
            }
        }

        // Per-head softmax in place, loss, and dlogits = (p - onehot) / n.
        let mut loss = 0.0;
        let inv_n = 1.0 / n as f64;
        for j in 0..self.columns() {
            let (lo, hi) = (self.head_offsets[j], self.head_offsets[j + 1]);
            for i in 0..n {
                let row = &mut logits.row_mut(i)[lo..hi];
                let included = include[i * self.columns() + j];
                if !included {
                    for v in row.iter_mut() {
                        *v = 0.0;
                    }
                    continue;
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                let target = ar_rows.row(i)[j] as usize;
                loss -= (row[target] / sum).ln();
                for v in row.iter_mut() {
                    *v = *v / sum * inv_n;
                }
                row[target] -= inv_n;
            }
        }
        loss *= inv_n;
        let dlogits = logits;

        let mut grad_head_w = matmul_tn(&dlogits, h_last);
        for (g, m) in grad_head_w.data.iter_mut().zip(&self.head_mask.data) {
            *g *= m;
        }
        let grad_head_b = colsum(&dlogits);

        let mut d_h = matmul_nn(&dlogits, &self.head_w);
        let mut layer_grads: Vec<(Mat, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            // dZ = dH * relu'(Z)
            let z = &zs[l];
            for (dv, zv) in d_h.data.iter_mut().zip(&z.data) {
                if !(*zv > 0.0) {
                    *dv = 0.0;
                }
            }
            let prev = if l == 0 { &x0 } else { &hs[l - 1] };
            let mut gw = matmul_tn(&d_h, prev);
            for (g, m) in gw.data.iter_mut().zip(&self.layers[l].mask.data) {
                *g *= m;
            }
            let gb = colsum(&d_h);
            layer_grads.push((gw, gb));
            d_h = matmul_nn(&d_h, &self.layers[l].w);
        }
        layer_grads.reverse();

        // d_h is now dX0: scatter into embedding gradients.
        let mut emb_grads: Vec<Mat> = self
            .layout
            .specs
            .iter()
            .map(|s| Mat::zeros(s.domain, s.emb_dim))
            .collect();
        let mut offset = 0;
        for (j, spec) in self.layout.specs.iter().enumerate() {
            for i in 0..n {
                let code = ar_rows.row(i)[j] as usize;
                let src = &d_h.row(i)[offset..offset + spec.emb_dim];
                let dst = emb_grads[j].row_mut(code);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            offset += spec.emb_dim;
        }

        (
            loss,
            Grads {
                embeddings: emb_grads,
                layers: layer_grads,
                head_w: grad_head_w,
                head_b: grad_head_b,
            },
        )
    }

    pub fn apply_grads(&mut self, grads: &Grads, lr: f64) {
        for (emb, g) in self.embeddings.iter_mut().zip(&grads.embeddings) {
            for (w, gv) in emb.data.iter_mut().zip(&g.data) {
                *w -= lr * gv;
            }
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gv) in layer.w.data.iter_mut().zip(&gw.data) {
                *w -= lr * gv;
            }
            for (b, gv) in layer.b.iter_mut().zip(gb) {
                *b -= lr * gv;
            }
        }
        for (w, gv) in self.head_w.data.iter_mut().zip(&grads.head_w.data) {
            *w -= lr * gv;
        }
        for (b, gv) in self.head_b.iter_mut().zip(&grads.head_b) {
            *b -= lr * gv;
        }
    }

    /// One seeded epoch of mini-batch gradient descent with wildcard input
    /// dropout; returns the epoch's mean training NLL over included
    /// positions. The grid-cell parent is never dropped (queries always fix
    /// the cell) and dropped positions are excluded from the loss.
    pub fn train_epoch(
        &mut self,
        parent_rows: &RowBlock,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<f64, ModelError> {
        cfg.validate()?;
        if parent_rows.n == 0 {
            return Err(ModelError::EmptyTraining);
        }
        let mut rng = StdRng::seed_from_u64(seed::mix(cfg.seed, 0xE0 + epoch as u64));
        let mut order: Vec<usize> = (0..parent_rows.n).collect();
        order.shuffle(&mut rng);

        let k = self.columns();
        let parents = self.layout.parents.len();
        let mut total_loss = 0.0;
        let mut seen = 0usize;

        let mut parent_buf: Vec<Option<u32>> = vec![None; parents];
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = RowBlock::new(k);
            let mut include = Vec::with_capacity(chunk.len() * k);
            let mut row = Vec::with_capacity(k);
            for &i in chunk {
                let src = parent_rows.row(i);
                for p in 0..parents {
                    let dropped = p > 0 && rng.gen_bool(cfg.wildcard_dropout);
                    parent_buf[p] = if dropped { None } else { Some(src[p]) };
                }
                row.clear();
                self.layout.expand_into(&parent_buf, &mut row);
                batch.push_row(&row);
                for j in 0..k {
                    include.push(parent_buf[self.layout.parent_of[j]].is_some());
                }
            }
            let (loss, grads) = self.batch_loss_and_grads(&batch, &include);
            self.apply_grads(&grads, cfg.learning_rate);
            total_loss += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        Ok(total_loss / seen as f64)
    }

    /// Full training loop; returns per-epoch mean training NLL.
    pub fn train(
        &mut self,
        parent_rows: &RowBlock,
        cfg: &TrainConfig,
    ) -> Result<Vec<f64>, ModelError> {
        let mut nlls = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            nlls.push(self.train_epoch(parent_rows, cfg, epoch)?);
        }
        Ok(nlls)
    }

    pub fn free_parameter_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for (col, emb) in self.embeddings.iter().enumerate() {
            for idx in 0..emb.data.len() {
                slots.push(ParamSlot::Embedding { col, idx });
            }
        }
        for (layer, dense) in self.layers.iter().enumerate() {
            for idx in 0..dense.w.data.len() {
                if dense.mask.data[idx] != 0.0 {
                    slots.push(ParamSlot::Weight { layer, idx });
                }
            }
            for idx in 0..dense.b.len() {
                slots.push(ParamSlot::Bias { layer, idx });
            }
        }
        for idx in 0..self.head_w.data.len() {
            if self.head_mask.data[idx] != 0.0 {
                slots.push(ParamSlot::HeadW { idx });
            }
        }
        for idx in 0..self.head_b.len() {
            slots.push(ParamSlot::HeadB { idx });
        }
        slots
    }

    pub fn param(&self, slot: ParamSlot) -> f64 {
        match slot {
            ParamSlot::Embedding { col, idx } => self.embeddings[col].data[idx],
            ParamSlot::Weight { layer, idx } => self.layers[layer].w.data[idx],
            ParamSlot::Bias { layer, idx } => self.layers[layer].b[idx],
            ParamSlot::HeadW { idx } => self.head_w.data[idx],
            ParamSlot::HeadB { idx } => self.head_b[idx],
        }
    }

    pub fn set_param(&mut self, slot: ParamSlot, value: f64) {
        match slot {
            ParamSlot::Embedding { col, idx } => self.embeddings[col].data[idx] = value,
            ParamSlot::Weight { layer, idx } => self.layers[layer].w.data[idx] = value,
            ParamSlot::Bias { layer, idx } => self.layers[layer].b[idx] = value,
            ParamSlot::HeadW { idx } => self.head_w.data[idx] = value,
            ParamSlot::HeadB { idx } => self.head_b[idx] = value,
        }
    }

    pub fn grad_at(grads: &Grads, slot: ParamSlot) -> f64 {
        match slot {
            ParamSlot::Embedding { col, idx } => grads.embeddings[col].data[idx],
            ParamSlot::Weight { layer, idx } => grads.layers[layer].0.data[idx],
            ParamSlot::Bias { layer, idx } => grads.layers[layer].1[idx],
            ParamSlot::HeadW { idx } => grads.head_w.data[idx],
            ParamSlot::HeadB { idx } => grads.head_b[idx],
        }
    }

    // ---- persistence ----

    /// Flattens all weights (embeddings, layers, heads) into one f64 buffer;
    /// the order matches `load_weights`.
    pub fn dump_weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for emb in &self.embeddings {
            out.extend_from_slice(&emb.data);
        }
        for layer in &self.layers {
            out.extend_from_slice(&layer.w.data);
            out.extend_from_slice(&layer.b);
        }
        out.extend_from_slice(&self.head_w.data);
        out.extend_from_slice(&self.head_b);
        out
    }

    pub fn load_weights(&mut self, data: &[f64]) -> Result<(), ModelError> {
        let expected: usize = self.embeddings.iter().map(|e| e.data.len()).sum::<usize>()
            + self
                .layers
                .iter()
                .map(|l| l.w.data.len() + l.b.len())
                .sum::<usize>()
            + self.head_w.data.len()
            + self.head_b.len();
        if data.len() != expected {
            return Err(ModelError::BadConfig(format!(
                "weight blob has {} values, expected {expected}",
                data.len()
            )));
        }
        let mut cursor = 0;
        let mut take = |n: usize| {
            let s = &data[cursor..cursor + n];
            cursor += n;
            s
        };
        for emb in self.embeddings.iter_mut() {
            let n = emb.data.len();
            emb.data.copy_from_slice(take(n));
        }
        for layer in self.layers.iter_mut() {
            let n = layer.w.data.len();
            layer.w.data.copy_from_slice(take(n));
            let n = layer.b.len();
            layer.b.copy_from_slice(take(n));
        }
        let n = self.head_w.data.len();
        self.head_w.data.copy_from_slice(take(n));
        let n = self.head_b.len();
        self.head_b.copy_from_slice(take(n));
        Ok(())
    }
}

fn colsum(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Builds the parent column list for a table transform: the grid-cell
/// column (dense index over non-empty cells) followed by the categorical
/// columns, each factorized when its cardinality exceeds `gamma`.
pub fn parent_columns(
    cell_count: usize,
    ce_names: &[String],
    ce_cardinalities: &[usize],
    gamma: usize,
) -> Vec<ParentColumn> {
    let mut parents = Vec::with_capacity(1 + ce_names.len());
    parents.push(ParentColumn {
        name: "gc".into(),
        cardinality: cell_count,
        split: ColumnSplit::choose(cell_count, gamma),
    });
    for (name, &card) in ce_names.iter().zip(ce_cardinalities) {
        parents.push(ParentColumn {
            name: name.clone(),
            cardinality: card,
            split: ColumnSplit::choose(card, gamma),
        });
    }
    parents
}
