//! Single-table cardinality estimation: split a conjunctive query into its
//! grid half (range predicates on continuous columns) and model half
//! (equality predicates on categorical columns), find the overlapping cells,
//! evaluate the model once for the whole cell batch, and sum per-cell
//! overlap-volume times density.

use std::time::{Duration, Instant};

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::armodel::{parent_columns, ArLayout, MaskedARModel, ModelError, RowBlock, TrainConfig};
use crate::data::{ColumnKind, DataError, Dictionary, Schema, Table};
use crate::density::PointDensity;
use crate::grid::{build_grid, cell_estimate, Grid, GridError, GridMode, RangeBox};
use crate::seed;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}': range predicates require a numeric value")]
    NonNumericRange(String),
    #[error("column '{0}' is not a continuous column")]
    NotContinuous(String),
    #[error("column '{0}': categorical columns accept only equality predicates")]
    NonEqualityOnCategorical(String),
    #[error("column '{0}': equality value for a categorical column must be a string")]
    NonStringEquality(String),
    #[error("table has no continuous columns; the grid needs at least one")]
    NoContinuousColumns,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredValue {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub op: CmpOp,
    pub value: PredValue,
}

/// Conjunction of range predicates on continuous columns and equality
/// predicates on categorical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTableQuery {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub table: Option<String>,
    pub predicates: Vec<Predicate>,
}

impl SingleTableQuery {
    pub fn new(predicates: Vec<Predicate>) -> Self {
        SingleTableQuery {
            table: None,
            predicates,
        }
    }
}

/// The two halves of a split query. `impossible` marks queries that can
/// match nothing (an equality value absent from the dictionary, or two
/// different equality values on one column).
#[derive(Debug, Clone)]
pub struct QuerySplit {
    pub grid_box: RangeBox,
    pub ce_assignment: Vec<Option<u32>>,
    pub impossible: bool,
}

/// Splits a query into the grid part (closed intervals per continuous
/// dimension; strict bounds are treated as closed, a zero-measure difference
/// for continuous data) and the model part (per-categorical-column equality
/// codes, unconstrained columns as wildcards).
pub fn split_query(
    query: &SingleTableQuery,
    schema: &Schema,
    dictionaries: &[Dictionary],
) -> Result<QuerySplit, EngineError> {
    let mut grid_box = RangeBox::full(schema.cr_columns.len());
    let mut ce_assignment: Vec<Option<u32>> = vec![None; schema.ce_columns.len()];
    let mut impossible = false;

    for pred in &query.predicates {
        let col = schema
            .column_index(&pred.column)
            .ok_or_else(|| EngineError::UnknownColumn(pred.column.clone()))?;
        match schema.columns[col].kind {
            ColumnKind::Continuous => {
                let v = match pred.value {
                    PredValue::Num(v) => v,
                    PredValue::Str(_) => {
                        return Err(EngineError::NonNumericRange(pred.column.clone()))
                    }
                };
                let slot = schema.cr_slot(col).unwrap();
                match pred.op {
                    CmpOp::Lt | CmpOp::Le => grid_box.constrain(slot, f64::NEG_INFINITY, v),
                    CmpOp::Gt | CmpOp::Ge => grid_box.constrain(slot, v, f64::INFINITY),
                    CmpOp::Eq => grid_box.constrain(slot, v, v),
                }
            }
            ColumnKind::Categorical => {
                if pred.op != CmpOp::Eq {
                    return Err(EngineError::NonEqualityOnCategorical(pred.column.clone()));
                }
                let value = match &pred.value {
                    PredValue::Str(s) => s,
                    PredValue::Num(_) => {
                        return Err(EngineError::NonStringEquality(pred.column.clone()))
                    }
                };
                let slot = schema.ce_slot(col).unwrap();
                match dictionaries[slot].encode(value) {
                    Some(code) => match ce_assignment[slot] {
                        Some(existing) if existing != code => impossible = true,
                        _ => ce_assignment[slot] = Some(code),
                    },
                    // Value never seen in the data: nothing can match.
                    None => impossible = true,
                }
            }
        }
    }
    // A contradictory range (min > max) also matches nothing; normalize it
    // to the impossible flag rather than erroring, since conjunctions like
    // x > 5 AND x < 3 are well-formed queries.
    for &(lo, hi) in &grid_box.bounds {
        if lo > hi {
            impossible = true;
        }
    }
    if impossible {
        // Leave a valid box so downstream code never sees an inverted
        // interval.
        grid_box = RangeBox::full(schema.cr_columns.len());
    }
    Ok(QuerySplit {
        grid_box,
        ce_assignment,
        impossible,
    })
}

/// Per-cell contribution to an estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellContribution {
    pub cell_id: u64,
    pub dense_index: usize,
    /// Overlap fraction of the query box with the cell volume.
    pub est_gc: f64,
    /// Model density of (cell, categorical assignment).
    pub est_ar: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    /// N * sum over cells of est_gc * est_ar.
    pub cardinality: f64,
    /// Sum over cells of est_gc * est_ar.
    pub selectivity: f64,
    pub cells: Vec<CellContribution>,
    pub forward_passes: u64,
    pub duration: Duration,
}

/// One qualifying cell with its estimated cardinality and its tight bounds
/// clipped by the query box, ready for join-condition checks.
#[derive(Debug, Clone)]
pub struct PerCellCardinality {
    pub dense_index: usize,
    pub cell_id: u64,
    pub card: f64,
    /// Per continuous dimension: cell tuple bounds intersected with the
    /// query interval.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PerCellOutput {
    pub cells: Vec<PerCellCardinality>,
    pub total: f64,
    pub forward_passes: u64,
}

/// Build-time knobs for a Grid-plus-model engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub mode: GridMode,
    /// Buckets per continuous dimension; None picks min(64, distinct).
    pub bucket_counts: Option<Vec<usize>>,
    pub tree_depth: usize,
    /// Factorization threshold: columns (and the cell column) with more
    /// distinct values than this split into two subcolumns.
    pub gamma: usize,
    pub emb_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub train: TrainConfig,
    /// Fraction of rows held out for a per-epoch NLL check (0 disables).
    #[serde(default)]
    pub holdout_fraction: f64,
}

impl EngineConfig {
    pub fn defaults(seed: u64) -> Self {
        EngineConfig {
            mode: GridMode::Cdf,
            bucket_counts: None,
            tree_depth: 6,
            gamma: 2000,
            emb_dim: 32,
            hidden_sizes: vec![512, 512, 512],
            train: TrainConfig::defaults(seed),
            holdout_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildStats {
    pub cell_count: usize,
    pub parameter_count: usize,
    pub epoch_nll: Vec<f64>,
    /// Held-out mean NLL after each epoch (empty unless requested).
    pub holdout_nll: Vec<f64>,
    pub grid_ms: u128,
    pub train_ms: u128,
}

/// The assembled estimator for one table: grid over the continuous columns,
/// dictionaries for the categorical ones, and the density model over
/// (cell, categorical columns).
#[derive(Debug)]
pub struct CardGrid {
    pub schema: Schema,
    pub n_rows: usize,
    pub grid: Grid,
    pub dictionaries: Vec<Dictionary>,
    pub config: EngineConfig,
    pub model: MaskedARModel,
}

/// Dense cell index of every row, in row order.
pub fn assign_cells(table: &Table, grid: &Grid) -> Vec<usize> {
    let dims = grid.dims();
    (0..table.row_count)
        .map(|row| {
            let mut id = 0u64;
            for d in 0..dims {
                let b = grid.layouts[d].bucket_of(table.cr_column(d)[row]);
                id = id * grid.layouts[d].m as u64 + b as u64;
            }
            grid.dense_index(id).expect("non-empty cell")
        })
        .collect()
}

/// Parent-level training rows: (dense cell, ce codes...).
pub fn transform_rows(table: &Table, grid: &Grid) -> RowBlock {
    let cells = assign_cells(table, grid);
    let stride = 1 + table.ce_data.len();
    let mut rows = RowBlock::new(stride);
    let mut buf = vec![0u32; stride];
    for row in 0..table.row_count {
        buf[0] = cells[row] as u32;
        for (s, col) in table.ce_data.iter().enumerate() {
            buf[1 + s] = col[row];
        }
        rows.push_row(&buf);
    }
    rows
}

impl CardGrid {
    /// Builds the grid, transforms the table, and trains the model.
    pub fn build(table: &Table, config: EngineConfig) -> Result<(Self, BuildStats), EngineError> {
        if table.schema.cr_columns.is_empty() {
            return Err(EngineError::NoContinuousColumns);
        }
        let t_grid = Instant::now();
        let bucket_counts = match &config.bucket_counts {
            Some(counts) => counts.clone(),
            None => (0..table.cr_data.len())
                .map(|slot| {
                    let mut values = table.cr_column(slot).to_vec();
                    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    values.dedup();
                    values.len().min(64).max(1)
                })
                .collect(),
        };
        let grid = build_grid(table, &bucket_counts, config.mode, config.tree_depth)?;
        let grid_ms = t_grid.elapsed().as_millis();

        let ce_names: Vec<String> = table
            .schema
            .ce_columns
            .iter()
            .map(|&i| table.schema.columns[i].name.clone())
            .collect();
        let ce_cards: Vec<usize> = (0..table.ce_data.len())
            .map(|s| table.ce_cardinality(s))
            .collect();
        let parents = parent_columns(grid.cell_count(), &ce_names, &ce_cards, config.gamma);
        let layout = ArLayout::new(parents, config.emb_dim);
        let mut model = MaskedARModel::new(
            layout,
            config.hidden_sizes.clone(),
            seed::mix_str(config.train.seed, "model-init"),
        )?;

        let rows = transform_rows(table, grid_ref(&grid));
        let t_train = Instant::now();
        let (epoch_nll, holdout_nll) = if config.holdout_fraction > 0.0 && rows.n >= 10 {
            let mut order: Vec<usize> = (0..rows.n).collect();
            let mut rng = StdRng::seed_from_u64(seed::mix_str(config.train.seed, "holdout-split"));
            order.shuffle(&mut rng);
            let held = ((rows.n as f64 * config.holdout_fraction) as usize).max(1);
            let mut holdout = RowBlock::new(rows.stride);
            let mut train = RowBlock::new(rows.stride);
            for (pos, &i) in order.iter().enumerate() {
                if pos < held {
                    holdout.push_row(rows.row(i));
                } else {
                    train.push_row(rows.row(i));
                }
            }
            let mut epoch_nll = Vec::with_capacity(config.train.epochs);
            let mut holdout_nll = Vec::with_capacity(config.train.epochs);
            for epoch in 0..config.train.epochs {
                epoch_nll.push(model.train_epoch(&train, &config.train, epoch)?);
                holdout_nll.push(model.mean_nll(&holdout)?);
            }
            (epoch_nll, holdout_nll)
        } else {
            (model.train(&rows, &config.train)?, Vec::new())
        };
        let train_ms = t_train.elapsed().as_millis();

        let stats = BuildStats {
            cell_count: grid.cell_count(),
            parameter_count: model.parameter_count(),
            epoch_nll,
            holdout_nll,
            grid_ms,
            train_ms,
        };
        Ok((
            CardGrid {
                schema: table.schema.clone(),
                n_rows: table.row_count,
                grid,
                dictionaries: table.dictionaries.clone(),
                config,
                model,
            },
            stats,
        ))
    }

    pub fn split(&self, query: &SingleTableQuery) -> Result<QuerySplit, EngineError> {
        split_query(query, &self.schema, &self.dictionaries)
    }

    /// Estimates with the trained model.
    pub fn estimate(&self, query: &SingleTableQuery) -> Result<Estimate, EngineError> {
        self.estimate_with(query, &self.model)
    }

    /// Estimates with an arbitrary density backend. One batched density call
    /// covers every qualifying cell; an empty cell set short-circuits to 0.
    pub fn estimate_with(
        &self,
        query: &SingleTableQuery,
        backend: &dyn PointDensity,
    ) -> Result<Estimate, EngineError> {
        let start = Instant::now();
        let split = self.split(query)?;
        if split.impossible {
            return Ok(Estimate {
                cardinality: 0.0,
                selectivity: 0.0,
                cells: Vec::new(),
                forward_passes: 0,
                duration: start.elapsed(),
            });
        }
        let hits = self.grid.cells_for_query(&split.grid_box)?;
        if hits.is_empty() {
            return Ok(Estimate {
                cardinality: 0.0,
                selectivity: 0.0,
                cells: Vec::new(),
                forward_passes: 0,
                duration: start.elapsed(),
            });
        }
        let out = backend.density_batch(&hits, &split.ce_assignment)?;
        let mut cells = Vec::with_capacity(hits.len());
        let mut selectivity = 0.0;
        for (&dense, &est_ar) in hits.iter().zip(&out.probs) {
            let cell = &self.grid.cells[dense];
            let est_gc = cell_estimate(cell, &split.grid_box);
            selectivity += est_gc * est_ar;
            cells.push(CellContribution {
                cell_id: cell.id,
                dense_index: dense,
                est_gc,
                est_ar,
            });
        }
        Ok(Estimate {
            cardinality: self.n_rows as f64 * selectivity,
            selectivity,
            cells,
            forward_passes: out.forward_passes,
            duration: start.elapsed(),
        })
    }

    /// Per-cell cardinalities for the join estimator: each qualifying cell's
    /// `N * est_gc * est_ar` plus its query-clipped tight bounds. Cells with
    /// zero cardinality are dropped (they cannot contribute to any join
    /// term). The sum over cells equals the single-table estimate.
    pub fn per_cell_cardinalities(
        &self,
        query: &SingleTableQuery,
        backend: &dyn PointDensity,
    ) -> Result<PerCellOutput, EngineError> {
        let split = self.split(query)?;
        if split.impossible {
            return Ok(PerCellOutput {
                cells: Vec::new(),
                total: 0.0,
                forward_passes: 0,
            });
        }
        let hits = self.grid.cells_for_query(&split.grid_box)?;
        if hits.is_empty() {
            return Ok(PerCellOutput {
                cells: Vec::new(),
                total: 0.0,
                forward_passes: 0,
            });
        }
        let out = backend.density_batch(&hits, &split.ce_assignment)?;
        let mut cells = Vec::new();
        let mut total = 0.0;
        for (&dense, &est_ar) in hits.iter().zip(&out.probs) {
            let cell = &self.grid.cells[dense];
            let est_gc = cell_estimate(cell, &split.grid_box);
            let card = self.n_rows as f64 * est_gc * est_ar;
            total += card;
            if card > 0.0 {
                let bounds = (0..self.grid.dims())
                    .map(|d| {
                        let (qmin, qmax) = split.grid_box.bounds[d];
                        (cell.min[d].max(qmin), cell.max[d].min(qmax))
                    })
                    .collect();
                cells.push(PerCellCardinality {
                    dense_index: dense,
                    cell_id: cell.id,
                    card,
                    bounds,
                });
            }
        }
        Ok(PerCellOutput {
            cells,
            total,
            forward_passes: out.forward_passes,
        })
    }

    /// Position of a named continuous column among the grid dimensions.
    pub fn cr_slot_of(&self, column: &str) -> Result<usize, EngineError> {
        let col = self
            .schema
            .column_index(column)
            .ok_or_else(|| EngineError::UnknownColumn(column.to_string()))?;
        self.schema
            .cr_slot(col)
            .ok_or_else(|| EngineError::NotContinuous(column.to_string()))
    }
}

fn grid_ref(grid: &Grid) -> &Grid {
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_table, ColumnDef};
    use crate::density::FrequencyOracle;
    use crate::oracle::true_cardinality_single;

    fn restaurant_schema() -> Schema {
        Schema::new(vec![
            ColumnDef {
                name: "lat".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "long".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "type".into(),
                kind: ColumnKind::Categorical,
            },
        ])
        .unwrap()
    }

    /// Four restaurants in a 2x2 grid; restaurant A at (1.0, 1.5) sits in
    /// the interior of cell 1 (lat bucket 0, long bucket 1).
    fn restaurant_table() -> Table {
        let rows = vec![
            vec!["0.0".to_string(), "0.2".to_string(), "pub".to_string()],
            vec!["1.0".to_string(), "1.5".to_string(), "deli".to_string()],
            vec!["3.0".to_string(), "0.2".to_string(), "deli".to_string()],
            vec!["3.5".to_string(), "1.5".to_string(), "pub".to_string()],
        ];
        load_table(rows, &restaurant_schema()).unwrap()
    }

    fn tiny_config(seed: u64) -> EngineConfig {
        EngineConfig {
            mode: GridMode::Uniform,
            bucket_counts: Some(vec![2, 2]),
            tree_depth: 4,
            gamma: 2000,
            emb_dim: 4,
            hidden_sizes: vec![16],
            train: TrainConfig {
                epochs: 30,
                batch_size: 4,
                learning_rate: 0.2,
                wildcard_dropout: 0.2,
                seed,
            },
            holdout_fraction: 0.0,
        }
    }

    #[test]
    fn split_ce_only_leaves_grid_full_range() {
        let table = restaurant_table();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "type".into(),
            op: CmpOp::Eq,
            value: PredValue::Str("deli".into()),
        }]);
        let split = split_query(&q, &table.schema, &table.dictionaries).unwrap();
        assert_eq!(
            split.grid_box.bounds,
            vec![
                (f64::NEG_INFINITY, f64::INFINITY),
                (f64::NEG_INFINITY, f64::INFINITY)
            ]
        );
        assert_eq!(split.ce_assignment, vec![Some(1)]);
        assert!(!split.impossible);
    }

    #[test]
    fn split_box_and_type() {
        let table = restaurant_table();
        let q = SingleTableQuery::new(vec![
            Predicate {
                column: "lat".into(),
                op: CmpOp::Le,
                value: PredValue::Num(1.5),
            },
            Predicate {
                column: "lat".into(),
                op: CmpOp::Ge,
                value: PredValue::Num(0.5),
            },
            Predicate {
                column: "long".into(),
                op: CmpOp::Ge,
                value: PredValue::Num(1.0),
            },
            Predicate {
                column: "type".into(),
                op: CmpOp::Eq,
                value: PredValue::Str("deli".into()),
            },
        ]);
        let split = split_query(&q, &table.schema, &table.dictionaries).unwrap();
        assert_eq!(split.grid_box.bounds[0], (0.5, 1.5));
        assert_eq!(split.grid_box.bounds[1], (1.0, f64::INFINITY));
        assert_eq!(split.ce_assignment, vec![Some(1)]);
    }

    #[test]
    fn split_equality_on_continuous_is_point_interval() {
        let table = restaurant_table();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "lat".into(),
            op: CmpOp::Eq,
            value: PredValue::Num(3.0),
        }]);
        let split = split_query(&q, &table.schema, &table.dictionaries).unwrap();
        assert_eq!(split.grid_box.bounds[0], (3.0, 3.0));
    }

    #[test]
    fn split_rejects_range_on_categorical() {
        let table = restaurant_table();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "type".into(),
            op: CmpOp::Lt,
            value: PredValue::Str("pub".into()),
        }]);
        assert!(matches!(
            split_query(&q, &table.schema, &table.dictionaries),
            Err(EngineError::NonEqualityOnCategorical(_))
        ));
    }

    #[test]
    fn split_unknown_dictionary_value_is_impossible() {
        let table = restaurant_table();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "type".into(),
            op: CmpOp::Eq,
            value: PredValue::Str("bistro".into()),
        }]);
        let split = split_query(&q, &table.schema, &table.dictionaries).unwrap();
        assert!(split.impossible);
    }

    #[test]
    fn estimate_disjoint_box_is_zero_with_empty_cells() {
        let table = restaurant_table();
        let (engine, _) = CardGrid::build(&table, tiny_config(1)).unwrap();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "lat".into(),
            op: CmpOp::Ge,
            value: PredValue::Num(100.0),
        }]);
        let est = engine.estimate(&q).unwrap();
        assert_eq!(est.cardinality, 0.0);
        assert!(est.cells.is_empty());
        assert_eq!(est.forward_passes, 0);
    }

    #[test]
    fn full_domain_estimate_approaches_row_count() {
        let table = restaurant_table();
        let (engine, _) = CardGrid::build(&table, tiny_config(2)).unwrap();
        let est = engine.estimate(&SingleTableQuery::new(Vec::new())).unwrap();
        // All-wildcard CE: the sum over all cells of P(gc) is exactly 1
        // because the cell head covers exactly the non-empty cells.
        assert!(
            (est.cardinality - table.row_count as f64).abs() < 1e-3 * table.row_count as f64,
            "estimate {} vs N {}",
            est.cardinality,
            table.row_count
        );
        assert_eq!(est.forward_passes, 1);
    }

    #[test]
    fn single_cell_query_uses_one_forward_pass_and_breaks_down() {
        let table = restaurant_table();
        let (engine, _) = CardGrid::build(&table, tiny_config(3)).unwrap();
        // Box strictly inside cell 1's bucket intervals, containing the
        // deli at (1.0, 1.5), plus type = deli.
        let q = SingleTableQuery::new(vec![
            Predicate {
                column: "lat".into(),
                op: CmpOp::Ge,
                value: PredValue::Num(0.5),
            },
            Predicate {
                column: "lat".into(),
                op: CmpOp::Le,
                value: PredValue::Num(1.5),
            },
            Predicate {
                column: "long".into(),
                op: CmpOp::Ge,
                value: PredValue::Num(1.4),
            },
            Predicate {
                column: "long".into(),
                op: CmpOp::Le,
                value: PredValue::Num(1.6),
            },
            Predicate {
                column: "type".into(),
                op: CmpOp::Eq,
                value: PredValue::Str("deli".into()),
            },
        ]);
        let est = engine.estimate(&q).unwrap();
        assert_eq!(est.cells.len(), 1);
        assert_eq!(est.cells[0].cell_id, 1);
        assert_eq!(est.forward_passes, 1);
        // The estimate decomposes as N * est_gc * est_ar for the one cell.
        let c = &est.cells[0];
        let recomputed = engine.n_rows as f64 * c.est_gc * c.est_ar;
        assert!((est.cardinality - recomputed).abs() <= 1e-9 * recomputed.max(1.0));
        // est_ar is the model's P(gc = cell 1, type = deli).
        let dense = engine.grid.dense_index(1).unwrap();
        let direct = engine.model.point_density(&[dense], &[Some(1)]).unwrap();
        assert_eq!(direct[0].to_bits(), c.est_ar.to_bits());
    }

    #[test]
    fn estimate_monotone_under_box_growth() {
        let mut rng = StdRng::seed_from_u64(9);
        let schema = Schema::new(vec![
            ColumnDef {
                name: "x".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "y".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "t".into(),
                kind: ColumnKind::Categorical,
            },
        ])
        .unwrap();
        let rows: Vec<Vec<String>> = (0..300)
            .map(|_| {
                vec![
                    format!("{:.3}", rng.gen_range(0.0..100.0)),
                    format!("{:.3}", rng.gen_range(0.0..100.0)),
                    format!("t{}", rng.gen_range(0..4)),
                ]
            })
            .collect();
        let table = load_table(rows, &schema).unwrap();
        let mut cfg = tiny_config(5);
        cfg.bucket_counts = Some(vec![8, 8]);
        cfg.train.epochs = 5;
        let (engine, _) = CardGrid::build(&table, cfg).unwrap();

        for trial in 0..20 {
            let cx: f64 = rng.gen_range(10.0..90.0);
            let cy: f64 = rng.gen_range(10.0..90.0);
            let mut prev = -1.0;
            for step in 1..5 {
                let w = step as f64 * 7.0;
                let q = SingleTableQuery::new(vec![
                    Predicate {
                        column: "x".into(),
                        op: CmpOp::Ge,
                        value: PredValue::Num(cx - w),
                    },
                    Predicate {
                        column: "x".into(),
                        op: CmpOp::Le,
                        value: PredValue::Num(cx + w),
                    },
                    Predicate {
                        column: "y".into(),
                        op: CmpOp::Ge,
                        value: PredValue::Num(cy - w),
                    },
                    Predicate {
                        column: "y".into(),
                        op: CmpOp::Le,
                        value: PredValue::Num(cy + w),
                    },
                ]);
                let est = engine.estimate(&q).unwrap().cardinality;
                assert!(
                    est >= prev - 1e-9,
                    "trial {trial}: estimate shrank from {prev} to {est}"
                );
                assert!(est >= 0.0 && est <= engine.n_rows as f64 * (1.0 + 1e-9));
                prev = est;
            }
        }
    }

    #[test]
    fn estimate_zero_iff_no_qualifying_cells() {
        let table = restaurant_table();
        let (engine, _) = CardGrid::build(&table, tiny_config(6)).unwrap();
        for (lo, hi) in [(-50.0, -40.0), (0.0, 0.5), (2.0, 4.0)] {
            let q = SingleTableQuery::new(vec![
                Predicate {
                    column: "lat".into(),
                    op: CmpOp::Ge,
                    value: PredValue::Num(lo),
                },
                Predicate {
                    column: "lat".into(),
                    op: CmpOp::Le,
                    value: PredValue::Num(hi),
                },
            ]);
            let est = engine.estimate(&q).unwrap();
            assert_eq!(est.cardinality == 0.0, est.cells.is_empty());
        }
    }

    #[test]
    fn saturated_cells_with_frequency_oracle_are_exact() {
        // Power-of-two row count so count/N * N round-trips exactly; the
        // query covers whole cells, so est_gc = 1 everywhere and the
        // frequency-backed estimate must equal the true count.
        let mut rng = StdRng::seed_from_u64(21);
        let schema = Schema::new(vec![
            ColumnDef {
                name: "x".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "t".into(),
                kind: ColumnKind::Categorical,
            },
        ])
        .unwrap();
        let rows: Vec<Vec<String>> = (0..4096)
            .map(|_| {
                vec![
                    format!("{}", rng.gen_range(0..100)),
                    format!("t{}", rng.gen_range(0..5)),
                ]
            })
            .collect();
        let table = load_table(rows, &schema).unwrap();
        let mut cfg = tiny_config(7);
        cfg.bucket_counts = Some(vec![10]);
        cfg.train.epochs = 1;
        let (engine, _) = CardGrid::build(&table, cfg).unwrap();
        let freq = FrequencyOracle::build(&table, &engine.grid);

        // Full-range query with an equality predicate: every qualifying
        // cell is fully contained.
        for t in 0..5 {
            let q = SingleTableQuery::new(vec![Predicate {
                column: "t".into(),
                op: CmpOp::Eq,
                value: PredValue::Str(format!("t{t}")),
            }]);
            let est = engine.estimate_with(&q, &freq).unwrap();
            let truth = true_cardinality_single(&table, &q).unwrap();
            assert_eq!(est.cardinality, truth as f64);
        }
    }

    #[test]
    fn per_cell_sum_matches_estimate_total() {
        let table = restaurant_table();
        let (engine, _) = CardGrid::build(&table, tiny_config(8)).unwrap();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "type".into(),
            op: CmpOp::Eq,
            value: PredValue::Str("pub".into()),
        }]);
        let est = engine.estimate(&q).unwrap();
        let per_cell = engine.per_cell_cardinalities(&q, &engine.model).unwrap();
        let sum: f64 = per_cell.cells.iter().map(|c| c.card).sum();
        assert!((sum - est.cardinality).abs() <= 1e-9 * est.cardinality.max(1.0));
        assert!((per_cell.total - est.cardinality).abs() <= 1e-9 * est.cardinality.max(1.0));
    }

    #[test]
    fn per_cell_empty_for_impossible_query() {
        let table = restaurant_table();
        let (engine, _) = CardGrid::build(&table, tiny_config(9)).unwrap();
        let q = SingleTableQuery::new(vec![Predicate {
            column: "type".into(),
            op: CmpOp::Eq,
            value: PredValue::Str("nope".into()),
        }]);
        let out = engine.per_cell_cardinalities(&q, &engine.model).unwrap();
        assert!(out.cells.is_empty());
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn query_json_round_trip() {
        let text = r#"{"table":"r","predicates":[
            {"column":"lat","op":"<=","value":3.5},
            {"column":"type","op":"=","value":"deli"}
        ]}"#;
        let q: SingleTableQuery = serde_json::from_str(text).unwrap();
        assert_eq!(q.table.as_deref(), Some("r"));
        assert_eq!(q.predicates[0].op, CmpOp::Le);
        assert_eq!(q.predicates[0].value, PredValue::Num(3.5));
        assert_eq!(q.predicates[1].value, PredValue::Str("deli".into()));
        let back = serde_json::to_string(&q).unwrap();
        let q2: SingleTableQuery = serde_json::from_str(&back).unwrap();
        assert_eq!(q, q2);
    }
}
