//! Density backends for the estimator: the trained autoregressive model and
//! an exact per-(cell, categorical-value) frequency oracle used to isolate
//! the join algorithm from model error.

use crate::armodel::{MaskedARModel, ModelError};
use crate::data::Table;
use crate::grid::Grid;

/// Result of one batched density evaluation.
#[derive(Debug, Clone)]
pub struct DensityOutput {
    /// P(cell, categorical assignment) per requested cell.
    pub probs: Vec<f64>,
    /// Model forward passes spent on this batch.
    pub forward_passes: u64,
}

/// Batched point density over (grid cell, categorical assignment) items.
/// `ce_assignment` holds one entry per categorical column; `None` leaves the
/// column unconstrained.
pub trait PointDensity: Sync {
    fn density_batch(
        &self,
        cells: &[usize],
        ce_assignment: &[Option<u32>],
    ) -> Result<DensityOutput, ModelError>;
}

impl PointDensity for MaskedARModel {
    fn density_batch(
        &self,
        cells: &[usize],
        ce_assignment: &[Option<u32>],
    ) -> Result<DensityOutput, ModelError> {
        let probs = self.point_density(cells, ce_assignment)?;
        Ok(DensityOutput {
            probs,
            forward_passes: 1,
        })
    }
}

/// Exact joint frequencies: P(cell, assignment) = matching rows / N.
/// Swapping this in for the model makes per-cell cardinalities exact.
#[derive(Debug, Clone)]
pub struct FrequencyOracle {
    n_rows: usize,
    /// Per dense cell index: the CE code tuples of its member rows.
    members: Vec<Vec<Vec<u32>>>,
}

impl FrequencyOracle {
    pub fn build(table: &Table, grid: &Grid) -> Self {
        let mut members = vec![Vec::new(); grid.cell_count()];
        let dims = grid.dims();
        for row in 0..table.row_count {
            let mut id = 0u64;
            for d in 0..dims {
                let b = grid.layouts[d].bucket_of(table.cr_column(d)[row]);
                id = id * grid.layouts[d].m as u64 + b as u64;
            }
            let dense = grid
                .dense_index(id)
                .expect("row maps to a materialized cell");
            let codes: Vec<u32> = (0..table.ce_data.len())
                .map(|s| table.ce_column(s)[row])
                .collect();
            members[dense].push(codes);
        }
        FrequencyOracle {
            n_rows: table.row_count,
            members,
        }
    }
}

impl PointDensity for FrequencyOracle {
    fn density_batch(
        &self,
        cells: &[usize],
        ce_assignment: &[Option<u32>],
    ) -> Result<DensityOutput, ModelError> {
        let mut probs = Vec::with_capacity(cells.len());
        for &c in cells {
            if c >= self.members.len() {
                return Err(ModelError::CellOutOfRange(c, self.members.len()));
            }
            let count = self.members[c]
                .iter()
                .filter(|codes| {
                    ce_assignment
                        .iter()
                        .enumerate()
                        .all(|(s, v)| v.is_none_or(|v| codes[s] == v))
                })
                .count();
            probs.push(count as f64 / self.n_rows as f64);
        }
        Ok(DensityOutput {
            probs,
            forward_passes: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_table, ColumnDef, ColumnKind, Schema};
    use crate::grid::{build_grid, GridMode};

    #[test]
    fn frequency_oracle_counts_exactly() {
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
        let rows = vec![
            vec!["0.0".to_string(), "a".to_string()],
            vec!["1.0".to_string(), "a".to_string()],
            vec!["9.0".to_string(), "b".to_string()],
            vec!["9.5".to_string(), "a".to_string()],
        ];
        let table = load_table(rows, &schema).unwrap();
        let grid = build_grid(&table, &[2], GridMode::Uniform, 4).unwrap();
        let oracle = FrequencyOracle::build(&table, &grid);
        // Cell 0 holds x in {0, 1}; cell 1 holds {9, 9.5}.
        let out = oracle.density_batch(&[0, 1], &[Some(0)]).unwrap();
        assert_eq!(out.probs, vec![0.5, 0.25]);
        let all = oracle.density_batch(&[0, 1], &[None]).unwrap();
        assert_eq!(all.probs, vec![0.5, 0.5]);
        assert_eq!(out.forward_passes, 0);
    }
}
