//! Brute-force ground truth: exact single-table counts with exact operator
//! semantics, exact nested-loop range-join counts, and closed-form overlap
//! probabilities for independent uniforms.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{ColumnKind, Table};
use crate::estimator::{CmpOp, PredValue, SingleTableQuery};
use crate::rangejoin::{JoinCondition, JoinOp};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}': value type does not match column kind")]
    TypeMismatch(String),
    #[error("join condition references non-continuous column '{0}'")]
    NonContinuousJoinColumn(String),
    #[error("chain join needs {expected} tables for {pairs} pairs, got {found}")]
    BadChain {
        expected: usize,
        pairs: usize,
        found: usize,
    },
    #[error("a join pair needs at least one condition")]
    EmptyConditions,
}

/// Does `row` satisfy every predicate of `query`? Strict and non-strict
/// operators are honored exactly.
pub fn row_matches(
    table: &Table,
    query: &SingleTableQuery,
    row: usize,
) -> Result<bool, OracleError> {
    for pred in &query.predicates {
        let col = table
            .schema
            .column_index(&pred.column)
            .ok_or_else(|| OracleError::UnknownColumn(pred.column.clone()))?;
        let ok = match table.schema.columns[col].kind {
            ColumnKind::Continuous => {
                let v = match pred.value {
                    PredValue::Num(v) => v,
                    PredValue::Str(_) => {
                        return Err(OracleError::TypeMismatch(pred.column.clone()))
                    }
                };
                let x = table.cr_column(table.schema.cr_slot(col).unwrap())[row];
                match pred.op {
                    CmpOp::Lt => x < v,
                    CmpOp::Le => x <= v,
                    CmpOp::Gt => x > v,
                    CmpOp::Ge => x >= v,
                    CmpOp::Eq => x == v,
                }
            }
            ColumnKind::Categorical => {
                let s = match &pred.value {
                    PredValue::Str(s) => s,
                    PredValue::Num(_) => {
                        return Err(OracleError::TypeMismatch(pred.column.clone()))
                    }
                };
                if pred.op != CmpOp::Eq {
                    return Err(OracleError::TypeMismatch(pred.column.clone()));
                }
                let slot = table.schema.ce_slot(col).unwrap();
                match table.dictionaries[slot].encode(s) {
                    Some(code) => table.ce_column(slot)[row] == code,
                    None => false,
                }
            }
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Exact count of rows satisfying the conjunction.
pub fn true_cardinality_single(
    table: &Table,
    query: &SingleTableQuery,
) -> Result<u64, OracleError> {
    // Validate predicates once up front so errors surface on empty tables.
    if table.row_count == 0 {
        for pred in &query.predicates {
            table
                .schema
                .column_index(&pred.column)
                .ok_or_else(|| OracleError::UnknownColumn(pred.column.clone()))?;
        }
        return Ok(0);
    }
    let matches = (0..table.row_count)
        .into_par_iter()
        .map(|row| row_matches(table, query, row).map(u64::from))
        .collect::<Result<Vec<u64>, _>>()?;
    Ok(matches.into_iter().sum())
}

fn condition_slots(
    cond: &JoinCondition,
    left: &Table,
    right: &Table,
) -> Result<(usize, usize), OracleError> {
    let resolve = |table: &Table, name: &str| -> Result<usize, OracleError> {
        let col = table
            .schema
            .column_index(name)
            .ok_or_else(|| OracleError::UnknownColumn(name.to_string()))?;
        table
            .schema
            .cr_slot(col)
            .ok_or_else(|| OracleError::NonContinuousJoinColumn(name.to_string()))
    };
    Ok((
        resolve(left, &cond.left.column)?,
        resolve(right, &cond.right.column)?,
    ))
}

fn op_holds(op: JoinOp, a: f64, b: f64) -> bool {
    match op {
        JoinOp::Lt => a < b,
        JoinOp::Le => a <= b,
        JoinOp::Gt => a > b,
        JoinOp::Ge => a >= b,
    }
}

/// Exact chain-join cardinality by nested-loop evaluation: per-table
/// predicates first, then every pair's conditions with exact expression
/// arithmetic. `pairs[i]` joins table i to table i+1.
pub fn true_cardinality_join(
    tables: &[&Table],
    queries: &[&SingleTableQuery],
    pairs: &[Vec<JoinCondition>],
) -> Result<u64, OracleError> {
    if tables.len() != pairs.len() + 1 || tables.len() != queries.len() {
        return Err(OracleError::BadChain {
            expected: pairs.len() + 1,
            pairs: pairs.len(),
            found: tables.len(),
        });
    }
    for conds in pairs {
        if conds.is_empty() {
            return Err(OracleError::EmptyConditions);
        }
    }

    // Prefilter each table.
    let mut kept: Vec<Vec<usize>> = Vec::with_capacity(tables.len());
    for (table, query) in tables.iter().zip(queries) {
        let mut rows = Vec::new();
        for row in 0..table.row_count {
            if row_matches(table, query, row)? {
                rows.push(row);
            }
        }
        kept.push(rows);
    }

    // Resolve condition slots per pair.
    let mut resolved: Vec<Vec<(usize, usize, &JoinCondition)>> = Vec::with_capacity(pairs.len());
    for (i, conds) in pairs.iter().enumerate() {
        let mut out = Vec::with_capacity(conds.len());
        for cond in conds {
            let (ls, rs) = condition_slots(cond, tables[i], tables[i + 1])?;
            out.push((ls, rs, cond));
        }
        resolved.push(out);
    }

    fn count_from(
        stage: usize,
        prev_row: usize,
        tables: &[&Table],
        kept: &[Vec<usize>],
        resolved: &[Vec<(usize, usize, &JoinCondition)>],
    ) -> u64 {
        if stage == resolved.len() {
            return 1;
        }
        let left = tables[stage];
        let right = tables[stage + 1];
        let mut total = 0u64;
        'next: for &r in &kept[stage + 1] {
            for &(ls, rs, cond) in &resolved[stage] {
                let x = cond.left.expr.apply(left.cr_column(ls)[prev_row]);
                let y = cond.right.expr.apply(right.cr_column(rs)[r]);
                if !op_holds(cond.op, x, y) {
                    continue 'next;
                }
            }
            total += count_from(stage + 1, r, tables, kept, resolved);
        }
        total
    }

    Ok(kept[0]
        .par_iter()
        .map(|&r0| count_from(0, r0, tables, &kept, &resolved))
        .sum())
}

/// Exact `P(x op y)` for independent `x ~ U[a, b]`, `y ~ U[c, d]` by
/// closed-form piecewise integration; degenerate (point) intervals allowed.
pub fn analytic_op(op: JoinOp, x: (f64, f64), y: (f64, f64)) -> f64 {
    match op {
        JoinOp::Lt => p_less(x, y, true),
        JoinOp::Le => p_less(x, y, false),
        JoinOp::Gt => p_less(y, x, true),
        JoinOp::Ge => p_less(y, x, false),
    }
}

/// `P(x < y)` (or `x <= y` when `strict` is false; the two differ only when
/// both intervals are points).
fn p_less(x: (f64, f64), y: (f64, f64), strict: bool) -> f64 {
    let (a, b) = x;
    let (c, d) = y;
    match (a == b, c == d) {
        (true, true) => {
            let holds = if strict { a < c } else { a <= c };
            if holds {
                1.0
            } else {
                0.0
            }
        }
        (true, false) => ((d - a) / (d - c)).clamp(0.0, 1.0),
        (false, true) => ((c - a) / (b - a)).clamp(0.0, 1.0),
        (false, false) => {
            let lo = c.clamp(a, b);
            let hi = d.clamp(a, b);
            let integral = (lo - a) + ((d - lo) * (d - lo) - (d - hi) * (d - hi)) / (2.0 * (d - c));
            (integral / (b - a)).clamp(0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_table, ColumnDef, Schema};
    use crate::estimator::Predicate;
    use crate::rangejoin::{AffineExpr, ColumnExpr};
    use crate::synth::employee_table;

    fn pred(column: &str, op: CmpOp, value: PredValue) -> Predicate {
        Predicate {
            column: column.into(),
            op,
            value,
        }
    }

    #[test]
    fn empty_predicates_count_all_rows() {
        let table = employee_table();
        let q = SingleTableQuery::new(Vec::new());
        assert_eq!(true_cardinality_single(&table, &q).unwrap(), 8);
    }

    #[test]
    fn contradictory_predicates_count_zero() {
        let table = employee_table();
        let q = SingleTableQuery::new(vec![
            pred("years_exp", CmpOp::Gt, PredValue::Num(5.0)),
            pred("years_exp", CmpOp::Lt, PredValue::Num(3.0)),
        ]);
        assert_eq!(true_cardinality_single(&table, &q).unwrap(), 0);
    }

    #[test]
    fn tester_count_is_four() {
        let table = employee_table();
        let q = SingleTableQuery::new(vec![pred(
            "job",
            CmpOp::Eq,
            PredValue::Str("Tester".into()),
        )]);
        assert_eq!(true_cardinality_single(&table, &q).unwrap(), 4);
    }

    #[test]
    fn strictness_honored_exactly() {
        let schema = Schema::new(vec![ColumnDef {
            name: "v".into(),
            kind: ColumnKind::Continuous,
        }])
        .unwrap();
        let rows: Vec<Vec<String>> = (0..10).map(|i| vec![format!("{i}")]).collect();
        let table = load_table(rows, &schema).unwrap();
        let lt = SingleTableQuery::new(vec![pred("v", CmpOp::Lt, PredValue::Num(5.0))]);
        let le = SingleTableQuery::new(vec![pred("v", CmpOp::Le, PredValue::Num(5.0))]);
        assert_eq!(true_cardinality_single(&table, &lt).unwrap(), 5);
        assert_eq!(true_cardinality_single(&table, &le).unwrap(), 6);
    }

    fn identity_cond(left: &str, op: JoinOp, right: &str) -> JoinCondition {
        JoinCondition {
            left: ColumnExpr {
                column: left.into(),
                expr: AffineExpr::identity(),
            },
            op,
            right: ColumnExpr {
                column: right.into(),
                expr: AffineExpr::identity(),
            },
        }
    }

    #[test]
    fn cross_product_with_always_true_condition() {
        let table = employee_table();
        // years_exp >= 0 holds for every pair: the join is a cross product.
        let cond = JoinCondition {
            left: ColumnExpr {
                column: "years_exp".into(),
                expr: AffineExpr::identity(),
            },
            op: JoinOp::Ge,
            right: ColumnExpr {
                column: "years_exp".into(),
                expr: AffineExpr {
                    scale: 0.0001,
                    offset: -100.0,
                },
            },
        };
        let q = SingleTableQuery::new(Vec::new());
        let count = true_cardinality_join(&[&table, &table], &[&q, &q], &[vec![cond]]).unwrap();
        assert_eq!(count, 64);
    }

    #[test]
    fn self_join_strict_less_on_constant_column_is_zero() {
        let schema = Schema::new(vec![ColumnDef {
            name: "c".into(),
            kind: ColumnKind::Continuous,
        }])
        .unwrap();
        let rows: Vec<Vec<String>> = (0..5).map(|_| vec!["7".to_string()]).collect();
        let table = load_table(rows, &schema).unwrap();
        let q = SingleTableQuery::new(Vec::new());
        let cond = identity_cond("c", JoinOp::Lt, "c");
        let count = true_cardinality_join(&[&table, &table], &[&q, &q], &[vec![cond]]).unwrap();
        assert_eq!(count, 0);
    }

    #[test]
    fn employee_self_join_matches_hand_enumeration() {
        // Testers x Programmers(salary > 5000) with t.years < p.years and
        // t.years + 10 > p.years. Tester years {1,4,6,7}, programmer years
        // {2,3,8,9}: pairs with p in (t, t+10) count 4+2+2+2 = 10.
        let table = employee_table();
        let testers = SingleTableQuery::new(vec![pred(
            "job",
            CmpOp::Eq,
            PredValue::Str("Tester".into()),
        )]);
        let programmers = SingleTableQuery::new(vec![
            pred("job", CmpOp::Eq, PredValue::Str("Programmer".into())),
            pred("salary", CmpOp::Gt, PredValue::Num(5000.0)),
        ]);
        let conds = vec![
            identity_cond("years_exp", JoinOp::Lt, "years_exp"),
            JoinCondition {
                left: ColumnExpr {
                    column: "years_exp".into(),
                    expr: AffineExpr {
                        scale: 1.0,
                        offset: 10.0,
                    },
                },
                op: JoinOp::Gt,
                right: ColumnExpr {
                    column: "years_exp".into(),
                    expr: AffineExpr::identity(),
                },
            },
        ];
        let count =
            true_cardinality_join(&[&table, &table], &[&testers, &programmers], &[conds]).unwrap();
        assert_eq!(count, 10);
    }

    #[test]
    fn analytic_op_disjoint_below_is_one() {
        assert_eq!(analytic_op(JoinOp::Lt, (0.0, 1.0), (2.0, 3.0)), 1.0);
        assert_eq!(analytic_op(JoinOp::Gt, (0.0, 1.0), (2.0, 3.0)), 0.0);
    }

    #[test]
    fn analytic_op_seven_eighths_case() {
        let p = analytic_op(JoinOp::Lt, (0.0, 2.0), (1.0, 3.0));
        assert!((p - 7.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_op_identical_intervals_half() {
        let p = analytic_op(JoinOp::Lt, (4.0, 9.0), (4.0, 9.0));
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn analytic_op_degenerate_points() {
        assert_eq!(analytic_op(JoinOp::Lt, (2.0, 2.0), (2.0, 2.0)), 0.0);
        assert_eq!(analytic_op(JoinOp::Le, (2.0, 2.0), (2.0, 2.0)), 1.0);
        let p = analytic_op(JoinOp::Lt, (1.0, 1.0), (0.0, 2.0));
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn complement_property_on_random_intervals() {
        use rand::prelude::*;
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-10.0..10.0);
            let b = a + rng.gen_range(0.01..5.0);
            let c: f64 = rng.gen_range(-10.0..10.0);
            let d = c + rng.gen_range(0.01..5.0);
            let lt = analytic_op(JoinOp::Lt, (a, b), (c, d));
            let ge = analytic_op(JoinOp::Ge, (a, b), (c, d));
            assert!((lt + ge - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_chain_equals_double_loop() {
        let table = employee_table();
        let q = SingleTableQuery::new(Vec::new());
        let cond = identity_cond("years_exp", JoinOp::Lt, "years_exp");
        let fast =
            true_cardinality_join(&[&table, &table], &[&q, &q], &[vec![cond.clone()]]).unwrap();
        // Straightforward double loop.
        let years: Vec<f64> = table.cr_column(0).to_vec();
        let mut expect = 0u64;
        for &a in &years {
            for &b in &years {
                if a < b {
                    expect += 1;
                }
            }
        }
        assert_eq!(fast, expect);
    }
}
