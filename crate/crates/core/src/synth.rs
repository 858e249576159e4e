//! Seeded synthetic datasets: a mixed continuous/categorical table with
//! skew and cross-column correlation, a heavy-skew single-column table, and
//! small hand-built fixtures for join tests.

use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_distr::{Distribution, Normal};

use crate::data::{load_table, ColumnDef, ColumnKind, Schema, Table};
use crate::seed;

/// Cumulative Zipf(s) weights over ranks 1..=n.
pub fn zipf_cumulative(s: f64, n: usize) -> Vec<f64> {
    let weights: Vec<f64> = (1..=n).map(|r| 1.0 / (r as f64).powf(s)).collect();
    let total: f64 = weights.iter().sum();
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cum.push(acc);
    }
    cum
}

/// One Zipf-distributed rank in 1..=n.
pub fn zipf_rank(cum: &[f64], rng: &mut StdRng) -> usize {
    let u: f64 = rng.gen();
    cum.partition_point(|&c| c < u) + 1
}

fn mixed_schema() -> Schema {
    Schema::new(vec![
        ColumnDef {
            name: "x".into(),
            kind: ColumnKind::Continuous,
        },
        ColumnDef {
            name: "y".into(),
            kind: ColumnKind::Continuous,
        },
        ColumnDef {
            name: "z".into(),
            kind: ColumnKind::Continuous,
        },
        ColumnDef {
            name: "cat_s".into(),
            kind: ColumnKind::Categorical,
        },
        ColumnDef {
            name: "cat_m".into(),
            kind: ColumnKind::Categorical,
        },
        ColumnDef {
            name: "cat_l".into(),
            kind: ColumnKind::Categorical,
        },
    ])
    .unwrap()
}

/// Mixed-shape table: three continuous columns (bimodal Gaussian, Zipf
/// ranks, uniform) and three categorical columns with roughly 10 / 100 /
/// 5000 distinct values, each correlated with one continuous column.
pub fn mixed_dataset(n: usize, seed_value: u64) -> (Schema, Vec<Vec<String>>) {
    let schema = mixed_schema();
    let mut rng = StdRng::seed_from_u64(seed::mix_str(seed_value, "mixed-data"));
    let mode_a = Normal::new(35.0, 8.0).unwrap();
    let mode_b = Normal::new(70.0, 6.0).unwrap();
    let zipf_cum = zipf_cumulative(1.2, 1000);

    let rows = (0..n)
        .map(|_| {
            let x: f64 = if rng.gen_bool(0.6) {
                mode_a.sample(&mut rng)
            } else {
                mode_b.sample(&mut rng)
            };
            let rank = zipf_rank(&zipf_cum, &mut rng);
            let y = rank as f64;
            let z: f64 = rng.gen_range(0.0..100.0);

            let s_code = if rng.gen_bool(0.8) {
                if x < 50.0 {
                    rng.gen_range(0..5)
                } else {
                    rng.gen_range(5..10)
                }
            } else {
                rng.gen_range(0..10)
            };
            let m_code = if rng.gen_bool(0.8) {
                (rank - 1) / 10
            } else {
                rng.gen_range(0..100)
            };
            let l_code = if rng.gen_bool(0.9) {
                (z * 50.0) as usize
            } else {
                rng.gen_range(0..5000)
            };

            vec![
                format!("{x:.3}"),
                format!("{y}"),
                format!("{z:.3}"),
                format!("s{s_code}"),
                format!("m{m_code}"),
                format!("u{}", l_code.min(4999)),
            ]
        })
        .collect();
    (schema, rows)
}

pub fn mixed_table(n: usize, seed_value: u64) -> Table {
    let (schema, rows) = mixed_dataset(n, seed_value);
    load_table(rows, &schema).unwrap()
}

/// Heavy-skew single-column table: Zipf(s) ranks over 1..=ranks.
pub fn zipf_dataset(n: usize, s: f64, ranks: usize, seed_value: u64) -> (Schema, Vec<Vec<String>>) {
    let schema = Schema::new(vec![ColumnDef {
        name: "v".into(),
        kind: ColumnKind::Continuous,
    }])
    .unwrap();
    let mut rng = StdRng::seed_from_u64(seed::mix_str(seed_value, "zipf-data"));
    let cum = zipf_cumulative(s, ranks);
    let rows = (0..n)
        .map(|_| vec![format!("{}", zipf_rank(&cum, &mut rng))])
        .collect();
    (schema, rows)
}

pub fn zipf_table(n: usize, s: f64, ranks: usize, seed_value: u64) -> Table {
    let (schema, rows) = zipf_dataset(n, s, ranks, seed_value);
    load_table(rows, &schema).unwrap()
}

/// Eight employees over (years_exp, salary, job), arranged so a 2x2 grid
/// yields two tester cells and two programmer cells whose year ranges
/// exercise all three join-condition classifications.
pub fn employee_table() -> Table {
    let schema = Schema::new(vec![
        ColumnDef {
            name: "years_exp".into(),
            kind: ColumnKind::Continuous,
        },
        ColumnDef {
            name: "salary".into(),
            kind: ColumnKind::Continuous,
        },
        ColumnDef {
            name: "job".into(),
            kind: ColumnKind::Categorical,
        },
    ])
    .unwrap();
    let rows: Vec<Vec<String>> = [
        (1, 3000, "Tester"),
        (4, 3000, "Tester"),
        (6, 3000, "Tester"),
        (7, 3000, "Tester"),
        (2, 6000, "Programmer"),
        (3, 6000, "Programmer"),
        (8, 6000, "Programmer"),
        (9, 6000, "Programmer"),
    ]
    .iter()
    .map(|(y, s, j)| vec![y.to_string(), s.to_string(), j.to_string()])
    .collect();
    load_table(rows, &schema).unwrap()
}

fn clustered_table(clusters: &[&[i64]]) -> Table {
    let schema = Schema::new(vec![
        ColumnDef {
            name: "v".into(),
            kind: ColumnKind::Continuous,
        },
        ColumnDef {
            name: "tag".into(),
            kind: ColumnKind::Categorical,
        },
    ])
    .unwrap();
    let mut rows = Vec::new();
    for cluster in clusters {
        for (i, v) in cluster.iter().enumerate() {
            rows.push(vec![
                v.to_string(),
                if i % 2 == 0 { "a" } else { "b" }.to_string(),
            ]);
        }
    }
    load_table(rows, &schema).unwrap()
}

/// Two 16-row tables whose 2-bucket grids produce value clusters that are
/// pairwise fully separated under `left.v < right.v`: every cell pair
/// classifies as satisfied or unsatisfied, never partial. Power-of-two row
/// counts keep frequency-oracle arithmetic exact in f64.
pub fn separated_pair_tables() -> (Table, Table) {
    let left = clustered_table(&[&[0, 1, 2, 3, 0, 1, 2, 3], &[10, 11, 12, 13, 10, 11, 12, 13]]);
    let right = clustered_table(&[&[4, 5, 4, 5, 4, 5, 4, 5], &[20, 21, 20, 21, 20, 21, 20, 21]]);
    (left, right)
}

/// Three tables extending `separated_pair_tables` to a chain
/// `t0.v < t1.v < t2.v` with all pairs fully classified.
pub fn separated_chain_tables() -> (Table, Table, Table) {
    let (left, middle) = separated_pair_tables();
    let right = clustered_table(&[&[6, 7, 6, 7, 6, 7, 6, 7], &[30, 31, 30, 31, 30, 31, 30, 31]]);
    (left, middle, right)
}

/// Writes rows as CSV with a header row matching the schema column order.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    schema: &Schema,
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    writeln!(file, "{}", header.join(","))?;
    for row in rows {
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

/// Schema file JSON for a schema (the `cr`/`ce` lists mirror the column
/// kinds).
pub fn schema_file_json(schema: &Schema) -> String {
    let names = |idx: &[usize]| -> Vec<&str> {
        idx.iter()
            .map(|&i| schema.columns[i].name.as_str())
            .collect()
    };
    serde_json::to_string_pretty(&serde_json::json!({
        "columns": schema.columns.iter().map(|c| serde_json::json!({
            "name": c.name,
            "kind": match c.kind { ColumnKind::Continuous => "continuous", ColumnKind::Categorical => "categorical" },
        })).collect::<Vec<_>>(),
        "cr": names(&schema.cr_columns),
        "ce": names(&schema.ce_columns),
    }))
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_dataset_is_deterministic_and_shaped() {
        let (schema, rows_a) = mixed_dataset(2000, 7);
        let (_, rows_b) = mixed_dataset(2000, 7);
        assert_eq!(rows_a, rows_b);
        let table = load_table(rows_a, &schema).unwrap();
        assert_eq!(table.row_count, 2000);
        let card_s = table.ce_cardinality(0);
        let card_m = table.ce_cardinality(1);
        let card_l = table.ce_cardinality(2);
        assert!((8..=10).contains(&card_s), "cat_s distinct {card_s}");
        assert!((60..=100).contains(&card_m), "cat_m distinct {card_m}");
        assert!(card_l > 1000, "cat_l distinct {card_l}");
    }

    #[test]
    fn employee_fixture_grid_shape() {
        use crate::grid::{build_grid, GridMode};
        let table = employee_table();
        let grid = build_grid(&table, &[2, 2], GridMode::Uniform, 4).unwrap();
        assert_eq!(grid.cell_count(), 4);
        // Tester cells: years [1,4] and [6,7]; programmer cells [2,3], [8,9].
        let spans: Vec<(f64, f64)> = grid.cells.iter().map(|c| (c.min[0], c.max[0])).collect();
        assert!(spans.contains(&(1.0, 4.0)));
        assert!(spans.contains(&(6.0, 7.0)));
        assert!(spans.contains(&(2.0, 3.0)));
        assert!(spans.contains(&(8.0, 9.0)));
    }

    #[test]
    fn separated_fixtures_have_two_clusters_each() {
        use crate::grid::{build_grid, GridMode};
        let (left, right) = separated_pair_tables();
        for t in [&left, &right] {
            assert_eq!(t.row_count, 16);
            let grid = build_grid(t, &[2], GridMode::Uniform, 4).unwrap();
            assert_eq!(grid.cell_count(), 2);
        }
    }

    #[test]
    fn schema_file_json_parses_back() {
        let schema = mixed_schema();
        let text = schema_file_json(&schema);
        let parsed = Schema::from_json(&text).unwrap();
        assert_eq!(parsed, schema);
    }
}
