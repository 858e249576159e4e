//! Table ingestion: column classification, dictionary encoding of
//! categorical values, and lossless two-subcolumn factorization of
//! high-cardinality columns.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column '{column}': missing value")]
    Missing { row: usize, column: String },
    #[error("csv header does not match schema: expected {expected:?}, found {found:?}")]
    Header {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// How a column participates in estimation: continuous columns live in the
/// grid and take range predicates, categorical columns live in the
/// autoregressive model and take equality predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
}

/// Ordered column list with the continuous/categorical split. The column
/// order is fixed at construction and reused as the grid dimension order and
/// the autoregressive column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnDef>,
    /// Indices (into `columns`) of the continuous columns, in column order.
    pub cr_columns: Vec<usize>,
    /// Indices (into `columns`) of the categorical columns, in column order.
    pub ce_columns: Vec<usize>,
}

/// On-disk schema file: column list plus explicit name lists for both sets.
#[derive(Debug, Deserialize)]
struct SchemaFile {
    columns: Vec<ColumnDef>,
    cr: Vec<String>,
    ce: Vec<String>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnDef>) -> Result<Self, DataError> {
        if columns.is_empty() {
            return Err(DataError::Schema("schema has no columns".into()));
        }
        let mut seen = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            if seen.insert(c.name.clone(), i).is_some() {
                return Err(DataError::Schema(format!("duplicate column '{}'", c.name)));
            }
        }
        let cr_columns = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ColumnKind::Continuous)
            .map(|(i, _)| i)
            .collect();
        let ce_columns = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ColumnKind::Categorical)
            .map(|(i, _)| i)
            .collect();
        Ok(Schema {
            columns,
            cr_columns,
            ce_columns,
        })
    }

    /// Parses the schema file format and checks that the `cr`/`ce` name
    /// lists are disjoint and exactly cover the declared columns.
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let file: SchemaFile = serde_json::from_str(text)
            .map_err(|e| DataError::Schema(format!("invalid schema json: {e}")))?;
        let schema = Schema::new(file.columns)?;
        let names = |idx: &[usize]| -> Vec<String> {
            idx.iter()
                .map(|&i| schema.columns[i].name.clone())
                .collect()
        };
        if names(&schema.cr_columns) != file.cr {
            return Err(DataError::Schema(format!(
                "'cr' list {:?} does not match continuous columns {:?}",
                file.cr,
                names(&schema.cr_columns)
            )));
        }
        if names(&schema.ce_columns) != file.ce {
            return Err(DataError::Schema(format!(
                "'ce' list {:?} does not match categorical columns {:?}",
                file.ce,
                names(&schema.ce_columns)
            )));
        }
        Ok(schema)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Position of `column_index` within the CR list, if continuous.
    pub fn cr_slot(&self, column_index: usize) -> Option<usize> {
        self.cr_columns.iter().position(|&i| i == column_index)
    }

    /// Position of `column_index` within the CE list, if categorical.
    pub fn ce_slot(&self, column_index: usize) -> Option<usize> {
        self.ce_columns.iter().position(|&i| i == column_index)
    }
}

/// Bijective value-string <-> dense code mapping, codes assigned in
/// first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    #[serde(skip)]
    forward: HashMap<String, u32>,
    reverse: Vec<String>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encode_or_insert(&mut self, value: &str) -> u32 {
        if let Some(&code) = self.forward.get(value) {
            return code;
        }
        let code = self.reverse.len() as u32;
        self.forward.insert(value.to_string(), code);
        self.reverse.push(value.to_string());
        code
    }

    pub fn encode(&self, value: &str) -> Option<u32> {
        self.forward.get(value).copied()
    }

    pub fn decode(&self, code: u32) -> Option<&str> {
        self.reverse.get(code as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    /// Rebuilds the forward map after deserialization (only `reverse` is
    /// persisted).
    pub fn rebuild_index(&mut self) {
        self.forward = self
            .reverse
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
    }
}

/// Immutable columnar relation: continuous columns as f64 arrays, categorical
/// columns as dense dictionary codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub schema: Schema,
    pub row_count: usize,
    /// One array per CR column, in `schema.cr_columns` order.
    pub cr_data: Vec<Vec<f64>>,
    /// One array per CE column, in `schema.ce_columns` order.
    pub ce_data: Vec<Vec<u32>>,
    /// One dictionary per CE column, same order as `ce_data`.
    pub dictionaries: Vec<Dictionary>,
}

impl Table {
    pub fn cr_column(&self, cr_slot: usize) -> &[f64] {
        &self.cr_data[cr_slot]
    }

    pub fn ce_column(&self, ce_slot: usize) -> &[u32] {
        &self.ce_data[ce_slot]
    }

    /// Distinct code count of a CE column (== dictionary size).
    pub fn ce_cardinality(&self, ce_slot: usize) -> usize {
        self.dictionaries[ce_slot].len()
    }
}

/// Loads a table from an in-memory row stream. Every row must have exactly
/// one field per schema column; CR fields must parse as numbers; empty
/// fields are rejected.
pub fn load_table<I>(rows: I, schema: &Schema) -> Result<Table, DataError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let n_cols = schema.columns.len();
    let mut cr_data: Vec<Vec<f64>> = vec![Vec::new(); schema.cr_columns.len()];
    let mut ce_data: Vec<Vec<u32>> = vec![Vec::new(); schema.ce_columns.len()];
    let mut dictionaries: Vec<Dictionary> = vec![Dictionary::new(); schema.ce_columns.len()];
    let mut row_count = 0usize;

    for (row_idx, row) in rows.into_iter().enumerate() {
        if row.len() != n_cols {
            return Err(DataError::RaggedRow {
                row: row_idx,
                expected: n_cols,
                found: row.len(),
            });
        }
        for (col_idx, field) in row.iter().enumerate() {
            let def = &schema.columns[col_idx];
            if field.is_empty() {
                return Err(DataError::Missing {
                    row: row_idx,
                    column: def.name.clone(),
                });
            }
            match def.kind {
                ColumnKind::Continuous => {
                    let v: f64 = field.trim().parse().map_err(|_| DataError::Parse {
                        row: row_idx,
                        column: def.name.clone(),
                        value: field.clone(),
                    })?;
                    if !v.is_finite() {
                        return Err(DataError::Parse {
                            row: row_idx,
                            column: def.name.clone(),
                            value: field.clone(),
                        });
                    }
                    let slot = schema.cr_slot(col_idx).unwrap();
                    cr_data[slot].push(v);
                }
                ColumnKind::Categorical => {
                    let slot = schema.ce_slot(col_idx).unwrap();
                    let code = dictionaries[slot].encode_or_insert(field);
                    ce_data[slot].push(code);
                }
            }
        }
        row_count += 1;
    }

    Ok(Table {
        schema: schema.clone(),
        row_count,
        cr_data,
        ce_data,
        dictionaries,
    })
}

/// Loads a table from CSV (RFC-4180 quoting, UTF-8). The header row is
/// required and must list the schema's columns in schema order.
pub fn load_table_csv<R: Read>(reader: R, schema: &Schema) -> Result<Table, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = csv_reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let expected: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    if header != expected {
        return Err(DataError::Header {
            expected,
            found: header,
        });
    }
    let mut rows = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        rows.push(record.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    }
    load_table(rows, schema)
}

/// Per-column split of a code `v` into `(hi, lo)` subcolumns with
/// `v = hi * base + lo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSplit {
    Identity,
    Factorized { base: u32 },
}

impl ColumnSplit {
    /// Chooses the split for a column with `distinct` values: factorized
    /// with base `ceil(sqrt(distinct))` iff `distinct > gamma`.
    pub fn choose(distinct: usize, gamma: usize) -> Self {
        if distinct > gamma {
            let base = (distinct as f64).sqrt().ceil() as u32;
            ColumnSplit::Factorized { base: base.max(1) }
        } else {
            ColumnSplit::Identity
        }
    }

    pub fn base(&self) -> Option<u32> {
        match self {
            ColumnSplit::Identity => None,
            ColumnSplit::Factorized { base } => Some(*base),
        }
    }

    pub fn encode(&self, v: u32) -> (u32, Option<u32>) {
        match self {
            ColumnSplit::Identity => (v, None),
            ColumnSplit::Factorized { base } => (v / base, Some(v % base)),
        }
    }

    pub fn decode(&self, hi: u32, lo: Option<u32>) -> u32 {
        match self {
            ColumnSplit::Identity => hi,
            ColumnSplit::Factorized { base } => hi * base + lo.expect("lo subcolumn required"),
        }
    }

    /// Domain sizes of the produced subcolumns, for a column with
    /// `distinct` values.
    pub fn subdomains(&self, distinct: usize) -> Vec<usize> {
        match self {
            ColumnSplit::Identity => vec![distinct],
            ColumnSplit::Factorized { base } => {
                let hi = (distinct - 1) as u32 / base + 1;
                vec![hi as usize, *base as usize]
            }
        }
    }
}

/// Factorization plan for the CE columns of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub gamma: usize,
    /// One entry per CE column, in `schema.ce_columns` order.
    pub splits: Vec<ColumnSplit>,
}

/// Decides, per CE column, whether its code space is split into two
/// subcolumns. A column is factorized iff its distinct count exceeds
/// `gamma` (strictly).
pub fn factorize(table: &Table, gamma: usize) -> Factorization {
    assert!(gamma >= 1, "gamma must be >= 1");
    let splits = (0..table.ce_data.len())
        .map(|slot| ColumnSplit::choose(table.ce_cardinality(slot), gamma))
        .collect();
    Factorization { gamma, splits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema_lat_type() -> Schema {
        Schema::new(vec![
            ColumnDef {
                name: "lat".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "type".into(),
                kind: ColumnKind::Categorical,
            },
        ])
        .unwrap()
    }

    #[test]
    fn first_seen_order_encoding() {
        let schema = schema_lat_type();
        let rows = vec![
            vec!["1.0".to_string(), "deli".to_string()],
            vec!["2.0".to_string(), "pub".to_string()],
            vec!["3.0".to_string(), "deli".to_string()],
        ];
        let table = load_table(rows, &schema).unwrap();
        assert_eq!(table.row_count, 3);
        assert_eq!(table.ce_data[0], vec![0, 1, 0]);
        assert_eq!(table.dictionaries[0].len(), 2);
        assert_eq!(table.dictionaries[0].decode(0), Some("deli"));
        assert_eq!(table.dictionaries[0].decode(1), Some("pub"));
    }

    #[test]
    fn empty_stream() {
        let schema = schema_lat_type();
        let table = load_table(Vec::<Vec<String>>::new(), &schema).unwrap();
        assert_eq!(table.row_count, 0);
        assert!(table.dictionaries[0].is_empty());
        assert!(table.cr_data[0].is_empty());
    }

    #[test]
    fn ragged_row_rejected() {
        let schema = Schema::new(vec![
            ColumnDef {
                name: "a".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "b".into(),
                kind: ColumnKind::Continuous,
            },
            ColumnDef {
                name: "c".into(),
                kind: ColumnKind::Categorical,
            },
        ])
        .unwrap();
        let rows = vec![vec!["1".to_string(), "2".to_string()]];
        match load_table(rows, &schema) {
            Err(DataError::RaggedRow {
                row,
                expected,
                found,
            }) => {
                assert_eq!((row, expected, found), (0, 3, 2));
            }
            other => panic!("expected ragged-row error, got {other:?}"),
        }
    }

    #[test]
    fn parse_failure_names_row_and_column() {
        let schema = schema_lat_type();
        let rows = vec![vec!["not-a-number".to_string(), "deli".to_string()]];
        match load_table(rows, &schema) {
            Err(DataError::Parse { row, column, .. }) => {
                assert_eq!(row, 0);
                assert_eq!(column, "lat");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_value_rejected() {
        let schema = schema_lat_type();
        let rows = vec![vec!["1.5".to_string(), "".to_string()]];
        assert!(matches!(
            load_table(rows, &schema),
            Err(DataError::Missing { .. })
        ));
    }

    #[test]
    fn csv_header_must_match() {
        let schema = schema_lat_type();
        let csv = "lat,kind\n1.0,deli\n";
        assert!(matches!(
            load_table_csv(csv.as_bytes(), &schema),
            Err(DataError::Header { .. })
        ));
        let good = "lat,type\n1.0,deli\n\"2.5\",\"pub, the\"\n";
        let table = load_table_csv(good.as_bytes(), &schema).unwrap();
        assert_eq!(table.row_count, 2);
        assert_eq!(table.dictionaries[0].decode(1), Some("pub, the"));
    }

    #[test]
    fn schema_json_round_trip() {
        let text = r#"{
            "columns": [
                {"name": "x", "kind": "continuous"},
                {"name": "t", "kind": "categorical"}
            ],
            "cr": ["x"],
            "ce": ["t"]
        }"#;
        let schema = Schema::from_json(text).unwrap();
        assert_eq!(schema.cr_columns, vec![0]);
        assert_eq!(schema.ce_columns, vec![1]);

        let bad = r#"{
            "columns": [{"name": "x", "kind": "continuous"}],
            "cr": [],
            "ce": ["x"]
        }"#;
        assert!(Schema::from_json(bad).is_err());
    }

    /// Builds a one-CE-column table with `distinct` values each appearing
    /// once.
    fn table_with_distinct(distinct: usize) -> Table {
        let schema = Schema::new(vec![ColumnDef {
            name: "c".into(),
            kind: ColumnKind::Categorical,
        }])
        .unwrap();
        let rows: Vec<Vec<String>> = (0..distinct).map(|i| vec![format!("v{i}")]).collect();
        load_table(rows, &schema).unwrap()
    }

    #[test]
    fn factorize_threshold_is_strict() {
        let table = table_with_distinct(2000);
        let f = factorize(&table, 2000);
        assert_eq!(f.splits[0], ColumnSplit::Identity);

        let table = table_with_distinct(2001);
        let f = factorize(&table, 2000);
        assert_eq!(f.splits[0], ColumnSplit::Factorized { base: 45 });
    }

    #[test]
    fn factorize_code_2000_with_base_45() {
        // 2001 distinct codes -> base 45; code 2000 splits as 44*45 + 20.
        let split = ColumnSplit::choose(2001, 2000);
        assert_eq!(split.base(), Some(45));
        assert_eq!(split.encode(2000), (44, Some(20)));
        // Round-trip every code by brute force.
        for v in 0..2001u32 {
            let (hi, lo) = split.encode(v);
            assert_eq!(split.decode(hi, lo), v);
        }
        assert_eq!(split.subdomains(2001), vec![45, 45]);
    }

    #[test]
    fn single_distinct_is_identity() {
        let table = table_with_distinct(1);
        let f = factorize(&table, 1);
        assert_eq!(f.splits[0], ColumnSplit::Identity);
    }

    #[test]
    fn deterministic_ingestion() {
        let schema = schema_lat_type();
        let rows: Vec<Vec<String>> = (0..100)
            .map(|i| vec![format!("{}", i as f64 * 0.5), format!("t{}", i % 7)])
            .collect();
        let t1 = load_table(rows.clone(), &schema).unwrap();
        let t2 = load_table(rows, &schema).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(
            serde_json::to_string(&t1).unwrap(),
            serde_json::to_string(&t2).unwrap()
        );
    }

    #[test]
    fn dictionary_round_trip_reproduces_source() {
        let schema = schema_lat_type();
        let values = ["a", "b", "a", "c", "b", "a"];
        let rows: Vec<Vec<String>> = values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![format!("{i}"), v.to_string()])
            .collect();
        let table = load_table(rows, &schema).unwrap();
        let decoded: Vec<&str> = table.ce_data[0]
            .iter()
            .map(|&c| table.dictionaries[0].decode(c).unwrap())
            .collect();
        assert_eq!(decoded, values);
    }

    proptest! {
        #[test]
        fn factorization_round_trip(distinct in 1usize..6000, gamma in 1usize..3000) {
            let split = ColumnSplit::choose(distinct, gamma);
            let step = (distinct / 97).max(1);
            for v in (0..distinct as u32).step_by(step) {
                let (hi, lo) = split.encode(v);
                prop_assert_eq!(split.decode(hi, lo), v);
                let doms = split.subdomains(distinct);
                prop_assert!((hi as usize) < doms[0]);
                if let Some(lo) = lo {
                    prop_assert!((lo as usize) < doms[1]);
                }
            }
        }
    }
}
