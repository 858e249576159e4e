//! Cardinality estimation over mixed continuous/categorical tables.
//!
//! The engine superimposes a multi-dimensional grid on the continuous
//! columns and trains a masked autoregressive density model over the
//! resulting grid cell id plus the categorical columns. Single-table
//! queries are answered with one batched model pass over the grid cells
//! that overlap the query box; range-join queries (inequality,
//! point-in-interval, interval-overlap) are estimated from per-cell
//! cardinalities without executing the join.

pub mod armodel;
pub mod bench;
pub mod bundle;
pub mod data;
pub mod density;
pub mod estimator;
pub mod grid;
pub mod matrix;
pub mod oracle;
pub mod rangejoin;
pub mod seed;
pub mod synth;

pub use armodel::{ColumnSpec, MaskedARModel, TrainConfig};
pub use data::{load_table_csv, ColumnKind, Dictionary, Factorization, Schema, Table};
pub use density::{FrequencyOracle, PointDensity};
pub use estimator::{CardGrid, EngineConfig, Estimate, SingleTableQuery};
pub use grid::{CdfModel, DimensionLayout, Grid, GridCell, GridMode, RangeBox};
pub use rangejoin::{ChainJoinQuery, JoinCondition, JoinQuery};
