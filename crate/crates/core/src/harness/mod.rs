//! Replicated simulation runs, data files and run manifests.

pub mod io;
pub mod manifest;
pub mod tables;

pub use manifest::RunManifest;
pub use tables::{reproduce_table, reproduce_table_with, ReproduceConfig, TableCell, TableReport, TABLE_IDS};
