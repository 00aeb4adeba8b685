//! CSV ingestion, model persistence, scree tables and CSV output.
//!
//! Input tables have a header row and one sample per row. Row numbers in
//! error messages count data rows from 1; columns count from 1.

mod ingest;
mod model_file;
mod output;
mod scree;

pub use ingest::{ingest, ingest_with_centering, read_matrix, read_outcome, Ingested, Table};
pub use model_file::{FitMetadata, MatrixRecord, ModelFile, ThetaRecord, FORMAT_VERSION};
pub use output::{write_predictions, write_tests};
pub use scree::{scree, ScreeRow, ScreeTable};
