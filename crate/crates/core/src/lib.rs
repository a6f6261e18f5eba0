//! Tooling for working with errors in tabular data: build instruction-tuning
//! triplets for table tasks, inject a budgeted mix of synthetic errors into
//! clean tables through pluggable generator backends, and score generated
//! errors against real ones with pattern- and distribution-alignment metrics
//! plus a detection-impact harness.

pub mod annotation;
pub mod detect;
pub mod distribution;
pub mod evaluation;
pub mod generation;
mod http;
pub mod prompt;
pub mod seeding;
pub mod table;

pub use annotation::{AnnotationCollection, ErrorAnnotation, ErrorType};
pub use distribution::Distribution;
pub use table::{CellRef, CellValue, Table};
