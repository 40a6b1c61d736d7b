//! Gradient-boosted trees with native missing-value routing, exact Tree SHAP
//! attributions, and the preprocessing / evaluation harness used to compare a
//! fully preprocessed pipeline against a raw one on tabular clinical data.

pub mod error;
pub mod eval;
pub mod explain;
pub mod gbdt;
pub mod plot;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod tabular;

pub use error::{Error, Result};
pub use gbdt::{Forest, GbdtParams};
pub use tabular::{BinaryTarget, ColumnKind, ColumnSchema, FeatureMatrix, Table};
