//! Faithfulness evaluation of attribution methods on image classifiers,
//! exhaustive hyperparameter search over the evaluation protocol, and
//! rank aggregation across configurations.

pub mod attribution;
pub mod data;
pub mod error;
pub mod faithfulness;
pub mod manipulation;
pub mod mrr;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod seed;

pub use attribution::{attribute_dataset, Attribution, AttributionSettings, Method};
pub use data::{Dataset, ImageShape, Sample};
pub use error::{Error, Result};
pub use faithfulness::{evaluate, Aggregation, Direction, FaithfulnessConfig, Perturbation};
pub use manipulation::{grid_evaluate, inter_manipulate, intra_manipulate, FeasibleSet, GridResult};
pub use mrr::{mrr, mrr_cross_dataset, rank_matrix, rank_scores, RankVector};
pub use nn::{Model, OutputKind};
