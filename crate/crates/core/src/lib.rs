//! Sparse extremal cluster detection: Euclidean projection onto the simplex,
//! cluster counting above a norm threshold, and penalized multinomial
//! likelihood selection of both the number of clusters and the level.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod experiment;
pub mod io;
pub mod numeric;
pub mod selection;
pub mod simplex;
pub mod synthetic;
pub mod tail;

pub use cluster::Cluster;
pub use error::{Error, Result};
pub use selection::{muscle, GridSpec, SelectionResult};
pub use simplex::{project, project_oracle, SimplexPoint};
pub use tail::{ClusterCounts, ProbabilityVector, Sample};
