//! Survey-scale latent variable analysis: ordinal data preparation,
//! exploratory factor analysis with item pruning, reliability, confirmatory
//! factor analysis and exhaustive structural model search.

pub mod correlation;
pub mod data;
pub mod dist;
pub mod efa;
pub mod fitindex;
pub mod ingest;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod reliability;
pub mod report;
pub mod search;
pub mod sem;
pub mod synth;

pub use correlation::{CorrMethod, CorrelationConfig, CorrelationEstimate, MethodChoice};
pub use data::NumericMatrix;
pub use efa::{EfaSolution, PruneCriteria, PruneResult};
pub use fitindex::{fit_indices, srmr, FitIndices};
pub use ingest::{OrdinalDataset, RowFilter, Schema, VariableSpec};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineOutcome};
pub use reliability::{Cronbach, Omega, ReliabilityReport};
pub use search::{EnumerationRule, Measurement, SearchResult, StructuralSkeleton};
pub use sem::{Estimator, FitOptions, SemFit, SemModel};
pub use synth::GeneratorSpec;
