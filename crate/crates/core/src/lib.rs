//! Generalized debiased Lasso, one-column update formulas, Gaussian design
//! simulation and resampling-based variable selection with FDR control.

pub mod debias;
pub mod design;
pub mod error;
pub mod lasso;
pub mod linalg;
pub mod projection;
pub mod residualizer;
pub mod rng;
pub mod selection;
pub mod update;

pub use debias::{debias_classic, debias_generalized, DebiasContext, DebiasResult};
pub use design::{ColumnSampler, GaussianDesignModel};
pub use error::{Error, Result};
pub use lasso::{kkt_report, soft_threshold, solve_lasso, Gram, KktReport, LassoFit, LassoProblem, SolverOptions};
pub use projection::ProjectionFamily;
pub use residualizer::Residualizer;
pub use rng::Substream;
pub use selection::{SelectionOutcome, SelectionProblem};
pub use update::{exact_update_oracle, normalized_update_error, sign_change_count, ColumnUpdater, UpdateMode};
