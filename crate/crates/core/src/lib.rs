//! Two-stage gene selection for high-dimensional classification data.
//!
//! Stage one fits a gradient-boosted tree ensemble with a regularized
//! second-order objective and keeps every gene that earned positive split
//! gain. Stage two runs a genetic wrapper search over binary masks of the
//! surviving genes, scoring each mask by cross-validated k-nearest-neighbour
//! accuracy and preferring smaller masks on ties.
//!
//! Around the two stages sit the pieces needed to evaluate a selection:
//! CSV loading, KNN imputation, min-max scaling, stratified repeated folds,
//! three classifiers (KNN, Gaussian naive Bayes, linear SVM), macro-averaged
//! metrics and the Wilcoxon signed-rank test.

pub mod boosting;
pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod ga;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;

pub use boosting::{BoostParams, BoostedEnsemble, ImportanceReport, Loss, Targets};
pub use classifiers::{ClassifierKind, ClassifierSpec, TrainedClassifier};
pub use dataset::{Dataset, FoldPlan, LabelColumn, LoadOptions, MinMaxScaler, MissingMask};
pub use error::{Error, Result};
pub use ga::{Chromosome, GaConfig, GaTrace};
pub use metrics::{ConfusionMatrix, CvSummary, MetricReport};
pub use pipeline::{PipelineConfig, PipelineReport, Protocol};
pub use stats::{WilcoxonMethod, WilcoxonOptions, WilcoxonResult, ZeroPolicy};
pub use synth::{SynthData, SynthSpec};
