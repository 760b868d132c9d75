//! Multilingual factual-consistency probing for masked language models.
//!
//! The pipeline has two halves. [`builder`] turns raw machine-translation outputs, entity
//! labels, mLAMA templates and review patches into validated [`corpus::LanguagePack`]s.
//! [`prober`] then queries a [`scorer::Scorer`] with typed, multi-token cloze queries over
//! each pack, and [`metrics`] reduces the predictions to consistency, accuracy and
//! consistency-accuracy. [`report`] renders tables and charts.

pub mod builder;
pub mod corpus;
pub mod metrics;
pub mod prober;
pub mod report;
pub mod scorer;

pub use builder::{BuildConfig, BuildReport, PackStats};
pub use corpus::{CandidateEntry, LanguagePack, Relation, ReviewStatus, Template, Tuple};
pub use metrics::{MetricsReport, RelationMetrics};
pub use prober::{Prediction, PredictionSet, PunctuationPolicy};
pub use scorer::{ScoreRequest, ScoreResponse, Scorer};
