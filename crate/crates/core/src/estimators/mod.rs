//! Prevalence estimators.

pub mod bias;
pub mod ht;
pub mod matrix;
pub mod panel;
pub mod series;

pub use bias::bias_ratio;
pub use ht::{ht_estimate_w, prevalence_from_w, tpr, HtOptions, Prevalence};
pub use matrix::{
    exact_schedule, testing_probability_from_matrix, KnownProbabilities, ScheduleMatrix, StratumSchedule,
};
pub use panel::{ObservedPanel, PanelCounts, PanelIndex};
pub use series::{EstimateRecord, EstimationOptions, EstimatorKind, OutputFormat};
