//! Monitoring pipeline for large fleets of seasonal performance metrics.
//!
//! The pipeline narrows a portfolio of campaigns down to the ones whose setup
//! and week-over-week behavior are stable, sums their hourly metrics per
//! targeting criterion and media channel, turns each sum into a seasonal
//! difference ("change metric") and runs an asymmetric streaming detector over
//! it that only alerts on drops.
//!
//! ```text
//! portfolio ──► stability ──► aggregation ──► change metric ──► detector ──► evaluation
//!                  ▲                                                            ▲
//!   simulator ─────┴──── tsdb (put lines, file store)          ground truth ───┘
//! ```

pub mod aggregation;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod simulator;
pub mod stability;
pub mod tsdb;
pub mod types;

pub use aggregation::{
    aggregate_cluster, aggregate_members, change_metric, clusters_of, downsample_hourly,
    ChangeMetric, ClusterKey,
};
pub use detector::{
    detect_series, shrink_beta, BetaPolicy, DetectorConfig, DetectorState, Label, LabeledPoint,
    NegativeRule,
};
pub use error::{Error, Result};
pub use evaluation::{confusion, f1, stability_report, Confusion, EvalReport, StabilityRow};
pub use pipeline::{go_live, run_detection, run_scenario, DetectionRun, ScenarioRun};
pub use simulator::{
    generate_portfolio, inject_incidents, simulate_metric, Behavior, GroundTruth, Horizon,
    IncidentKind, IncidentSpec, Scenario, SimCampaign,
};
pub use stability::{
    check_setup, is_stable, pearson_correlation, refresh_stable_set, window_vector, StableSet,
};
pub use tsdb::{encode_put, parse_put, FileStore, PutLine};
pub use types::{
    hour_floor, CampaignRecord, CampaignStatus, HourlySeries, MediaChannel, PipelineConfig,
    RawSeries, TargetingCriterion, Timestamp, HOUR,
};
