//! Nonparametric adaptive CUSUM monitoring for arbitrary distributional changes.
//!
//! Observations are categorized twice against (estimated) in-control
//! quantiles, once left-to-right and once center-outward. Four adaptive CUSUM
//! branches run over the two categorizations, each with a Dirichlet prior
//! leaning towards a positive or negative shift; the chart alarms when the
//! largest branch exceeds the control limit, and the set of exceeding
//! branches names the kind of change.
//!
//! Modules, bottom-up:
//!
//! * [`history`] keeps the sorted multiset of past observations.
//! * [`categorize`] builds category schemes and maps observations to cells.
//! * [`cusum`] has the fixed-parameter CUSUM statistics.
//! * [`adaptive`] has the four-branch adaptive chart and its diagnostics.
//! * [`monitor`] wires categorization and the chart into streaming monitors.
//! * [`calibrate`] finds control limits by Monte Carlo bisection.
//! * [`experiments`] reproduces run-length studies for change scenarios.

#![forbid(unsafe_code)]

pub mod adaptive;
pub mod calibrate;
pub mod categorize;
pub mod cusum;
pub mod error;
pub mod experiments;
pub mod history;
pub mod monitor;
pub mod normal;
pub mod rng;

pub use adaptive::{
    default_priors, phat, AdaptiveBranch, AdaptiveChart, Branch, BranchSet, ChartStep, Diagnosis,
    DirichletPrior, SignalReport,
};
pub use calibrate::{
    estimate_arl, find_h, oracle_categories, simulate_run_length, CalibrationConfig,
    CalibrationMode, CalibrationResult, ObservationSource, RunLengthSummary, RunOutcome,
};
pub use categorize::{
    boundaries_from_quantile_function, categorize_co, categorize_ltr, cumulate,
    sequential_quantile, CategoryOrdering, CategoryScheme, CategoryVector, CumulativeVector,
};
pub use cusum::{combined, llr_categorical, llr_ordered, FixedCusum, OutOfControlSpec};
pub use error::{Error, Result};
pub use experiments::{
    arl_table, general_change, generate_stream, run_replication, run_scenario, suite, ChangeSpec,
    DistributionSpec, LimitEntry, LimitTable, Scenario, ScenarioResult, TableDocument, TableRow,
};
pub use history::OrderedHistory;
pub use monitor::{KnownQuantileMonitor, MonitorEvent, MonitorSnapshot, SelfStartingMonitor};
