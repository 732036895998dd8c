//! Monte Carlo control-limit calibration and run-length estimation.
//!
//! The in-control behaviour of the chart depends only on the category
//! sequence, so limits can be calibrated on any continuous source. Every
//! replication owns an independent random substream, which makes results
//! independent of thread scheduling and lets the bisection reuse the same
//! streams at every candidate limit (common random numbers).
//!
//! A chart's trajectory does not depend on the limit it is checked against,
//! so each replication is simulated once up to the bracket ceiling while
//! recording where its running maximum grows. The run length at any limit
//! below the ceiling is then read off those records exactly; the bisection
//! itself never re-simulates.

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveChart, BranchSet};
use crate::categorize::{categorize_both, CategoryScheme, CategoryVector};
use crate::error::{invalid, Error, Result};
use crate::monitor::SelfStartingMonitor;
use crate::normal;
use crate::rng::{substream, StreamRng};

const MAX_BRACKET_EXPANSIONS: usize = 12;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CalibrationMode {
    /// Categorize against the exact in-control quantiles.
    #[serde(rename = "oracle")]
    OracleQuantiles,
    /// Estimate quantiles sequentially after `m` warm-up observations.
    #[serde(rename = "selfstart")]
    SelfStarting,
}

impl std::str::FromStr for CalibrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::OracleQuantiles),
            "selfstart" => Ok(Self::SelfStarting),
            other => Err(invalid(format!(
                "unknown mode '{other}' (expected oracle or selfstart)"
            ))),
        }
    }
}

/// Simulated in-control data. Normal draws are the inverse-CDF image of the
/// same uniforms, so both sources yield identical category sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationSource {
    Uniform,
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub d: usize,
    pub target_arl0: f64,
    pub replications: u64,
    pub m: usize,
    pub mode: CalibrationMode,
    pub source: ObservationSource,
    pub seed: u64,
    pub h_bracket: (f64, f64),
    /// Bisection stops once the bracket is narrower than this fraction of h.
    pub tolerance: f64,
    pub max_run_length: u64,
    pub branches: BranchSet,
}

impl CalibrationConfig {
    /// Defaults: 2,000 replications, m = 20, oracle quantiles, uniform source,
    /// bracket `(d, 15 d)`, relative tolerance `1e-4`, cap `100 * target`.
    pub fn new(d: usize, target_arl0: f64) -> Self {
        Self {
            d,
            target_arl0,
            replications: 2_000,
            m: 20,
            mode: CalibrationMode::OracleQuantiles,
            source: ObservationSource::Uniform,
            seed: 0,
            h_bracket: (d as f64, 15.0 * d as f64),
            tolerance: 1e-4,
            max_run_length: (100.0 * target_arl0).ceil().max(1.0) as u64,
            branches: BranchSet::all(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid(format!(
                "need at least 2 categories, got d = {}",
                self.d
            )));
        }
        if !(self.target_arl0.is_finite() && self.target_arl0 > 0.0) {
            return Err(invalid("target ARL0 must be positive"));
        }
        if self.replications == 0 {
            return Err(invalid("need at least one replication"));
        }
        let (low, high) = self.h_bracket;
        if !(low.is_finite() && high.is_finite() && low > 0.0 && low < high) {
            return Err(invalid(format!("bad bracket ({low}, {high})")));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if self.max_run_length == 0 {
            return Err(invalid("run-length cap must be positive"));
        }
        if self.mode == CalibrationMode::SelfStarting && self.m == 0 {
            return Err(invalid("self-starting mode needs m >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub length: u64,
    /// The run hit the cap without alarming; `length` is the cap.
    pub censored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLengthSummary {
    pub mean: f64,
    pub std_error: f64,
    pub count: u64,
    /// Runs stopped at the cap; they enter the mean at the cap value.
    pub censored_count: u64,
}

impl RunLengthSummary {
    pub fn from_outcomes(outcomes: &[RunOutcome]) -> Self {
        let n = outcomes.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                count: 0,
                censored_count: 0,
            };
        }
        let mean = outcomes.iter().map(|o| o.length as f64).sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let ss: f64 = outcomes
                .iter()
                .map(|o| (o.length as f64 - mean).powi(2))
                .sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            count: n as u64,
            censored_count: outcomes.iter().filter(|o| o.censored).count() as u64,
        }
    }
}

fn draw(rng: &mut StreamRng, source: ObservationSource) -> f64 {
    let u: f64 = rng.sample(Open01);
    match source {
        ObservationSource::Uniform => u,
        ObservationSource::Normal => normal::quantile(u),
    }
}

fn oracle_scheme(config: &CalibrationConfig) -> Result<CategoryScheme> {
    match config.source {
        ObservationSource::Uniform => CategoryScheme::uniform(config.d),
        ObservationSource::Normal => CategoryScheme::standard_normal(config.d),
    }
}

/// The first `n` oracle-mode category pairs `(ltr, co)` drawn from `rng`.
pub fn oracle_categories(
    config: &CalibrationConfig,
    rng: &mut StreamRng,
    n: usize,
) -> Result<Vec<(CategoryVector, CategoryVector)>> {
    let scheme = oracle_scheme(config)?;
    (0..n)
        .map(|_| categorize_both(draw(rng, config.source), &scheme))
        .collect()
}

/// Runs one in-control chart, calling `visit(tick, statistic)` after every
/// tick until it returns `false` or the cap is reached.
fn drive<F>(config: &CalibrationConfig, limit: f64, rng: &mut StreamRng, mut visit: F) -> Result<()>
where
    F: FnMut(u64, f64) -> bool,
{
    match config.mode {
        CalibrationMode::OracleQuantiles => {
            let scheme = oracle_scheme(config)?;
            let mut chart = AdaptiveChart::new(config.d, limit, config.branches)?;
            for tick in 1..=config.max_run_length {
                let x = draw(rng, config.source);
                let (ltr, co) = categorize_both(x, &scheme)?;
                let step = chart.step(&ltr, &co)?;
                if !visit(tick, step.statistic) {
                    break;
                }
            }
        }
        CalibrationMode::SelfStarting => {
            let mut monitor = SelfStartingMonitor::new(config.d, config.m, limit, config.branches)?;
            for _ in 0..config.m {
                monitor.push(draw(rng, config.source))?;
            }
            for tick in 1..=config.max_run_length {
                let event = monitor.push(draw(rng, config.source))?;
                let statistic = event.step().map_or(0.0, |s| s.statistic);
                if !visit(tick, statistic) {
                    break;
                }
            }
        }
    }
    Ok(())
}

/// One in-control run length at limit `h`, capped at `config.max_run_length`.
pub fn simulate_run_length(
    h: f64,
    config: &CalibrationConfig,
    rng: &mut StreamRng,
) -> Result<RunOutcome> {
    if !(h.is_finite() && h >= 0.0) {
        return Err(invalid(format!(
            "control limit must be nonnegative, got {h}"
        )));
    }
    let mut alarm = None;
    drive(config, h, rng, |tick, statistic| {
        if statistic > h {
            alarm = Some(tick);
            false
        } else {
            true
        }
    })?;
    Ok(match alarm {
        Some(length) => RunOutcome {
            length,
            censored: false,
        },
        None => RunOutcome {
            length: config.max_run_length,
            censored: true,
        },
    })
}

/// Runs `replications` independent runs (in parallel) and summarizes them.
/// Replication `i` is `runner(i)`; results are reduced in index order.
pub fn estimate_arl<F>(replications: u64, runner: F) -> Result<RunLengthSummary>
where
    F: Fn(u64) -> Result<RunOutcome> + Sync + Send,
{
    let outcomes = (0..replications)
        .into_par_iter()
        .map(&runner)
        .collect::<Result<Vec<_>>>()?;
    Ok(RunLengthSummary::from_outcomes(&outcomes))
}

/// In-control ARL at `h`, replication `i` drawing from substream `(seed, i)`.
pub fn arl_at(h: f64, config: &CalibrationConfig) -> Result<RunLengthSummary> {
    config.validate()?;
    estimate_arl(config.replications, |i| {
        let mut rng = substream(config.seed, i, 0);
        simulate_run_length(h, config, &mut rng)
    })
}

/// Running-maximum records of one replication, simulated until the
/// statistic exceeds `ceiling` or the cap is reached.
#[derive(Debug, Clone)]
struct Passage {
    records: Vec<(u64, f64)>,
}

impl Passage {
    fn simulate(config: &CalibrationConfig, ceiling: f64, replication: u64) -> Result<Self> {
        let mut rng = substream(config.seed, replication, 0);
        let mut records = Vec::new();
        let mut best = 0.0;
        drive(config, ceiling, &mut rng, |tick, statistic| {
            if statistic > best {
                best = statistic;
                records.push((tick, statistic));
            }
            statistic <= ceiling
        })?;
        Ok(Self { records })
    }

    fn outcome(&self, h: f64, cap: u64) -> RunOutcome {
        // records are increasing in value, so the first exceedance is a partition point
        let idx = self.records.partition_point(|&(_, v)| v <= h);
        match self.records.get(idx) {
            Some(&(length, _)) => RunOutcome {
                length,
                censored: false,
            },
            None => RunOutcome {
                length: cap,
                censored: true,
            },
        }
    }
}

struct PassageSet {
    ceiling: f64,
    cap: u64,
    passages: Vec<Passage>,
}

impl PassageSet {
    fn simulate(config: &CalibrationConfig, ceiling: f64) -> Result<Self> {
        let passages = (0..config.replications)
            .into_par_iter()
            .map(|i| Passage::simulate(config, ceiling, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ceiling,
            cap: config.max_run_length,
            passages,
        })
    }

    fn summary(&self, h: f64) -> RunLengthSummary {
        debug_assert!(h <= self.ceiling);
        let outcomes: Vec<RunOutcome> = self
            .passages
            .iter()
            .map(|p| p.outcome(h, self.cap))
            .collect();
        RunLengthSummary::from_outcomes(&outcomes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub h: f64,
    pub achieved: RunLengthSummary,
    /// Final bracket around `h`.
    pub bracket: (f64, f64),
    pub bisection_steps: usize,
}

/// Calibration output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub d: usize,
    pub target_arl0: f64,
    pub mode: CalibrationMode,
    pub m: usize,
    pub replications: u64,
    pub seed: u64,
    pub h: f64,
    pub achieved_arl0: f64,
    pub std_error: f64,
}

impl CalibrationReport {
    pub fn new(config: &CalibrationConfig, result: &CalibrationResult) -> Self {
        Self {
            d: config.d,
            target_arl0: config.target_arl0,
            mode: config.mode,
            m: config.m,
            replications: config.replications,
            seed: config.seed,
            h: result.h,
            achieved_arl0: result.achieved.mean,
            std_error: result.achieved.std_error,
        }
    }
}

/// Bisection for the limit whose in-control ARL matches the target.
pub fn find_h(config: &CalibrationConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let target = config.target_arl0;
    let (mut low, mut high) = config.h_bracket;

    let mut paths = PassageSet::simulate(config, high)?;
    let mut expansions = 0;
    while paths.summary(high).mean < target {
        if expansions == MAX_BRACKET_EXPANSIONS {
            return Err(Error::CalibrationFailure(format!(
                "ARL at h = {high} still below target {target}; \
                 raise the run-length cap ({}) or the bracket",
                config.max_run_length
            )));
        }
        low = high;
        high *= 2.0;
        paths = PassageSet::simulate(config, high)?;
        expansions += 1;
    }
    expansions = 0;
    while paths.summary(low).mean >= target {
        if expansions == MAX_BRACKET_EXPANSIONS {
            return Err(Error::CalibrationFailure(format!(
                "ARL at h = {low} already reaches target {target}"
            )));
        }
        high = low;
        low /= 2.0;
        expansions += 1;
    }

    let mut steps = 0;
    while high - low > config.tolerance * 0.5 * (low + high) {
        if steps == MAX_BISECTION_STEPS {
            break;
        }
        let mid = 0.5 * (low + high);
        if paths.summary(mid).mean < target {
            low = mid;
        } else {
            high = mid;
        }
        steps += 1;
    }
    let h = 0.5 * (low + high);
    Ok(CalibrationResult {
        h,
        achieved: paths.summary(h),
        bracket: (low, high),
        bisection_steps: steps,
    })
}
