//! Change scenarios and detection-delay (ARL1) studies.
//!
//! A replication warms up on `m` in-control observations, then monitors with
//! the self-starting chart. Observations at monitored ticks `1..tau-1` are
//! in-control and ticks `tau..` follow the changed law. Detection delay is
//! `alarm_tick - tau + 1`. Runs that alarm before `tau` are discarded and
//! redrawn from a fresh substream; the discard rate is reported.

use std::fmt;
use std::io::Write;

use rand::distr::{Distribution, Uniform};
use rand_distr::{Beta, Exp, Gamma, LogNormal, Normal, StudentT, Weibull};
use serde::{Deserialize, Serialize};

use crate::adaptive::{BranchSet, SignalReport};
use crate::calibrate::{CalibrationReport, RunLengthSummary, RunOutcome};
use crate::error::{invalid, Error, Result};
use crate::monitor::SelfStartingMonitor;
use crate::rng::{substream, StreamRng};

/// Upper bound on redraws for a single replication.
const MAX_ATTEMPTS: u64 = 10_000;

/// How pre-change alarms are handled, recorded in every results document.
pub const EARLY_ALARM_CONVENTION: &str = "pre-change alarms discarded and redrawn";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum DistributionSpec {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Student t; `standardized` divides by `sqrt(df / (df - 2))`.
    T {
        df: f64,
        #[serde(default)]
        standardized: bool,
    },
    /// Lognormal; `standardized` maps `x` to `(x - 3) / 1.6`.
    Lognormal {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        standardized: bool,
    },
    Exponential {
        rate: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Weibull {
        shape: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl DistributionSpec {
    pub fn standard_normal() -> Self {
        DistributionSpec::Normal { mean: 0.0, sd: 1.0 }
    }

    /// `t(2.5) / sqrt(5)`.
    pub fn standardized_t() -> Self {
        DistributionSpec::T {
            df: 2.5,
            standardized: true,
        }
    }

    /// `(LN(1, 0.5) - 3) / 1.6`.
    pub fn standardized_lognormal() -> Self {
        DistributionSpec::Lognormal {
            mu: 1.0,
            sigma: 0.5,
            standardized: true,
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        let bad = |e: &dyn fmt::Display| invalid(format!("{self}: {e}"));
        Ok(match *self {
            DistributionSpec::Normal { mean, sd } => {
                Sampler::Normal(Normal::new(mean, sd).map_err(|e| bad(&e))?)
            }
            DistributionSpec::T { df, standardized } => {
                if standardized && df <= 2.0 {
                    return Err(invalid("standardized t needs df > 2"));
                }
                let scale = if standardized {
                    (df / (df - 2.0)).sqrt().recip()
                } else {
                    1.0
                };
                Sampler::T(StudentT::new(df).map_err(|e| bad(&e))?, scale)
            }
            DistributionSpec::Lognormal {
                mu,
                sigma,
                standardized,
            } => Sampler::Lognormal(
                LogNormal::new(mu, sigma).map_err(|e| bad(&e))?,
                standardized,
            ),
            DistributionSpec::Exponential { rate } => {
                if rate.is_nan() || rate <= 0.0 {
                    return Err(invalid("exponential rate must be positive"));
                }
                Sampler::Exponential(Exp::new(rate).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Gamma { shape, rate } => {
                if rate.is_nan() || rate <= 0.0 {
                    return Err(invalid("gamma rate must be positive"));
                }
                Sampler::Gamma(Gamma::new(shape, rate.recip()).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Weibull { shape, scale } => {
                Sampler::Weibull(Weibull::new(scale, shape).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Uniform { low, high } => {
                Sampler::Uniform(Uniform::new(low, high).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Beta { a, b } => Sampler::Beta(Beta::new(a, b).map_err(|e| bad(&e))?),
        })
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DistributionSpec::Normal { mean, sd } => write!(f, "N({} {})", num(mean), num(sd)),
            DistributionSpec::T { df, standardized } => {
                if standardized {
                    write!(f, "t({})/sqrt({})", num(df), num(df / (df - 2.0)))
                } else {
                    write!(f, "t({})", num(df))
                }
            }
            DistributionSpec::Lognormal {
                mu,
                sigma,
                standardized,
            } => {
                if standardized {
                    write!(f, "(LN({} {})-3)/1.6", num(mu), num(sigma))
                } else {
                    write!(f, "LN({} {})", num(mu), num(sigma))
                }
            }
            DistributionSpec::Exponential { rate } => write!(f, "Exp({})", num(rate)),
            DistributionSpec::Gamma { shape, rate } => {
                write!(f, "Gamma({} {})", num(shape), num(rate))
            }
            DistributionSpec::Weibull { shape, scale } => {
                if scale == 1.0 {
                    write!(f, "Weibull({})", num(shape))
                } else {
                    write!(f, "Weibull({} {})", num(shape), num(scale))
                }
            }
            DistributionSpec::Uniform { low, high } => write!(f, "U({} {})", num(low), num(high)),
            DistributionSpec::Beta { a, b } => write!(f, "Beta({} {})", num(a), num(b)),
        }
    }
}

/// Prepared random-variate generator for a [`DistributionSpec`].
#[derive(Debug, Clone, Copy)]
pub enum Sampler {
    Normal(Normal<f64>),
    T(StudentT<f64>, f64),
    Lognormal(LogNormal<f64>, bool),
    Exponential(Exp<f64>),
    Gamma(Gamma<f64>),
    Weibull(Weibull<f64>),
    Uniform(Uniform<f64>),
    Beta(Beta<f64>),
}

impl Sampler {
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Sampler::Normal(d) => d.sample(rng),
            Sampler::T(d, scale) => d.sample(rng) * scale,
            Sampler::Lognormal(d, standardized) => {
                let x = d.sample(rng);
                if *standardized {
                    (x - 3.0) / 1.6
                } else {
                    x
                }
            }
            Sampler::Exponential(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Weibull(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Beta(d) => d.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChangeSpec {
    /// Add `delta` to post-change observations.
    Location { delta: f64 },
    /// Multiply post-change observations by `delta > 0`.
    Scale { delta: f64 },
    /// Draw post-change observations from another law.
    Swap { to: DistributionSpec },
}

impl ChangeSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ChangeSpec::Location { delta } if !delta.is_finite() => {
                Err(invalid("location delta must be finite"))
            }
            ChangeSpec::Scale { delta } if !(delta.is_finite() && delta > 0.0) => {
                Err(invalid("scale delta must be positive"))
            }
            ChangeSpec::Swap { to } => to.sampler().map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn label(&self, in_control: &DistributionSpec) -> String {
        match self {
            ChangeSpec::Location { delta } => format!("{in_control}+{delta}"),
            ChangeSpec::Scale { delta } => format!("{in_control}x{delta}"),
            ChangeSpec::Swap { to } => format!("{in_control}->{to}"),
        }
    }
}

fn default_arl0() -> f64 {
    500.0
}

fn default_m() -> usize {
    20
}

fn default_d() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub id: String,
    pub in_control: DistributionSpec,
    pub change: ChangeSpec,
    pub tau: u64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_arl0")]
    pub arl0_target: f64,
    #[serde(default)]
    pub branches: Option<BranchSet>,
}

impl Scenario {
    pub fn new(in_control: DistributionSpec, change: ChangeSpec, tau: u64) -> Self {
        Self {
            id: String::new(),
            in_control,
            change,
            tau,
            m: default_m(),
            d: default_d(),
            arl0_target: default_arl0(),
            branches: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(invalid("change point tau must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("warm-up size m must be at least 1"));
        }
        if self.d < 2 {
            return Err(invalid(format!(
                "need at least 2 categories, got d = {}",
                self.d
            )));
        }
        if !(self.arl0_target.is_finite() && self.arl0_target > 0.0) {
            return Err(invalid("ARL0 target must be positive"));
        }
        self.in_control.sampler()?;
        self.change.validate()
    }

    pub fn label(&self) -> String {
        self.change.label(&self.in_control)
    }

    /// Monitored ticks allowed after the change before a run counts as censored.
    pub fn max_run_length(&self) -> u64 {
        self.tau + (100.0 * self.arl0_target).ceil() as u64
    }
}

/// Observation generator for one replication stream.
pub struct StreamGenerator {
    in_control: Sampler,
    post: PostChange,
    tau: u64,
    warmup_left: usize,
    tick: u64,
    rng: StreamRng,
}

enum PostChange {
    Location(f64),
    Scale(f64),
    Swap(Sampler),
}

impl StreamGenerator {
    pub fn new(scenario: &Scenario, rng: StreamRng) -> Result<Self> {
        scenario.validate()?;
        let post = match scenario.change {
            ChangeSpec::Location { delta } => PostChange::Location(delta),
            ChangeSpec::Scale { delta } => PostChange::Scale(delta),
            ChangeSpec::Swap { to } => PostChange::Swap(to.sampler()?),
        };
        Ok(Self {
            in_control: scenario.in_control.sampler()?,
            post,
            tau: scenario.tau,
            warmup_left: scenario.m,
            tick: 0,
            rng,
        })
    }

    /// Next observation: warm-up values first, then monitored ticks.
    pub fn next_value(&mut self) -> f64 {
        if self.warmup_left > 0 {
            self.warmup_left -= 1;
            return self.in_control.sample(&mut self.rng);
        }
        self.tick += 1;
        if self.tick < self.tau {
            return self.in_control.sample(&mut self.rng);
        }
        match &self.post {
            PostChange::Location(delta) => self.in_control.sample(&mut self.rng) + delta,
            PostChange::Scale(delta) => self.in_control.sample(&mut self.rng) * delta,
            PostChange::Swap(sampler) => sampler.sample(&mut self.rng),
        }
    }
}

/// The `m` warm-up values followed by `monitored` ticks of the scenario.
pub fn generate_stream(scenario: &Scenario, rng: StreamRng, monitored: usize) -> Result<Vec<f64>> {
    let mut generator = StreamGenerator::new(scenario, rng)?;
    Ok((0..scenario.m + monitored)
        .map(|_| generator.next_value())
        .collect())
}

/// Result of one replication after discarding pre-change alarms.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub delay: RunOutcome,
    pub early_alarms: u64,
    pub signal: Option<SignalReport>,
}

/// Replication `replication` of `scenario` at limit `h`.
pub fn run_replication(
    scenario: &Scenario,
    h: f64,
    seed: u64,
    replication: u64,
) -> Result<ReplicationOutcome> {
    let cap = scenario.max_run_length();
    let branches = scenario.branches.unwrap_or_default();
    for attempt in 0..MAX_ATTEMPTS {
        let mut generator = StreamGenerator::new(scenario, substream(seed, replication, attempt))?;
        let mut monitor = SelfStartingMonitor::new(scenario.d, scenario.m, h, branches)?;
        for _ in 0..scenario.m {
            monitor.push(generator.next_value())?;
        }
        let mut early = false;
        let mut finished = None;
        for tick in 1..=cap {
            let event = monitor.push(generator.next_value())?;
            let signal = event.step().and_then(|s| s.signal.clone());
            if let Some(signal) = signal {
                if tick < scenario.tau {
                    early = true;
                } else {
                    finished = Some((tick, signal));
                }
                break;
            }
        }
        if early {
            continue;
        }
        return Ok(match finished {
            Some((tick, signal)) => ReplicationOutcome {
                delay: RunOutcome {
                    length: tick - scenario.tau + 1,
                    censored: false,
                },
                early_alarms: attempt,
                signal: Some(signal),
            },
            None => ReplicationOutcome {
                delay: RunOutcome {
                    length: cap - scenario.tau + 1,
                    censored: true,
                },
                early_alarms: attempt,
                signal: None,
            },
        });
    }
    Err(Error::InternalState(format!(
        "replication {replication} alarmed before the change {MAX_ATTEMPTS} times"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub summary: RunLengthSummary,
    pub early_alarms: u64,
    /// Fraction of attempted runs that alarmed before the change.
    pub early_rate: f64,
}

/// Detection-delay summary over `replications` runs.
pub fn run_scenario(
    scenario: &Scenario,
    h: f64,
    replications: u64,
    seed: u64,
) -> Result<ScenarioResult> {
    use rayon::prelude::*;
    scenario.validate()?;
    let outcomes = (0..replications)
        .into_par_iter()
        .map(|i| run_replication(scenario, h, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let delays: Vec<RunOutcome> = outcomes.iter().map(|o| o.delay).collect();
    let early_alarms: u64 = outcomes.iter().map(|o| o.early_alarms).sum();
    let attempts = early_alarms + replications;
    Ok(ScenarioResult {
        summary: RunLengthSummary::from_outcomes(&delays),
        early_alarms,
        early_rate: if attempts == 0 {
            0.0
        } else {
            early_alarms as f64 / attempts as f64
        },
    })
}

/// One control limit per `(d, ARL0)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEntry {
    pub d: usize,
    pub arl0: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitTable {
    pub entries: Vec<LimitEntry>,
}

impl LimitTable {
    /// Reference limits for `d` in {10, 20, 30, 40} and ARL0 in
    /// {200, 370, 500, 1000}, each from 10,000 oracle replications.
    pub fn reference() -> Self {
        const ARL0: [f64; 4] = [200.0, 370.0, 500.0, 1000.0];
        const D: [usize; 4] = [10, 20, 30, 40];
        const H: [[f64; 4]; 4] = [
            [90.275, 185.466, 281.644, 379.191],
            [105.941, 218.886, 333.933, 449.201],
            [113.308, 235.241, 358.960, 483.987],
            [131.299, 273.411, 418.364, 564.137],
        ];
        let mut entries = Vec::new();
        for (row, &arl0) in ARL0.iter().enumerate() {
            for (col, &d) in D.iter().enumerate() {
                entries.push(LimitEntry {
                    d,
                    arl0,
                    h: H[row][col],
                });
            }
        }
        Self { entries }
    }

    pub fn from_reports(reports: &[CalibrationReport]) -> Self {
        Self {
            entries: reports
                .iter()
                .map(|r| LimitEntry {
                    d: r.d,
                    arl0: r.target_arl0,
                    h: r.h,
                })
                .collect(),
        }
    }

    pub fn lookup(&self, d: usize, arl0: f64) -> Option<f64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.d == d && (e.arl0 - arl0).abs() <= 1e-9 * arl0.abs().max(1.0))
            .map(|e| e.h)
    }

    /// Entries of `other` take precedence.
    pub fn overlay(mut self, other: &LimitTable) -> Self {
        self.entries.extend_from_slice(&other.entries);
        self
    }
}

/// The eight general distribution swaps, ids 1 to 8.
pub fn general_change(id: usize) -> Option<(DistributionSpec, DistributionSpec)> {
    use DistributionSpec as D;
    let exp = |rate| D::Exponential { rate };
    let gamma = |shape| D::Gamma { shape, rate: 2.0 };
    let weibull = |shape| D::Weibull { shape, scale: 1.0 };
    let uniform = D::Uniform {
        low: 0.0,
        high: 1.0,
    };
    let beta = D::Beta { a: 5.0, b: 5.0 };
    Some(match id {
        1 => (exp(1.0), exp(3.0)),
        2 => (exp(3.0), exp(1.0)),
        3 => (gamma(2.0), gamma(3.0)),
        4 => (gamma(3.0), gamma(2.0)),
        5 => (weibull(1.0), weibull(3.0)),
        6 => (weibull(3.0), weibull(1.0)),
        7 => (uniform, beta),
        8 => (beta, uniform),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub d: usize,
    pub tau: u64,
    pub change: String,
    pub arl1: f64,
    pub stderr: f64,
    pub early_rate: f64,
    pub reps: u64,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "scenario,d,tau,change,arl1,stderr,early_rate,reps,seed";

/// Runs every scenario with matched seeds; limits come from `limits` keyed
/// by each scenario's `(d, arl0_target)`.
pub fn arl_table(
    scenarios: &[Scenario],
    limits: &LimitTable,
    replications: u64,
    seed: u64,
) -> Result<Vec<TableRow>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let h = limits.lookup(s.d, s.arl0_target).ok_or_else(|| {
                invalid(format!(
                    "no control limit for d = {} and ARL0 = {}",
                    s.d, s.arl0_target
                ))
            })?;
            let result = run_scenario(s, h, replications, seed)?;
            Ok(TableRow {
                scenario: if s.id.is_empty() {
                    format!("s{}", i + 1)
                } else {
                    s.id.clone()
                },
                d: s.d,
                tau: s.tau,
                change: s.label(),
                arl1: result.summary.mean,
                stderr: result.summary.std_error,
                early_rate: result.early_rate,
                reps: replications,
                seed,
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    let io = |e: csv::Error| Error::InternalState(format!("csv output: {e}"));
    writer.write_record(CSV_HEADER.split(',')).map_err(io)?;
    for row in rows {
        writer.serialize(row).map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| Error::InternalState(format!("csv output: {e}")))?;
    Ok(())
}

/// JSON results document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    pub early_alarm_convention: String,
    pub rows: Vec<TableRow>,
}

impl TableDocument {
    pub fn new(rows: Vec<TableRow>) -> Self {
        Self {
            early_alarm_convention: EARLY_ALARM_CONVENTION.to_string(),
            rows,
        }
    }
}

/// Preset scenario grids. `ds` selects the category counts; `arl0` the
/// in-control target the limits are looked up for.
pub fn suite(name: &str, ds: &[usize], arl0: f64) -> Result<Vec<Scenario>> {
    let in_controls = [
        ("normal", DistributionSpec::standard_normal()),
        ("t", DistributionSpec::standardized_t()),
        ("lognormal", DistributionSpec::standardized_lognormal()),
    ];
    let mut out = Vec::new();
    let mut push = |id: String, in_control, change, tau, m, d| {
        out.push(Scenario {
            id,
            in_control,
            change,
            tau,
            m,
            d,
            arl0_target: arl0,
            branches: None,
        });
    };
    match name {
        "table2" => {
            for m in [10, 20] {
                for &(tag, dist) in &in_controls {
                    for &d in ds {
                        let change = ChangeSpec::Location { delta: 0.0 };
                        push(format!("arl0-{tag}-m{m}-d{d}"), dist, change, 1, m, d);
                    }
                }
            }
        }
        "table3" | "table4" => {
            let (deltas, kind): (&[f64], _) = if name == "table3" {
                (&[0.25, 0.5, 0.75, 1.0, 1.5, 2.0], "loc")
            } else {
                (&[1.5, 2.0, 3.0, 0.5, 0.33, 0.2], "scale")
            };
            for &(tag, dist) in &in_controls {
                for tau in [50, 300] {
                    for &delta in deltas {
                        for &d in ds {
                            let change = if kind == "loc" {
                                ChangeSpec::Location { delta }
                            } else {
                                ChangeSpec::Scale { delta }
                            };
                            push(
                                format!("{kind}-{tag}-tau{tau}-{delta}-d{d}"),
                                dist,
                                change,
                                tau,
                                20,
                                d,
                            );
                        }
                    }
                }
            }
        }
        "table6" => {
            for tau in [50, 300] {
                for id in 1..=8 {
                    let (from, to) = general_change(id).expect("ids 1..=8 exist");
                    for &d in ds {
                        push(
                            format!("type{id}-tau{tau}-d{d}"),
                            from,
                            ChangeSpec::Swap { to },
                            tau,
                            20,
                            d,
                        );
                    }
                }
            }
        }
        other => {
            return Err(invalid(format!(
                "unknown suite '{other}' (expected table2, table3, table4 or table6)"
            )))
        }
    }
    Ok(out)
}
