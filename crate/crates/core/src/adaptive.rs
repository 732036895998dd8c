//! Four-branch adaptive CUSUM chart with built-in post-signal diagnostics.
//!
//! Each branch replaces the unknown out-of-control multinomial with a
//! Dirichlet posterior mean computed from the observations seen since the
//! branch statistic last returned to zero. The `+` branches use a prior
//! derived from a `N(0.25, 1)` shift and the `-` branches one derived from
//! `N(-0.25, 1)`; the same pair is used for both category orderings.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::categorize::{CategoryOrdering, CategoryVector};
use crate::cusum::OrderedWeights;
use crate::error::{invalid, Error, Result};
use crate::normal;

/// Location shift of the reference normal used to build the default priors.
pub const PRIOR_SHIFT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPrior {
    alpha: Vec<f64>,
    total: f64,
    cumulative: Vec<f64>,
    tail: Vec<f64>,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        let d = alpha.len();
        if d < 2 {
            return Err(invalid(format!("need at least 2 categories, got {d}")));
        }
        if alpha.iter().any(|&a| !a.is_finite() || a <= 0.0) {
            return Err(invalid("Dirichlet parameters must be positive"));
        }
        let total: f64 = alpha.iter().sum();
        if (total - d as f64).abs() > 1e-9 * d as f64 {
            return Err(invalid(format!(
                "Dirichlet parameters sum to {total}, expected {d}"
            )));
        }
        let mut cumulative = Vec::with_capacity(d);
        let mut acc = 0.0;
        for &a in &alpha {
            acc += a;
            cumulative.push(acc);
        }
        let mut tail = vec![0.0; d];
        let mut acc = 0.0;
        for j in (0..d - 1).rev() {
            acc += alpha[j + 1];
            tail[j] = acc;
        }
        Ok(Self {
            alpha,
            total,
            cumulative,
            tail,
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

fn shifted_normal_prior(d: usize, shift: f64) -> Result<DirichletPrior> {
    let df = d as f64;
    let edges: Vec<f64> = (0..=d)
        .map(|j| normal::cdf(normal::quantile(j as f64 / df) - shift))
        .collect();
    let alpha = edges.windows(2).map(|w| df * (w[1] - w[0])).collect();
    DirichletPrior::new(alpha)
}

/// `(alpha_plus, alpha_minus)`: `d` times the left-to-right category
/// probabilities of `N(0.25, 1)` and `N(-0.25, 1)` on standard normal
/// `j / d` quantile cells.
pub fn default_priors(d: usize) -> Result<(DirichletPrior, DirichletPrior)> {
    if d < 2 {
        return Err(invalid(format!("need at least 2 categories, got d = {d}")));
    }
    Ok((
        shifted_normal_prior(d, PRIOR_SHIFT)?,
        shifted_normal_prior(d, -PRIOR_SHIFT)?,
    ))
}

/// Posterior-mean estimate `(alpha_l + N_l) / (sum(alpha) + N)`.
pub fn phat(prior: &DirichletPrior, n_total: u64, n_cat: &[u64]) -> Result<Vec<f64>> {
    if n_cat.len() != prior.d() {
        return Err(Error::InternalState(format!(
            "{} category counts for d = {}",
            n_cat.len(),
            prior.d()
        )));
    }
    if n_cat.iter().sum::<u64>() != n_total {
        return Err(Error::InternalState(format!(
            "category counts do not add up to {n_total}"
        )));
    }
    let denom = prior.total + n_total as f64;
    Ok(prior
        .alpha
        .iter()
        .zip(n_cat)
        .map(|(a, &n)| (a + n as f64) / denom)
        .collect())
}

/// One of the four adaptive branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "ltr+")]
    LtrPlus,
    #[serde(rename = "ltr-")]
    LtrMinus,
    #[serde(rename = "co+")]
    CoPlus,
    #[serde(rename = "co-")]
    CoMinus,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::LtrPlus,
        Branch::LtrMinus,
        Branch::CoPlus,
        Branch::CoMinus,
    ];

    pub fn ordering(self) -> CategoryOrdering {
        match self {
            Branch::LtrPlus | Branch::LtrMinus => CategoryOrdering::LeftToRight,
            Branch::CoPlus | Branch::CoMinus => CategoryOrdering::CenterOutward,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, Branch::LtrPlus | Branch::CoPlus)
    }

    pub fn diagnosis(self) -> Diagnosis {
        match self {
            Branch::LtrPlus => Diagnosis::PositiveLocationShift,
            Branch::LtrMinus => Diagnosis::NegativeLocationShift,
            Branch::CoPlus => Diagnosis::ScaleIncrease,
            Branch::CoMinus => Diagnosis::ScaleDecrease,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::LtrPlus => "ltr+",
            Branch::LtrMinus => "ltr-",
            Branch::CoPlus => "co+",
            Branch::CoMinus => "co-",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.as_str() == s.trim())
            .ok_or_else(|| {
                invalid(format!(
                    "unknown branch '{s}' (expected ltr+, ltr-, co+, co-)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "positive location shift")]
    PositiveLocationShift,
    #[serde(rename = "negative location shift")]
    NegativeLocationShift,
    #[serde(rename = "scale increase")]
    ScaleIncrease,
    #[serde(rename = "scale decrease")]
    ScaleDecrease,
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::PositiveLocationShift => "positive location shift",
            Diagnosis::NegativeLocationShift => "negative location shift",
            Diagnosis::ScaleIncrease => "scale increase",
            Diagnosis::ScaleDecrease => "scale decrease",
        })
    }
}

/// Subset of branches that feed the charting statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchSet([bool; 4]);

impl BranchSet {
    pub fn all() -> Self {
        Self([true; 4])
    }

    pub fn from_branches<I: IntoIterator<Item = Branch>>(branches: I) -> Result<Self> {
        let mut set = [false; 4];
        for b in branches {
            set[b.slot()] = true;
        }
        if !set.iter().any(|&x| x) {
            return Err(invalid("branch subset must not be empty"));
        }
        Ok(Self(set))
    }

    pub fn contains(&self, branch: Branch) -> bool {
        self.0[branch.slot()]
    }

    pub fn iter(&self) -> impl Iterator<Item = Branch> + '_ {
        Branch::ALL.into_iter().filter(|b| self.contains(*b))
    }

    pub fn to_vec(&self) -> Vec<Branch> {
        self.iter().collect()
    }
}

impl Default for BranchSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for BranchSet {
    type Err = Error;

    /// Comma-separated branch names, or `all`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let branches = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Branch::from_str)
            .collect::<Result<Vec<_>>>()?;
        Self::from_branches(branches)
    }
}

impl fmt::Display for BranchSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Branch::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for BranchSet {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.to_vec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BranchSet {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let branches = Vec::<Branch>::deserialize(deserializer)?;
        Self::from_branches(branches).map_err(serde::de::Error::custom)
    }
}

/// Serializable state of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchState {
    pub branch: Branch,
    pub s_hat: f64,
    pub n_total: u64,
    pub n_cat: Vec<u64>,
    /// 0-based category of the previous tick, absent before the first.
    pub prev: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveBranch {
    branch: Branch,
    prior: DirichletPrior,
    weights: Arc<OrderedWeights>,
    s_hat: f64,
    n_total: u64,
    n_cat: Vec<u64>,
    prev: Option<usize>,
}

impl AdaptiveBranch {
    pub fn new(branch: Branch, prior: DirichletPrior) -> Self {
        let weights = Arc::new(OrderedWeights::new(prior.d()));
        Self::with_weights(branch, prior, weights)
    }

    fn with_weights(branch: Branch, prior: DirichletPrior, weights: Arc<OrderedWeights>) -> Self {
        let d = prior.d();
        Self {
            branch,
            prior,
            weights,
            s_hat: 0.0,
            n_total: 0,
            n_cat: vec![0; d],
            prev: None,
        }
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn value(&self) -> f64 {
        self.s_hat
    }

    /// Observations counted since the last zero, strictly before the current tick.
    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn n_cat(&self) -> &[u64] {
        &self.n_cat
    }

    pub fn prior(&self) -> &DirichletPrior {
        &self.prior
    }

    /// Current plug-in estimate of the out-of-control probabilities.
    pub fn phat(&self) -> Vec<f64> {
        let denom = self.prior.total + self.n_total as f64;
        self.prior
            .alpha
            .iter()
            .zip(&self.n_cat)
            .map(|(a, &n)| (a + n as f64) / denom)
            .collect()
    }

    /// Advances the branch by one observation and returns the new statistic.
    pub fn step(&mut self, y: &CategoryVector) -> Result<f64> {
        let d = self.prior.d();
        if y.ordering() != self.branch.ordering() || y.d() != d {
            return Err(invalid(format!(
                "branch {} cannot take a {:?} vector with d = {}",
                self.branch,
                y.ordering(),
                y.d()
            )));
        }
        if self.s_hat > 0.0 {
            let prev = self.prev.ok_or_else(|| {
                Error::InternalState("positive statistic without a previous observation".into())
            })?;
            self.n_total += 1;
            self.n_cat[prev] += 1;
        } else if self.n_total != 0 {
            self.n_total = 0;
            self.n_cat.iter_mut().for_each(|n| *n = 0);
        }

        let w = &*self.weights;
        let log_denom = (self.prior.total + self.n_total as f64).ln();
        let first_one = y.index();
        let mut below_count = 0u64;
        let mut increment = 0.0;
        for j in 0..d - 1 {
            below_count += self.n_cat[j];
            let term = if j >= first_one {
                (self.prior.cumulative[j] + below_count as f64).ln() - log_denom - w.log_level[j]
            } else {
                let above_count = self.n_total - below_count;
                (self.prior.tail[j] + above_count as f64).ln() - log_denom - w.log_complement[j]
            };
            increment += w.weight[j] * term;
        }
        self.s_hat = (self.s_hat + increment).max(0.0);
        self.prev = Some(first_one);
        Ok(self.s_hat)
    }

    pub fn reset(&mut self) {
        self.s_hat = 0.0;
        self.n_total = 0;
        self.n_cat.iter_mut().for_each(|n| *n = 0);
        self.prev = None;
    }

    pub fn state(&self) -> BranchState {
        BranchState {
            branch: self.branch,
            s_hat: self.s_hat,
            n_total: self.n_total,
            n_cat: self.n_cat.clone(),
            prev: self.prev,
        }
    }

    fn restore(&mut self, state: &BranchState) -> Result<()> {
        let d = self.prior.d();
        let consistent = state.branch == self.branch
            && state.n_cat.len() == d
            && state.n_cat.iter().sum::<u64>() == state.n_total
            && state.s_hat.is_finite()
            && state.s_hat >= 0.0
            && state.prev.is_none_or(|p| p < d)
            && (state.s_hat == 0.0 || state.prev.is_some());
        if !consistent {
            return Err(Error::Snapshot(format!(
                "inconsistent state for branch {}",
                self.branch
            )));
        }
        self.s_hat = state.s_hat;
        self.n_total = state.n_total;
        self.n_cat.clone_from(&state.n_cat);
        self.prev = state.prev;
        Ok(())
    }
}

/// Raised when the charting statistic exceeds the control limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub tick: u64,
    pub statistic: f64,
    pub limit: f64,
    pub exceeding_branches: Vec<Branch>,
    pub diagnosis: Vec<Diagnosis>,
}

/// Outcome of one chart tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartStep {
    pub tick: u64,
    /// Branch statistics in [`Branch::ALL`] order.
    pub values: [f64; 4],
    /// Maximum over the active branches.
    pub statistic: f64,
    pub signal: Option<SignalReport>,
}

impl ChartStep {
    pub fn value(&self, branch: Branch) -> f64 {
        self.values[branch.slot()]
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveChart {
    branches: [AdaptiveBranch; 4],
    limit: f64,
    active: BranchSet,
    tick: u64,
}

impl AdaptiveChart {
    /// Chart with the default priors for `d` categories.
    pub fn new(d: usize, limit: f64, active: BranchSet) -> Result<Self> {
        let (plus, minus) = default_priors(d)?;
        Self::with_priors(plus, minus, limit, active)
    }

    pub fn with_priors(
        plus: DirichletPrior,
        minus: DirichletPrior,
        limit: f64,
        active: BranchSet,
    ) -> Result<Self> {
        if plus.d() != minus.d() {
            return Err(invalid("priors disagree on d"));
        }
        if !limit.is_finite() || limit < 0.0 {
            return Err(invalid(format!(
                "control limit must be finite and nonnegative, got {limit}"
            )));
        }
        let weights = Arc::new(OrderedWeights::new(plus.d()));
        let make = |b: Branch| {
            let prior = if b.is_plus() {
                plus.clone()
            } else {
                minus.clone()
            };
            AdaptiveBranch::with_weights(b, prior, Arc::clone(&weights))
        };
        Ok(Self {
            branches: Branch::ALL.map(make),
            limit,
            active,
            tick: 0,
        })
    }

    pub fn d(&self) -> usize {
        self.branches[0].prior.d()
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn active(&self) -> BranchSet {
        self.active
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn branch(&self, branch: Branch) -> &AdaptiveBranch {
        &self.branches[branch.slot()]
    }

    pub fn values(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.branches[i].s_hat)
    }

    /// Maximum over the active branches.
    pub fn statistic(&self) -> f64 {
        self.active
            .iter()
            .map(|b| self.branches[b.slot()].s_hat)
            .fold(0.0, f64::max)
    }

    /// Steps every branch with its ordering's category vector.
    pub fn step(&mut self, y_ltr: &CategoryVector, y_co: &CategoryVector) -> Result<ChartStep> {
        for branch in &mut self.branches {
            let y = match branch.branch.ordering() {
                CategoryOrdering::LeftToRight => y_ltr,
                CategoryOrdering::CenterOutward => y_co,
            };
            branch.step(y)?;
        }
        self.tick += 1;
        let values = self.values();
        let statistic = self.statistic();
        let signal = (statistic > self.limit).then(|| {
            let exceeding: Vec<Branch> = self
                .active
                .iter()
                .filter(|b| values[b.slot()] > self.limit)
                .collect();
            SignalReport {
                tick: self.tick,
                statistic,
                limit: self.limit,
                diagnosis: exceeding.iter().map(|b| b.diagnosis()).collect(),
                exceeding_branches: exceeding,
            }
        });
        Ok(ChartStep {
            tick: self.tick,
            values,
            statistic,
            signal,
        })
    }

    /// Zeroes every branch; the tick counter keeps running.
    pub fn reset_branches(&mut self) {
        self.branches.iter_mut().for_each(AdaptiveBranch::reset);
    }

    pub fn states(&self) -> Vec<BranchState> {
        self.branches.iter().map(AdaptiveBranch::state).collect()
    }

    pub fn restore(&mut self, tick: u64, states: &[BranchState]) -> Result<()> {
        if states.len() != 4 {
            return Err(Error::Snapshot(format!(
                "expected 4 branch states, got {}",
                states.len()
            )));
        }
        for state in states {
            self.branches[state.branch.slot()].restore(state)?;
        }
        let mut seen: Vec<Branch> = states.iter().map(|s| s.branch).collect();
        seen.sort();
        seen.dedup();
        if seen.len() != 4 {
            return Err(Error::Snapshot("duplicate branch states".into()));
        }
        self.tick = tick;
        Ok(())
    }
}
