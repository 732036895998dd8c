//! Streaming monitors: categorization plus the adaptive chart.
//!
//! [`SelfStartingMonitor`] estimates the category boundaries from every
//! observation seen so far (warm-up included) and is what real data goes
//! through. [`KnownQuantileMonitor`] uses a fixed scheme and exists for
//! calibration with exactly known in-control quantiles.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{AdaptiveChart, BranchSet, BranchState, ChartStep};
use crate::categorize::{
    categorize_both, sequential_quantile, CategoryOrdering, CategoryScheme, CategoryVector,
};
use crate::error::{invalid, Error, Result};
use crate::history::OrderedHistory;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorEvent {
    /// Observation absorbed into the reference sample; `remaining` warm-up
    /// observations are still expected.
    Warmup { remaining: usize },
    Tick {
        step: ChartStep,
        ltr: CategoryVector,
        co: CategoryVector,
    },
}

impl MonitorEvent {
    pub fn step(&self) -> Option<&ChartStep> {
        match self {
            MonitorEvent::Tick { step, .. } => Some(step),
            MonitorEvent::Warmup { .. } => None,
        }
    }
}

/// Converts a grid cell (number of boundaries strictly below `x`) into the
/// two category vectors.
pub(crate) fn cell_categories(d: usize, cell: usize) -> (CategoryVector, CategoryVector) {
    let co = if cell < d { d - 1 - cell } else { cell - d };
    (
        CategoryVector::new(CategoryOrdering::LeftToRight, d, cell / 2).expect("cell in range"),
        CategoryVector::new(CategoryOrdering::CenterOutward, d, co).expect("cell in range"),
    )
}

/// Number of estimated grid boundaries strictly below `x`. The estimated
/// grid is nondecreasing, so a binary search touches only `O(log d)` of the
/// `2d - 1` interpolated quantiles.
pub fn sequential_cell(history: &OrderedHistory, d: usize, x: f64) -> Result<usize> {
    let (mut lo, mut hi) = (1usize, 2 * d);
    // invariant: boundaries < lo are below x, boundaries >= hi are not
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if sequential_quantile(history, mid, 2 * d)? < x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(lo - 1)
}

#[derive(Debug, Clone)]
pub struct SelfStartingMonitor {
    d: usize,
    m: usize,
    warmup_remaining: usize,
    history: OrderedHistory,
    chart: AdaptiveChart,
}

impl SelfStartingMonitor {
    /// Monitor that treats the first `m` observations as reference data.
    pub fn new(d: usize, m: usize, limit: f64, active: BranchSet) -> Result<Self> {
        if m == 0 {
            return Err(invalid("warm-up size m must be at least 1"));
        }
        let chart = AdaptiveChart::new(d, limit, active)?;
        Ok(Self {
            d,
            m,
            warmup_remaining: m,
            history: OrderedHistory::with_capacity(m + 1024),
            chart,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn warmup_remaining(&self) -> usize {
        self.warmup_remaining
    }

    pub fn history(&self) -> &OrderedHistory {
        &self.history
    }

    pub fn chart(&self) -> &AdaptiveChart {
        &self.chart
    }

    pub fn tick(&self) -> u64 {
        self.chart.tick()
    }

    pub fn push(&mut self, x: f64) -> Result<MonitorEvent> {
        if !x.is_finite() {
            return Err(Error::InvalidObservation(x));
        }
        if self.warmup_remaining > 0 {
            self.history.insert(x)?;
            self.warmup_remaining -= 1;
            return Ok(MonitorEvent::Warmup {
                remaining: self.warmup_remaining,
            });
        }
        let cell = sequential_cell(&self.history, self.d, x)?;
        let (ltr, co) = cell_categories(self.d, cell);
        let step = self.chart.step(&ltr, &co)?;
        self.history.insert(x)?;
        Ok(MonitorEvent::Tick { step, ltr, co })
    }

    /// Zeroes the branch statistics after an alarm; history is kept.
    pub fn reset_branches(&mut self) {
        self.chart.reset_branches();
    }

    pub fn snapshot(&self) -> MonitorSnapshot {
        let history = self.history.to_vec();
        MonitorSnapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            tick: self.chart.tick(),
            m: self.m,
            d: self.d,
            warmup_remaining: self.warmup_remaining,
            limit: self.chart.limit(),
            branches_active: self.chart.active(),
            history_sha256: history_digest(&history),
            history,
            branches: self.chart.states(),
        }
    }

    pub fn from_snapshot(snapshot: &MonitorSnapshot) -> Result<Self> {
        if snapshot.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported schema version {} (expected {SNAPSHOT_SCHEMA_VERSION})",
                snapshot.schema_version
            )));
        }
        if history_digest(&snapshot.history) != snapshot.history_sha256 {
            return Err(Error::Snapshot("history digest mismatch".into()));
        }
        if snapshot
            .history
            .windows(2)
            .any(|w| w[0].is_nan() || w[0] > w[1])
        {
            return Err(Error::Snapshot("history is not sorted".into()));
        }
        if snapshot.warmup_remaining > snapshot.m {
            return Err(Error::Snapshot("warm-up counter exceeds m".into()));
        }
        let expected_len = (snapshot.m - snapshot.warmup_remaining) as u64 + snapshot.tick;
        if snapshot.history.len() as u64 != expected_len {
            return Err(Error::Snapshot(format!(
                "history holds {} observations, expected {expected_len}",
                snapshot.history.len()
            )));
        }
        let mut monitor = Self::new(
            snapshot.d,
            snapshot.m,
            snapshot.limit,
            snapshot.branches_active,
        )
        .map_err(|e| Error::Snapshot(e.to_string()))?;
        monitor.warmup_remaining = snapshot.warmup_remaining;
        monitor.history = OrderedHistory::from_values(snapshot.history.iter().copied())
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        monitor.chart.restore(snapshot.tick, &snapshot.branches)?;
        Ok(monitor)
    }
}

fn history_digest(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Versioned, resumable monitor state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSnapshot {
    pub schema_version: u32,
    pub tick: u64,
    pub m: usize,
    pub d: usize,
    pub warmup_remaining: usize,
    #[serde(rename = "h")]
    pub limit: f64,
    #[serde(rename = "branches_active")]
    pub branches_active: BranchSet,
    pub history_sha256: String,
    /// Sorted reference-plus-monitored observations.
    pub history: Vec<f64>,
    pub branches: Vec<BranchState>,
}

/// Monitor with fixed, exactly known category boundaries.
#[derive(Debug, Clone)]
pub struct KnownQuantileMonitor {
    scheme: CategoryScheme,
    chart: AdaptiveChart,
}

impl KnownQuantileMonitor {
    pub fn new(scheme: CategoryScheme, limit: f64, active: BranchSet) -> Result<Self> {
        let chart = AdaptiveChart::new(scheme.d(), limit, active)?;
        Ok(Self { scheme, chart })
    }

    pub fn chart(&self) -> &AdaptiveChart {
        &self.chart
    }

    pub fn push(&mut self, x: f64) -> Result<MonitorEvent> {
        let (ltr, co) = categorize_both(x, &self.scheme)?;
        let step = self.chart.step(&ltr, &co)?;
        Ok(MonitorEvent::Tick { step, ltr, co })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorize::{categorize_co, categorize_ltr, sequential_scheme};
    use proptest::prelude::*;

    #[test]
    fn warmup_then_ticks() {
        let mut mon = SelfStartingMonitor::new(4, 3, 1e6, BranchSet::all()).unwrap();
        assert_eq!(
            mon.push(0.1).unwrap(),
            MonitorEvent::Warmup { remaining: 2 }
        );
        mon.push(0.5).unwrap();
        assert_eq!(
            mon.push(-0.3).unwrap(),
            MonitorEvent::Warmup { remaining: 0 }
        );
        let ev = mon.push(0.2).unwrap();
        assert_eq!(ev.step().unwrap().tick, 1);
        assert_eq!(mon.history().len(), 4);
        assert!(mon.push(f64::NAN).is_err());
        assert_eq!(mon.history().len(), 4);
        assert!(SelfStartingMonitor::new(4, 0, 1.0, BranchSet::all()).is_err());
    }

    #[test]
    fn snapshot_round_trip_reproduces_outputs() {
        let data: Vec<f64> = (0..200)
            .map(|i| ((i * 7919) % 211) as f64 / 13.0 - 8.0)
            .collect();
        let mut straight = SelfStartingMonitor::new(6, 10, 1e6, BranchSet::all()).unwrap();
        let mut first = SelfStartingMonitor::new(6, 10, 1e6, BranchSet::all()).unwrap();
        let mut a = Vec::new();
        for &x in &data {
            a.push(straight.push(x).unwrap());
        }
        let mut b = Vec::new();
        for &x in &data[..77] {
            b.push(first.push(x).unwrap());
        }
        let json = serde_json::to_string(&first.snapshot()).unwrap();
        let snap: MonitorSnapshot = serde_json::from_str(&json).unwrap();
        let mut resumed = SelfStartingMonitor::from_snapshot(&snap).unwrap();
        for &x in &data[77..] {
            b.push(resumed.push(x).unwrap());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn snapshot_rejects_tampering() {
        let mut mon = SelfStartingMonitor::new(4, 5, 50.0, BranchSet::all()).unwrap();
        for i in 0..12 {
            mon.push(f64::from(i).sin()).unwrap();
        }
        let snap = mon.snapshot();
        let mut bad = snap.clone();
        bad.history[0] -= 1.0;
        assert!(matches!(
            SelfStartingMonitor::from_snapshot(&bad),
            Err(Error::Snapshot(_))
        ));
        let mut bad = snap.clone();
        bad.schema_version = 99;
        assert!(SelfStartingMonitor::from_snapshot(&bad).is_err());
        let mut bad = snap.clone();
        bad.tick += 1;
        assert!(SelfStartingMonitor::from_snapshot(&bad).is_err());
        let mut bad = snap;
        bad.branches[0].n_total += 1;
        assert!(SelfStartingMonitor::from_snapshot(&bad).is_err());
    }

    proptest! {
        #[test]
        fn binary_search_cell_matches_full_scheme(
            values in prop::collection::vec(-10.0f64..10.0, 1..60),
            x in -12.0f64..12.0,
            d in 2usize..25,
        ) {
            let h = OrderedHistory::from_values(values.iter().copied()).unwrap();
            let scheme = sequential_scheme(&h, d).unwrap();
            let cell = sequential_cell(&h, d, x).unwrap();
            let (ltr, co) = cell_categories(d, cell);
            prop_assert_eq!(ltr, categorize_ltr(x, &scheme).unwrap());
            prop_assert_eq!(co, categorize_co(x, &scheme).unwrap());
            // a history value itself sits on a closed right endpoint
            let v = values[0];
            let cell = sequential_cell(&h, d, v).unwrap();
            let (ltr, co) = cell_categories(d, cell);
            prop_assert_eq!(ltr, categorize_ltr(v, &scheme).unwrap());
            prop_assert_eq!(co, categorize_co(v, &scheme).unwrap());
        }
    }
}
