//! Quantile-based categorization of observations.
//!
//! A scheme with `d` categories is described by the grid of `2d - 1`
//! quantile boundaries at levels `j / 2d`. The even-indexed entries are the
//! left-to-right boundaries at levels `j / d`; the full grid defines the
//! center-outward regions. All intervals are half-open `(a, b]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::history::OrderedHistory;

/// Which way categories are numbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoryOrdering {
    /// Smallest values first.
    LeftToRight,
    /// Central cell first, tails last.
    CenterOutward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryScheme {
    d: usize,
    grid: Vec<f64>,
    ltr: Vec<f64>,
}

impl CategoryScheme {
    /// Builds a scheme from the `2d - 1` grid boundaries `q2`.
    pub fn from_grid(d: usize, grid: Vec<f64>) -> Result<Self> {
        if d < 2 {
            return Err(invalid(format!("need at least 2 categories, got d = {d}")));
        }
        if grid.len() != 2 * d - 1 {
            return Err(invalid(format!(
                "grid for d = {d} needs {} boundaries, got {}",
                2 * d - 1,
                grid.len()
            )));
        }
        if grid.iter().any(|q| q.is_nan()) {
            return Err(invalid("grid contains NaN"));
        }
        if grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("grid boundaries must be nondecreasing"));
        }
        let ltr = grid.iter().skip(1).step_by(2).copied().collect();
        Ok(Self { d, grid, ltr })
    }

    /// Exact boundaries `j / 2d` for uniform(0, 1) data.
    pub fn uniform(d: usize) -> Result<Self> {
        boundaries_from_quantile_function(|p| p, d)
    }

    /// Exact boundaries for standard normal data.
    pub fn standard_normal(d: usize) -> Result<Self> {
        boundaries_from_quantile_function(crate::normal::quantile, d)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Left-to-right boundaries `q1`, length `d - 1`.
    pub fn ltr_boundaries(&self) -> &[f64] {
        &self.ltr
    }

    /// Center-outward grid `q2`, length `2d - 1`.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// Scheme whose grid is `inverse_cdf(j / 2d)` for `j = 1..2d-1`.
pub fn boundaries_from_quantile_function<F>(inverse_cdf: F, d: usize) -> Result<CategoryScheme>
where
    F: Fn(f64) -> f64,
{
    if d < 2 {
        return Err(invalid(format!("need at least 2 categories, got d = {d}")));
    }
    let two_d = (2 * d) as f64;
    let grid = (1..2 * d).map(|j| inverse_cdf(j as f64 / two_d)).collect();
    CategoryScheme::from_grid(d, grid)
}

/// One-hot category indicator, stored as the position of the single 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CategoryVector {
    ordering: CategoryOrdering,
    d: usize,
    index: usize,
}

impl CategoryVector {
    /// `index` is 0-based.
    pub fn new(ordering: CategoryOrdering, d: usize, index: usize) -> Result<Self> {
        if d < 2 || index >= d {
            return Err(invalid(format!(
                "category {index} out of range for d = {d}"
            )));
        }
        Ok(Self { ordering, d, index })
    }

    pub fn from_entries(ordering: CategoryOrdering, entries: &[u8]) -> Result<Self> {
        if entries.iter().any(|&e| e > 1) || entries.iter().filter(|&&e| e == 1).count() != 1 {
            return Err(invalid("category vector must be one-hot"));
        }
        let index = entries.iter().position(|&e| e == 1).unwrap_or(0);
        Self::new(ordering, entries.len(), index)
    }

    pub fn ordering(&self) -> CategoryOrdering {
        self.ordering
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// 0-based position of the 1.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn entries(&self) -> Vec<u8> {
        (0..self.d).map(|j| u8::from(j == self.index)).collect()
    }
}

/// Cumulative sums of a [`CategoryVector`]: zeros then ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CumulativeVector {
    d: usize,
    first_one: usize,
}

impl CumulativeVector {
    pub fn d(&self) -> usize {
        self.d
    }

    /// 0-based position of the first 1.
    pub fn first_one(&self) -> usize {
        self.first_one
    }

    /// Entry `j` (0-based).
    pub fn get(&self, j: usize) -> u8 {
        u8::from(j >= self.first_one)
    }

    pub fn entries(&self) -> Vec<u8> {
        (0..self.d).map(|j| self.get(j)).collect()
    }
}

pub fn cumulate(y: &CategoryVector) -> CumulativeVector {
    CumulativeVector {
        d: y.d,
        first_one: y.index,
    }
}

fn check_observation(x: f64) -> Result<()> {
    if x.is_nan() {
        Err(Error::InvalidObservation(x))
    } else {
        Ok(())
    }
}

pub fn categorize_ltr(x: f64, scheme: &CategoryScheme) -> Result<CategoryVector> {
    check_observation(x)?;
    let index = scheme.ltr.partition_point(|&q| q < x);
    Ok(CategoryVector {
        ordering: CategoryOrdering::LeftToRight,
        d: scheme.d,
        index,
    })
}

pub fn categorize_co(x: f64, scheme: &CategoryScheme) -> Result<CategoryVector> {
    check_observation(x)?;
    let d = scheme.d;
    // Grid cell 0..2d-1; cells d-1 and d form the central region.
    let cell = scheme.grid.partition_point(|&q| q < x);
    let index = if cell < d { d - 1 - cell } else { cell - d };
    Ok(CategoryVector {
        ordering: CategoryOrdering::CenterOutward,
        d,
        index,
    })
}

/// Both categorizations at once.
pub fn categorize_both(
    x: f64,
    scheme: &CategoryScheme,
) -> Result<(CategoryVector, CategoryVector)> {
    Ok((categorize_ltr(x, scheme)?, categorize_co(x, scheme)?))
}

/// Sequential estimate of the `j / two_d` quantile from the history of
/// `n = m + t - 1` observations, interpolating linearly between adjacent
/// order statistics on the `l / (n + 1)` plotting positions. Levels below
/// `1 / (n + 1)` or above `n / (n + 1)` clamp to the extreme observations.
pub fn sequential_quantile(history: &OrderedHistory, j: usize, two_d: usize) -> Result<f64> {
    let n = history.len();
    if n == 0 {
        return Err(Error::NoData("sequential quantile of an empty history"));
    }
    if two_d < 2 || j == 0 || j >= two_d {
        return Err(invalid(format!("quantile level {j}/{two_d} out of range")));
    }
    let stat = |rank: usize| {
        history
            .order_stat(rank)
            .ok_or_else(|| Error::InternalState(format!("missing order statistic {rank}")))
    };
    let big_n = (n + 1) as u128;
    let (j, two_d_u) = (j as u128, two_d as u128);
    // Position u * (n + 1) = j * (n + 1) / two_d, compared in exact integers.
    let scaled = j * big_n;
    if scaled < two_d_u {
        return stat(1);
    }
    if scaled > n as u128 * two_d_u || n == 1 {
        return stat(n);
    }
    let l = ((scaled / two_d_u) as usize).clamp(1, n - 1);
    let upper_weight = (scaled as f64 - (l as u128 * two_d_u) as f64) / two_d as f64;
    let lower_weight = 1.0 - upper_weight;
    let lower = stat(l)?;
    let upper = stat(l + 1)?;
    if upper_weight == 0.0 {
        return Ok(lower);
    }
    if lower_weight == 0.0 {
        return Ok(upper);
    }
    Ok(lower_weight * lower + upper_weight * upper)
}

/// Scheme estimated from the history: every grid boundary via
/// [`sequential_quantile`].
pub fn sequential_scheme(history: &OrderedHistory, d: usize) -> Result<CategoryScheme> {
    if d < 2 {
        return Err(invalid(format!("need at least 2 categories, got d = {d}")));
    }
    let grid = (1..2 * d)
        .map(|j| sequential_quantile(history, j, 2 * d))
        .collect::<Result<Vec<_>>>()?;
    CategoryScheme::from_grid(d, grid)
}
