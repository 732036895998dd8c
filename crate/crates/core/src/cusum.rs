//! CUSUM statistics for categorized data with a fully specified
//! out-of-control multinomial.

use crate::categorize::{CategoryVector, CumulativeVector};
use crate::error::{invalid, Error, Result};

/// Out-of-control category probabilities; the in-control law is uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfControlSpec {
    p: Vec<f64>,
    // cumulative[j] = p_1 + .. + p_(j+1); tail[j] = 1 - cumulative[j] summed from the right
    cumulative: Vec<f64>,
    tail: Vec<f64>,
}

impl OutOfControlSpec {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        let d = p.len();
        if d < 2 {
            return Err(invalid(format!("need at least 2 categories, got {d}")));
        }
        if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        if let Some(l) = p.iter().position(|&x| x == 0.0) {
            return Err(Error::DegenerateSpec(format!("p[{}] is zero", l + 1)));
        }
        let mut cumulative = Vec::with_capacity(d);
        let mut acc = 0.0;
        for &x in &p {
            acc += x;
            cumulative.push(acc);
        }
        let mut tail = vec![0.0; d];
        let mut acc = 0.0;
        for j in (0..d - 1).rev() {
            acc += p[j + 1];
            tail[j] = acc;
        }
        Ok(Self {
            p,
            cumulative,
            tail,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn d(&self) -> usize {
        self.p.len()
    }

    /// True when the spec equals the in-control law, so every increment is 0.
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.d() as f64;
        self.p.iter().all(|&x| (x - u).abs() <= 1e-15)
    }
}

/// Tail-weighted Bernoulli log-likelihood-ratio terms for `d` categories:
/// weight `d^2 / (j (d - j))` with in-control levels `j / d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedWeights {
    d: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) log_level: Vec<f64>,
    pub(crate) log_complement: Vec<f64>,
}

impl OrderedWeights {
    pub fn new(d: usize) -> Self {
        let df = d as f64;
        let mut weight = Vec::with_capacity(d - 1);
        let mut log_level = Vec::with_capacity(d - 1);
        let mut log_complement = Vec::with_capacity(d - 1);
        for j in 1..d {
            let jf = j as f64;
            weight.push(df * df / (jf * (df - jf)));
            log_level.push((jf / df).ln());
            log_complement.push(((df - jf) / df).ln());
        }
        Self {
            d,
            weight,
            log_level,
            log_complement,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Increment for an observation whose cumulative vector switches to 1 at
    /// `first_one` (0-based). `below(j)` and `above(j)` give the out-of-control
    /// `P_(j+1)` and `1 - P_(j+1)` for the 0-based boundary `j`.
    #[inline]
    pub fn increment<B, A>(&self, first_one: usize, below: B, above: A) -> f64
    where
        B: Fn(usize) -> f64,
        A: Fn(usize) -> f64,
    {
        let mut sum = 0.0;
        for j in 0..self.d - 1 {
            let term = if j >= first_one {
                below(j).ln() - self.log_level[j]
            } else {
                above(j).ln() - self.log_complement[j]
            };
            sum += self.weight[j] * term;
        }
        sum
    }
}

/// Categorical log-likelihood ratio `log(d p_j)` at the observed category.
pub fn llr_categorical(y: &CategoryVector, spec: &OutOfControlSpec) -> Result<f64> {
    if y.d() != spec.d() {
        return Err(invalid(format!(
            "category vector has d = {}, spec has d = {}",
            y.d(),
            spec.d()
        )));
    }
    Ok((spec.d() as f64 * spec.p[y.index()]).ln())
}

/// Weighted sum of the cumulative-indicator log-likelihood ratios.
pub fn llr_ordered(z: &CumulativeVector, spec: &OutOfControlSpec) -> Result<f64> {
    if z.d() != spec.d() {
        return Err(invalid(format!(
            "cumulative vector has d = {}, spec has d = {}",
            z.d(),
            spec.d()
        )));
    }
    let weights = OrderedWeights::new(spec.d());
    Ok(weights.increment(z.first_one(), |j| spec.cumulative[j], |j| spec.tail[j]))
}

/// Page's recursion `s' = max(0, s + g)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FixedCusum {
    s: f64,
}

impl FixedCusum {
    pub fn new() -> Self {
        Self { s: 0.0 }
    }

    pub fn value(&self) -> f64 {
        self.s
    }

    #[must_use]
    pub fn step(self, increment: f64) -> Self {
        Self {
            s: (self.s + increment).max(0.0),
        }
    }
}

/// Combined location/scale statistic: the larger of the two CUSUMs.
pub fn combined(ltr: FixedCusum, co: FixedCusum) -> f64 {
    ltr.s.max(co.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorize::{cumulate, CategoryOrdering};
    use proptest::prelude::*;

    fn y(d: usize, index: usize) -> CategoryVector {
        CategoryVector::new(CategoryOrdering::LeftToRight, d, index).unwrap()
    }

    fn spec(p: &[f64]) -> OutOfControlSpec {
        OutOfControlSpec::new(p.to_vec()).unwrap()
    }

    #[test]
    fn categorical_examples() {
        let uniform = spec(&[0.25; 4]);
        assert!(uniform.is_uniform());
        for i in 0..4 {
            assert_eq!(llr_categorical(&y(4, i), &uniform).unwrap(), 0.0);
        }
        let s = spec(&[0.4, 0.2, 0.2, 0.2]);
        assert!(!s.is_uniform());
        let a = llr_categorical(&y(4, 0), &s).unwrap();
        assert!((a - 1.6f64.ln()).abs() < 1e-15);
        assert!((a - 0.47000).abs() < 5e-6);
        let b = llr_categorical(&y(4, 1), &s).unwrap();
        assert!((b - (-0.22314)).abs() < 5e-6);
        assert!(llr_categorical(&y(3, 0), &s).is_err());
    }

    #[test]
    fn ordered_examples() {
        let uniform = spec(&[0.2; 5]);
        for i in 0..5 {
            let inc = llr_ordered(&cumulate(&y(5, i)), &uniform).unwrap();
            assert!(inc.abs() < 1e-14);
        }
        let s = spec(&[0.75, 0.25]);
        let a = llr_ordered(&cumulate(&y(2, 0)), &s).unwrap();
        assert!((a - 4.0 * 1.5f64.ln()).abs() < 1e-14);
        assert!((a - 1.62186).abs() < 5e-6);
        let b = llr_ordered(&cumulate(&y(2, 1)), &s).unwrap();
        assert!((b - (-2.77259)).abs() < 5e-6);
        assert!(llr_ordered(&cumulate(&y(3, 0)), &s).is_err());
    }

    #[test]
    fn ordered_matches_literal_formula() {
        let p = [0.1, 0.3, 0.05, 0.25, 0.3];
        let s = spec(&p);
        let d = p.len();
        for i in 0..d {
            let z = cumulate(&y(d, i)).entries();
            let mut want = 0.0;
            for j in 1..d {
                let big_p: f64 = p[..j].iter().sum();
                let lvl = j as f64 / d as f64;
                let w = (d * d) as f64 / (j * (d - j)) as f64;
                let zj = f64::from(z[j - 1]);
                want +=
                    w * (zj * (big_p / lvl).ln() + (1.0 - zj) * ((1.0 - big_p) / (1.0 - lvl)).ln());
            }
            let got = llr_ordered(&cumulate(&y(d, i)), &s).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            OutOfControlSpec::new(vec![0.5, 0.5, 0.0]),
            Err(Error::DegenerateSpec(_))
        ));
        assert!(matches!(
            OutOfControlSpec::new(vec![1.0, 0.0]),
            Err(Error::DegenerateSpec(_))
        ));
        assert!(OutOfControlSpec::new(vec![0.5, 0.6]).is_err());
        assert!(OutOfControlSpec::new(vec![1.0]).is_err());
        assert!(OutOfControlSpec::new(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn step_examples() {
        assert_eq!(FixedCusum::new().step(-3.0).value(), 0.0);
        assert_eq!(FixedCusum { s: 1.5 }.step(0.5).value(), 2.0);
        assert_eq!(FixedCusum { s: 0.2 }.step(-0.5).value(), 0.0);
    }

    #[test]
    fn combined_examples() {
        let c = |a: f64, b: f64| combined(FixedCusum { s: a }, FixedCusum { s: b });
        assert_eq!(c(0.0, 0.0), 0.0);
        assert_eq!(c(3.2, 1.1), 3.2);
        assert_eq!(c(1.0, 1.0), 1.0);
    }

    #[test]
    fn d2_reduces_to_single_bernoulli() {
        let s = spec(&[0.3, 0.7]);
        let z1 = llr_ordered(&cumulate(&y(2, 0)), &s).unwrap();
        let z0 = llr_ordered(&cumulate(&y(2, 1)), &s).unwrap();
        assert!((z1 - 4.0 * (0.3f64 / 0.5).ln()).abs() < 1e-14);
        assert!((z0 - 4.0 * (0.7f64 / 0.5).ln()).abs() < 1e-14);
    }

    fn arb_spec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..1.0, 2..12).prop_map(|raw| {
            let total: f64 = raw.iter().sum();
            let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let head: f64 = p[..p.len() - 1].iter().sum();
            let last = p.len() - 1;
            p[last] = 1.0 - head;
            p
        })
    }

    proptest! {
        #[test]
        fn in_control_drift_is_nonpositive(p in arb_spec()) {
            let s = spec(&p);
            let d = p.len();
            // exact expectation under the uniform in-control multinomial
            let mut e_cat = 0.0;
            let mut e_ord = 0.0;
            for i in 0..d {
                e_cat += llr_categorical(&y(d, i), &s).unwrap() / d as f64;
                e_ord += llr_ordered(&cumulate(&y(d, i)), &s).unwrap() / d as f64;
            }
            prop_assert!(e_cat <= 1e-12);
            prop_assert!(e_ord <= 1e-12);
        }

        #[test]
        fn recursion_matches_max_over_change_points(
            g in prop::collection::vec(-5.0f64..5.0, 1..50),
        ) {
            let mut state = FixedCusum::new();
            for t in 0..g.len() {
                state = state.step(g[t]);
                let brute = (0..=t)
                    .map(|tau| g[tau..=t].iter().sum::<f64>())
                    .fold(0.0f64, f64::max);
                prop_assert!((state.value() - brute).abs() < 1e-9);
            }
        }
    }
}
