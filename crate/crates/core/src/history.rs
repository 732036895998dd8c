//! Sorted multiset of every observation seen so far.
//!
//! Backed by an array-allocated treap augmented with subtree sizes, so both
//! insertion and rank selection run in expected `O(log n)`. Priorities come
//! from a counter hash, which keeps the structure (and therefore any replay)
//! deterministic.

use crate::error::{Error, Result};

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    value: f64,
    priority: u64,
    left: u32,
    right: u32,
    size: u32,
}

#[derive(Debug, Clone)]
pub struct OrderedHistory {
    nodes: Vec<Node>,
    root: u32,
}

impl Default for OrderedHistory {
    fn default() -> Self {
        Self::new()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl OrderedHistory {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            root: NIL,
        }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(capacity),
            root: NIL,
        }
    }

    /// Builds a history from arbitrary (unsorted) values.
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Result<Self> {
        let mut history = Self::new();
        for x in values {
            history.insert(x)?;
        }
        Ok(history)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn size(&self, idx: u32) -> u32 {
        if idx == NIL {
            0
        } else {
            self.nodes[idx as usize].size
        }
    }

    fn update(&mut self, idx: u32) {
        let node = &self.nodes[idx as usize];
        let size = 1 + self.size(node.left) + self.size(node.right);
        self.nodes[idx as usize].size = size;
    }

    /// Splits `t` into (values <= key, values > key).
    fn split(&mut self, t: u32, key: f64) -> (u32, u32) {
        if t == NIL {
            return (NIL, NIL);
        }
        if self.nodes[t as usize].value <= key {
            let right = self.nodes[t as usize].right;
            let (l, r) = self.split(right, key);
            self.nodes[t as usize].right = l;
            self.update(t);
            (t, r)
        } else {
            let left = self.nodes[t as usize].left;
            let (l, r) = self.split(left, key);
            self.nodes[t as usize].left = r;
            self.update(t);
            (l, t)
        }
    }

    fn merge(&mut self, a: u32, b: u32) -> u32 {
        if a == NIL {
            return b;
        }
        if b == NIL {
            return a;
        }
        if self.nodes[a as usize].priority > self.nodes[b as usize].priority {
            let right = self.nodes[a as usize].right;
            let merged = self.merge(right, b);
            self.nodes[a as usize].right = merged;
            self.update(a);
            a
        } else {
            let left = self.nodes[b as usize].left;
            let merged = self.merge(a, left);
            self.nodes[b as usize].left = merged;
            self.update(b);
            b
        }
    }

    /// Inserts a finite observation; ties are kept as duplicates.
    pub fn insert(&mut self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::InvalidObservation(x));
        }
        let idx = u32::try_from(self.nodes.len())
            .ok()
            .filter(|&i| i != NIL)
            .ok_or_else(|| Error::InternalState("history capacity exhausted".into()))?;
        self.nodes.push(Node {
            value: x,
            priority: splitmix64(u64::from(idx)),
            left: NIL,
            right: NIL,
            size: 1,
        });
        let (l, r) = self.split(self.root, x);
        let l = self.merge(l, idx);
        self.root = self.merge(l, r);
        Ok(())
    }

    /// The `rank`-th smallest value, 1-based (`X_(rank)`).
    pub fn order_stat(&self, rank: usize) -> Option<f64> {
        if rank == 0 || rank > self.len() {
            return None;
        }
        let mut k = rank as u32;
        let mut t = self.root;
        while t != NIL {
            let node = &self.nodes[t as usize];
            let left = self.size(node.left);
            if k <= left {
                t = node.left;
            } else if k == left + 1 {
                return Some(node.value);
            } else {
                k -= left + 1;
                t = node.right;
            }
        }
        None
    }

    pub fn min(&self) -> Option<f64> {
        self.order_stat(1)
    }

    pub fn max(&self) -> Option<f64> {
        self.order_stat(self.len())
    }

    /// In-order (nondecreasing) iteration.
    pub fn iter(&self) -> Iter<'_> {
        let mut iter = Iter {
            history: self,
            stack: Vec::new(),
        };
        iter.push_left(self.root);
        iter
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }
}

pub struct Iter<'a> {
    history: &'a OrderedHistory,
    stack: Vec<u32>,
}

impl Iter<'_> {
    fn push_left(&mut self, mut t: u32) {
        while t != NIL {
            self.stack.push(t);
            t = self.history.nodes[t as usize].left;
        }
    }
}

impl Iterator for Iter<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let t = self.stack.pop()?;
        let node = &self.history.nodes[t as usize];
        self.push_left(node.right);
        Some(node.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn insert_keeps_order() {
        let mut h = OrderedHistory::from_values([1.0, 9.0]).unwrap();
        h.insert(5.0).unwrap();
        assert_eq!(h.to_vec(), vec![1.0, 5.0, 9.0]);
    }

    #[test]
    fn duplicates_are_retained() {
        let mut h = OrderedHistory::from_values([5.0]).unwrap();
        h.insert(5.0).unwrap();
        assert_eq!(h.to_vec(), vec![5.0, 5.0]);
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn insert_into_empty() {
        let mut h = OrderedHistory::new();
        assert!(h.is_empty());
        assert_eq!(h.min(), None);
        h.insert(-2.5).unwrap();
        assert_eq!(h.to_vec(), vec![-2.5]);
        assert_eq!(h.min(), Some(-2.5));
        assert_eq!(h.max(), Some(-2.5));
    }

    #[test]
    fn rejects_non_finite() {
        let mut h = OrderedHistory::new();
        assert!(matches!(
            h.insert(f64::NAN),
            Err(Error::InvalidObservation(_))
        ));
        assert!(h.insert(f64::INFINITY).is_err());
        assert!(h.insert(f64::NEG_INFINITY).is_err());
        assert!(h.is_empty());
    }

    #[test]
    fn order_stat_out_of_range() {
        let h = OrderedHistory::from_values([3.0, 1.0]).unwrap();
        assert_eq!(h.order_stat(0), None);
        assert_eq!(h.order_stat(3), None);
        assert_eq!(h.order_stat(2), Some(3.0));
    }

    proptest! {
        #[test]
        fn matches_sorted_vec(values in prop::collection::vec(-1e6f64..1e6, 0..300)) {
            let h = OrderedHistory::from_values(values.iter().copied()).unwrap();
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(h.len(), sorted.len());
            prop_assert_eq!(h.to_vec(), sorted.clone());
            for (i, v) in sorted.iter().enumerate() {
                prop_assert_eq!(h.order_stat(i + 1), Some(*v));
            }
        }
    }
}
