use std::collections::BTreeMap;

use crate::types::{Lsn, LsnRange};

/// Union of LSN intervals of the form `(after, through]`.
///
/// Touching intervals are merged, so the stored set is canonical: two
/// coverages with equal content compare equal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coverage {
    iv: BTreeMap<u64, u64>,
}

impl Coverage {
    pub fn new() -> Self {
        Coverage::default()
    }

    pub fn is_empty(&self) -> bool {
        self.iv.is_empty()
    }

    /// Adds `(after, through]`; returns whether anything new was covered.
    pub fn insert(&mut self, after: Lsn, through: Lsn) -> bool {
        if through <= after || self.covers(after, through) {
            return false;
        }
        let (mut a, mut t) = (after.0, through.0);
        let touching: Vec<u64> = self
            .iv
            .range(..=t)
            .rev()
            .take_while(|(_, &end)| end >= a)
            .map(|(&s, _)| s)
            .collect();
        for s in touching {
            let e = self.iv.remove(&s).expect("key listed");
            a = a.min(s);
            t = t.max(e);
        }
        self.iv.insert(a, t);
        true
    }

    pub fn contains(&self, lsn: Lsn) -> bool {
        self.iv
            .range(..lsn.0)
            .next_back()
            .is_some_and(|(_, &t)| lsn.0 <= t)
    }

    pub fn covers(&self, after: Lsn, through: Lsn) -> bool {
        if through <= after {
            return true;
        }
        self.iv
            .range(..=after.0)
            .next_back()
            .is_some_and(|(_, &t)| through.0 <= t)
    }

    /// End of the hole-free prefix starting at LSN 0.
    pub fn prefix_end(&self) -> Lsn {
        match self.iv.first_key_value() {
            Some((&0, &t)) => Lsn(t),
            _ => Lsn::NONE,
        }
    }

    pub fn max_through(&self) -> Lsn {
        self.iv
            .last_key_value()
            .map(|(_, &t)| Lsn(t))
            .unwrap_or(Lsn::NONE)
    }

    /// Holes between the prefix end and the highest covered LSN, as
    /// inclusive ranges sorted ascending.
    pub fn gaps(&self) -> Vec<LsnRange> {
        let mut out = Vec::new();
        let mut prev = 0u64;
        for (&a, &t) in &self.iv {
            if a > prev {
                out.push(LsnRange::new(Lsn(prev + 1), Lsn(a)));
            }
            prev = t;
        }
        out
    }

    /// Parts of `(after, through]` not covered, as `(after, through]` pairs.
    pub fn missing_within(&self, after: Lsn, through: Lsn) -> Vec<(Lsn, Lsn)> {
        let mut out = Vec::new();
        let mut pos = after.0;
        let start = self
            .iv
            .range(..=after.0)
            .next_back()
            .map(|(&s, _)| s)
            .unwrap_or(0);
        for (&a, &t) in self.iv.range(start..) {
            if pos >= through.0 {
                break;
            }
            if t <= pos {
                continue;
            }
            if a > pos {
                out.push((Lsn(pos), Lsn(a.min(through.0))));
            }
            pos = pos.max(t);
        }
        if pos < through.0 {
            out.push((Lsn(pos), through));
        }
        out
    }

    pub fn intervals(&self) -> impl Iterator<Item = (Lsn, Lsn)> + '_ {
        self.iv.iter().map(|(&a, &t)| (Lsn(a), Lsn(t)))
    }

    pub fn from_intervals(pairs: impl IntoIterator<Item = (Lsn, Lsn)>) -> Self {
        let mut c = Coverage::new();
        for (a, t) in pairs {
            c.insert(a, t);
        }
        c
    }

    /// Intersection with `(after, through]`.
    pub fn clip(&self, after: Lsn, through: Lsn) -> Coverage {
        let mut c = Coverage::new();
        for (a, t) in self.intervals() {
            let lo = a.max(after);
            let hi = t.min(through);
            if lo < hi {
                c.insert(lo, hi);
            }
        }
        c
    }

    pub fn intersect(&self, other: &Coverage) -> Coverage {
        let mut c = Coverage::new();
        for (a, t) in other.intervals() {
            for (x, y) in self.clip(a, t).intervals() {
                c.insert(x, y);
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn l(n: u64) -> Lsn {
        Lsn(n)
    }

    #[test]
    fn in_order_prefix() {
        let mut c = Coverage::new();
        c.insert(l(0), l(3));
        c.insert(l(3), l(7));
        assert_eq!(c.prefix_end(), l(7));
        assert!(c.gaps().is_empty());
    }

    #[test]
    fn hole_reports_gap() {
        let mut c = Coverage::new();
        c.insert(l(0), l(39));
        c.insert(l(45), l(77));
        assert_eq!(c.prefix_end(), l(39));
        assert_eq!(c.gaps(), vec![LsnRange::new(l(40), l(45))]);
        assert_eq!(
            c.missing_within(l(0), l(90)),
            vec![(l(39), l(45)), (l(77), l(90))]
        );
        c.insert(l(39), l(45));
        assert_eq!(c.prefix_end(), l(77));
    }

    #[test]
    fn two_holes_sorted() {
        let c = Coverage::from_intervals([(l(0), l(5)), (l(8), l(10)), (l(20), l(30))]);
        assert_eq!(
            c.gaps(),
            vec![LsnRange::new(l(6), l(8)), LsnRange::new(l(11), l(20))]
        );
    }

    #[test]
    fn empty_is_zero() {
        let c = Coverage::new();
        assert_eq!(c.prefix_end(), Lsn::NONE);
        assert!(c.gaps().is_empty());
        assert!(!c.contains(l(1)));
    }

    proptest! {
        /// Oracle: a plain set of covered LSNs.
        #[test]
        fn matches_point_set(ranges in proptest::collection::vec((0u64..60, 1u64..10), 0..12)) {
            let mut c = Coverage::new();
            let mut set = BTreeSet::new();
            for (a, w) in ranges {
                c.insert(l(a), l(a + w));
                set.extend(a + 1..=a + w);
            }
            for x in 1..80u64 {
                prop_assert_eq!(c.contains(l(x)), set.contains(&x));
            }
            let mut prefix = 0;
            while set.contains(&(prefix + 1)) { prefix += 1; }
            prop_assert_eq!(c.prefix_end(), l(prefix));
            let missing: BTreeSet<u64> = c
                .missing_within(l(0), l(80))
                .into_iter()
                .flat_map(|(a, t)| a.0 + 1..=t.0)
                .collect();
            let expect: BTreeSet<u64> = (1..=80).filter(|x| !set.contains(x)).collect();
            prop_assert_eq!(missing, expect);
        }
    }
}
