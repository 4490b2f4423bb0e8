use serde::{Deserialize, Serialize};

/// When workers communicate.
///
/// Without warm-up the sync points are `0, k, 2k, ...`. With warm-up the
/// first period has length 1: `0, 1, 1 + k, 1 + 2k, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSchedule {
    k: u64,
    warm_up: bool,
}

impl SyncSchedule {
    /// # Panics
    /// If `k == 0`.
    pub fn new(k: u64, warm_up: bool) -> Self {
        assert!(k >= 1, "communication period must be at least 1");
        Self { k, warm_up }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn warm_up(&self) -> bool {
        self.warm_up
    }

    pub fn is_sync_point(&self, t: u64) -> bool {
        if self.warm_up {
            t == 0 || (t - 1) % self.k == 0
        } else {
            t % self.k == 0
        }
    }

    /// `t'`: the most recent sync point at or before `t`.
    pub fn last_sync(&self, t: u64) -> u64 {
        if self.warm_up {
            if t == 0 {
                0
            } else {
                1 + (t - 1) / self.k * self.k
            }
        } else {
            t / self.k * self.k
        }
    }

    /// `t''`: the sync point before `t'`, if any. The window `[t'', t')` is
    /// the previous period.
    pub fn previous_sync(&self, t: u64) -> Option<u64> {
        let last = self.last_sync(t);
        (last > 0).then(|| last - self.previous_period_len(last).expect("last > 0"))
    }

    /// Length of the period starting at sync point `t`.
    pub fn period_len_from(&self, t: u64) -> u64 {
        if self.warm_up && t == 0 {
            1
        } else {
            self.k
        }
    }

    /// Length of the period that ends at sync point `t`; `None` at `t = 0`.
    pub fn previous_period_len(&self, t: u64) -> Option<u64> {
        match t {
            0 => None,
            1 if self.warm_up => Some(1),
            _ => Some(self.k),
        }
    }

    /// Number of sync points in `[0, iterations)`.
    pub fn syncs_before(&self, iterations: u64) -> u64 {
        match (iterations, self.warm_up) {
            (0, _) => 0,
            (t, false) => t.div_ceil(self.k),
            (t, true) => 1 + (t - 1).div_ceil(self.k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_schedule_indices() {
        let s = SyncSchedule::new(5, false);
        assert!(s.is_sync_point(0) && s.is_sync_point(10) && !s.is_sync_point(7));
        assert_eq!(s.last_sync(7), 5);
        assert_eq!(s.previous_sync(7), Some(0));
        assert_eq!(s.previous_sync(3), None);
        assert_eq!(s.syncs_before(11), 3);
        assert_eq!(s.syncs_before(10), 2);
    }

    #[test]
    fn warm_up_schedule_indices() {
        let s = SyncSchedule::new(4, true);
        let points: Vec<u64> = (0..14).filter(|&t| s.is_sync_point(t)).collect();
        assert_eq!(points, vec![0, 1, 5, 9, 13]);
        assert_eq!(s.period_len_from(0), 1);
        assert_eq!(s.previous_period_len(1), Some(1));
        assert_eq!(s.previous_period_len(5), Some(4));
        assert_eq!(s.last_sync(3), 1);
        assert_eq!(s.previous_sync(3), Some(0));
        assert_eq!(s.previous_sync(6), Some(1));
        assert_eq!(s.syncs_before(14), 5);
    }

    proptest! {
        #[test]
        fn previous_window_is_one_period(k in 1u64..50, t in 0u64..10_000, warm in any::<bool>()) {
            let s = SyncSchedule::new(k, warm);
            let last = s.last_sync(t);
            prop_assert!(last <= t && s.is_sync_point(last));
            if !warm {
                prop_assert_eq!(last, t / k * k);
                if t >= k {
                    prop_assert_eq!(s.previous_sync(t), Some(last - k));
                }
            }
            let count = (0..t).filter(|&u| s.is_sync_point(u)).count() as u64;
            prop_assert_eq!(s.syncs_before(t), count);
        }
    }
}
