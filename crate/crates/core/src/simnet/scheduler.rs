use crate::model::TimePoint;
use std::collections::BTreeMap;

/// Ordering class within a tick: message deliveries run before timers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Class {
    Message = 0,
    Timer = 1,
}

/// Time-ordered queue; equal `(time, class)` entries pop in insertion order.
#[derive(Debug, Clone)]
pub struct Scheduler<T> {
    queue: BTreeMap<(TimePoint, Class, u64), T>,
    seq: u64,
}

impl<T> Default for Scheduler<T> {
    fn default() -> Self {
        Scheduler {
            queue: BTreeMap::new(),
            seq: 0,
        }
    }
}

impl<T> Scheduler<T> {
    pub fn push(&mut self, at: TimePoint, class: Class, item: T) {
        self.queue.insert((at, class, self.seq), item);
        self.seq += 1;
    }

    pub fn peek_time(&self) -> Option<TimePoint> {
        self.queue.keys().next().map(|(t, _, _)| *t)
    }

    /// Pops the head entry if it is due at or before `now`.
    pub fn pop_due(&mut self, now: TimePoint) -> Option<(TimePoint, T)> {
        let (&key, _) = self.queue.iter().next()?;
        if key.0 > now {
            return None;
        }
        self.queue.remove(&key).map(|item| (key.0, item))
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn messages_before_timers_then_fifo() {
        let mut s = Scheduler::default();
        s.push(TimePoint(2), Class::Timer, "t1");
        s.push(TimePoint(2), Class::Message, "m1");
        s.push(TimePoint(1), Class::Timer, "early");
        s.push(TimePoint(2), Class::Message, "m2");
        s.push(TimePoint(2), Class::Timer, "t2");
        let order: Vec<_> = std::iter::from_fn(|| s.pop_due(TimePoint(5)).map(|(_, x)| x)).collect();
        assert_eq!(order, vec!["early", "m1", "m2", "t1", "t2"]);
    }

    #[test]
    fn nothing_pops_before_its_time() {
        let mut s = Scheduler::default();
        s.push(TimePoint(3), Class::Message, ());
        assert!(s.pop_due(TimePoint(2)).is_none());
        assert_eq!(s.peek_time(), Some(TimePoint(3)));
        assert!(s.pop_due(TimePoint(3)).is_some());
        assert!(s.is_empty());
    }

    proptest! {
        #[test]
        fn pops_are_time_ordered(items in proptest::collection::vec((0u64..20, any::<bool>()), 0..40)) {
            let mut s = Scheduler::default();
            for (i, (t, timer)) in items.iter().enumerate() {
                s.push(TimePoint(*t), if *timer { Class::Timer } else { Class::Message }, i);
            }
            let mut last: Option<(TimePoint, bool, usize)> = None;
            while let Some((t, i)) = s.pop_due(TimePoint(u64::MAX)) {
                let timer = items[i].1;
                if let Some((lt, ltimer, li)) = last {
                    prop_assert!(lt <= t);
                    if lt == t {
                        prop_assert!(ltimer <= timer);
                        if ltimer == timer { prop_assert!(li < i); }
                    }
                }
                last = Some((t, timer, i));
            }
        }
    }
}
