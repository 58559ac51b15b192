//! Ring buffer of interpolation coefficient sets for the K retained time
//! layers, newest first. During the step at t_n, slot j holds the set for
//! layer t_{n+j+1}.

use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SplineHistory<C> {
    ring: VecDeque<C>,
    capacity: usize,
}

impl<C> SplineHistory<C> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("history capacity must be positive".into()));
        }
        Ok(SplineHistory {
            ring: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.ring.len() == self.capacity
    }

    /// Inserts the newest set at slot 0, evicting the oldest when full.
    pub fn push(&mut self, newest: C) {
        if self.ring.len() == self.capacity {
            self.ring.pop_back();
        }
        self.ring.push_front(newest);
    }

    /// Slot j, newest first.
    #[inline]
    pub fn get(&self, j: usize) -> &C {
        &self.ring[j]
    }
}

/// Shift form of the update: drops the oldest set, inserts `newest` at
/// slot 0, and advances every other slot by one.
pub fn shift_history<C>(mut history: SplineHistory<C>, newest: C) -> SplineHistory<C> {
    history.push(newest);
    history
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_rule() {
        let mut h = SplineHistory::new(3).unwrap();
        for s in ["A", "B", "C"] {
            h.push(s);
        }
        assert_eq!([*h.get(0), *h.get(1), *h.get(2)], ["C", "B", "A"]);
        let h = shift_history(h, "D");
        assert_eq!([*h.get(0), *h.get(1), *h.get(2)], ["D", "C", "B"]);
    }

    #[test]
    fn capacity_one_is_replacement() {
        let mut h = SplineHistory::new(1).unwrap();
        h.push(10);
        h.push(20);
        assert_eq!(h.len(), 1);
        assert_eq!(*h.get(0), 20);
    }

    #[test]
    fn holds_most_recent_after_many_pushes() {
        let mut h = SplineHistory::new(4).unwrap();
        for i in 0..100 {
            h.push(i);
        }
        assert!(h.is_full());
        for j in 0..4 {
            assert_eq!(*h.get(j), 99 - j);
        }
        assert!(SplineHistory::<i32>::new(0).is_err());
    }
}
