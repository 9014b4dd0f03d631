use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use crate::clock::Tick;
use crate::model::ObjectKey;

/// Deduplicating work queue with per-key delayed requeue and failure counts.
///
/// A key is in at most one of `ready` or `delayed` at a time.
#[derive(Debug, Default)]
pub(crate) struct WorkQueue {
    ready: VecDeque<ObjectKey>,
    queued: HashSet<ObjectKey>,
    delayed: BTreeMap<ObjectKey, Tick>,
    failures: HashMap<ObjectKey, u32>,
}

impl WorkQueue {
    /// Queue for immediate processing. Pulls the key out of any pending delay.
    pub fn add(&mut self, key: ObjectKey) {
        self.delayed.remove(&key);
        if self.queued.insert(key.clone()) {
            self.ready.push_back(key);
        }
    }

    /// Queue for processing at `at`, unless already pending sooner.
    pub fn add_at(&mut self, key: ObjectKey, at: Tick) {
        if self.queued.contains(&key) {
            return;
        }
        let slot = self.delayed.entry(key).or_insert(at);
        *slot = (*slot).min(at);
    }

    /// Move every delayed key due at or before `now` to the ready queue, in
    /// (due tick, key) order.
    pub fn promote(&mut self, now: Tick) {
        let mut due: Vec<(Tick, ObjectKey)> = self
            .delayed
            .iter()
            .filter(|(_, at)| **at <= now)
            .map(|(k, at)| (*at, k.clone()))
            .collect();
        due.sort();
        for (_, key) in due {
            self.add(key);
        }
    }

    /// Pop the first ready key not in `skip`.
    pub fn pop_excluding(&mut self, skip: &HashSet<ObjectKey>) -> Option<ObjectKey> {
        let pos = self.ready.iter().position(|k| !skip.contains(k))?;
        let key = self.ready.remove(pos)?;
        self.queued.remove(&key);
        Some(key)
    }

    pub fn record_failure(&mut self, key: &ObjectKey) -> u32 {
        let n = self.failures.entry(key.clone()).or_insert(0);
        *n += 1;
        *n
    }

    pub fn forget(&mut self, key: &ObjectKey) {
        self.failures.remove(key);
    }

    pub fn depth(&self) -> usize {
        self.ready.len() + self.delayed.len()
    }

    pub fn is_idle(&self) -> bool {
        self.ready.is_empty() && self.delayed.is_empty()
    }

}

/// `base * 2^(failures-1)`, capped at `max`.
pub(crate) fn backoff_delay(base: Tick, max: Tick, failures: u32) -> Tick {
    let shift = failures.saturating_sub(1).min(62);
    base.saturating_mul(1u64 << shift).min(max).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kind;

    fn key(n: &str) -> ObjectKey {
        ObjectKey::cluster(Kind::Namespace, n)
    }

    #[test]
    fn dedupes_pending_keys() {
        let mut q = WorkQueue::default();
        q.add(key("a"));
        q.add(key("a"));
        q.add_at(key("a"), 5);
        assert_eq!(q.depth(), 1);
        assert_eq!(q.pop_excluding(&HashSet::new()), Some(key("a")));
        assert!(q.is_idle());
    }

    #[test]
    fn add_preempts_delay() {
        let mut q = WorkQueue::default();
        q.add_at(key("a"), 10);
        q.add(key("a"));
        assert_eq!(q.depth(), 1);
        assert_eq!(q.pop_excluding(&HashSet::new()), Some(key("a")));
    }

    #[test]
    fn promote_in_due_order() {
        let mut q = WorkQueue::default();
        q.add_at(key("b"), 3);
        q.add_at(key("a"), 4);
        q.add_at(key("c"), 9);
        q.promote(5);
        let none = HashSet::new();
        assert_eq!(q.pop_excluding(&none), Some(key("b")));
        assert_eq!(q.pop_excluding(&none), Some(key("a")));
        assert_eq!(q.pop_excluding(&none), None);
        assert_eq!(q.depth(), 1);
    }

    #[test]
    fn skip_set_is_respected() {
        let mut q = WorkQueue::default();
        q.add(key("a"));
        q.add(key("b"));
        let skip: HashSet<_> = [key("a")].into_iter().collect();
        assert_eq!(q.pop_excluding(&skip), Some(key("b")));
        assert_eq!(q.pop_excluding(&skip), None);
        assert_eq!(q.depth(), 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let delays: Vec<_> = (1..=9).map(|n| backoff_delay(1, 64, n)).collect();
        assert_eq!(delays, vec![1, 2, 4, 8, 16, 32, 64, 64, 64]);
        assert_eq!(backoff_delay(3, 10, 3), 10);
        assert_eq!(backoff_delay(1, 64, 200), 64);
    }
}
