use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// A scheduled event. Ordered by `(time, seq)`; `seq` is the insertion
/// counter, so simultaneous events run in the order they were scheduled.
#[derive(Debug, Clone)]
pub struct SimEvent<K> {
    pub time: f64,
    pub seq: u64,
    /// Clock value when the event was scheduled.
    pub scheduled_at: f64,
    pub kind: K,
}

impl<K> PartialEq for SimEvent<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K> Eq for SimEvent<K> {}

impl<K> PartialOrd for SimEvent<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for SimEvent<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
pub struct EventQueue<K> {
    heap: BinaryHeap<SimEvent<K>>,
    next_seq: u64,
    now: f64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
        }
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Schedules `kind` at `time`, which must not precede the current clock.
    pub fn schedule(&mut self, time: f64, kind: K) {
        assert!(
            time >= self.now,
            "event scheduled in the past ({time} < {})",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent {
            time,
            seq,
            scheduled_at: self.now,
            kind,
        });
    }

    pub fn pop(&mut self) -> Option<SimEvent<K>> {
        let ev = self.heap.pop()?;
        self.now = ev.time;
        Some(ev)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(2.0, "late");
        q.schedule(1.0, "first");
        q.schedule(1.0, "second");
        q.schedule(0.5, "earliest");
        let order: Vec<&str> = std::iter::from_fn(|| q.pop().map(|e| e.kind)).collect();
        assert_eq!(order, vec!["earliest", "first", "second", "late"]);
        assert_eq!(q.now(), 2.0);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn rejects_past_events() {
        let mut q = EventQueue::new();
        q.schedule(1.0, ());
        q.pop();
        q.schedule(0.5, ());
    }
}
