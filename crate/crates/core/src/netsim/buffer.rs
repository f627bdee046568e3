use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use super::Packet;

/// Single-slot store that keeps only the freshest packet by
/// `(origin_timestamp, seq)`.
#[derive(Clone, Debug, Default)]
pub struct LatestBuffer {
    current: Option<Packet>,
}

impl LatestBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `p` if it is strictly fresher than the current packet.
    pub fn offer(&mut self, p: Packet) -> bool {
        let accept = self.current.as_ref().is_none_or(|cur| p.freshness() > cur.freshness());
        if accept {
            self.current = Some(p);
        }
        accept
    }

    pub fn latest(&self) -> Option<&Packet> {
        self.current.as_ref()
    }
}

/// [`LatestBuffer`] shared between one receive agent and one control agent.
/// Readers get a clone of a whole packet, never a partial update.
#[derive(Debug, Default)]
pub struct SharedLatestBuffer {
    inner: Mutex<LatestBuffer>,
    changed: Condvar,
}

impl SharedLatestBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, LatestBuffer> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn offer(&self, p: Packet) -> bool {
        let accepted = self.lock().offer(p);
        if accepted {
            self.changed.notify_all();
        }
        accepted
    }

    pub fn latest(&self) -> Option<Packet> {
        self.lock().latest().cloned()
    }

    /// Waits up to `timeout` for a packet fresher than `seen`.
    pub fn wait_fresher(&self, seen: Option<(u64, u64)>, timeout: Duration) -> Option<Packet> {
        let fresher = |b: &LatestBuffer| b.latest().filter(|p| seen.is_none_or(|s| p.freshness() > s)).cloned();
        let guard = self.lock();
        if let Some(p) = fresher(&guard) {
            return Some(p);
        }
        let (guard, _) = self
            .changed
            .wait_timeout_while(guard, timeout, |b| fresher(b).is_none())
            .unwrap_or_else(|e| e.into_inner());
        fresher(&guard)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ts(t: u64, seq: u64) -> Packet {
        Packet::state(seq, t, 0, vec![])
    }

    #[test]
    fn older_packets_are_rejected() {
        let mut b = LatestBuffer::new();
        assert!(b.latest().is_none());
        assert!(b.offer(ts(7, 0)));
        assert!(!b.offer(ts(5, 1)));
        assert_eq!(b.latest().unwrap().origin_timestamp, 7);
    }

    #[test]
    fn keeps_maximum_and_reads_are_idempotent() {
        let mut b = LatestBuffer::new();
        for (i, t) in [3, 9, 6].into_iter().enumerate() {
            b.offer(ts(t, i as u64));
        }
        assert_eq!(b.latest().unwrap().origin_timestamp, 9);
        assert_eq!(b.latest(), b.latest());
    }

    #[test]
    fn ties_go_to_higher_seq() {
        let mut b = LatestBuffer::new();
        b.offer(ts(4, 2));
        assert!(!b.offer(ts(4, 1)));
        assert!(b.offer(ts(4, 3)));
        assert_eq!(b.latest().unwrap().seq, 3);
    }

    #[test]
    fn shared_buffer_wakes_waiter() {
        let buf = Arc::new(SharedLatestBuffer::new());
        let writer = Arc::clone(&buf);
        let handle = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            writer.offer(ts(10, 1));
        });
        let got = buf.wait_fresher(None, Duration::from_secs(5));
        handle.join().unwrap();
        assert_eq!(got.unwrap().origin_timestamp, 10);
        assert!(buf.wait_fresher(Some((10, 1)), Duration::from_millis(5)).is_none());
    }

    proptest! {
        #[test]
        fn buffer_is_running_maximum(offers in proptest::collection::vec((0u64..50, 0u64..50), 1..100)) {
            let mut b = LatestBuffer::new();
            for (i, &(t, s)) in offers.iter().enumerate() {
                b.offer(ts(t, s));
                let best = offers[..=i].iter().copied().max().unwrap();
                prop_assert_eq!(b.latest().unwrap().freshness(), best);
            }
        }
    }
}
