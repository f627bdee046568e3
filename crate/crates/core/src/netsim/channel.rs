use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rng;
use crate::error::{Error, Result};
use crate::{secs_to_nanos, Nanos};

/// One direction of the network: constant delay, uniform jitter and
/// independent Bernoulli loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Seconds.
    pub base_delay: f64,
    /// Half-width of the uniform delay perturbation, seconds.
    pub jitter: f64,
    pub loss_rate: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn delay(base_delay: f64) -> Self {
        Self {
            base_delay,
            ..Self::default()
        }
    }

    pub fn lossy(base_delay: f64, loss_rate: f64) -> Self {
        Self {
            base_delay,
            loss_rate,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.base_delay == 0.0 && self.jitter == 0.0 && self.loss_rate == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.base_delay.is_finite() && self.jitter.is_finite();
        if !finite || self.base_delay < 0.0 || self.jitter < 0.0 {
            return Err(Error::config(
                "channel delay and jitter must be finite and non-negative",
            ));
        }
        if self.base_delay - self.jitter < 0.0 {
            return Err(Error::config(format!(
                "jitter {} exceeds base delay {}",
                self.jitter, self.base_delay
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(Error::config(format!("loss rate {} outside [0, 1]", self.loss_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl ChannelStats {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }
}

struct InFlight<T> {
    deliver_at: Nanos,
    order: u64,
    item: T,
}

impl<T> PartialEq for InFlight<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.deliver_at, self.order) == (other.deliver_at, other.order)
    }
}

impl<T> Eq for InFlight<T> {}

impl<T> PartialOrd for InFlight<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for InFlight<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.deliver_at, self.order).cmp(&(other.deliver_at, other.order))
    }
}

/// Seeded channel model. Items leave in order of delivery time, then send
/// order, so jitter can reorder them.
pub struct Channel<T> {
    config: ChannelConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<InFlight<T>>>,
    last_send: Option<Nanos>,
    next_order: u64,
    stats: ChannelStats,
}

/// What happened to a sent item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Dropped,
    Scheduled { deliver_at: Nanos },
}

impl<T> Channel<T> {
    pub fn new(config: ChannelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: rng::stream(config.seed),
            config,
            queue: BinaryHeap::new(),
            last_send: None,
            next_order: 0,
            stats: ChannelStats::default(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn send(&mut self, item: T, now: Nanos) -> Result<SendOutcome> {
        if let Some(last) = self.last_send {
            if now < last {
                return Err(Error::invalid(format!(
                    "send time {now} ns precedes previous send at {last} ns"
                )));
            }
        }
        self.last_send = Some(now);
        self.stats.sent += 1;

        // Both draws happen for every packet so the loss pattern does not
        // depend on the jitter setting.
        let loss_draw: f64 = self.rng.random();
        let jitter_draw: f64 = self.rng.random();
        if loss_draw < self.config.loss_rate {
            self.stats.dropped += 1;
            return Ok(SendOutcome::Dropped);
        }
        let delay = self.config.base_delay + (2.0 * jitter_draw - 1.0) * self.config.jitter;
        let deliver_at = now + secs_to_nanos(delay.max(0.0));
        self.queue.push(Reverse(InFlight {
            deliver_at,
            order: self.next_order,
            item,
        }));
        self.next_order += 1;
        Ok(SendOutcome::Scheduled { deliver_at })
    }

    /// Removes and returns everything due at or before `now`.
    pub fn poll(&mut self, now: Nanos) -> Vec<T> {
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|Reverse(f)| f.deliver_at <= now) {
            let Reverse(f) = self.queue.pop().expect("peeked");
            out.push(f.item);
        }
        self.stats.delivered += out.len() as u64;
        out
    }

    /// Delivery time of the earliest in-flight item.
    pub fn next_delivery(&self) -> Option<Nanos> {
        self.queue.peek().map(|Reverse(f)| f.deliver_at)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Packet;
    use proptest::prelude::*;

    const MS: Nanos = 1_000_000;

    fn packet(seq: u64, ts: Nanos) -> Packet {
        Packet::state(seq, ts, 0, vec![])
    }

    #[test]
    fn full_loss_delivers_nothing() {
        let mut ch = Channel::new(ChannelConfig::lossy(0.0, 1.0)).unwrap();
        for i in 0..100 {
            assert_eq!(ch.send(packet(i, i), i).unwrap(), SendOutcome::Dropped);
        }
        assert!(ch.poll(u64::MAX).is_empty());
        assert_eq!(ch.stats().dropped, 100);
    }

    #[test]
    fn fixed_delay_is_exact() {
        let mut ch = Channel::new(ChannelConfig::delay(0.1)).unwrap();
        ch.send(packet(0, 0), 0).unwrap();
        assert!(ch.poll(99 * MS).is_empty());
        assert_eq!(ch.poll(100 * MS).len(), 1);
    }

    #[test]
    fn delivered_fraction_matches_loss_rate() {
        let cfg = ChannelConfig {
            loss_rate: 0.05,
            seed: 42,
            ..ChannelConfig::default()
        };
        let mut ch = Channel::new(cfg).unwrap();
        for i in 0..100_000 {
            ch.send(i, i).unwrap();
        }
        let delivered = ch.poll(u64::MAX).len() as f64 / 1e5;
        assert!((0.945..=0.955).contains(&delivered), "{delivered}");
    }

    #[test]
    fn jitter_can_reorder() {
        let cfg = ChannelConfig {
            base_delay: 0.1,
            jitter: 0.05,
            loss_rate: 0.0,
            seed: 0,
        };
        // Find a seed whose first two draws put the second packet ahead.
        let (seed, first, second) = (0..1000u64)
            .find_map(|seed| {
                let mut ch = Channel::new(ChannelConfig { seed, ..cfg }).unwrap();
                let a = ch.send(packet(1, 0), 0).unwrap();
                let b = ch.send(packet(2, 10 * MS), 10 * MS).unwrap();
                match (a, b) {
                    (SendOutcome::Scheduled { deliver_at: a }, SendOutcome::Scheduled { deliver_at: b })
                        if b < a && a <= 200 * MS =>
                    {
                        Some((seed, a, b))
                    }
                    _ => None,
                }
            })
            .expect("some seed reorders");
        assert!(second < first);
        let mut ch = Channel::new(ChannelConfig { seed, ..cfg }).unwrap();
        ch.send(packet(1, 0), 0).unwrap();
        ch.send(packet(2, 10 * MS), 10 * MS).unwrap();
        let got: Vec<u64> = ch.poll(200 * MS).iter().map(|p| p.seq).collect();
        assert_eq!(got, vec![2, 1]);
    }

    #[test]
    fn poll_is_at_most_once() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        assert!(ch.poll(0).is_empty());
        ch.send(packet(0, 0), 0).unwrap();
        assert_eq!(ch.poll(5).len(), 1);
        assert!(ch.poll(5).is_empty());
    }

    #[test]
    fn rejects_time_going_backwards() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        ch.send(1, 10).unwrap();
        assert!(matches!(ch.send(2, 9), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            ChannelConfig {
                base_delay: 0.01,
                jitter: 0.02,
                ..Default::default()
            },
            ChannelConfig {
                loss_rate: 1.5,
                ..Default::default()
            },
            ChannelConfig {
                base_delay: -1.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(Channel::<u8>::new(cfg).is_err());
        }
    }

    #[test]
    fn identity_channel_preserves_send_order() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        for i in 0..10 {
            ch.send(packet(i, 5), 5).unwrap();
        }
        let seqs: Vec<u64> = ch.poll(5).iter().map(|p| p.seq).collect();
        assert_eq!(seqs, (0..10).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn conservation_and_determinism(
            seed in any::<u64>(),
            loss in 0.0..1.0f64,
            jitter_ms in 0u64..20,
            gaps in proptest::collection::vec(0u64..15, 1..200),
        ) {
            let cfg = ChannelConfig {
                base_delay: 0.02,
                jitter: jitter_ms as f64 / 1000.0,
                loss_rate: loss,
                seed,
            };
            let run = || {
                let mut ch = Channel::new(cfg).unwrap();
                let mut now = 0;
                let mut log = Vec::new();
                for (i, g) in gaps.iter().enumerate() {
                    now += g * MS;
                    ch.send(i as u64, now).unwrap();
                    let s = ch.stats();
                    assert_eq!(s.sent, s.delivered + s.dropped + ch.in_flight() as u64);
                    for item in ch.poll(now) {
                        log.push((now, item));
                    }
                }
                log.extend(ch.poll(u64::MAX).into_iter().map(|i| (u64::MAX, i)));
                (log, ch.stats())
            };
            let (a, sa) = run();
            let (b, sb) = run();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(sa, sb);
            // Each sent item is delivered at most once.
            let mut ids: Vec<u64> = a.iter().map(|(_, i)| *i).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), a.len());
            prop_assert_eq!(sa.sent, sa.delivered + sa.dropped);
        }
    }
}
