use std::time::Duration;

use fedtherm_core::rng::{self, Rng};
use fedtherm_core::wire::Message;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Connection, TransportError};
use crate::error::{Error, Result};

/// Latency and loss of one simulated network link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// Per-message latency in milliseconds, drawn uniformly from `[lo, hi]`.
    pub latency_ms: (f64, f64),
    /// Probability that one delivery attempt is lost.
    pub drop_prob: f64,
    pub seed: u64,
    /// Fraction of the injected latency spent in a real sleep; the rest is
    /// only accounted as simulated time. 1.0 sleeps for real.
    #[serde(default = "one")]
    pub time_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl LinkModel {
    /// A link that neither delays nor drops.
    pub fn lossless(seed: u64) -> Self {
        Self { latency_ms: (0.0, 0.0), drop_prob: 0.0, seed, time_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.latency_ms;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("link.latency_ms", format!("need 0 <= lo <= hi, got [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config("link.drop_prob", format!("must lie in [0, 1], got {}", self.drop_prob)));
        }
        if !(0.0..=1.0).contains(&self.time_scale) {
            return Err(Error::config("link.time_scale", format!("must lie in [0, 1], got {}", self.time_scale)));
        }
        Ok(())
    }
}

/// Wraps a connection with seeded latency and message loss.
///
/// Hello and Shutdown are control traffic and pass untouched, so
/// registration and teardown are never lost. A dropped send surfaces as a
/// timeout on the following `recv`, charged as simulated time instead of a
/// real wait.
#[derive(Debug)]
pub struct FaultyLink<C> {
    inner: C,
    link: LinkModel,
    rng: Rng,
    lost_send: bool,
    simulated: Duration,
    dropped: u64,
}

impl<C: Connection> FaultyLink<C> {
    pub fn new(inner: C, link: LinkModel) -> Result<Self> {
        link.validate()?;
        let rng = rng::stream(link.seed, "link");
        Ok(Self { inner, link, rng, lost_send: false, simulated: Duration::ZERO, dropped: 0 })
    }

    pub fn into_inner(self) -> C {
        self.inner
    }

    /// Messages lost so far in either direction.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Draws this delivery's latency and fate; returns true when delivered.
    fn transit(&mut self) -> bool {
        let (lo, hi) = self.link.latency_ms;
        let latency_ms = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
        let delivered = self.rng.random::<f64>() >= self.link.drop_prob;
        let latency = Duration::from_secs_f64(latency_ms / 1e3);
        let slept = latency.mul_f64(self.link.time_scale);
        if !slept.is_zero() {
            std::thread::sleep(slept);
        }
        self.simulated += latency - slept;
        if !delivered {
            self.dropped += 1;
        }
        delivered
    }
}

fn is_control(msg: &Message) -> bool {
    matches!(msg, Message::Hello { .. } | Message::Shutdown { .. })
}

impl<C: Connection> Connection for FaultyLink<C> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        if is_control(msg) {
            return self.inner.send(msg);
        }
        if self.transit() {
            self.inner.send(msg)
        } else {
            self.lost_send = true;
            Ok(())
        }
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        if std::mem::take(&mut self.lost_send) {
            self.simulated += timeout;
            return Err(TransportError::Timeout(timeout));
        }
        let msg = self.inner.recv(timeout)?;
        if is_control(&msg) || self.transit() {
            Ok(msg)
        } else {
            self.simulated += timeout;
            Err(TransportError::Timeout(timeout))
        }
    }

    fn simulated_time(&self) -> Duration {
        self.inner.simulated_time() + self.simulated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::memory_pair;

    const WAIT: Duration = Duration::from_millis(200);

    fn pattern(drop_prob: f64, seed: u64) -> Vec<bool> {
        let (a, mut b) = memory_pair();
        let link = LinkModel { latency_ms: (0.0, 0.0), drop_prob, seed, time_scale: 1.0 };
        let mut faulty = FaultyLink::new(a, link).unwrap();
        (0..200)
            .map(|round| {
                faulty.send(&Message::RoundAck { round }).unwrap();
                let got = b.recv(Duration::from_millis(1)).is_ok();
                if !got {
                    assert!(matches!(faulty.recv(WAIT), Err(TransportError::Timeout(_))));
                }
                got
            })
            .collect()
    }

    #[test]
    fn lossless_link_delivers_in_order() {
        let (a, mut b) = memory_pair();
        let mut faulty = FaultyLink::new(a, LinkModel::lossless(1)).unwrap();
        for round in 0..50 {
            faulty.send(&Message::RoundAck { round }).unwrap();
        }
        for round in 0..50 {
            assert_eq!(b.recv(WAIT).unwrap(), Message::RoundAck { round });
            b.send(&Message::RoundAck { round }).unwrap();
        }
        for round in 0..50 {
            assert_eq!(faulty.recv(WAIT).unwrap(), Message::RoundAck { round });
        }
        assert_eq!(faulty.simulated_time(), Duration::ZERO);
    }

    #[test]
    fn full_loss_drops_everything_but_control_traffic() {
        assert!(pattern(1.0, 3).iter().all(|d| !d));
        let (a, mut b) = memory_pair();
        let link = LinkModel { drop_prob: 1.0, ..LinkModel::lossless(3) };
        let mut faulty = FaultyLink::new(a, link).unwrap();
        faulty.send(&Message::Shutdown { payload: None }).unwrap();
        assert_eq!(b.recv(WAIT).unwrap(), Message::Shutdown { payload: None });
        b.send(&Message::RoundAck { round: 1 }).unwrap();
        assert!(matches!(faulty.recv(WAIT), Err(TransportError::Timeout(_))));
        assert_eq!(faulty.simulated_time(), WAIT);
    }

    #[test]
    fn drop_pattern_is_seeded() {
        let a = pattern(0.5, 11);
        assert_eq!(a, pattern(0.5, 11));
        assert_ne!(a, pattern(0.5, 12));
        let delivered = a.iter().filter(|d| **d).count();
        assert!((60..140).contains(&delivered), "{delivered}");
    }

    #[test]
    fn unslept_latency_is_simulated() {
        let (a, _b) = memory_pair();
        let link = LinkModel { latency_ms: (100.0, 100.0), drop_prob: 0.0, seed: 0, time_scale: 0.0 };
        let mut faulty = FaultyLink::new(a, link).unwrap();
        faulty.send(&Message::RoundAck { round: 0 }).unwrap();
        assert_eq!(faulty.simulated_time(), Duration::from_millis(100));
    }

    #[test]
    fn invalid_links_are_rejected() {
        let bad = LinkModel { latency_ms: (5.0, 1.0), ..LinkModel::lossless(0) };
        assert!(bad.validate().is_err());
        let bad = LinkModel { drop_prob: 1.5, ..LinkModel::lossless(0) };
        assert!(bad.validate().is_err());
    }
}
