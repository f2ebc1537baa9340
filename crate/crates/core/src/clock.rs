//! Time sources. Simulated runs share a [`VirtualClock`] advanced by the
//! harness; live deployments use [`WallClock`].

use std::sync::Mutex;
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Seconds since the scenario epoch.
    fn now(&self) -> f64;
}

impl std::fmt::Debug for dyn Clock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Clock(t={})", self.now())
    }
}

#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<f64>,
}

impl VirtualClock {
    pub fn new(start: f64) -> Self {
        Self { now: Mutex::new(start) }
    }

    /// Moves the clock forward. Time never runs backwards.
    pub fn set(&self, t: f64) {
        let mut now = self.now.lock().unwrap();
        assert!(t >= *now, "virtual clock cannot move backwards ({t} < {})", *now);
        *now = t;
    }

    pub fn advance(&self, dt: f64) {
        let mut now = self.now.lock().unwrap();
        *now += dt.max(0.0);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }
}

#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
    offset: f64,
}

impl WallClock {
    pub fn starting_at(offset: f64) -> Self {
        Self {
            origin: Instant::now(),
            offset,
        }
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.offset + self.origin.elapsed().as_secs_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_monotone() {
        let c = VirtualClock::new(10.0);
        c.advance(2.5);
        assert_eq!(c.now(), 12.5);
        c.set(20.0);
        assert_eq!(c.now(), 20.0);
        assert!(std::panic::catch_unwind(|| c.set(1.0)).is_err());
    }

    #[test]
    fn wall_clock_moves_forward() {
        let c = WallClock::starting_at(100.0);
        let a = c.now();
        assert!(a >= 100.0);
        assert!(c.now() >= a);
    }
}
