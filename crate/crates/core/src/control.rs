//! Classical signal controllers.

use alloc::format;
use alloc::vec::Vec;

use crate::sim::{Phase, SimError, Simulator};

/// Cyclic plan giving each phase a fixed green window, phases in order 1..=4.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedTime {
    cycle: f64,
    splits: [f64; 4],
}

impl Default for FixedTime {
    fn default() -> Self {
        Self { cycle: 120.0, splits: [30.0; 4] }
    }
}

impl FixedTime {
    /// Splits must sum to `cycle` and each must last at least one decision interval.
    pub fn new(cycle: f64, splits: [f64; 4], delta_t: f64) -> Result<Self, SimError> {
        if !(cycle.is_finite() && cycle > 0.0) {
            return Err(SimError::Config(format!("cycle must be positive, got {cycle}")));
        }
        if let Some(s) = splits.iter().find(|&&s| !(s.is_finite() && s >= delta_t)) {
            return Err(SimError::Config(format!("split {s} is shorter than the decision interval {delta_t}")));
        }
        let total: f64 = splits.iter().sum();
        if (total - cycle).abs() > 1e-9 * cycle.max(1.0) {
            return Err(SimError::Config(format!("splits sum to {total}, cycle is {cycle}")));
        }
        Ok(Self { cycle, splits })
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    pub fn splits(&self) -> [f64; 4] {
        self.splits
    }

    /// Phase whose window contains `t mod cycle`.
    pub fn phase_at(&self, t: f64) -> Phase {
        let mut local = libm::fmod(t, self.cycle);
        if local < 0.0 {
            local += self.cycle;
        }
        let mut end = 0.0;
        for (i, s) in self.splits.iter().enumerate() {
            end += s;
            if local < end {
                return Phase::ALL[i];
            }
        }
        Phase::ALL[3]
    }

    /// Phases for `steps` consecutive decisions starting at time 0.
    pub fn schedule(&self, delta_t: f64, steps: usize) -> Vec<Phase> {
        (0..steps).map(|k| self.phase_at(k as f64 * delta_t)).collect()
    }
}

/// Phase with the largest pressure, lowest phase number on ties.
pub fn max_pressure(sim: &Simulator, agent: usize) -> Result<Phase, SimError> {
    let mut best = Phase::ALL[0];
    let mut best_p = sim.pressure(agent, best)?;
    for &ph in &Phase::ALL[1..] {
        let p = sim.pressure(agent, ph)?;
        if p > best_p {
            best = ph;
            best_p = p;
        }
    }
    Ok(best)
}

/// MaxPressure choice for every agent.
pub fn max_pressure_all(sim: &Simulator) -> Result<Vec<Phase>, SimError> {
    (0..sim.agent_count()).map(|a| max_pressure(sim, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbers(v: &[Phase]) -> Vec<u8> {
        v.iter().map(|p| p.number()).collect()
    }

    #[test]
    fn equal_splits_rotate() {
        let ft = FixedTime::new(40.0, [10.0; 4], 10.0).unwrap();
        assert_eq!(numbers(&ft.schedule(10.0, 6)), [1, 2, 3, 4, 1, 2]);
        assert_eq!(ft.phase_at(0.0).number(), 1);
    }

    #[test]
    fn long_first_split() {
        let ft = FixedTime::new(60.0, [30.0, 10.0, 10.0, 10.0], 10.0).unwrap();
        assert_eq!(numbers(&ft.schedule(10.0, 12)), [1, 1, 1, 2, 3, 4, 1, 1, 1, 2, 3, 4]);
    }

    #[test]
    fn schedule_is_periodic() {
        let ft = FixedTime::default();
        let s = ft.schedule(10.0, 48);
        assert_eq!(s[..12], s[12..24]);
        assert_eq!(s[..24], s[24..]);
    }

    #[test]
    fn invalid_plans() {
        assert!(FixedTime::new(100.0, [30.0; 4], 10.0).is_err());
        assert!(FixedTime::new(20.0, [5.0; 4], 10.0).is_err());
        assert!(FixedTime::new(0.0, [0.0; 4], 0.0).is_err());
    }
}
