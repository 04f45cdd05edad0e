use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::SimError;

/// Trip bookkeeping for one simulation run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    entered: usize,
    exited: usize,
    completed: Vec<f64>,
    /// Entry time of every vehicle still in the network, keyed by vehicle id.
    active: BTreeMap<usize, f64>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_entry(&mut self, vehicle: usize, enter_time: f64) {
        self.entered += 1;
        self.active.insert(vehicle, enter_time);
    }

    pub fn record_exit(&mut self, vehicle: usize, exit_time: f64) {
        if let Some(enter) = self.active.remove(&vehicle) {
            self.exited += 1;
            self.completed.push(exit_time - enter);
        }
    }

    pub fn vehicles_entered(&self) -> usize {
        self.entered
    }

    pub fn vehicles_exited(&self) -> usize {
        self.exited
    }

    pub fn vehicles_in_network(&self) -> usize {
        self.active.len()
    }

    /// Completed-trip durations in exit order.
    pub fn completed_travel_times(&self) -> &[f64] {
        &self.completed
    }

    /// Throughput: vehicles that finished their trip.
    pub fn throughput(&self) -> usize {
        self.exited
    }

    pub fn is_conserved(&self) -> bool {
        self.entered == self.active.len() + self.exited
    }

    /// Mean trip time over every injected vehicle. Vehicles still in the
    /// network contribute `horizon_end - enter`.
    pub fn average_travel_time(&self, horizon_end: f64) -> Result<f64, SimError> {
        if self.entered == 0 {
            return Err(SimError::UndefinedMetric("average travel time with zero vehicles"));
        }
        let done: f64 = self.completed.iter().sum();
        let censored: f64 = self.active.values().map(|&enter| horizon_end - enter).sum();
        Ok((done + censored) / self.entered as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trip() {
        let mut m = MetricsAccumulator::new();
        m.record_entry(0, 0.0);
        m.record_exit(0, 100.0);
        assert_eq!(m.average_travel_time(3600.0).unwrap(), 100.0);
    }

    #[test]
    fn two_trips_average() {
        let mut m = MetricsAccumulator::new();
        m.record_entry(0, 0.0);
        m.record_entry(1, 50.0);
        m.record_exit(0, 100.0);
        m.record_exit(1, 250.0);
        assert_eq!(m.average_travel_time(3600.0).unwrap(), 150.0);
    }

    #[test]
    fn stuck_vehicle_is_censored_at_horizon() {
        let mut m = MetricsAccumulator::new();
        m.record_entry(0, 0.0);
        m.record_entry(1, 10.0);
        m.record_entry(2, 900.0);
        m.record_exit(0, 80.0);
        m.record_exit(1, 130.0);
        assert_eq!(m.average_travel_time(1000.0).unwrap(), 100.0);
        assert!(m.is_conserved());
        assert_eq!(m.vehicles_in_network(), 1);
    }

    #[test]
    fn empty_metrics_are_undefined() {
        assert!(matches!(MetricsAccumulator::new().average_travel_time(10.0), Err(SimError::UndefinedMetric(_))));
    }
}
