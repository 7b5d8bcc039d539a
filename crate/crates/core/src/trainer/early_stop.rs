//! Patience-based early stopping on a monitored validation value.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    /// Lower is better (validation loss).
    Minimize,
    /// Higher is better (validation F1).
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Improved,
    NoImprovement,
    Stop,
}

/// Tracks the best epoch; signals a stop once `patience` consecutive
/// epochs fail to strictly improve on it.
#[derive(Clone, Debug)]
pub struct EarlyStopping<T> {
    patience: usize,
    monitor: Monitor,
    best: Option<T>,
    best_epoch: usize,
}

impl<T: Scalar> EarlyStopping<T> {
    pub fn new(patience: usize, monitor: Monitor) -> Self {
        Self {
            patience,
            monitor,
            best: None,
            best_epoch: 0,
        }
    }

    fn improves(&self, value: T) -> bool {
        if value.is_nan() {
            return false;
        }
        match self.best {
            None => true,
            Some(b) => match self.monitor {
                Monitor::Minimize => value < b,
                Monitor::Maximize => value > b,
            },
        }
    }

    /// Records the value of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, value: T) -> Observation {
        if self.improves(value) {
            self.best = Some(value);
            self.best_epoch = epoch;
            return Observation::Improved;
        }
        if epoch - self.best_epoch >= self.patience {
            Observation::Stop
        } else {
            Observation::NoImprovement
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> Option<T> {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StopOutcome {
    /// Last epoch that ran.
    pub stop_epoch: usize,
    /// Epoch whose checkpoint is kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Replays a metric sequence through [`EarlyStopping`], epochs numbered
/// from 1.
pub fn simulate_early_stopping<T: Scalar>(values: &[T], patience: usize, monitor: Monitor) -> StopOutcome {
    let mut es = EarlyStopping::new(patience, monitor);
    for (i, &v) in values.iter().enumerate() {
        let epoch = i + 1;
        if es.observe(epoch, v) == Observation::Stop {
            return StopOutcome {
                stop_epoch: epoch,
                best_epoch: es.best_epoch(),
                stopped_early: epoch < values.len(),
            };
        }
    }
    StopOutcome {
        stop_epoch: values.len(),
        best_epoch: es.best_epoch(),
        stopped_early: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_improving_runs_to_the_end() {
        let seq: Vec<f64> = (1..=30).map(|e| e as f64).collect();
        let out = simulate_early_stopping(&seq, 2, Monitor::Maximize);
        assert_eq!((out.stop_epoch, out.best_epoch), (30, 30));
        assert!(!out.stopped_early);
    }

    #[test]
    fn peak_at_three_then_flat_stops_at_five() {
        let seq = [0.1, 0.2, 0.5, 0.5, 0.5, 0.5, 0.5];
        let out = simulate_early_stopping(&seq, 2, Monitor::Maximize);
        assert_eq!((out.stop_epoch, out.best_epoch), (5, 3));
        assert!(out.stopped_early);
    }

    #[test]
    fn minimize_mode_and_zero_patience() {
        let seq = [1.0, 0.8, 0.9, 0.7];
        let out = simulate_early_stopping(&seq, 0, Monitor::Minimize);
        assert_eq!((out.stop_epoch, out.best_epoch), (3, 2));
        let out = simulate_early_stopping(&seq, 2, Monitor::Minimize);
        assert_eq!((out.stop_epoch, out.best_epoch), (4, 4));
    }

    #[test]
    fn nan_never_improves() {
        let out = simulate_early_stopping(&[0.5, f64::NAN, f64::NAN], 2, Monitor::Minimize);
        assert_eq!((out.stop_epoch, out.best_epoch), (3, 1));
    }
}
