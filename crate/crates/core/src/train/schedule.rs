use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Exponential,
}

/// Blend weight between the LR-field and HR-field targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub kind: ScheduleKind,
    /// Decay constant in iterations.
    pub tau: f64,
    pub floor: f64,
}

impl AlphaSchedule {
    pub fn exponential(tau: f64) -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            tau,
            floor: 0.0,
        }
    }

    /// `tau = iterations / 5`, so the weight falls below 1% after the run.
    pub fn for_iterations(iterations: usize) -> Self {
        Self::exponential((iterations as f64 / 5.0).max(1.0))
    }

    pub fn value(&self, t: usize) -> f64 {
        alpha(self, t)
    }
}

/// `max(floor, exp(-t / tau))`.
pub fn alpha(schedule: &AlphaSchedule, t: usize) -> f64 {
    match schedule.kind {
        ScheduleKind::Exponential => (-(t as f64) / schedule.tau).exp().max(schedule.floor).min(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_one_and_decays_to_floor() {
        let s = AlphaSchedule::exponential(1000.0);
        assert_eq!(alpha(&s, 0), 1.0);
        assert!((alpha(&s, 1000) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(alpha(&s, 10_000_000), 0.0);
        let floored = AlphaSchedule { floor: 0.05, ..s };
        assert_eq!(alpha(&floored, 10_000_000), 0.05);
    }
}
