//! Hard-wired reflexes that override every other action source when the
//! predator gets close. The planner never simulates them.

use serde::{Deserialize, Serialize};

use crate::env::{dist, Action, EnvState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReflexKind {
    None,
    Flight,
    Freeze,
}

impl std::str::FromStr for ReflexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReflexKind::None),
            "flight" => Ok(ReflexKind::Flight),
            "freeze" => Ok(ReflexKind::Freeze),
            other => Err(Error::Config(format!("unknown reflex.kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflexConfig {
    pub kind: ReflexKind,
    pub trigger_distance: f64,
}

impl Default for ReflexConfig {
    fn default() -> Self {
        Self {
            kind: ReflexKind::None,
            trigger_distance: 1.5,
        }
    }
}

impl ReflexConfig {
    pub fn validate(&self, catch_radius: f64) -> Result<()> {
        if self.kind != ReflexKind::None && self.trigger_distance <= catch_radius {
            return Err(Error::Config(
                "reflex.trigger_distance must exceed env.catch_radius".into(),
            ));
        }
        Ok(())
    }
}

/// Fires iff the reflex is enabled and the predator is within
/// `trigger_distance` (inclusive).
pub fn reflex_override(state: &EnvState, config: &ReflexConfig) -> Option<Action> {
    if config.kind == ReflexKind::None {
        return None;
    }
    let d = dist(state.agent, state.predator);
    if d > config.trigger_distance {
        return None;
    }
    match config.kind {
        ReflexKind::None => None,
        ReflexKind::Freeze => Some(Action::ZERO),
        ReflexKind::Flight => {
            if d > 0.0 {
                Some(Action([
                    (state.agent[0] - state.predator[0]) / d,
                    (state.agent[1] - state.predator[1]) / d,
                ]))
            } else {
                // no defined direction; pick +x
                Some(Action([1.0, 0.0]))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Outcome;

    fn state(agent: [f64; 2], predator: [f64; 2]) -> EnvState {
        EnvState {
            agent,
            goal: [9.0, 9.0],
            predator,
            step_index: 0,
            outcome: Outcome::Ongoing,
        }
    }

    #[test]
    fn none_never_fires() {
        let c = ReflexConfig::default();
        assert_eq!(reflex_override(&state([1.0, 1.0], [1.0, 1.1]), &c), None);
    }

    #[test]
    fn freeze_stops() {
        let c = ReflexConfig {
            kind: ReflexKind::Freeze,
            trigger_distance: 1.5,
        };
        assert_eq!(reflex_override(&state([1.0, 1.0], [1.5, 1.0]), &c), Some(Action::ZERO));
        assert_eq!(reflex_override(&state([1.0, 1.0], [4.0, 1.0]), &c), None);
    }

    #[test]
    fn flight_retreats_with_unit_norm() {
        let c = ReflexConfig {
            kind: ReflexKind::Flight,
            trigger_distance: 1.5,
        };
        assert_eq!(reflex_override(&state([1.0, 0.0], [0.0, 0.0]), &c), Some(Action([1.0, 0.0])));
        let a = reflex_override(&state([2.0, 2.0], [2.7, 1.4]), &c).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trigger_boundary_is_inclusive() {
        let c = ReflexConfig {
            kind: ReflexKind::Freeze,
            trigger_distance: 1.5,
        };
        assert!(reflex_override(&state([0.0, 0.0], [1.5, 0.0]), &c).is_some());
        assert!(reflex_override(&state([0.0, 0.0], [1.5 + 1e-9, 0.0]), &c).is_none());
    }

    #[test]
    fn trigger_must_exceed_catch_radius() {
        let c = ReflexConfig {
            kind: ReflexKind::Flight,
            trigger_distance: 0.4,
        };
        assert!(c.validate(0.5).is_err());
        assert!(ReflexConfig::default().validate(0.5).is_ok());
    }
}
