//! Anchor-weight schedules across generations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Keeps the operator's own α.
    #[default]
    Constant,
    /// Affine ramp from `from` at g = 0 to `to` at g = `over_generations`, flat afterwards.
    Linear {
        from: f64,
        to: f64,
        over_generations: usize,
    },
    /// Multiplies α by `increase_factor` whenever the last contraction ratio
    /// `D(S_g)/D(S_{g−1})` exceeds `trigger_ratio`.
    Adaptive {
        increase_factor: f64,
        trigger_ratio: f64,
    },
}

fn in_unit_interval(a: f64) -> bool {
    a.is_finite() && a > 0.0 && a <= 1.0
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleConfig::Constant => Ok(()),
            ScheduleConfig::Linear {
                from,
                to,
                over_generations,
            } => {
                if !(in_unit_interval(from) && in_unit_interval(to)) {
                    return Err(Error::InvalidSchedule(format!(
                        "linear endpoints {from}, {to} must lie in (0, 1]"
                    )));
                }
                if over_generations == 0 {
                    return Err(Error::InvalidSchedule(
                        "linear ramp needs over_generations >= 1".into(),
                    ));
                }
                Ok(())
            }
            ScheduleConfig::Adaptive {
                increase_factor,
                trigger_ratio,
            } => {
                if !(increase_factor.is_finite() && increase_factor >= 1.0) {
                    return Err(Error::InvalidSchedule(format!(
                        "increase_factor {increase_factor} must be >= 1"
                    )));
                }
                if !(trigger_ratio.is_finite() && trigger_ratio > 0.0) {
                    return Err(Error::InvalidSchedule(format!(
                        "trigger_ratio {trigger_ratio} must be positive"
                    )));
                }
                Ok(())
            }
        }
    }

    /// α for generation `g`, given the α used for the previous generation
    /// (the operator's base α at g = 0) and the last observed contraction ratio.
    ///
    /// `current` may be 0 only for unanchored runs, in which case constant
    /// schedules keep returning 0.
    pub fn next_alpha(&self, g: usize, current: f64, last_ratio: Option<f64>) -> Result<f64> {
        self.validate()?;
        let alpha = match *self {
            ScheduleConfig::Constant => current,
            ScheduleConfig::Linear {
                from,
                to,
                over_generations,
            } => {
                let t = (g as f64 / over_generations as f64).min(1.0);
                from + (to - from) * t
            }
            ScheduleConfig::Adaptive {
                increase_factor,
                trigger_ratio,
            } => match last_ratio {
                Some(r) if r > trigger_ratio => current * increase_factor,
                _ => current,
            },
        };
        let alpha = alpha.min(1.0);
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidSchedule(format!("emitted alpha {alpha}")));
        }
        Ok(alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_keeps_alpha() {
        for g in [0, 1, 7, 100] {
            assert_eq!(
                ScheduleConfig::Constant
                    .next_alpha(g, 0.3, Some(0.9))
                    .unwrap(),
                0.3
            );
        }
    }

    #[test]
    fn linear_midpoint_and_clamp() {
        let s = ScheduleConfig::Linear {
            from: 0.1,
            to: 0.5,
            over_generations: 4,
        };
        assert_abs_diff_eq!(s.next_alpha(2, 0.0, None).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.next_alpha(0, 0.0, None).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.next_alpha(40, 0.0, None).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn adaptive_increases_on_slow_contraction() {
        let s = ScheduleConfig::Adaptive {
            increase_factor: 1.5,
            trigger_ratio: 0.9,
        };
        assert_abs_diff_eq!(
            s.next_alpha(3, 0.2, Some(0.95)).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert_eq!(s.next_alpha(3, 0.2, Some(0.5)).unwrap(), 0.2);
        assert_eq!(s.next_alpha(3, 0.2, None).unwrap(), 0.2);
        assert_eq!(s.next_alpha(3, 0.8, Some(0.99)).unwrap(), 1.0);
    }

    #[test]
    fn invalid_schedules() {
        let bad = [
            ScheduleConfig::Linear {
                from: 0.0,
                to: 0.5,
                over_generations: 3,
            },
            ScheduleConfig::Linear {
                from: 0.2,
                to: 0.5,
                over_generations: 0,
            },
            ScheduleConfig::Adaptive {
                increase_factor: 0.5,
                trigger_ratio: 0.9,
            },
        ];
        for s in bad {
            assert!(matches!(
                s.next_alpha(1, 0.3, None),
                Err(Error::InvalidSchedule(_))
            ));
        }
    }
}
