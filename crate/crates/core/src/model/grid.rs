use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COMMENSURATE_TOL: f64 = 1e-9;

/// Uniform time grid `t_i = i * dt`, `i = 0..=steps`, with the execution
/// delay expressed as a whole number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub delay: f64,
    pub dt: f64,
    pub steps: usize,
    pub delay_steps: usize,
}

fn whole_steps(len: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = len / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > COMMENSURATE_TOL * ratio.abs().max(1.0) {
        return Err(Error::NonCommensurate(format!(
            "{what} = {len} is not a multiple of dt = {dt} (ratio {ratio})"
        )));
    }
    Ok(rounded as usize)
}

impl TimeGrid {
    pub fn new(horizon: f64, delay: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && delay.is_finite() && dt.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid parameter".into()));
        }
        if !(delay > 0.0 && horizon > delay) {
            return Err(Error::InvalidGrid(format!(
                "need T > delta > 0, got T = {horizon}, delta = {delay}"
            )));
        }
        if dt <= 0.0 {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        let steps = whole_steps(horizon, dt, "T")?;
        let delay_steps = whole_steps(delay, dt, "delta")?;
        if delay_steps < 1 || delay_steps >= steps {
            return Err(Error::InvalidGrid(format!(
                "need 1 <= d < N, got d = {delay_steps}, N = {steps}"
            )));
        }
        Ok(TimeGrid {
            horizon,
            delay,
            dt,
            steps,
            delay_steps,
        })
    }

    /// Grid built directly from integer step counts.
    pub fn from_steps(steps: usize, delay_steps: usize, dt: f64) -> Result<Self> {
        if delay_steps < 1 || delay_steps >= steps || dt <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "need 1 <= d < N and dt > 0, got d = {delay_steps}, N = {steps}, dt = {dt}"
            )));
        }
        Ok(TimeGrid {
            horizon: steps as f64 * dt,
            delay: delay_steps as f64 * dt,
            dt,
            steps,
            delay_steps,
        })
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Largest number of impulses that can be executed before the horizon,
    /// `floor(T / delta)`.
    pub fn max_impulses(&self) -> usize {
        self.steps / self.delay_steps
    }

    /// First index at which a decision can no longer be executed strictly
    /// before the horizon (`N - d`).
    pub fn last_effective_decision(&self) -> usize {
        self.steps - self.delay_steps
    }

    pub fn decision_is_effective(&self, i: usize) -> bool {
        i < self.last_effective_decision()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_commensurate_grids() {
        let g = TimeGrid::new(1.0, 0.4, 0.1).unwrap();
        assert_eq!((g.steps, g.delay_steps, g.max_impulses()), (10, 4, 2));

        let g = TimeGrid::new(1.0, 0.5, 0.5).unwrap();
        assert_eq!((g.steps, g.delay_steps, g.max_impulses()), (2, 1, 2));

        let g = TimeGrid::new(1.0, 0.3, 0.1).unwrap();
        assert_eq!((g.steps, g.delay_steps, g.max_impulses()), (10, 3, 3));
    }

    #[test]
    fn rejects_non_commensurate_delay() {
        assert!(matches!(
            TimeGrid::new(1.0, 0.33, 0.1),
            Err(Error::NonCommensurate(_))
        ));
        assert!(matches!(
            TimeGrid::new(1.05, 0.5, 0.1),
            Err(Error::NonCommensurate(_))
        ));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(1.0, 1.0, 0.1).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 0.1).is_err());
        assert!(TimeGrid::new(1.0, 0.5, -0.1).is_err());
        assert!(TimeGrid::from_steps(4, 4, 0.1).is_err());
    }
}
