//! Domain types shared by every solver: time grid, impulse menu, reachable
//! cumulative impulses, the finite-state model of the uncontrolled process,
//! and the payoff of a realized impulse schedule.

mod grid;
mod markov;
mod menu;

pub use grid::TimeGrid;
pub use markov::{layered_cost, InitialCondition, Kernel, MarkovLattice, Reward, StrikeLayer};
pub use menu::{CumulativeLattice, ImpulseMenu, DEFAULT_LATTICE_LIMIT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective applied to the net reward `R = sum g dt - sum charged costs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Criterion {
    /// `E[R]`.
    RiskNeutral,
    /// `E[exp(theta R)]`, `theta > 0`.
    RiskSensitive { theta: f64 },
    /// `E[R]` with running reward and costs discounted at `rate`; costs
    /// are discounted at the execution time.
    Discounted { rate: f64 },
}

impl Criterion {
    /// Weight multiplying `g(t_i, .)` in the time integral. For the
    /// discounted criterion the discount factor is integrated exactly over
    /// the step, `int_{t_i}^{t_{i+1}} e^{-rs} ds`.
    pub fn step_weight(&self, grid: &TimeGrid, i: usize) -> f64 {
        match *self {
            Criterion::RiskNeutral | Criterion::RiskSensitive { .. } => grid.dt,
            Criterion::Discounted { rate } => {
                (-rate * grid.time(i)).exp() * (-(-rate * grid.dt).exp_m1()) / rate
            }
        }
    }

    /// Weight multiplying `psi` for an impulse executed at index `exec`.
    pub fn cost_weight(&self, grid: &TimeGrid, exec: usize) -> f64 {
        match *self {
            Criterion::Discounted { rate } => (-rate * grid.time(exec)).exp(),
            _ => 1.0,
        }
    }

    pub fn theta(&self) -> f64 {
        match *self {
            Criterion::RiskSensitive { theta } => theta,
            _ => 1.0,
        }
    }

    pub fn is_multiplicative(&self) -> bool {
        matches!(self, Criterion::RiskSensitive { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::RiskNeutral => "risk-neutral",
            Criterion::RiskSensitive { .. } => "risk-sensitive",
            Criterion::Discounted { .. } => "infinite-horizon",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Criterion::RiskSensitive { theta } if !(theta > 0.0 && theta.is_finite()) => Err(
                Error::InvalidModel(format!("theta must be positive and finite, got {theta}")),
            ),
            Criterion::Discounted { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(Error::NonPositiveRate(rate))
            }
            _ => Ok(()),
        }
    }
}

/// One impulse decision: taken at grid index `index`, executed at
/// `index + d` with menu item `item`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub index: usize,
    pub item: usize,
}

/// A realized impulse schedule along one path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyTrace {
    pub decisions: Vec<Decision>,
}

impl StrategyTrace {
    pub fn new(decisions: Vec<Decision>) -> Self {
        StrategyTrace { decisions }
    }

    /// Decisions whose execution falls strictly before the horizon; only
    /// these move the state or pay a cost.
    pub fn executed<'a>(&'a self, grid: &'a TimeGrid) -> impl Iterator<Item = &'a Decision> + 'a {
        self.decisions
            .iter()
            .filter(move |d| grid.decision_is_effective(d.index))
    }

    /// Spacing `min(N, i_k + d) <= i_{k+1} <= N` and items from the menu.
    pub fn check_admissible(&self, grid: &TimeGrid, menu: &ImpulseMenu) -> Result<()> {
        let n = grid.steps;
        for (k, dec) in self.decisions.iter().enumerate() {
            if dec.index > n {
                return Err(Error::InadmissibleTrace(format!(
                    "decision {k} at index {} is past the horizon {n}",
                    dec.index
                )));
            }
            if dec.item >= menu.len() {
                return Err(Error::InadmissibleTrace(format!(
                    "decision {k} uses item {} of a {}-item menu",
                    dec.item,
                    menu.len()
                )));
            }
            if k > 0 {
                let prev = self.decisions[k - 1].index;
                let earliest = (prev + grid.delay_steps).min(n);
                if dec.index < earliest {
                    return Err(Error::InadmissibleTrace(format!(
                        "decision {k} at index {} precedes min(N, {prev} + d) = {earliest}",
                        dec.index
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Payoff of `trace` along one path. `reward_at(i, a_id)` gives
/// `g(t_i, X_i + a)` on that path. The jump of an impulse decided at `i`
/// enters the integrand from index `i + d` on; its cost is charged iff
/// `i < N - d`.
pub fn evaluate_controlled_payoff(
    grid: &TimeGrid,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    trace: &StrategyTrace,
    reward_at: impl Fn(usize, usize) -> f64,
    criterion: Criterion,
) -> Result<f64> {
    trace.check_admissible(grid, menu)?;
    let d = grid.delay_steps;
    let mut executions = trace.executed(grid).peekable();
    let mut a_id = 0usize;
    let mut net = 0.0;
    for i in 0..grid.steps {
        while let Some(dec) = executions.peek() {
            if dec.index + d != i {
                break;
            }
            a_id = lattice.child(a_id, dec.item).ok_or_else(|| {
                Error::InadmissibleTrace(format!(
                    "cumulative impulse leaves the lattice at index {i}"
                ))
            })?;
            net -= criterion.cost_weight(grid, i) * menu.cost(dec.item);
            executions.next();
        }
        net += criterion.step_weight(grid, i) * reward_at(i, a_id);
    }
    Ok(match criterion {
        Criterion::RiskSensitive { theta } => (theta * net).exp(),
        _ => net,
    })
}

/// Payoff of `trace` along a path of lattice state indices.
pub fn payoff_on_state_path(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    trace: &StrategyTrace,
    path: &[usize],
    criterion: Criterion,
) -> Result<f64> {
    if path.len() < model.grid.steps {
        return Err(Error::InadmissibleTrace(format!(
            "path has {} points, grid needs {}",
            path.len(),
            model.grid.steps
        )));
    }
    evaluate_controlled_payoff(
        &model.grid,
        menu,
        lattice,
        trace,
        |i, a_id| model.reward(i, path[i], a_id, lattice.value(a_id)),
        criterion,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1() -> (MarkovLattice, ImpulseMenu, CumulativeLattice) {
        let grid = TimeGrid::new(1.0, 0.4, 0.1).unwrap();
        let m = MarkovLattice::new(
            grid,
            vec![vec![0.0]],
            vec![Kernel::identity(1)],
            Reward::LinearLevel(vec![1.0]),
        )
        .unwrap();
        let menu = ImpulseMenu::new(vec![vec![1.0]], vec![0.1]).unwrap();
        let lattice = CumulativeLattice::new(&menu, grid.max_impulses()).unwrap();
        (m, menu, lattice)
    }

    fn trace(ix: &[usize]) -> StrategyTrace {
        StrategyTrace::new(ix.iter().map(|&index| Decision { index, item: 0 }).collect())
    }

    #[test]
    fn d1_payoffs() {
        let (m, menu, lattice) = d1();
        let path = vec![0; 11];
        let j = payoff_on_state_path(&m, &menu, &lattice, &trace(&[0, 4]), &path, Criterion::RiskNeutral)
            .unwrap();
        assert!((j - 0.6).abs() < 1e-12, "{j}");
        // Second decision at T - delta: executed at T, no cost, no effect.
        let j = payoff_on_state_path(&m, &menu, &lattice, &trace(&[0, 6]), &path, Criterion::RiskNeutral)
            .unwrap();
        assert!((j - 0.5).abs() < 1e-12, "{j}");
    }

    #[test]
    fn empty_trace_with_zero_reward() {
        let (mut m, menu, lattice) = d1();
        m.reward = Reward::Constant(0.0);
        let path = vec![0; 11];
        let rn = payoff_on_state_path(&m, &menu, &lattice, &trace(&[]), &path, Criterion::RiskNeutral)
            .unwrap();
        let rs = payoff_on_state_path(
            &m,
            &menu,
            &lattice,
            &trace(&[]),
            &path,
            Criterion::RiskSensitive { theta: 1.0 },
        )
        .unwrap();
        assert_eq!(rn, 0.0);
        assert_eq!(rs, 1.0);
    }

    #[test]
    fn zero_reward_payoff_is_minus_charged_costs() {
        let (mut m, menu, lattice) = d1();
        m.reward = Reward::Constant(0.0);
        let path = vec![0; 11];
        let j = payoff_on_state_path(&m, &menu, &lattice, &trace(&[0, 5]), &path, Criterion::RiskNeutral)
            .unwrap();
        assert_eq!(j, -0.2);
        let j = payoff_on_state_path(&m, &menu, &lattice, &trace(&[2, 6]), &path, Criterion::RiskNeutral)
            .unwrap();
        assert_eq!(j, -0.1);
    }

    #[test]
    fn spacing_violation_rejected() {
        let (m, menu, lattice) = d1();
        let path = vec![0; 11];
        let err = payoff_on_state_path(&m, &menu, &lattice, &trace(&[0, 3]), &path, Criterion::RiskNeutral);
        assert!(matches!(err, Err(Error::InadmissibleTrace(_))));
        // Near the horizon the constraint is min(N, i + d): two decisions at N are fine.
        assert!(trace(&[8, 10, 10]).check_admissible(&m.grid, &menu).is_ok());
        assert!(trace(&[8, 9]).check_admissible(&m.grid, &menu).is_err());
        assert!(trace(&[11]).check_admissible(&m.grid, &menu).is_err());
    }

    #[test]
    fn discounted_weights_integrate_exactly() {
        let grid = TimeGrid::new(2.0, 0.5, 0.25).unwrap();
        let c = Criterion::Discounted { rate: 1.0 };
        let total: f64 = (0..grid.steps).map(|i| c.step_weight(&grid, i)).sum();
        assert!((total - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
    }
}
