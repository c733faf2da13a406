//! Finite-horizon risk-sensitive solver.
//!
//! The criterion is `E[exp(theta R)]`. Values satisfy the multiplicative
//! recursion `Y_i = max(O_i, e^{theta g dt} E[Y_{i+1}])`, `Y_N = 1`, with
//! obstacle `E[e^{theta sum g dt} max_j e^{-theta psi_j} Y^{n-1}(a + a_j)]`
//! over the delay window. The common factor `e^{theta sum g dt}` is positive,
//! so it commutes with the max over menu items.
//!
//! When `theta (gamma T + max psi)` exceeds [`LOG_SPACE_THRESHOLD`] the
//! whole recursion runs on logarithms; comparisons are unchanged because
//! `ln` is increasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice_rn::{rule_from_fields, solve_finite, FiniteReport};
use crate::model::{CumulativeLattice, Criterion, ImpulseMenu, MarkovLattice, Reward};
use crate::scheme::{ChildPolicy, LevelField, NodeMatrix, Scale, Scheme};
use crate::strategy::{self, StrategyRule};

pub type RsSolveReport = FiniteReport;

pub const LOG_SPACE_THRESHOLD: f64 = 30.0;

/// Largest exponent accepted by the linear-scale recursion.
pub const EXP_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsOptions {
    pub theta: f64,
    /// `None` selects log space automatically.
    pub log_space: Option<bool>,
    /// `None` allows `floor(T / delta)` impulses.
    pub max_impulses: Option<usize>,
}

impl Default for RsOptions {
    fn default() -> Self {
        RsOptions {
            theta: 1.0,
            log_space: None,
            max_impulses: None,
        }
    }
}

/// `theta (gamma T + max psi)`: the largest exponent the recursion can meet.
pub fn exponent_scale(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    theta: f64,
) -> Result<f64> {
    let gamma = model.reward_bound(lattice)?;
    Ok(theta * (gamma * model.grid.horizon + menu.max_cost()))
}

fn linear_scheme<'a>(
    model: &'a MarkovLattice,
    menu: &'a ImpulseMenu,
    lattice: &'a CumulativeLattice,
    theta: f64,
) -> Result<Scheme<'a>> {
    let e = exponent_scale(model, menu, lattice, theta)?;
    if e > EXP_CAP {
        return Err(Error::Overflow(e));
    }
    Scheme::new(
        model,
        menu,
        lattice,
        Criterion::RiskSensitive { theta },
        Scale::Multiplicative,
    )
}

/// `Y^0(a) = E[exp(theta sum g dt)]` for every cumulative impulse.
pub fn rs_compute_y0(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    theta: f64,
) -> Result<LevelField> {
    let scheme = linear_scheme(model, menu, lattice, theta)?;
    let ids: Vec<usize> = (0..lattice.len()).collect();
    Ok(scheme.level_zero(&ids))
}

pub fn rs_compute_obstacle(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    theta: f64,
    a_id: usize,
    prev: &LevelField,
) -> Result<NodeMatrix> {
    let scheme = linear_scheme(model, menu, lattice, theta)?;
    let partial = scheme.partial_reward(a_id);
    scheme.obstacle(a_id, prev, &partial, ChildPolicy::Strict)
}

pub fn rs_solve_level(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    theta: f64,
    level: usize,
    a_id: usize,
    obstacle: &NodeMatrix,
) -> Result<NodeMatrix> {
    linear_scheme(model, menu, lattice, theta)?.envelope(level, a_id, obstacle)
}

/// Risk-sensitive optimum with `theta = 1` and automatic log space.
pub fn rs_solve(model: &MarkovLattice, menu: &ImpulseMenu) -> Result<RsSolveReport> {
    rs_solve_with(model, menu, RsOptions::default())
}

pub fn rs_solve_with(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    options: RsOptions,
) -> Result<RsSolveReport> {
    let criterion = Criterion::RiskSensitive {
        theta: options.theta,
    };
    criterion.validate()?;
    let depth = options.max_impulses.unwrap_or(model.grid.max_impulses());
    let lattice = CumulativeLattice::new(menu, depth)?;
    let e = exponent_scale(model, menu, &lattice, options.theta)?;
    let log_space = match options.log_space {
        Some(forced) => forced,
        None => e > LOG_SPACE_THRESHOLD,
    };
    if !log_space && e > EXP_CAP {
        return Err(Error::Overflow(e));
    }
    let scale = if log_space {
        Scale::Log
    } else {
        Scale::Multiplicative
    };
    solve_finite(model, menu, criterion, scale, depth)
}

pub fn rs_extract_strategy(
    report: &RsSolveReport,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
) -> Result<StrategyRule> {
    let scheme = Scheme::new(model, menu, &report.lattice, report.criterion, report.scale)?;
    Ok(rule_from_fields(&scheme, &report.fields))
}

/// Exact `E[exp(theta R)]` under `rule`.
pub fn rs_evaluate_strategy_exact(
    rule: &StrategyRule,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    theta: f64,
) -> Result<f64> {
    Ok(rs_evaluate_strategy_exact_log(rule, model, menu, theta)?.exp())
}

/// Exact `ln E[exp(theta R)]` under `rule`.
pub fn rs_evaluate_strategy_exact_log(
    rule: &StrategyRule,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    theta: f64,
) -> Result<f64> {
    let depth = rule.max_impulses().unwrap_or(model.grid.max_impulses());
    let lattice = CumulativeLattice::new(menu, depth)?;
    strategy::evaluate_rule_exact_log(
        rule,
        model,
        menu,
        &lattice,
        Criterion::RiskSensitive { theta },
    )
}

/// `E[exp(theta gamma (T - t_i))]`: the upper bound on every `Y^n_i`
/// when `|g| <= gamma`.
pub fn rs_bound_field(model: &MarkovLattice, menu: &ImpulseMenu, theta: f64, gamma: f64) -> Result<NodeMatrix> {
    let mut bounded = model.clone();
    bounded.reward = Reward::Constant(gamma);
    bounded.gamma_bound = None;
    let lattice = CumulativeLattice::new(menu, 0)?;
    let scheme = Scheme::new(
        &bounded,
        menu,
        &lattice,
        Criterion::RiskSensitive { theta },
        Scale::Multiplicative,
    )?;
    Ok(scheme.free_value(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lattice_rn;

    #[test]
    fn d1_levels() {
        let (m, menu) = fixtures::d1();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        let y0 = rs_compute_y0(&m, &menu, &lattice, 1.0).unwrap();
        let one = lattice.id_of(&[1.0]).unwrap();
        assert!((y0.value(one).unwrap().at(0, 0) - 1f64.exp()).abs() < 1e-12);
        assert!(y0.value(0).unwrap().values().iter().all(|&v| v == 1.0));
        let o1 = rs_compute_obstacle(&m, &menu, &lattice, 1.0, 0, &y0).unwrap();
        assert!((o1.at(0, 0) - 0.5f64.exp()).abs() < 1e-12);

        let report = rs_solve(&m, &menu).unwrap();
        assert_eq!(report.scale, Scale::Multiplicative);
        assert!((report.value - 0.6f64.exp()).abs() < 1e-12);
        let rn = lattice_rn::solve(&m, &menu).unwrap();
        let path = [0; 11];
        assert_eq!(
            report.rule.trace_on_path(&report.lattice, &path).unwrap(),
            rn.rule.trace_on_path(&rn.lattice, &path).unwrap()
        );
    }

    #[test]
    fn zero_reward_no_cost_is_one() {
        let (mut m, menu) = fixtures::d1();
        m.reward = Reward::Constant(0.0);
        let free = menu.with_cost_shift(-0.1).unwrap();
        let report = rs_solve(&m, &free).unwrap();
        for f in &report.fields {
            for y in f.y.iter().flatten() {
                assert!(y.values().iter().all(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn huge_cost_never_stops() {
        let (m, _) = fixtures::r3(0);
        let menu = ImpulseMenu::new(vec![vec![1.0], vec![-1.0]], vec![50.0, 50.0]).unwrap();
        let report = rs_solve_with(
            &m,
            &menu,
            RsOptions {
                log_space: Some(true),
                ..RsOptions::default()
            },
        )
        .unwrap();
        assert!((report.level_values[0] - report.value).abs() < 1e-12 * report.value);
        let trace = report.rule.trace_on_path(&report.lattice, &[1; 8]).unwrap();
        assert!(trace.decisions.is_empty());
    }

    #[test]
    fn log_space_matches_linear() {
        for seed in 0..4 {
            let (m, menu) = fixtures::r3(seed);
            let lin = rs_solve_with(&m, &menu, RsOptions { log_space: Some(false), ..Default::default() }).unwrap();
            let log = rs_solve_with(&m, &menu, RsOptions { log_space: Some(true), ..Default::default() }).unwrap();
            assert!(((lin.value - log.value) / lin.value).abs() < 1e-12);
            assert_eq!(lin.rule, log.rule);
        }
    }

    #[test]
    fn linear_scale_overflow_is_reported() {
        let (mut m, menu) = fixtures::d1();
        m.reward = Reward::Constant(1000.0);
        let forced = RsOptions {
            log_space: Some(false),
            ..RsOptions::default()
        };
        assert!(matches!(rs_solve_with(&m, &menu, forced), Err(Error::Overflow(_))));
        let auto = rs_solve(&m, &menu).unwrap();
        assert_eq!(auto.scale, Scale::Log);
        assert!((auto.stored_value - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn positivity_bound_and_dominance_of_level_zero() {
        for seed in 0..5 {
            let (m, menu) = fixtures::r3(seed);
            let report = rs_solve(&m, &menu).unwrap();
            let gamma = m.reward_bound(&report.lattice).unwrap();
            let bound = rs_bound_field(&m, &menu, 1.0, gamma).unwrap();
            for f in &report.fields {
                for (a, y) in f.y.iter().enumerate() {
                    let Some(y) = y else { continue };
                    let y0 = report.fields[0].value(a).unwrap();
                    for (k, &v) in y.values().iter().enumerate() {
                        assert!(v > 0.0);
                        assert!(v <= bound.values()[k] * (1.0 + 1e-12));
                        assert!(y0.values()[k] <= v * (1.0 + 1e-12));
                    }
                    if let Some(o) = f.obstacle(a) {
                        assert!(o.values().iter().all(|&v| v > 0.0));
                    }
                }
                for y in f.y.iter().flatten() {
                    assert!(y.row(m.grid.steps).iter().all(|&v| v == 1.0));
                }
            }
        }
    }

    #[test]
    fn strategy_identity() {
        for seed in 0..5 {
            let (m, menu) = fixtures::r3(seed);
            let report = rs_solve(&m, &menu).unwrap();
            let rule = rs_extract_strategy(&report, &m, &menu).unwrap();
            let v = rs_evaluate_strategy_exact(&rule, &m, &menu, 1.0).unwrap();
            assert!(((v - report.value) / report.value).abs() < 1e-10);
        }
    }
}
