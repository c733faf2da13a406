//! Finite-horizon risk-neutral solver.
//!
//! `Y^0(a)` is the expected remaining reward with the cumulative impulse
//! frozen at `a`. For `n >= 1`, `Y^n(a)` is the Snell envelope of the
//! obstacle `O^n(a)`: the expected reward over the delay window plus, when
//! the execution still falls before the horizon, the best
//! `-psi(beta) + Y^{n-1}(a + beta)` chosen at execution time.
//! `Y^X_0(0)` with `X = floor(T / delta)` is the optimal value.

use serde::Serialize;

use crate::error::Result;
use crate::model::{CumulativeLattice, Criterion, ImpulseMenu, MarkovLattice};
use crate::scheme::{ChildPolicy, LevelField, NodeMatrix, Scale, Scheme};
use crate::strategy::{self, RuleHorizon, StrategyRule};

/// Per-level checks computed alongside a finite-horizon solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `max |Y^n - O^n|` over `i >= N - d`, per level `n >= 1`.
    pub restriction_gap: Vec<f64>,
    /// `max (O^n - Y^n)^+` over all nodes, per level `n >= 1`.
    pub obstacle_excess: Vec<f64>,
    /// `max (Y^{n-1} - Y^n)^+` over shared nodes, per level `n >= 1`.
    pub monotonicity_residual: Vec<f64>,
    /// `max |Y^n_N - terminal|` over all levels.
    pub terminal_error: f64,
}

/// Output of a finite-horizon solve (risk-neutral or risk-sensitive).
#[derive(Debug, Clone)]
pub struct FiniteReport {
    pub criterion: Criterion,
    pub scale: Scale,
    pub lattice: CumulativeLattice,
    /// `fields[n]` for `n = 0..=max_impulses`.
    pub fields: Vec<LevelField>,
    pub max_impulses: usize,
    /// Optimal value on the natural scale.
    pub value: f64,
    /// Optimal value on the stored scale (log of the value in log space).
    pub stored_value: f64,
    /// `Y^n_0(0)` on the natural scale for `n = 0..=max_impulses`.
    pub level_values: Vec<f64>,
    pub rule: StrategyRule,
    pub diagnostics: Diagnostics,
}

pub type RnSolveReport = FiniteReport;

pub(crate) fn initial_stored(model: &MarkovLattice, scale: Scale, row: &[f64]) -> f64 {
    match scale {
        Scale::Log => crate::scheme::log_sum_exp_weighted(
            model.initial_weights().into_iter().zip(row.iter().copied()),
        ),
        _ => model.initial_value(row),
    }
}

pub(crate) fn solve_finite(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    criterion: Criterion,
    scale: Scale,
    max_impulses: usize,
) -> Result<FiniteReport> {
    let lattice = CumulativeLattice::new(menu, max_impulses)?;
    let scheme = Scheme::new(model, menu, &lattice, criterion, scale)?;
    let ids_at = |n: usize| -> Vec<usize> { lattice.ids_within(max_impulses - n).collect() };

    let mut fields = vec![scheme.level_zero(&ids_at(0))];
    let partials = if max_impulses > 0 {
        scheme.partials(&ids_at(1))
    } else {
        Vec::new()
    };
    for n in 1..=max_impulses {
        let next = scheme.next_level(&fields[n - 1], &ids_at(n), &partials, ChildPolicy::Strict)?;
        fields.push(next);
    }

    let natural = |v: f64| scheme.to_natural(v);
    let level_values: Vec<f64> = fields
        .iter()
        .map(|f| natural(initial_stored(model, scale, f.value(0).expect("a = 0 solved").row(0))))
        .collect();
    let stored_value = initial_stored(
        model,
        scale,
        fields[max_impulses].value(0).expect("a = 0 solved").row(0),
    );

    let mut diagnostics = Diagnostics::default();
    let terminal = scale.identity();
    for (n, f) in fields.iter().enumerate() {
        for y in f.y.iter().flatten() {
            for &v in y.row(model.grid.steps) {
                diagnostics.terminal_error = diagnostics.terminal_error.max((v - terminal).abs());
            }
        }
        if n == 0 {
            continue;
        }
        diagnostics.restriction_gap.push(scheme.restriction_gap(f));
        diagnostics.obstacle_excess.push(scheme.obstacle_excess(f));
        let mut residual: f64 = 0.0;
        for (lo, hi) in fields[n - 1].y.iter().zip(&f.y) {
            if let (Some(lo), Some(hi)) = (lo, hi) {
                for (a, b) in lo.values().iter().zip(hi.values()) {
                    residual = residual.max(a - b);
                }
            }
        }
        diagnostics.monotonicity_residual.push(residual);
    }

    let rule = rule_from_fields(&scheme, &fields);
    Ok(FiniteReport {
        criterion,
        scale,
        value: natural(stored_value),
        stored_value,
        level_values,
        max_impulses,
        rule,
        diagnostics,
        fields,
        lattice,
    })
}

pub(crate) fn rule_from_fields(scheme: &Scheme<'_>, fields: &[LevelField]) -> StrategyRule {
    let levels = (1..fields.len())
        .map(|n| strategy::level_rule(scheme, &fields[n], &fields[n - 1]))
        .collect();
    StrategyRule {
        grid: scheme.model.grid,
        n_states: scheme.model.n_states(),
        horizon: RuleHorizon::Counted,
        levels,
    }
}

fn scheme_for<'a>(
    model: &'a MarkovLattice,
    menu: &'a ImpulseMenu,
    lattice: &'a CumulativeLattice,
) -> Result<Scheme<'a>> {
    Scheme::new(model, menu, lattice, Criterion::RiskNeutral, Scale::Additive)
}

/// `Y^0(a)` for every cumulative impulse in `lattice`.
pub fn compute_y0(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
) -> Result<LevelField> {
    let scheme = scheme_for(model, menu, lattice)?;
    let ids: Vec<usize> = (0..lattice.len()).collect();
    Ok(scheme.level_zero(&ids))
}

/// Expected reward over `[t_i, min(t_i + delta, T))` at cumulative impulse `a_id`.
pub fn compute_partial_reward(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    a_id: usize,
) -> Result<NodeMatrix> {
    Ok(scheme_for(model, menu, lattice)?.partial_reward(a_id))
}

/// `O^n(a)` from the level `n - 1` field.
pub fn compute_obstacle(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    a_id: usize,
    prev: &LevelField,
) -> Result<NodeMatrix> {
    let scheme = scheme_for(model, menu, lattice)?;
    let partial = scheme.partial_reward(a_id);
    scheme.obstacle(a_id, prev, &partial, ChildPolicy::Strict)
}

/// `Y^n(a)` as the discrete Snell envelope of `obstacle`.
pub fn solve_level(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    level: usize,
    a_id: usize,
    obstacle: &NodeMatrix,
) -> Result<NodeMatrix> {
    scheme_for(model, menu, lattice)?.envelope(level, a_id, obstacle)
}

/// Optimal value and rule allowing `floor(T / delta)` impulses.
pub fn solve(model: &MarkovLattice, menu: &ImpulseMenu) -> Result<RnSolveReport> {
    solve_with_depth(model, menu, model.grid.max_impulses())
}

/// Optimal value and rule allowing at most `max_impulses` impulses.
pub fn solve_with_depth(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    max_impulses: usize,
) -> Result<RnSolveReport> {
    solve_finite(model, menu, Criterion::RiskNeutral, Scale::Additive, max_impulses)
}

/// Rebuilds the optimal rule from a report's fields.
pub fn extract_strategy(
    report: &RnSolveReport,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
) -> Result<StrategyRule> {
    let scheme = Scheme::new(model, menu, &report.lattice, report.criterion, report.scale)?;
    Ok(rule_from_fields(&scheme, &report.fields))
}

/// Exact expected payoff of `rule`.
pub fn evaluate_strategy_exact(
    rule: &StrategyRule,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
) -> Result<f64> {
    let depth = rule.max_impulses().unwrap_or(model.grid.max_impulses());
    let lattice = CumulativeLattice::new(menu, depth)?;
    strategy::evaluate_rule_exact(rule, model, menu, &lattice, Criterion::RiskNeutral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Decision, Reward, StrategyTrace};

    const TOL: f64 = 1e-12;

    #[test]
    fn d1_y0_levels() {
        let (m, menu) = fixtures::d1();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        let y0 = compute_y0(&m, &menu, &lattice).unwrap();
        let zero = lattice.id_of(&[0.0]).unwrap();
        let one = lattice.id_of(&[1.0]).unwrap();
        assert!(y0.value(zero).unwrap().values().iter().all(|&v| v == 0.0));
        for i in 0..=10 {
            let expect = (10 - i) as f64 * 0.1;
            assert!((y0.value(one).unwrap().at(i, 0) - expect).abs() < TOL);
        }
    }

    #[test]
    fn partial_reward_window() {
        let (m, menu) = fixtures::d1();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        let one = lattice.id_of(&[1.0]).unwrap();
        let g = compute_partial_reward(&m, &menu, &lattice, one).unwrap();
        assert!((g.at(0, 0) - 0.4).abs() < TOL);
        assert!((g.at(8, 0) - 0.2).abs() < TOL);
        assert_eq!(g.at(10, 0), 0.0);

        let mut c = m.clone();
        c.reward = Reward::Constant(3.0);
        let g = compute_partial_reward(&c, &menu, &lattice, 0).unwrap();
        for i in 0..=10 {
            let expect = 3.0 * 0.1 * (4usize.min(10 - i)) as f64;
            assert!((g.at(i, 0) - expect).abs() < TOL);
        }
    }

    #[test]
    fn d1_obstacle_and_levels() {
        let (m, menu) = fixtures::d1();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        let y0 = compute_y0(&m, &menu, &lattice).unwrap();
        let o1 = compute_obstacle(&m, &menu, &lattice, 0, &y0).unwrap();
        assert!((o1.at(0, 0) - 0.5).abs() < TOL);
        // no impulse can execute before T from i >= N - d
        for i in 6..=10 {
            assert_eq!(o1.at(i, 0), 0.0);
        }
        let y1 = solve_level(&m, &menu, &lattice, 1, 0, &o1).unwrap();
        assert!((y1.at(0, 0) - 0.5).abs() < TOL);

        let report = solve(&m, &menu).unwrap();
        assert!((report.value - 0.6).abs() < TOL);
        assert!((report.level_values[1] - 0.5).abs() < TOL);
        assert!((report.level_values[2] - 0.6).abs() < TOL);
    }

    #[test]
    fn d1_strategy() {
        let (m, menu) = fixtures::d1();
        let report = solve(&m, &menu).unwrap();
        let trace = report.rule.trace_on_path(&report.lattice, &[0; 11]).unwrap();
        assert_eq!(
            trace,
            StrategyTrace::new(vec![Decision { index: 0, item: 0 }, Decision { index: 4, item: 0 }])
        );
        let v = evaluate_strategy_exact(&report.rule, &m, &menu).unwrap();
        assert!((v - 0.6).abs() < TOL);
    }

    #[test]
    fn zero_reward_has_zero_value() {
        let (mut m, menu) = fixtures::d1();
        m.reward = Reward::Constant(0.0);
        let report = solve(&m, &menu).unwrap();
        assert_eq!(report.value, 0.0);
        let trace = report.rule.trace_on_path(&report.lattice, &[0; 11]).unwrap();
        assert!(trace.decisions.is_empty());

        // with free impulses every node is a stopping node, the rule must still be admissible
        let free = menu.with_cost_shift(-0.1).unwrap();
        let report = solve(&m, &free).unwrap();
        assert_eq!(report.value, 0.0);
        let v = evaluate_strategy_exact(&report.rule, &m, &free).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn lowest_index_wins_ties() {
        let (m, _) = fixtures::d1();
        // two distinct items with identical effect under a table reward
        let menu = ImpulseMenu::new(vec![vec![1.0], vec![2.0]], vec![0.1, 0.1]).unwrap();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        let mut table = vec![vec![vec![0.0; lattice.len()]; 1]; 10];
        for row in table.iter_mut() {
            for a in 0..lattice.len() {
                row[0][a] = if a == 0 { 0.0 } else { 1.0 };
            }
        }
        let mut t = m.clone();
        t.reward = Reward::Table(table);
        let report = solve(&t, &menu).unwrap();
        let trace = report.rule.trace_on_path(&report.lattice, &[0; 11]).unwrap();
        assert!(!trace.decisions.is_empty());
        assert!(trace.decisions.iter().all(|d| d.item == 0));
    }

    #[test]
    fn terminal_and_restriction() {
        for seed in 0..5 {
            let (m, menu) = fixtures::r3(seed);
            let report = solve(&m, &menu).unwrap();
            assert_eq!(report.diagnostics.terminal_error, 0.0);
            for gap in &report.diagnostics.restriction_gap {
                assert!(*gap <= 1e-12, "seed {seed}: {gap}");
            }
            for r in &report.diagnostics.monotonicity_residual {
                assert!(*r <= 1e-12);
            }
        }
    }

    #[test]
    fn cost_shift_never_increases_value() {
        for seed in 0..5 {
            let (m, menu) = fixtures::r3(seed);
            let base = solve(&m, &menu).unwrap().value;
            let shifted = solve(&m, &menu.with_cost_shift(0.05).unwrap()).unwrap().value;
            assert!(shifted <= base + 1e-12);
        }
    }

    #[test]
    fn missing_children_are_reported() {
        let (m, menu) = fixtures::d1();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        let y0 = compute_y0(&m, &menu, &lattice).unwrap();
        let deepest = lattice.id_of(&[2.0]).unwrap();
        assert!(matches!(
            compute_obstacle(&m, &menu, &lattice, deepest, &y0),
            Err(crate::Error::MissingChild { .. })
        ));
    }
}
