//! Brute-force references for small instances.
//!
//! [`brute_force_tree_value`] walks the full (non-recombining) tree of state
//! histories and carries the controller explicitly: cumulative impulse,
//! countdown to the pending execution, impulses used. The size of an
//! impulse is picked by an exact max when its countdown expires. None of
//! the obstacle machinery of the solvers is used.

use crate::error::{Error, Result};
use crate::model::{
    evaluate_controlled_payoff, CumulativeLattice, Criterion, Decision, ImpulseMenu,
    MarkovLattice, StrategyTrace, TimeGrid,
};
use crate::strategy::{random_admissible_rule, StrategyRule};

/// Largest `S^N` accepted by [`brute_force_tree_value`].
pub const MAX_HISTORY_NODES: f64 = 1e6;

struct Tree<'a> {
    model: &'a MarkovLattice,
    menu: &'a ImpulseMenu,
    lattice: &'a CumulativeLattice,
    criterion: Criterion,
    cap: usize,
}

impl Tree<'_> {
    fn one(&self) -> f64 {
        if self.criterion.is_multiplicative() {
            1.0
        } else {
            0.0
        }
    }

    fn join(&self, x: f64, y: f64) -> f64 {
        if self.criterion.is_multiplicative() {
            x * y
        } else {
            x + y
        }
    }

    fn reward_term(&self, i: usize, s: usize, a_id: usize) -> f64 {
        let grid = &self.model.grid;
        let g = self.model.reward(i, s, a_id, self.lattice.value(a_id));
        let w = self.criterion.step_weight(grid, i);
        if self.criterion.is_multiplicative() {
            (self.criterion.theta() * w * g).exp()
        } else {
            w * g
        }
    }

    fn cost_term(&self, i: usize, j: usize) -> f64 {
        let psi = self.menu.cost(j);
        if self.criterion.is_multiplicative() {
            (-self.criterion.theta() * psi).exp()
        } else {
            -self.criterion.cost_weight(&self.model.grid, i) * psi
        }
    }

    /// Value at node `i` with current state `s` before anything happens at `i`.
    fn node(&self, i: usize, s: usize, a_id: usize, countdown: Option<usize>, used: usize) -> Result<f64> {
        if i == self.model.grid.steps {
            return Ok(self.one());
        }
        if countdown == Some(0) {
            let mut best = f64::NEG_INFINITY;
            for j in 0..self.menu.len() {
                let child = self.lattice.child(a_id, j).ok_or_else(|| {
                    Error::InvalidModel(format!("lattice too shallow for item {j} at a_id={a_id}"))
                })?;
                let v = self.join(self.cost_term(i, j), self.after_execution(i, s, child, None, used)?);
                if v > best {
                    best = v;
                }
            }
            return Ok(best);
        }
        self.after_execution(i, s, a_id, countdown, used)
    }

    /// Decide (or not), collect the step reward, move to `i + 1`.
    fn after_execution(&self, i: usize, s: usize, a_id: usize, countdown: Option<usize>, used: usize) -> Result<f64> {
        let d = self.model.grid.delay_steps;
        let mut best = self.advance(i, s, a_id, countdown.map(|k| k - 1), used)?;
        // a decision that cannot execute before the horizon changes nothing
        if countdown.is_none() && used < self.cap && self.model.grid.decision_is_effective(i) {
            let v = self.advance(i, s, a_id, Some(d - 1), used + 1)?;
            if v > best {
                best = v;
            }
        }
        Ok(best)
    }

    fn advance(&self, i: usize, s: usize, a_id: usize, countdown: Option<usize>, used: usize) -> Result<f64> {
        let mut expectation = 0.0;
        for &(t, p) in self.model.kernel(i).row(s) {
            expectation += p * self.node(i + 1, t, a_id, countdown, used)?;
        }
        Ok(self.join(self.reward_term(i, s, a_id), expectation))
    }
}

/// Optimal value over all adapted strategies with at most `max_impulses`
/// impulses (`None`: `floor(T / delta)`).
pub fn brute_force_tree_value(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    criterion: Criterion,
    max_impulses: Option<usize>,
) -> Result<f64> {
    criterion.validate()?;
    let grid = model.grid;
    let nodes = (model.n_states() as f64).powi(grid.steps as i32);
    if nodes > MAX_HISTORY_NODES {
        return Err(Error::TooLarge(format!(
            "{} states over {} steps give {nodes:e} histories",
            model.n_states(),
            grid.steps
        )));
    }
    let cap = max_impulses.unwrap_or(grid.max_impulses());
    let lattice = CumulativeLattice::new(menu, cap)?;
    model.check_lattice(&lattice)?;
    let tree = Tree {
        model,
        menu,
        lattice: &lattice,
        criterion,
        cap,
    };
    let mut value = 0.0;
    for (s, w) in model.initial_weights().into_iter().enumerate() {
        if w > 0.0 {
            value += w * tree.node(0, s, 0, None, 0)?;
        }
    }
    Ok(value)
}

/// Best schedule of a single-state model, by enumerating every admissible
/// set of effective decision indices and every size assignment. Ties keep
/// the first schedule found (fewer and earlier impulses first).
pub fn enumerate_deterministic(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    criterion: Criterion,
) -> Result<(f64, StrategyTrace)> {
    if model.n_states() != 1 {
        return Err(Error::InvalidModel(
            "deterministic enumeration needs a single-state model".into(),
        ));
    }
    let grid = model.grid;
    let lattice = CumulativeLattice::new(menu, grid.max_impulses())?;
    let path = vec![0usize; grid.steps];
    let mut best = (f64::NEG_INFINITY, StrategyTrace::default());
    for indices in admissible_effective_schedules(&grid, grid.max_impulses()) {
        let k = indices.len();
        let combos = menu.len().pow(k as u32);
        for code in 0..combos {
            let mut c = code;
            let decisions = indices
                .iter()
                .map(|&index| {
                    let item = c % menu.len();
                    c /= menu.len();
                    Decision { index, item }
                })
                .collect();
            let trace = StrategyTrace::new(decisions);
            let v = evaluate_controlled_payoff(
                &grid,
                menu,
                &lattice,
                &trace,
                |i, a_id| model.reward(i, path[i], a_id, lattice.value(a_id)),
                criterion,
            )?;
            if v > best.0 {
                best = (v, trace);
            }
        }
    }
    Ok(best)
}

/// Every increasing index sequence with spacing at least `d`, at most
/// `max_len` long, whose executions fall strictly before the horizon.
/// Ordered by length, then lexicographically.
pub fn admissible_effective_schedules(grid: &TimeGrid, max_len: usize) -> Vec<Vec<usize>> {
    let last = grid.last_effective_decision();
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            let start = seq.last().map_or(0, |&l: &usize| l + grid.delay_steps);
            for i in start..last {
                let mut s = seq.clone();
                s.push(i);
                next.push(s);
            }
        }
        if next.is_empty() {
            break;
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Largest number of decisions whose execution `i + d` lands on the grid
/// (`i + d <= N`) under the spacing rule, found by exhaustive search.
pub fn max_executable_impulses(grid: &TimeGrid) -> usize {
    fn deepest(grid: &TimeGrid, earliest: usize) -> usize {
        let mut best = 0;
        for i in earliest..=grid.steps {
            if i + grid.delay_steps > grid.steps {
                break;
            }
            best = best.max(1 + deepest(grid, i + grid.delay_steps));
        }
        best
    }
    deepest(grid, 0)
}

/// A seeded random admissible rule with `levels` impulses.
pub fn random_admissible_strategy(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    levels: usize,
    seed: u64,
) -> Result<StrategyRule> {
    let lattice = CumulativeLattice::new(menu, levels)?;
    Ok(random_admissible_rule(
        model.grid,
        model.n_states(),
        menu,
        &lattice,
        levels,
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Kernel, Reward};
    use crate::strategy::evaluate_rule_exact;

    #[test]
    fn d1_tree_and_enumeration() {
        let (m, menu) = fixtures::d1();
        let v = brute_force_tree_value(&m, &menu, Criterion::RiskNeutral, None).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        let (v, trace) = enumerate_deterministic(&m, &menu, Criterion::RiskNeutral).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
        assert_eq!(
            trace.decisions,
            vec![Decision { index: 0, item: 0 }, Decision { index: 4, item: 0 }]
        );
        let rs = brute_force_tree_value(&m, &menu, Criterion::RiskSensitive { theta: 1.0 }, None).unwrap();
        assert!((rs - 0.6f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn huge_cost_gives_empty_schedule() {
        let (m, _) = fixtures::d1();
        let menu = ImpulseMenu::new(vec![vec![1.0]], vec![100.0]).unwrap();
        let (v, trace) = enumerate_deterministic(&m, &menu, Criterion::RiskNeutral).unwrap();
        assert_eq!(v, 0.0);
        assert!(trace.decisions.is_empty());
    }

    #[test]
    fn truncated_discounted_geometric_sum() {
        let (m, menu) = fixtures::d2();
        let grid = TimeGrid::new(3.0, fixtures::D2_DELAY, 0.25).unwrap();
        let m = m.regrid(grid).unwrap();
        let (v, trace) = enumerate_deterministic(&m, &menu, Criterion::Discounted { rate: 1.0 }).unwrap();
        // impulses executed at 0.5, 1.0, ..., 2.5; each adds int_{t_k}^3 e^{-t} dt - 0.2 e^{-t_k}
        let expect: f64 = (1..=5)
            .map(|k| {
                let t = 0.5 * k as f64;
                0.8 * (-t).exp() - (-3.0f64).exp()
            })
            .sum();
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        assert_eq!(trace.decisions.len(), 5);
    }

    #[test]
    fn no_reward_dependence_on_impulses() {
        let (mut m, menu) = fixtures::r3(0);
        m.reward = Reward::Constant(0.7);
        let free = menu.with_cost_shift(-menu.costs().iter().cloned().fold(f64::INFINITY, f64::min)).unwrap();
        let v = brute_force_tree_value(&m, &free, Criterion::RiskNeutral, None).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_cap_is_free_value() {
        let (m, menu) = fixtures::r3(3);
        let v = brute_force_tree_value(&m, &menu, Criterion::RiskNeutral, Some(0)).unwrap();
        let y0 = crate::lattice_rn::solve_with_depth(&m, &menu, 0).unwrap().value;
        assert!((v - y0).abs() < 1e-12);
    }

    #[test]
    fn too_large_is_rejected() {
        let grid = TimeGrid::new(2.0, 0.5, 0.1).unwrap();
        let m = MarkovLattice::new(
            grid,
            vec![vec![0.0], vec![1.0]],
            vec![Kernel::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()],
            Reward::Constant(0.0),
        )
        .unwrap();
        let menu = ImpulseMenu::new(vec![vec![1.0]], vec![0.1]).unwrap();
        assert!(matches!(
            brute_force_tree_value(&m, &menu, Criterion::RiskNeutral, None),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn impulse_count_matches_floor() {
        for (t, delta, dt, x) in [(1.0, 0.4, 0.1, 2), (1.0, 0.5, 0.1, 2), (1.0, 0.3, 0.1, 3)] {
            let grid = TimeGrid::new(t, delta, dt).unwrap();
            assert_eq!(grid.max_impulses(), x);
            assert_eq!(max_executable_impulses(&grid), x);
        }
    }

    #[test]
    fn sampled_rules_are_dominated_on_d1() {
        let (m, menu) = fixtures::d1();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        for seed in 0..50 {
            let rule = random_admissible_strategy(&m, &menu, 2, seed).unwrap();
            let v = evaluate_rule_exact(&rule, &m, &menu, &lattice, Criterion::RiskNeutral).unwrap();
            assert!(v <= 0.6 + 1e-12);
        }
        assert_eq!(
            random_admissible_strategy(&m, &menu, 2, 9).unwrap(),
            random_admissible_strategy(&m, &menu, 2, 9).unwrap()
        );
        let none = random_admissible_strategy(&m, &menu, 0, 1).unwrap();
        let v = evaluate_rule_exact(&none, &m, &menu, &lattice, Criterion::RiskNeutral).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn matches_lattice_solvers_on_r3() {
        for seed in 0..6 {
            let (m, menu) = fixtures::r3(seed);
            let rn = crate::lattice_rn::solve(&m, &menu).unwrap().value;
            let tree = brute_force_tree_value(&m, &menu, Criterion::RiskNeutral, None).unwrap();
            assert!((rn - tree).abs() < 1e-10, "seed {seed}: {rn} vs {tree}");
            let rs = crate::lattice_rs::rs_solve(&m, &menu).unwrap().value;
            let tree = brute_force_tree_value(&m, &menu, Criterion::RiskSensitive { theta: 1.0 }, None).unwrap();
            assert!(((rs - tree) / tree).abs() < 1e-10, "seed {seed}: {rs} vs {tree}");
        }
    }
}
