//! Discounted infinite-horizon solver.
//!
//! The horizon is truncated at `T_trunc`, chosen so that the discounted
//! reward beyond it is at most `epsilon` (`gamma e^{-r T_trunc} / r`). On
//! the truncated grid the levels `Y^0 <= Y^1 <= ...` are iterated until the
//! sup-norm change drops below `epsilon_fix`; since at most
//! `ceil(N / d)` impulses fit before `T_trunc`, the cumulative-impulse
//! lattice is capped at that depth and children past the cap read as 0.
//!
//! Running rewards carry the exact per-step discount integral and costs are
//! discounted at the execution time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice_rn::Diagnostics;
use crate::model::{CumulativeLattice, Criterion, ImpulseMenu, MarkovLattice, TimeGrid};
use crate::scheme::{ChildPolicy, LevelField, NodeMatrix, Scale, Scheme};
use crate::strategy::{self, RuleHorizon, StrategyRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationCertificate {
    pub t_trunc: f64,
    /// `gamma e^{-r T_trunc} / r`.
    pub tail_bound: f64,
    pub epsilon: f64,
    pub rate: f64,
    pub gamma_bound: f64,
}

/// Smallest multiple of `dt`, and at least `delay`, with
/// `gamma e^{-r T} / r <= epsilon`.
pub fn choose_truncation(
    rate: f64,
    gamma_bound: f64,
    epsilon: f64,
    delay: f64,
    dt: f64,
) -> Result<TruncationCertificate> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::NonPositiveRate(rate));
    }
    if !(gamma_bound >= 0.0 && gamma_bound.is_finite()) {
        return Err(Error::InvalidModel(format!("bad reward bound {gamma_bound}")));
    }
    if !(epsilon > 0.0) || !(dt > 0.0) || !(delay > 0.0) {
        return Err(Error::InvalidGrid(
            "epsilon, delay and dt must be positive".into(),
        ));
    }
    let tail = |t: f64| gamma_bound * (-rate * t).exp() / rate;
    let min_steps = (delay / dt).round() as usize;
    let mut steps = if tail(0.0) <= epsilon {
        min_steps
    } else {
        let t = (gamma_bound / (rate * epsilon)).ln() / rate;
        ((t / dt - 1e-9).ceil() as usize).max(min_steps)
    };
    while tail(steps as f64 * dt) > epsilon {
        steps += 1;
    }
    let t_trunc = steps as f64 * dt;
    Ok(TruncationCertificate {
        t_trunc,
        tail_bound: tail(t_trunc),
        epsilon,
        rate,
        gamma_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfiniteOptions {
    pub rate: f64,
    /// Target for the truncation tail.
    pub epsilon: f64,
    /// Stop once `sup |Y^{n+1} - Y^n| < epsilon_fix`.
    pub epsilon_fix: f64,
    /// Default `10 ceil(T_trunc / delta)`.
    pub n_max: Option<usize>,
    /// Lower bound on the truncation horizon.
    pub t_min: Option<f64>,
    /// Refuse truncation horizons beyond this.
    pub t_max: Option<f64>,
}

impl InfiniteOptions {
    pub fn new(rate: f64) -> Self {
        InfiniteOptions {
            rate,
            epsilon: 1e-6,
            epsilon_fix: 1e-8,
            n_max: None,
            t_min: None,
            t_max: None,
        }
    }
}

/// The model regridded to its truncation horizon, with the capped lattice.
#[derive(Debug, Clone)]
pub struct TruncatedProblem {
    pub model: MarkovLattice,
    pub menu: ImpulseMenu,
    pub lattice: CumulativeLattice,
    pub certificate: TruncationCertificate,
    pub rate: f64,
}

impl TruncatedProblem {
    /// Picks `T_trunc` for the reward bound over the capped lattice. When no
    /// bound is declared and `|g|` grows with the cumulative impulse, the
    /// bound and the horizon are iterated together until they agree.
    pub fn new(model: &MarkovLattice, menu: &ImpulseMenu, options: &InfiniteOptions) -> Result<Self> {
        Criterion::Discounted { rate: options.rate }.validate()?;
        let delay = model.grid.delay;
        let dt = model.grid.dt;
        let mut gamma = model.gamma_bound.unwrap_or(0.0);
        for _ in 0..64 {
            let mut cert = choose_truncation(options.rate, gamma, options.epsilon, delay, dt)?;
            let mut t = cert.t_trunc;
            if let Some(t_min) = options.t_min {
                t = t.max(t_min);
            }
            if let Some(t_max) = options.t_max {
                if t > t_max + 1e-9 * dt {
                    return Err(Error::TooLarge(format!(
                        "truncation horizon {t} exceeds the limit {t_max}; raise it or epsilon"
                    )));
                }
            }
            // the grid needs at least one step past the delay
            let steps = ((t / dt).round() as usize).max(model.grid.delay_steps + 1);
            let grid = TimeGrid::from_steps(steps, model.grid.delay_steps, dt)?;
            cert.t_trunc = grid.horizon;
            cert.tail_bound = gamma * (-options.rate * grid.horizon).exp() / options.rate;
            let truncated = model.regrid(grid)?;
            let cap = steps.div_ceil(grid.delay_steps);
            let lattice = CumulativeLattice::new(menu, cap)?;
            let actual = truncated.reward_bound(&lattice)?;
            if actual <= gamma {
                return Ok(TruncatedProblem {
                    model: truncated,
                    menu: menu.clone(),
                    lattice,
                    certificate: cert,
                    rate: options.rate,
                });
            }
            gamma = actual;
        }
        Err(Error::InvalidModel(
            "reward bound keeps growing with the truncation horizon".into(),
        ))
    }

    pub fn criterion(&self) -> Criterion {
        Criterion::Discounted { rate: self.rate }
    }

    pub fn scheme(&self) -> Result<Scheme<'_>> {
        Scheme::new(&self.model, &self.menu, &self.lattice, self.criterion(), Scale::Additive)
    }

    /// Depth cap of the cumulative-impulse lattice.
    pub fn cap(&self) -> usize {
        self.lattice.max_depth()
    }

    fn all_ids(&self) -> Vec<usize> {
        (0..self.lattice.len()).collect()
    }

    /// Discounted free value for every capped cumulative impulse.
    pub fn level_zero(&self) -> Result<LevelField> {
        Ok(self.scheme()?.level_zero(&self.all_ids()))
    }

    /// `gamma (e^{-r t_i} - e^{-r T_trunc}) / r`, the largest discounted
    /// reward collectable from `t_i` on the truncated grid.
    pub fn bound_field(&self) -> NodeMatrix {
        let grid = self.model.grid;
        let g = self.certificate.gamma_bound;
        let r = self.rate;
        let mut m = NodeMatrix::filled(grid.steps + 1, self.model.n_states(), 0.0);
        let end = (-r * grid.horizon).exp();
        for i in 0..=grid.steps {
            let v = g * ((-r * grid.time(i)).exp() - end) / r;
            m.row_mut(i).fill(v.max(0.0));
        }
        m
    }
}

/// `O(a)` from `prev`, reading children past the depth cap as 0.
pub fn inf_obstacle(problem: &TruncatedProblem, prev: &LevelField, a_id: usize) -> Result<NodeMatrix> {
    let scheme = problem.scheme()?;
    let partial = scheme.partial_reward(a_id);
    scheme.obstacle(a_id, prev, &partial, ChildPolicy::IdentityBeyondCap)
}

/// Next level for every capped cumulative impulse.
pub fn inf_solve_level(problem: &TruncatedProblem, prev: &LevelField) -> Result<LevelField> {
    let scheme = problem.scheme()?;
    let ids = problem.all_ids();
    let partials = scheme.partials(&ids);
    scheme.next_level(prev, &ids, &partials, ChildPolicy::IdentityBeyondCap)
}

fn sup_diff(a: &LevelField, b: &LevelField) -> f64 {
    a.y.iter()
        .zip(&b.y)
        .filter_map(|(x, y)| Some(x.as_ref()?.max_abs_diff(y.as_ref()?)))
        .fold(0.0, f64::max)
}

fn max_shortfall(lo: &LevelField, hi: &LevelField) -> f64 {
    let mut worst: f64 = 0.0;
    for (l, h) in lo.y.iter().zip(&hi.y) {
        if let (Some(l), Some(h)) = (l, h) {
            for (a, b) in l.values().iter().zip(h.values()) {
                worst = worst.max(a - b);
            }
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub problem: TruncatedProblem,
    pub iterations: usize,
    /// `sup |Y^{n+1} - Y^n|` for `n = 0, 1, ...`.
    pub residuals: Vec<f64>,
    pub level_zero: LevelField,
    /// The last level: limit `Y` and its obstacle `O`.
    pub limit: LevelField,
    /// `Y^n_0(0)` for every computed level.
    pub level_values: Vec<f64>,
    pub value: f64,
    pub rule: StrategyRule,
    /// `sup |Y' - Y|` where `Y'` is one more level computed from the limit.
    pub self_consistency: f64,
    pub diagnostics: Diagnostics,
    /// Largest `Y^n - bound` over all levels and nodes.
    pub bound_excess: f64,
}

/// Monotone iteration to the discounted optimum.
pub fn inf_iterate(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    options: &InfiniteOptions,
) -> Result<FixedPointReport> {
    let problem = TruncatedProblem::new(model, menu, options)?;
    if !(options.epsilon_fix > 0.0) {
        return Err(Error::InvalidModel("epsilon_fix must be positive".into()));
    }
    let grid = problem.model.grid;
    let n_max = options
        .n_max
        .unwrap_or(10 * grid.steps.div_ceil(grid.delay_steps));
    let scheme = problem.scheme()?;
    let level_zero = problem.level_zero()?;
    let bound = problem.bound_field();
    let initial = |f: &LevelField| problem.model.initial_value(f.value(0).expect("a = 0 solved").row(0));

    let mut diagnostics = Diagnostics::default();
    let mut bound_excess: f64 = 0.0;
    let check_bound = |f: &LevelField| -> f64 {
        f.y.iter()
            .flatten()
            .flat_map(|y| y.values().iter().zip(bound.values()).map(|(v, b)| v - b))
            .fold(0.0, f64::max)
    };
    bound_excess = bound_excess.max(check_bound(&level_zero));

    let mut level_values = vec![initial(&level_zero)];
    let mut residuals = Vec::new();
    let mut prev = level_zero.clone();
    loop {
        if residuals.len() >= n_max {
            return Err(Error::NoConvergence {
                n_max,
                residual: residuals.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        let next = inf_solve_level(&problem, &prev)?;
        let residual = sup_diff(&prev, &next);
        diagnostics.monotonicity_residual.push(max_shortfall(&prev, &next));
        diagnostics.obstacle_excess.push(scheme.obstacle_excess(&next));
        diagnostics.restriction_gap.push(scheme.restriction_gap(&next));
        bound_excess = bound_excess.max(check_bound(&next));
        level_values.push(initial(&next));
        residuals.push(residual);
        prev = next;
        if residual < options.epsilon_fix {
            break;
        }
    }
    let limit = prev;
    let again = inf_solve_level(&problem, &limit)?;
    let self_consistency = sup_diff(&limit, &again);
    for y in limit.y.iter().flatten() {
        for &v in y.row(grid.steps) {
            diagnostics.terminal_error = diagnostics.terminal_error.max(v.abs());
        }
    }

    let rule = StrategyRule {
        grid,
        n_states: problem.model.n_states(),
        horizon: RuleHorizon::Stationary,
        levels: vec![strategy::level_rule(&scheme, &limit, &limit)],
    };
    let value = initial(&limit);
    drop(scheme);
    Ok(FixedPointReport {
        iterations: residuals.len(),
        residuals,
        level_zero,
        value,
        level_values,
        rule,
        self_consistency,
        diagnostics,
        bound_excess,
        limit,
        problem,
    })
}

/// Exact discounted payoff of `rule` on the truncated grid of `problem`.
pub fn inf_evaluate_strategy(rule: &StrategyRule, problem: &TruncatedProblem) -> Result<f64> {
    strategy::evaluate_rule_exact(
        rule,
        &problem.model,
        &problem.menu,
        &problem.lattice,
        problem.criterion(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::Reward;

    #[test]
    fn truncation_examples() {
        let c = choose_truncation(1.0, 1.0, 1e-6, 0.5, 0.1).unwrap();
        assert!((c.t_trunc - 13.9).abs() < 1e-9, "{}", c.t_trunc);
        assert!(c.tail_bound <= 1e-6);
        let c = choose_truncation(1.0, 0.0, 1e-6, 0.5, 0.1).unwrap();
        assert!((c.t_trunc - 0.5).abs() < 1e-12);
        assert_eq!(c.tail_bound, 0.0);
        let c = choose_truncation(2.0, 1.0, 0.5, 0.5, 0.1).unwrap();
        assert!((c.t_trunc - 0.5).abs() < 1e-12);
        assert!(matches!(
            choose_truncation(0.0, 1.0, 1e-6, 0.5, 0.1),
            Err(Error::NonPositiveRate(_))
        ));
    }

    #[test]
    fn d2_first_level_and_obstacle() {
        let (m, menu) = fixtures::d2();
        let problem = TruncatedProblem::new(&m, &menu, &InfiniteOptions::new(1.0)).unwrap();
        let y0 = problem.level_zero().unwrap();
        let o = inf_obstacle(&problem, &y0, 0).unwrap();
        let expect = (-0.5f64).exp() * 0.8;
        let end = (-problem.certificate.t_trunc).exp();
        assert!((o.at(0, 0) - (expect - end)).abs() < 1e-12);
        let y1 = inf_solve_level(&problem, &y0).unwrap();
        assert!((y1.value(0).unwrap().at(0, 0) - expect).abs() < 1e-6);
    }

    #[test]
    fn d2_closed_form() {
        let (m, menu) = fixtures::d2();
        let report = inf_iterate(&m, &menu, &InfiniteOptions::new(1.0)).unwrap();
        let tol = 1e-8 + 2.0 * report.problem.certificate.tail_bound;
        assert!((report.value - fixtures::d2_value()).abs() <= tol, "{}", report.value);
        let v = inf_evaluate_strategy(&report.rule, &report.problem).unwrap();
        assert!((v - report.value).abs() < 1e-10);
        let trace = report
            .rule
            .trace_on_path(&report.problem.lattice, &vec![0; report.problem.model.grid.steps])
            .unwrap();
        for (k, d) in trace.decisions.iter().enumerate() {
            assert_eq!(d.index, 2 * k);
        }
    }

    #[test]
    fn zero_reward_stays_zero() {
        let (mut m, menu) = fixtures::d2();
        m.reward = Reward::Constant(0.0);
        let report = inf_iterate(&m, &menu, &InfiniteOptions::new(1.0)).unwrap();
        assert_eq!(report.value, 0.0);
        assert!(report.limit.y.iter().flatten().all(|y| y.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn constant_reward_is_pure_integral() {
        let (mut m, menu) = fixtures::d2();
        m.reward = Reward::Constant(0.3);
        let report = inf_iterate(&m, &menu, &InfiniteOptions::new(1.0)).unwrap();
        let t = report.problem.certificate.t_trunc;
        assert!((report.value - 0.3 * (1.0 - (-t).exp())).abs() < 1e-12);
        let trace = report.rule.trace_on_path(&report.problem.lattice, &[0; 8]).unwrap();
        assert!(trace.decisions.is_empty());
        assert!(report.residuals[0] >= 0.0);
    }

    #[test]
    fn monotone_sandwiched_and_consistent() {
        for seed in 0..3 {
            let (m, menu) = fixtures::r3_infinite(seed);
            let report = inf_iterate(&m, &menu, &InfiniteOptions::new(0.8)).unwrap();
            for r in &report.diagnostics.monotonicity_residual {
                assert!(*r <= 1e-12);
            }
            assert!(report.bound_excess <= 1e-12);
            assert!(report.self_consistency <= 1e-8);
            let v = inf_evaluate_strategy(&report.rule, &report.problem).unwrap();
            assert!((v - report.value).abs() < 1e-10, "seed {seed}: {v} vs {}", report.value);
        }
    }
}
