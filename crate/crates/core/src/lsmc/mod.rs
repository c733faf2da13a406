//! Regression Monte Carlo for the same recursions on simulated paths.
//!
//! Conditional expectations are replaced by least-squares projections on
//! features of the path up to the current index. Targets are realized
//! downstream sums along each fitting path (regress-later): the obstacle
//! target is the realized reward over the delay window plus the realized
//! continuation after the chosen size, and the continuation target is the
//! realized one-step reward plus the realized value of the next index.
//! Sizes at execution compare `-psi_j + Yhat^{n-1}(a + a_j)`, where `Yhat`
//! is the projection of the realized level-`(n-1)` value. Costs and menu
//! items enter exactly.

pub mod paths;
pub mod regression;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CumulativeLattice, Criterion, Decision, ImpulseMenu, Reward, StrategyTrace, TimeGrid};
use crate::scheme::eq_tolerance;

pub use paths::{simulate_paths, PathEnsemble, PathSpec};
pub use regression::{
    fit_conditional_expectation, FeatureScaling, Predictor, Projector, RegressionBasis,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsmcOptions {
    pub basis: RegressionBasis,
    /// `RiskNeutral` or `Discounted`.
    pub criterion: Criterion,
    /// Default `floor(T / delta)`.
    pub max_impulses: Option<usize>,
}

impl Default for LsmcOptions {
    fn default() -> Self {
        LsmcOptions {
            basis: RegressionBasis::default(),
            criterion: Criterion::RiskNeutral,
            max_impulses: None,
        }
    }
}

/// Coefficients indexed `[level][a_id][i]`.
pub type CoefTable = Vec<Vec<Vec<Option<Vec<f64>>>>>;

/// The fitted rule: with `n` impulses left at cumulative impulse `a`,
/// decide at `i < N - d` when `Ohat^n_i(a) >= Chat^n_i(a)`; at execution
/// take the item maximizing `-psi_j + Yhat^{n-1}(a + a_j)`.
#[derive(Debug, Clone)]
pub struct LsmcRule {
    pub grid: TimeGrid,
    pub dim: usize,
    pub menu: ImpulseMenu,
    pub lattice: CumulativeLattice,
    pub criterion: Criterion,
    pub basis: RegressionBasis,
    pub reward: Reward,
    pub levels: usize,
    pub scalings: Vec<FeatureScaling>,
    pub obstacle: CoefTable,
    pub continuation: CoefTable,
    pub value: CoefTable,
    pub fit_seed: u64,
}

fn coef(table: &CoefTable, n: usize, a: usize, i: usize) -> Option<&[f64]> {
    table.get(n)?.get(a)?.get(i)?.as_deref()
}

impl LsmcRule {
    fn predict(&self, table: &CoefTable, n: usize, a: usize, i: usize, input: &[f64]) -> Option<f64> {
        coef(table, n, a, i).map(|c| regression::predict(&self.scalings[i], input, c))
    }

    /// Runs the rule along one path (flattened points), returning the
    /// realized payoff and the decisions.
    pub fn run_path(&self, path: &[f64]) -> Result<(f64, StrategyTrace)> {
        let n_steps = self.grid.steps;
        let d = self.grid.delay_steps;
        if path.len() < (n_steps + 1) * self.dim {
            return Err(Error::BadSpec("path is shorter than the grid".into()));
        }
        let mut a = 0usize;
        let mut remaining = self.levels;
        let mut pending: Option<(usize, usize)> = None;
        let mut payoff = 0.0;
        let mut decisions: Vec<Decision> = Vec::new();
        let mut x = vec![0.0; self.dim];
        for i in 0..n_steps {
            let input = self
                .basis
                .inputs(&self.grid, &self.reward, self.dim, &path[..(i + 1) * self.dim]);
            if let Some((exec, level)) = pending {
                if exec == i {
                    let mut best: Option<(f64, usize)> = None;
                    for j in 0..self.menu.len() {
                        let Some(child) = self.lattice.child(a, j) else { continue };
                        let Some(y) = self.predict(&self.value, level - 1, child, i, &input) else {
                            continue;
                        };
                        let v = -self.criterion.cost_weight(&self.grid, i) * self.menu.cost(j) + y;
                        if best.is_none_or(|(b, _)| v > b) {
                            best = Some((v, j));
                        }
                    }
                    let (_, j) = best.ok_or_else(|| {
                        Error::InadmissibleRule(format!("no size available at i={i}, a_id={a}"))
                    })?;
                    a = self.lattice.child(a, j).expect("child checked");
                    payoff -= self.criterion.cost_weight(&self.grid, i) * self.menu.cost(j);
                    decisions.last_mut().expect("pending decision").item = j;
                    pending = None;
                }
            }
            if pending.is_none() && remaining > 0 && self.grid.decision_is_effective(i) {
                let o = self.predict(&self.obstacle, remaining, a, i, &input);
                let c = self.predict(&self.continuation, remaining, a, i, &input);
                if let (Some(o), Some(c)) = (o, c) {
                    if o >= c - eq_tolerance(c) {
                        decisions.push(Decision { index: i, item: 0 });
                        pending = Some((i + d, remaining));
                        remaining -= 1;
                    }
                }
            }
            for (k, slot) in x.iter_mut().enumerate() {
                *slot = path[i * self.dim + k] + self.lattice.value(a)[k];
            }
            let g = self.reward.at_point(self.grid.time(i), &x).expect("pointwise reward");
            payoff += self.criterion.step_weight(&self.grid, i) * g;
        }
        Ok((payoff, StrategyTrace::new(decisions)))
    }
}

#[derive(Debug, Clone)]
pub struct LsmcReport {
    /// Mean realized level-`L` value at time 0 over the fitting paths.
    pub value_insample: f64,
    pub stderr_insample: f64,
    /// Same mean for every level `0..=L`.
    pub level_values: Vec<f64>,
    pub rule: LsmcRule,
    pub max_condition_number: f64,
    /// Number of projections that needed the ridge fallback.
    pub ridge_fits: usize,
    pub n_paths: usize,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Ring of per-path vectors for indices `i..=i + d`.
struct Ring {
    slots: Vec<Vec<f64>>,
}

impl Ring {
    fn new(len: usize, n_paths: usize) -> Self {
        Ring {
            slots: vec![vec![0.0; n_paths]; len],
        }
    }
}

pub fn lsmc_solve(
    ensemble: &PathEnsemble,
    menu: &ImpulseMenu,
    reward: &Reward,
    options: &LsmcOptions,
) -> Result<LsmcReport> {
    if !reward.is_pointwise() {
        return Err(Error::BadSpec("regression Monte Carlo needs a pointwise reward".into()));
    }
    if options.criterion.is_multiplicative() {
        return Err(Error::BadSpec(
            "regression Monte Carlo supports the additive criteria only".into(),
        ));
    }
    options.criterion.validate()?;
    let grid = ensemble.grid;
    let n_steps = grid.steps;
    let d = grid.delay_steps;
    let m_paths = ensemble.n_paths;
    let dim = ensemble.dim;
    if menu.dim() != dim {
        return Err(Error::BadSpec(format!(
            "menu dimension {} differs from path dimension {dim}",
            menu.dim()
        )));
    }
    let b = options.basis.size(dim);
    if m_paths < 10 * b {
        return Err(Error::BadSpec(format!(
            "{m_paths} paths for {b} features; at least {} needed",
            10 * b
        )));
    }
    let levels = options.max_impulses.unwrap_or(grid.max_impulses());
    let lattice = CumulativeLattice::new(menu, levels)?;
    let ids_at = |n: usize| -> Vec<usize> { lattice.ids_within(levels - n).collect() };
    let criterion = options.criterion;
    let basis = options.basis;

    let ring_len = d + 1;
    let empty_table = || -> CoefTable { vec![vec![vec![None; n_steps]; lattice.len()]; levels + 1] };
    let mut obstacle = empty_table();
    let mut continuation = empty_table();
    let mut value = empty_table();
    let mut scalings = vec![FeatureScaling { degree: basis.degree, kept: Vec::new() }; n_steps];
    // realized values V^n_i(a) on every path, no decision pending at i
    let mut rings: Vec<Vec<Option<Ring>>> = (0..=levels)
        .map(|n| {
            let ids = ids_at(n);
            (0..lattice.len())
                .map(|a| ids.contains(&a).then(|| Ring::new(ring_len, m_paths)))
                .collect()
        })
        .collect();
    let mut projectors: Vec<Option<Projector>> = vec![None; ring_len];
    let mut max_condition: f64 = 0.0;
    let mut ridge_fits = 0usize;
    let all_ids = ids_at(0);

    for i in (0..n_steps).rev() {
        let slot = i % ring_len;
        let next_slot = (i + 1) % ring_len;
        let exec_slot = (i + d) % ring_len;
        let inputs = regression::ensemble_inputs(ensemble, &basis, reward, i);
        let proj = Projector::new(&inputs, &basis)?;
        max_condition = max_condition.max(proj.condition_number);
        scalings[i] = proj.scaling.clone();
        projectors[slot] = Some(proj);
        let proj = projectors[slot].as_ref().expect("just stored");
        let mut fit = |targets: &[f64]| -> Result<Vec<f64>> {
            if proj.ridge_used {
                ridge_fits += 1;
            }
            proj.fit(targets)
        };

        let w = criterion.step_weight(&grid, i);
        let t = grid.time(i);
        let rewards: Vec<Option<Vec<f64>>> = (0..lattice.len())
            .map(|a| {
                all_ids.contains(&a).then(|| {
                    (0..m_paths)
                        .into_par_iter()
                        .map(|m| {
                            let x: Vec<f64> = ensemble
                                .point(m, i)
                                .iter()
                                .zip(lattice.value(a))
                                .map(|(x, a)| x + a)
                                .collect();
                            w * reward.at_point(t, &x).expect("pointwise reward")
                        })
                        .collect()
                })
            })
            .collect();

        // level 0: realized reward to the horizon
        for &a in &all_ids {
            let ring = rings[0][a].as_mut().expect("level 0 ring");
            let r = rewards[a].as_ref().expect("reward computed");
            let next: Vec<f64> = if i + 1 < n_steps {
                ring.slots[next_slot].clone()
            } else {
                vec![0.0; m_paths]
            };
            ring.slots[slot] = r.iter().zip(&next).map(|(g, v)| g + v).collect();
            if levels > 0 {
                value[0][a][i] = Some(fit(&ring.slots[slot])?);
            }
        }

        for n in 1..=levels {
            for a in ids_at(n) {
                let r = rewards[a].as_ref().expect("reward computed");
                let free = &rings[0][a].as_ref().expect("level 0 ring").slots;
                let window_end: Option<&Vec<f64>> = (i + d < n_steps).then(|| &free[exec_slot]);
                let ring = rings[n][a].as_ref().expect("level ring");
                let cont_target: Vec<f64> = if i + 1 < n_steps {
                    r.iter().zip(&ring.slots[next_slot]).map(|(g, v)| g + v).collect()
                } else {
                    r.clone()
                };
                let realized: Vec<f64> = if grid.decision_is_effective(i) {
                    let exec = i + d;
                    let exec_proj = projectors[exec_slot].as_ref().expect("projector at execution");
                    let kids: Vec<(usize, usize, &[f64])> = (0..menu.len())
                        .filter_map(|j| {
                            let c = lattice.child(a, j)?;
                            Some((j, c, coef(&value, n - 1, c, exec)?))
                        })
                        .collect();
                    if kids.is_empty() {
                        return Err(Error::MissingChild { level: n, a_id: a, item: 0 });
                    }
                    let lower = &rings[n - 1];
                    let window_end = window_end.expect("execution before the horizon");
                    let l_target: Vec<f64> = (0..m_paths)
                        .into_par_iter()
                        .map(|m| {
                            let mut best: Option<(f64, usize, usize)> = None;
                            for &(j, c, cf) in &kids {
                                let v = -criterion.cost_weight(&grid, exec) * menu.cost(j)
                                    + exec_proj.predict_path(m, cf);
                                if best.is_none_or(|(bv, _, _)| v > bv) {
                                    best = Some((v, j, c));
                                }
                            }
                            let (_, j, c) = best.expect("at least one child");
                            let partial = free[slot][m] - window_end[m];
                            partial - criterion.cost_weight(&grid, exec) * menu.cost(j)
                                + lower[c].as_ref().expect("child ring").slots[exec_slot][m]
                        })
                        .collect();
                    let o_coef = fit(&l_target)?;
                    let c_coef = fit(&cont_target)?;
                    let o_hat = proj.predict_in_sample(&o_coef);
                    let c_hat = proj.predict_in_sample(&c_coef);
                    obstacle[n][a][i] = Some(o_coef);
                    continuation[n][a][i] = Some(c_coef);
                    (0..m_paths)
                        .map(|m| {
                            if o_hat[m] >= c_hat[m] - eq_tolerance(c_hat[m]) {
                                l_target[m]
                            } else {
                                cont_target[m]
                            }
                        })
                        .collect()
                } else {
                    cont_target
                };
                if n < levels {
                    value[n][a][i] = Some(fit(&realized)?);
                }
                rings[n][a].as_mut().expect("level ring").slots[slot] = realized;
            }
        }
    }

    let at_zero = |n: usize| -> Vec<f64> {
        rings[n][0].as_ref().expect("a = 0 ring").slots[0].clone()
    };
    let level_values: Vec<f64> = (0..=levels).map(|n| mean_stderr(&at_zero(n)).0).collect();
    let (value_insample, stderr_insample) = mean_stderr(&at_zero(levels));
    Ok(LsmcReport {
        value_insample,
        stderr_insample,
        level_values,
        max_condition_number: max_condition,
        ridge_fits,
        n_paths: m_paths,
        rule: LsmcRule {
            grid,
            dim,
            menu: menu.clone(),
            lattice,
            criterion,
            basis,
            reward: reward.clone(),
            levels,
            scalings,
            obstacle,
            continuation,
            value,
            fit_seed: ensemble.seed,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OosEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub n_paths: usize,
    pub seed: u64,
    pub seed_collision: bool,
    pub warnings: Vec<String>,
}

/// Runs `rule` on every path of `ensemble`. The ensemble should be
/// independent of the fitting one; a reused seed is flagged.
pub fn simulate_strategy_payoff(rule: &LsmcRule, ensemble: &PathEnsemble) -> Result<OosEstimate> {
    if ensemble.grid.steps != rule.grid.steps || ensemble.dim != rule.dim {
        return Err(Error::BadSpec("ensemble does not match the rule's grid".into()));
    }
    let payoffs: Vec<f64> = (0..ensemble.n_paths)
        .into_par_iter()
        .map(|m| rule.run_path(ensemble.path(m)).map(|(v, _)| v))
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_stderr(&payoffs);
    let seed_collision = ensemble.seed == rule.fit_seed;
    let mut warnings = Vec::new();
    if seed_collision {
        warnings.push(format!(
            "SeedCollision: evaluation seed {} equals the fitting seed; the estimate is not out of sample",
            ensemble.seed
        ));
    }
    Ok(OosEstimate {
        mean,
        stderr,
        ci95: (mean - 1.96 * stderr, mean + 1.96 * stderr),
        n_paths: ensemble.n_paths,
        seed: ensemble.seed,
        seed_collision,
        warnings,
    })
}
