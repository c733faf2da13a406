//! State-feedback impulse rules and their exact evaluation.
//!
//! A rule answers two questions at every node `(i, s)` for the current
//! cumulative impulse `a` and the number of impulses left: "decide now?" and,
//! at an execution node, "which menu item?". Its value is computed by a
//! forward pass over `(cumulative impulse, pending countdown, impulses left,
//! state)` that never looks at the value fields the rule came from.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CumulativeLattice, Criterion, Decision, ImpulseMenu, MarkovLattice, StrategyTrace, TimeGrid,
};
use crate::scheme::{eq_tolerance, LevelField, Scheme};

/// Decision and size tables for one level, indexed by cumulative impulse id
/// and then by node `i * S + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRule {
    pub stop: Vec<Option<Vec<bool>>>,
    pub size: Vec<Option<Vec<Option<usize>>>>,
}

impl LevelRule {
    pub fn empty(lattice_len: usize) -> Self {
        LevelRule {
            stop: vec![None; lattice_len],
            size: vec![None; lattice_len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleHorizon {
    /// `levels[n - 1]` applies while `n` impulses remain.
    Counted,
    /// `levels[0]` applies regardless of how many impulses were used.
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRule {
    pub grid: TimeGrid,
    pub n_states: usize,
    pub horizon: RuleHorizon,
    pub levels: Vec<LevelRule>,
}

impl StrategyRule {
    /// A rule that never decides.
    pub fn empty(grid: TimeGrid, n_states: usize) -> Self {
        StrategyRule {
            grid,
            n_states,
            horizon: RuleHorizon::Counted,
            levels: Vec::new(),
        }
    }

    pub fn max_impulses(&self) -> Option<usize> {
        match self.horizon {
            RuleHorizon::Counted => Some(self.levels.len()),
            RuleHorizon::Stationary => None,
        }
    }

    fn level_index(&self, remaining: usize) -> Option<usize> {
        match self.horizon {
            RuleHorizon::Counted if remaining == 0 || remaining > self.levels.len() => None,
            RuleHorizon::Counted => Some(remaining - 1),
            RuleHorizon::Stationary if self.levels.is_empty() => None,
            RuleHorizon::Stationary => Some(0),
        }
    }

    /// Whether to decide at `(i, s)` with `remaining` impulses left. Never
    /// true once a decision could no longer execute before the horizon.
    pub fn decide(&self, remaining: usize, a_id: usize, i: usize, s: usize) -> bool {
        if !self.grid.decision_is_effective(i) {
            return false;
        }
        let Some(k) = self.level_index(remaining) else {
            return false;
        };
        self.levels[k]
            .stop
            .get(a_id)
            .and_then(Option::as_ref)
            .map(|t| t[i * self.n_states + s])
            .unwrap_or(false)
    }

    /// Size executed at `(i, s)` for a decision taken with `remaining`
    /// impulses left (counted before the decision).
    pub fn size(&self, remaining: usize, a_id: usize, i: usize, s: usize) -> Option<usize> {
        let k = self.level_index(remaining)?;
        self.levels[k]
            .size
            .get(a_id)
            .and_then(Option::as_ref)
            .and_then(|t| t[i * self.n_states + s])
    }

    fn initial_remaining(&self) -> usize {
        match self.horizon {
            RuleHorizon::Counted => self.levels.len(),
            RuleHorizon::Stationary => usize::MAX,
        }
    }

    /// Runs the rule along one path of state indices.
    pub fn trace_on_path(
        &self,
        lattice: &CumulativeLattice,
        path: &[usize],
    ) -> Result<StrategyTrace> {
        let n = self.grid.steps;
        let d = self.grid.delay_steps;
        let mut decisions = Vec::new();
        let mut a_id = 0;
        let mut remaining = self.initial_remaining();
        let mut pending: Option<(usize, usize)> = None; // (exec index, deciding level)
        for (i, &s) in path.iter().enumerate().take(n) {
            if let Some((exec, level)) = pending {
                if exec == i {
                    let j = self.size(level, a_id, i, s).ok_or_else(|| {
                        Error::InadmissibleRule(format!("no size at i={i}, s={s}, a_id={a_id}"))
                    })?;
                    let last: &mut Decision = decisions.last_mut().expect("pending decision");
                    last.item = j;
                    a_id = lattice.child(a_id, j).ok_or_else(|| {
                        Error::InadmissibleRule(format!("size {j} leaves the lattice at i={i}"))
                    })?;
                    pending = None;
                }
            }
            if pending.is_none() && self.decide(remaining, a_id, i, s) {
                decisions.push(Decision { index: i, item: 0 });
                pending = Some((i + d, remaining));
                remaining = remaining.saturating_sub(1);
            }
        }
        Ok(StrategyTrace::new(decisions))
    }

    /// Writes `level,a_id,i,time,state,action,size` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,a_id,i,time,state,action,size\n");
        for (k, level) in self.levels.iter().enumerate() {
            let label = match self.horizon {
                RuleHorizon::Counted => (k + 1).to_string(),
                RuleHorizon::Stationary => "stationary".to_string(),
            };
            for (a_id, stop) in level.stop.iter().enumerate() {
                let Some(stop) = stop else { continue };
                let size = level.size[a_id].as_ref();
                for i in 0..self.grid.steps {
                    for s in 0..self.n_states {
                        let node = i * self.n_states + s;
                        let action = if stop[node] { "impulse" } else { "wait" };
                        let sz = size
                            .and_then(|t| t[node])
                            .map(|j| j.to_string())
                            .unwrap_or_default();
                        let _ = writeln!(
                            out,
                            "{label},{a_id},{i},{},{s},{action},{sz}",
                            self.grid.time(i)
                        );
                    }
                }
            }
        }
        out
    }

    pub fn from_csv(
        text: &str,
        grid: TimeGrid,
        n_states: usize,
        lattice_len: usize,
    ) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("strategy csv line {line}: {msg}"));
        let mut horizon = RuleHorizon::Counted;
        let mut levels: Vec<LevelRule> = Vec::new();
        let nodes = grid.steps * n_states;
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(bad(ln + 1, "expected 7 columns"));
            }
            let k = if cols[0] == "stationary" {
                horizon = RuleHorizon::Stationary;
                0
            } else {
                cols[0]
                    .parse::<usize>()
                    .ok()
                    .filter(|&l| l >= 1)
                    .ok_or_else(|| bad(ln + 1, "bad level"))?
                    - 1
            };
            let parse = |c: &str| c.parse::<usize>().map_err(|_| bad(ln + 1, "bad index"));
            let a_id = parse(cols[1])?;
            let i = parse(cols[2])?;
            let s = parse(cols[4])?;
            if a_id >= lattice_len || i >= grid.steps || s >= n_states {
                return Err(bad(ln + 1, "index out of range"));
            }
            let stop = match cols[5] {
                "impulse" => true,
                "wait" => false,
                _ => return Err(bad(ln + 1, "action must be impulse or wait")),
            };
            let size = if cols[6].is_empty() {
                None
            } else {
                Some(parse(cols[6])?)
            };
            while levels.len() <= k {
                levels.push(LevelRule::empty(lattice_len));
            }
            let level = &mut levels[k];
            let node = i * n_states + s;
            level.stop[a_id].get_or_insert_with(|| vec![false; nodes])[node] = stop;
            level.size[a_id].get_or_insert_with(|| vec![None; nodes])[node] = size;
        }
        Ok(StrategyRule {
            grid,
            n_states,
            horizon,
            levels,
        })
    }
}

/// Stop region `{Y = O}` of `decide` (within tolerance, before `N - d`)
/// and lowest-index argmax sizes read from `children`.
pub(crate) fn level_rule(scheme: &Scheme<'_>, decide: &LevelField, children: &LevelField) -> LevelRule {
    let grid = scheme.model.grid;
    let n_states = scheme.model.n_states();
    let lattice = scheme.lattice;
    let menu = scheme.menu;
    let mut rule = LevelRule::empty(lattice.len());
    for a_id in 0..lattice.len() {
        let (Some(y), Some(o)) = (decide.value(a_id), decide.obstacle(a_id)) else {
            continue;
        };
        let kids: Vec<(usize, _)> = (0..menu.len())
            .filter_map(|j| {
                lattice
                    .child(a_id, j)
                    .and_then(|c| children.value(c))
                    .map(|f| (j, f))
            })
            .collect();
        let mut stop = vec![false; grid.steps * n_states];
        let mut size = vec![None; grid.steps * n_states];
        for i in 0..grid.steps {
            for s in 0..n_states {
                let node = i * n_states + s;
                let yv = y.at(i, s);
                stop[node] = !kids.is_empty()
                    && grid.decision_is_effective(i)
                    && yv - o.at(i, s) <= eq_tolerance(yv);
                let mut best: Option<(f64, usize)> = None;
                for &(j, f) in &kids {
                    let v = scheme.scale.combine(scheme.cost_term(i, j), f.at(i, s));
                    if best.is_none_or(|(b, _)| v > b) {
                        best = Some((v, j));
                    }
                }
                size[node] = best.map(|(_, j)| j);
            }
        }
        rule.stop[a_id] = Some(stop);
        rule.size[a_id] = Some(size);
    }
    rule
}

fn log_add(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let m = x.max(y);
    m + (-(x - y).abs()).exp().ln_1p()
}

/// Exact expected payoff of `rule` on `model`, by a forward pass over the
/// joint law of `(cumulative impulse, pending countdown, impulses left,
/// state)`. For the risk-sensitive criterion the pass runs in log space and
/// the returned value is `E[exp(theta R)]`.
pub fn evaluate_rule_exact(
    rule: &StrategyRule,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    criterion: Criterion,
) -> Result<f64> {
    let log_value = evaluate_rule_exact_log(rule, model, menu, lattice, criterion)?;
    Ok(match criterion {
        Criterion::RiskSensitive { .. } => log_value.exp(),
        _ => log_value,
    })
}

/// As [`evaluate_rule_exact`], but the risk-sensitive value is returned as
/// `log E[exp(theta R)]`. Other criteria return the plain value.
pub fn evaluate_rule_exact_log(
    rule: &StrategyRule,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    criterion: Criterion,
) -> Result<f64> {
    criterion.validate()?;
    if rule.grid.steps != model.grid.steps
        || rule.grid.delay_steps != model.grid.delay_steps
        || rule.n_states != model.n_states()
    {
        return Err(Error::InadmissibleRule(
            "rule grid or state count does not match the model".into(),
        ));
    }
    let grid = model.grid;
    let n = grid.steps;
    let d = grid.delay_steps;
    let n_states = model.n_states();
    let n_a = lattice.len();
    // remaining-count axis: Counted uses 0..=L, Stationary a single slot
    let (n_rem, stationary) = match rule.horizon {
        RuleHorizon::Counted => (rule.levels.len() + 1, false),
        RuleHorizon::Stationary => (1, true),
    };
    // pending axis: 0 = none, p = k + 1 with k steps until execution
    let n_pend = d + 2;
    let size = n_a * n_pend * n_rem * n_states;
    let idx = |a: usize, p: usize, r: usize, s: usize| ((a * n_pend + p) * n_rem + r) * n_states + s;
    let multiplicative = criterion.is_multiplicative();
    let theta = criterion.theta();
    let zero = if multiplicative { f64::NEG_INFINITY } else { 0.0 };

    let mut mass = vec![zero; size];
    let start_rem = if stationary { 0 } else { rule.levels.len() };
    for (s, w) in model.initial_weights().into_iter().enumerate() {
        if w > 0.0 {
            mass[idx(0, 0, start_rem, s)] = if multiplicative { w.ln() } else { w };
        }
    }
    let mut value = 0.0;
    let remaining_of = |r: usize| if stationary { usize::MAX } else { r };

    for i in 0..n {
        // execution, decision and reward at time i, in that order
        let mut now = vec![zero; size];
        for a in 0..n_a {
            for p in 0..n_pend {
                for r in 0..n_rem {
                    for s in 0..n_states {
                        let m = mass[idx(a, p, r, s)];
                        if m == zero {
                            continue;
                        }
                        let (mut a2, mut p2, mut r2, mut m2) = (a, p, r, m);
                        if p2 == 1 {
                            let deciding = if stationary { usize::MAX } else { r2 + 1 };
                            let j = rule.size(deciding, a2, i, s).ok_or_else(|| {
                                Error::InadmissibleRule(format!(
                                    "no size for execution at i={i}, s={s}, a_id={a2}"
                                ))
                            })?;
                            a2 = lattice.child(a2, j).ok_or_else(|| {
                                Error::InadmissibleRule(format!(
                                    "size {j} leaves the lattice from a_id={a2}"
                                ))
                            })?;
                            let psi = menu.cost(j);
                            if multiplicative {
                                m2 -= theta * psi;
                            } else {
                                value -= m2 * criterion.cost_weight(&grid, i) * psi;
                            }
                            p2 = 0;
                        }
                        if p2 == 0 && rule.decide(remaining_of(r2), a2, i, s) {
                            p2 = d + 1;
                            if !stationary {
                                r2 -= 1;
                            }
                        }
                        let g = model.reward(i, s, a2, lattice.value(a2));
                        let w = criterion.step_weight(&grid, i);
                        if multiplicative {
                            m2 += theta * w * g;
                        } else {
                            value += m2 * w * g;
                        }
                        let k = idx(a2, p2, r2, s);
                        now[k] = if multiplicative { log_add(now[k], m2) } else { now[k] + m2 };
                    }
                }
            }
        }
        // transition to i + 1, counting down pending executions
        let mut next = vec![zero; size];
        let kernel = model.kernel(i);
        for a in 0..n_a {
            for p in 0..n_pend {
                let p_next = if p > 0 { p - 1 } else { 0 };
                for r in 0..n_rem {
                    for s in 0..n_states {
                        let m = now[idx(a, p, r, s)];
                        if m == zero {
                            continue;
                        }
                        for &(t, prob) in kernel.row(s) {
                            let k = idx(a, p_next, r, t);
                            next[k] = if multiplicative {
                                log_add(next[k], m + prob.ln())
                            } else {
                                next[k] + m * prob
                            };
                        }
                    }
                }
            }
        }
        mass = next;
    }
    if multiplicative {
        Ok(mass.into_iter().fold(f64::NEG_INFINITY, log_add))
    } else {
        Ok(value)
    }
}

/// A random admissible rule: per level a random decision probability,
/// independent coin flips per node, and sizes drawn uniformly among items
/// that stay inside the lattice.
pub fn random_admissible_rule(
    grid: TimeGrid,
    n_states: usize,
    menu: &ImpulseMenu,
    lattice: &CumulativeLattice,
    levels: usize,
    seed: u64,
) -> StrategyRule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = grid.steps * n_states;
    let mut out = Vec::with_capacity(levels);
    for n in 1..=levels {
        let mut level = LevelRule::empty(lattice.len());
        let rate: f64 = rng.random_range(0.0..0.6);
        for a_id in lattice.ids_within(levels - n) {
            let kids: Vec<usize> = (0..menu.len())
                .filter(|&j| lattice.child(a_id, j).is_some())
                .collect();
            if kids.is_empty() {
                continue;
            }
            let stop = (0..nodes).map(|_| rng.random::<f64>() < rate).collect();
            let size = (0..nodes)
                .map(|_| Some(kids[rng.random_range(0..kids.len())]))
                .collect();
            level.stop[a_id] = Some(stop);
            level.size[a_id] = Some(size);
        }
        out.push(level);
    }
    StrategyRule {
        grid,
        n_states,
        horizon: RuleHorizon::Counted,
        levels: out,
    }
}
