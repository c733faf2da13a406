//! Backward recursions shared by the exact lattice solvers.
//!
//! Every criterion is handled by the same three recursions over a
//! `(time, state)` grid, one slice per cumulative impulse:
//!
//! * free value:   `V_i = r_i (+) E[V_{i+1}]`, `V_N = e`
//! * obstacle:     `O_i = r_i (+) E[r_{i+1} (+) ... E[H_{i+d}]]` with
//!                 `H = max_j c_j (+) Y_prev(a + a_j)` while `i < N - d`,
//!                 otherwise the free value over the remaining window
//! * envelope:     `Y_i = max(O_i, r_i (+) E[Y_{i+1}])`, `Y_N = e`
//!
//! where `(+)` is `+` (risk-neutral, discounted, log-space risk-sensitive)
//! or `*` (risk-sensitive), `e` its identity, and `E` the one-step kernel
//! expectation (log-sum-exp in log space).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CumulativeLattice, Criterion, ImpulseMenu, MarkovLattice};

/// Values on the `(N + 1) x S` node grid, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    states: usize,
    data: Vec<f64>,
}

impl NodeMatrix {
    pub fn filled(times: usize, states: usize, value: f64) -> Self {
        NodeMatrix {
            states,
            data: vec![value; times * states],
        }
    }

    pub fn times(&self) -> usize {
        self.data.len() / self.states
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn at(&self, i: usize, s: usize) -> f64 {
        self.data[i * self.states + s]
    }

    pub fn set(&mut self, i: usize, s: usize, v: f64) {
        self.data[i * self.states + s] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.states..(i + 1) * self.states]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.states..(i + 1) * self.states]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodeMatrix {
        NodeMatrix {
            states: self.states,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &NodeMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `Y^n` and `O^n` for one level, indexed by cumulative impulse id. Slices
/// outside the level's depth range are `None`; level 0 has no obstacle.
#[derive(Debug, Clone)]
pub struct LevelField {
    pub level: usize,
    pub y: Vec<Option<NodeMatrix>>,
    pub o: Vec<Option<NodeMatrix>>,
}

impl LevelField {
    pub fn value(&self, a_id: usize) -> Option<&NodeMatrix> {
        self.y.get(a_id).and_then(Option::as_ref)
    }

    pub fn obstacle(&self, a_id: usize) -> Option<&NodeMatrix> {
        self.o.get(a_id).and_then(Option::as_ref)
    }
}

/// Arithmetic used for the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Additive,
    Multiplicative,
    Log,
}

impl Scale {
    pub fn identity(self) -> f64 {
        match self {
            Scale::Multiplicative => 1.0,
            _ => 0.0,
        }
    }

    pub fn combine(self, x: f64, y: f64) -> f64 {
        match self {
            Scale::Multiplicative => x * y,
            _ => x + y,
        }
    }
}

pub fn log_sum_exp_weighted(terms: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let m = terms
        .clone()
        .filter(|&(p, _)| p > 0.0)
        .map(|(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms
        .filter(|&(p, _)| p > 0.0)
        .map(|(p, v)| p * (v - m).exp())
        .sum();
    m + s.ln()
}

/// What an obstacle reads when `a + a_j` is outside the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildPolicy {
    Strict,
    /// The child is read as the scale identity; used under a depth cap whose
    /// children are only reachable past the truncation horizon.
    IdentityBeyondCap,
}

/// Equality tolerance for detecting `Y = O`.
pub fn eq_tolerance(y: f64) -> f64 {
    1e-9 * (1.0 + y.abs())
}

pub struct Scheme<'a> {
    pub model: &'a MarkovLattice,
    pub menu: &'a ImpulseMenu,
    pub lattice: &'a CumulativeLattice,
    pub criterion: Criterion,
    pub scale: Scale,
    running: Vec<NodeMatrix>,
}

impl<'a> Scheme<'a> {
    pub fn new(
        model: &'a MarkovLattice,
        menu: &'a ImpulseMenu,
        lattice: &'a CumulativeLattice,
        criterion: Criterion,
        scale: Scale,
    ) -> Result<Self> {
        criterion.validate()?;
        model.check_lattice(lattice)?;
        if menu.dim() != model.dim() {
            return Err(Error::InvalidModel(format!(
                "menu dimension {} differs from state dimension {}",
                menu.dim(),
                model.dim()
            )));
        }
        let grid = model.grid;
        let s_count = model.n_states();
        let theta = criterion.theta();
        let running = (0..lattice.len())
            .into_par_iter()
            .map(|a_id| {
                let mut r = NodeMatrix::filled(grid.steps, s_count, 0.0);
                for i in 0..grid.steps {
                    let w = criterion.step_weight(&grid, i);
                    for s in 0..s_count {
                        let g = model.reward(i, s, a_id, lattice.value(a_id));
                        let v = match scale {
                            Scale::Additive => w * g,
                            Scale::Multiplicative => (theta * w * g).exp(),
                            Scale::Log => theta * w * g,
                        };
                        r.set(i, s, v);
                    }
                }
                r
            })
            .collect();
        Ok(Scheme {
            model,
            menu,
            lattice,
            criterion,
            scale,
            running,
        })
    }

    fn steps(&self) -> usize {
        self.model.grid.steps
    }

    fn delay(&self) -> usize {
        self.model.grid.delay_steps
    }

    fn n_states(&self) -> usize {
        self.model.n_states()
    }

    /// Transformed running term at `(i, s)` for cumulative impulse `a_id`.
    pub fn running(&self, a_id: usize, i: usize, s: usize) -> f64 {
        self.running[a_id].at(i, s)
    }

    /// Transformed cost term of item `j` executed at index `exec`.
    pub fn cost_term(&self, exec: usize, j: usize) -> f64 {
        let psi = self.menu.cost(j);
        let theta = self.criterion.theta();
        match self.scale {
            Scale::Additive => -self.criterion.cost_weight(&self.model.grid, exec) * psi,
            Scale::Multiplicative => (-theta * psi).exp(),
            Scale::Log => -theta * psi,
        }
    }

    fn expect(&self, i: usize, s: usize, next: &[f64]) -> f64 {
        let row = self.model.kernel(i).row(s);
        match self.scale {
            Scale::Log => log_sum_exp_weighted(row.iter().map(|&(t, p)| (p, next[t]))),
            _ => row.iter().map(|&(t, p)| p * next[t]).sum(),
        }
    }

    /// One backward step `r_i (+) E[next]` for every state.
    fn step_back(&self, a_id: usize, i: usize, next: &[f64], out: &mut [f64]) {
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = self
                .scale
                .combine(self.running(a_id, i, s), self.expect(i, s, next));
        }
    }

    /// Free value (no impulses) from every node to the horizon.
    pub fn free_value(&self, a_id: usize) -> NodeMatrix {
        let n = self.steps();
        let mut y = NodeMatrix::filled(n + 1, self.n_states(), self.scale.identity());
        let mut buf = vec![0.0; self.n_states()];
        for i in (0..n).rev() {
            self.step_back(a_id, i, y.row(i + 1), &mut buf);
            y.row_mut(i).copy_from_slice(&buf);
        }
        y
    }

    /// Accumulates from `end` back to `start`, starting from `terminal`.
    fn accumulate(&self, a_id: usize, start: usize, end: usize, terminal: &[f64]) -> Vec<f64> {
        let mut cur = terminal.to_vec();
        let mut buf = vec![0.0; self.n_states()];
        for i in (start..end).rev() {
            self.step_back(a_id, i, &cur, &mut buf);
            std::mem::swap(&mut cur, &mut buf);
        }
        cur
    }

    /// Expected running reward over the delay window `[i, min(i + d, N))`.
    pub fn partial_reward(&self, a_id: usize) -> NodeMatrix {
        let n = self.steps();
        let d = self.delay();
        let e = vec![self.scale.identity(); self.n_states()];
        let mut g = NodeMatrix::filled(n + 1, self.n_states(), self.scale.identity());
        for i in 0..n {
            let acc = self.accumulate(a_id, i, (i + d).min(n), &e);
            g.row_mut(i).copy_from_slice(&acc);
        }
        g
    }

    /// Best post-execution continuation `max_j c_j (+) Y_prev(a + a_j)` at
    /// `exec` for every state, with the argmax (lowest index on ties).
    pub fn best_child(
        &self,
        a_id: usize,
        exec: usize,
        prev: &LevelField,
        policy: ChildPolicy,
    ) -> Result<Vec<(f64, Option<usize>)>> {
        let mut best = vec![(f64::NEG_INFINITY, None); self.n_states()];
        for j in 0..self.menu.len() {
            let cost = self.cost_term(exec, j);
            let child = self.lattice.child(a_id, j).and_then(|c| prev.value(c));
            match child {
                Some(field) => {
                    for (s, slot) in best.iter_mut().enumerate() {
                        let v = self.scale.combine(cost, field.at(exec, s));
                        if slot.1.is_none() || v > slot.0 {
                            *slot = (v, Some(j));
                        }
                    }
                }
                None if policy == ChildPolicy::Strict => {
                    return Err(Error::MissingChild {
                        level: prev.level + 1,
                        a_id,
                        item: j,
                    });
                }
                None => {
                    let v = self.scale.combine(cost, self.scale.identity());
                    for slot in best.iter_mut() {
                        if v > slot.0 {
                            *slot = (v, None);
                        }
                    }
                }
            }
        }
        Ok(best)
    }

    pub fn obstacle(
        &self,
        a_id: usize,
        prev: &LevelField,
        partial: &NodeMatrix,
        policy: ChildPolicy,
    ) -> Result<NodeMatrix> {
        let n = self.steps();
        let d = self.delay();
        let mut o = partial.clone();
        for i in 0..n.saturating_sub(d) {
            let best: Vec<f64> = self
                .best_child(a_id, i + d, prev, policy)?
                .into_iter()
                .map(|(v, _)| v)
                .collect();
            let acc = self.accumulate(a_id, i, i + d, &best);
            o.row_mut(i).copy_from_slice(&acc);
        }
        Ok(o)
    }

    /// Discrete Snell envelope of the obstacle with running reward.
    pub fn envelope(&self, level: usize, a_id: usize, obstacle: &NodeMatrix) -> Result<NodeMatrix> {
        let n = self.steps();
        let mut y = NodeMatrix::filled(n + 1, self.n_states(), self.scale.identity());
        let mut cont = vec![0.0; self.n_states()];
        for i in (0..n).rev() {
            self.step_back(a_id, i, y.row(i + 1), &mut cont);
            for s in 0..self.n_states() {
                let o = obstacle.at(i, s);
                let v = if o >= cont[s] { o } else { cont[s] };
                if !(v >= o - eq_tolerance(o)) || v.is_nan() {
                    return Err(Error::ObstacleViolation {
                        level,
                        a_id,
                        i,
                        state: s,
                        y: v,
                        o,
                    });
                }
                y.set(i, s, v);
            }
        }
        Ok(y)
    }

    /// Level 0 for every id in `ids`.
    pub fn level_zero(&self, ids: &[usize]) -> LevelField {
        let mut y = vec![None; self.lattice.len()];
        let computed: Vec<(usize, NodeMatrix)> = ids
            .par_iter()
            .map(|&a| (a, self.free_value(a)))
            .collect();
        for (a, m) in computed {
            y[a] = Some(m);
        }
        LevelField {
            level: 0,
            y,
            o: vec![None; self.lattice.len()],
        }
    }

    /// Level `prev.level + 1` for every id in `ids`.
    pub fn next_level(
        &self,
        prev: &LevelField,
        ids: &[usize],
        partials: &[Option<NodeMatrix>],
        policy: ChildPolicy,
    ) -> Result<LevelField> {
        let level = prev.level + 1;
        let computed: Vec<Result<(usize, NodeMatrix, NodeMatrix)>> = ids
            .par_iter()
            .map(|&a| {
                let partial = partials[a]
                    .as_ref()
                    .expect("partial reward computed for every solved id");
                let o = self.obstacle(a, prev, partial, policy)?;
                let y = self.envelope(level, a, &o)?;
                Ok((a, y, o))
            })
            .collect();
        let mut field = LevelField {
            level,
            y: vec![None; self.lattice.len()],
            o: vec![None; self.lattice.len()],
        };
        for r in computed {
            let (a, y, o) = r?;
            field.y[a] = Some(y);
            field.o[a] = Some(o);
        }
        Ok(field)
    }

    pub fn partials(&self, ids: &[usize]) -> Vec<Option<NodeMatrix>> {
        let mut out = vec![None; self.lattice.len()];
        let computed: Vec<(usize, NodeMatrix)> = ids
            .par_iter()
            .map(|&a| (a, self.partial_reward(a)))
            .collect();
        for (a, m) in computed {
            out[a] = Some(m);
        }
        out
    }

    /// `max |Y - O|` over nodes with `i >= N - d`.
    pub fn restriction_gap(&self, field: &LevelField) -> f64 {
        let n = self.steps();
        let start = n - self.delay();
        let mut gap: f64 = 0.0;
        for (y, o) in field.y.iter().zip(&field.o) {
            if let (Some(y), Some(o)) = (y, o) {
                for i in start..=n {
                    for s in 0..self.n_states() {
                        gap = gap.max((y.at(i, s) - o.at(i, s)).abs());
                    }
                }
            }
        }
        gap
    }

    /// Largest `max(O - Y, 0)` over all nodes of a level.
    pub fn obstacle_excess(&self, field: &LevelField) -> f64 {
        let mut worst: f64 = 0.0;
        for (y, o) in field.y.iter().zip(&field.o) {
            if let (Some(y), Some(o)) = (y, o) {
                for (yv, ov) in y.values().iter().zip(o.values()) {
                    worst = worst.max(ov - yv);
                }
            }
        }
        worst
    }

    pub fn to_natural(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Log => v.exp(),
            _ => v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct() {
        let terms = [(0.25, 1.0), (0.75, -2.0)];
        let direct = (0.25 * 1f64.exp() + 0.75 * (-2f64).exp()).ln();
        let lse = log_sum_exp_weighted(terms.iter().copied());
        assert!((lse - direct).abs() < 1e-15);
        // huge exponents stay finite
        let big = log_sum_exp_weighted([(0.5, 1000.0), (0.5, 1000.0)].iter().copied());
        assert!((big - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_terms_ignored() {
        let v = log_sum_exp_weighted([(0.0, 5000.0), (1.0, 1.0)].iter().copied());
        assert_eq!(v, 1.0);
    }
}
