use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::menu::CumulativeLattice;
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Sparse row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Kernel {
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let n = dense.len();
        let rows = dense
            .iter()
            .enumerate()
            .map(|(s, row)| {
                if row.len() != n {
                    return Err(Error::InvalidModel(format!(
                        "kernel row {s} has {} entries, expected {n}",
                        row.len()
                    )));
                }
                Ok(row
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(t, &p)| (t, p))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Kernel::from_rows(rows)
    }

    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (s, row) in rows.iter().enumerate() {
            let mut total = 0.0;
            for &(t, p) in row {
                if t >= n {
                    return Err(Error::InvalidModel(format!(
                        "kernel row {s} points to state {t} of {n}"
                    )));
                }
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "kernel row {s} has invalid probability {p}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!(
                    "kernel row {s} sums to {total}, not 1"
                )));
            }
        }
        Ok(Kernel { rows })
    }

    pub fn identity(n: usize) -> Self {
        Kernel {
            rows: (0..n).map(|s| vec![(s, 1.0)]).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn expect(&self, s: usize, next: &[f64]) -> f64 {
        self.rows[s].iter().map(|&(t, p)| p * next[t]).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; n];
                for &(t, p) in row {
                    dense[t] += p;
                }
                dense
            })
            .collect()
    }
}

/// One price layer of a swing contract: volume up to `upto` (cumulative)
/// is bought at `strike`. `upto = None` means unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeLayer {
    pub upto: Option<f64>,
    pub strike: f64,
}

/// Instantaneous reward `g(t, x)`.
#[derive(Clone)]
pub enum Reward {
    /// `g = value`.
    Constant(f64),
    /// `g(t, x) = coef . x`.
    LinearLevel(Vec<f64>),
    /// Explicit `g[i][s][a_id]`.
    Table(Vec<Vec<Vec<f64>>>),
    /// Layered swing payoff rate: with `v = x[volume]` and `s = x[spot]`,
    /// `g = v * s - sum over layers of (volume in layer) * strike`.
    Swing {
        spot: usize,
        volume: usize,
        layers: Vec<StrikeLayer>,
    },
    Custom(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reward::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Reward::LinearLevel(c) => f.debug_tuple("LinearLevel").field(c).finish(),
            Reward::Table(t) => write!(f, "Table({} steps)", t.len()),
            Reward::Swing { spot, volume, layers } => f
                .debug_struct("Swing")
                .field("spot", spot)
                .field("volume", volume)
                .field("layers", layers)
                .finish(),
            Reward::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

pub fn layered_cost(volume: f64, layers: &[StrikeLayer]) -> f64 {
    let mut lower = 0.0;
    let mut cost = 0.0;
    for layer in layers {
        let upper = layer.upto.unwrap_or(f64::INFINITY);
        let inside = (volume.min(upper) - lower).max(0.0);
        cost += inside * layer.strike;
        lower = upper;
        if volume <= upper {
            break;
        }
    }
    cost
}

impl Reward {
    /// Reward at a point of state space. Tables have no such form.
    pub fn at_point(&self, t: f64, x: &[f64]) -> Option<f64> {
        match self {
            Reward::Constant(c) => Some(*c),
            Reward::LinearLevel(coef) => Some(coef.iter().zip(x).map(|(c, v)| c * v).sum()),
            Reward::Table(_) => None,
            Reward::Swing { spot, volume, layers } => {
                let v = x[*volume];
                Some(v * x[*spot] - layered_cost(v, layers))
            }
            Reward::Custom(f) => Some(f(t, x)),
        }
    }

    pub fn is_pointwise(&self) -> bool {
        !matches!(self, Reward::Table(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    State(usize),
    Distribution(Vec<f64>),
}

/// Finite-state, discrete-time model of the uncontrolled process.
#[derive(Debug, Clone)]
pub struct MarkovLattice {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    kernels: Vec<Kernel>,
    pub reward: Reward,
    pub gamma_bound: Option<f64>,
    pub initial: InitialCondition,
}

impl MarkovLattice {
    /// `kernels` holds either one time-homogeneous kernel or one per step.
    pub fn new(
        grid: TimeGrid,
        states: Vec<Vec<f64>>,
        kernels: Vec<Kernel>,
        reward: Reward,
    ) -> Result<Self> {
        let n_states = states.len();
        if n_states == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        let dim = states[0].len();
        if states.iter().any(|x| x.len() != dim) {
            return Err(Error::InvalidModel("states have mixed dimensions".into()));
        }
        if kernels.len() != 1 && kernels.len() != grid.steps {
            return Err(Error::InvalidModel(format!(
                "expected 1 or {} kernels, got {}",
                grid.steps,
                kernels.len()
            )));
        }
        if kernels.iter().any(|k| k.size() != n_states) {
            return Err(Error::InvalidModel(format!(
                "kernel size does not match the {n_states} states"
            )));
        }
        if let Reward::Table(table) = &reward {
            if table.len() < grid.steps {
                return Err(Error::InvalidModel(format!(
                    "reward table covers {} steps, need {}",
                    table.len(),
                    grid.steps
                )));
            }
            if table.iter().any(|row| row.len() != n_states) {
                return Err(Error::InvalidModel(
                    "reward table rows must list every state".into(),
                ));
            }
        }
        if let Reward::LinearLevel(coef) = &reward {
            if coef.len() != dim {
                return Err(Error::InvalidModel(format!(
                    "linear reward has {} coefficients for dimension {dim}",
                    coef.len()
                )));
            }
        }
        if let Reward::Swing { spot, volume, .. } = &reward {
            if *spot >= dim || *volume >= dim {
                return Err(Error::InvalidModel(
                    "swing reward coordinates out of range".into(),
                ));
            }
        }
        Ok(MarkovLattice {
            grid,
            states,
            kernels,
            reward,
            gamma_bound: None,
            initial: InitialCondition::State(0),
        })
    }

    pub fn with_initial(mut self, initial: InitialCondition) -> Result<Self> {
        match &initial {
            InitialCondition::State(s) if *s >= self.n_states() => {
                return Err(Error::InvalidModel(format!("initial state {s} out of range")))
            }
            InitialCondition::Distribution(p) => {
                if p.len() != self.n_states() || p.iter().any(|&w| !(w >= 0.0)) {
                    return Err(Error::InvalidModel("bad initial distribution".into()));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "initial distribution sums to {total}"
                    )));
                }
            }
            _ => {}
        }
        self.initial = initial;
        Ok(self)
    }

    pub fn with_gamma_bound(mut self, bound: f64) -> Self {
        self.gamma_bound = Some(bound);
        self
    }

    /// Same process and reward on a different grid (kernels must be
    /// time-homogeneous unless the step count is unchanged).
    pub fn regrid(&self, grid: TimeGrid) -> Result<Self> {
        if self.kernels.len() != 1 && grid.steps != self.grid.steps {
            return Err(Error::InvalidModel(
                "time-dependent kernels cannot be regridded".into(),
            ));
        }
        let mut m = MarkovLattice::new(
            grid,
            self.states.clone(),
            self.kernels.clone(),
            self.reward.clone(),
        )?;
        m.gamma_bound = self.gamma_bound;
        m.initial = self.initial.clone();
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn kernel(&self, i: usize) -> &Kernel {
        if self.kernels.len() == 1 {
            &self.kernels[0]
        } else {
            &self.kernels[i]
        }
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    /// `g(t_i, x_s + a)`.
    pub fn reward(&self, i: usize, s: usize, a_id: usize, a: &[f64]) -> f64 {
        match &self.reward {
            Reward::Table(t) => t[i][s][a_id],
            r => {
                let x: Vec<f64> = self.states[s].iter().zip(a).map(|(x, a)| x + a).collect();
                r.at_point(self.grid.time(i), &x).expect("pointwise reward")
            }
        }
    }

    /// Checks that the menu dimension and table coverage fit this lattice.
    pub fn check_lattice(&self, lattice: &CumulativeLattice) -> Result<()> {
        if lattice.value(0).len() != self.dim() {
            return Err(Error::InvalidModel(format!(
                "impulse dimension {} differs from state dimension {}",
                lattice.value(0).len(),
                self.dim()
            )));
        }
        if let Reward::Table(t) = &self.reward {
            for (i, row) in t.iter().enumerate().take(self.grid.steps) {
                if row.iter().any(|cells| cells.len() < lattice.len()) {
                    return Err(Error::InvalidModel(format!(
                        "reward table at step {i} covers fewer than {} cumulative impulses",
                        lattice.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest `|g|` over every node of the grid and the lattice. A declared
    /// bound is checked against it.
    pub fn reward_bound(&self, lattice: &CumulativeLattice) -> Result<f64> {
        let mut bound: f64 = 0.0;
        for i in 0..self.grid.steps {
            for s in 0..self.n_states() {
                for a_id in 0..lattice.len() {
                    let g = self.reward(i, s, a_id, lattice.value(a_id));
                    if !g.is_finite() {
                        return Err(Error::InvalidModel(format!(
                            "reward is not finite at i={i}, s={s}, a_id={a_id}"
                        )));
                    }
                    bound = bound.max(g.abs());
                }
            }
        }
        match self.gamma_bound {
            Some(declared) if declared < bound => Err(Error::InvalidModel(format!(
                "declared reward bound {declared} is below max |g| = {bound}"
            ))),
            Some(declared) => Ok(declared),
            None => Ok(bound),
        }
    }

    pub fn initial_weights(&self) -> Vec<f64> {
        match &self.initial {
            InitialCondition::State(s) => {
                let mut w = vec![0.0; self.n_states()];
                w[*s] = 1.0;
                w
            }
            InitialCondition::Distribution(p) => p.clone(),
        }
    }

    /// Probability-weighted value of a time-0 vector.
    pub fn initial_value(&self, at_zero: &[f64]) -> f64 {
        match &self.initial {
            InitialCondition::State(s) => at_zero[*s],
            InitialCondition::Distribution(p) => p.iter().zip(at_zero).map(|(w, v)| w * v).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_rows_must_be_stochastic() {
        assert!(Kernel::from_dense(&[vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
        assert!(Kernel::from_dense(&[vec![0.5, 0.5], vec![0.0, 1.0]]).is_ok());
        assert!(Kernel::from_dense(&[vec![1.5, -0.5], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn layered_cost_accumulates_by_layer() {
        let layers = vec![
            StrikeLayer { upto: Some(1.0), strike: 10.0 },
            StrikeLayer { upto: None, strike: 12.0 },
        ];
        assert_eq!(layered_cost(0.0, &layers), 0.0);
        assert_eq!(layered_cost(0.5, &layers), 5.0);
        assert_eq!(layered_cost(2.0, &layers), 10.0 + 12.0);
    }

    #[test]
    fn declared_bound_must_dominate() {
        use crate::model::ImpulseMenu;
        let grid = TimeGrid::new(1.0, 0.5, 0.5).unwrap();
        let m = MarkovLattice::new(
            grid,
            vec![vec![0.0]],
            vec![Kernel::identity(1)],
            Reward::LinearLevel(vec![1.0]),
        )
        .unwrap()
        .with_gamma_bound(1.0);
        let menu = ImpulseMenu::new(vec![vec![1.0]], vec![0.0]).unwrap();
        let lattice = CumulativeLattice::new(&menu, 2).unwrap();
        assert!(m.reward_bound(&lattice).is_err());
        let m = m.with_gamma_bound(2.0);
        assert_eq!(m.reward_bound(&lattice).unwrap(), 2.0);
    }
}
