//! Swing-option preset.
//!
//! The state is `(spot, volume)`. Each exercise adds a fixed volume
//! increment and is followed by a refraction period equal to the delay.
//! Owned volume `v` earns `v * spot - layered_cost(v)` per unit time, i.e.
//! the rate `v` times the spread of spot over the volume-weighted strike.
//! The price allows at most `min(rights, floor(T / delta))` exercises.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice_rn::{self, FiniteReport};
use crate::model::{ImpulseMenu, Kernel, MarkovLattice, Reward, StrikeLayer, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpotModel {
    /// Recombining binomial tree (`u = e^{sigma sqrt(dt)}`, `d = 1 / u`,
    /// up probability `(e^{mu dt} - d) / (u - d)`) embedded as `2N + 1`
    /// states.
    Binomial { s0: f64, mu: f64, sigma: f64 },
    /// Spot fixed at `s0`.
    Deterministic { s0: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingContract {
    pub spot: SpotModel,
    pub volume_increment: f64,
    #[serde(default)]
    pub exercise_cost: f64,
    pub layers: Vec<StrikeLayer>,
    /// Exercise rights; `None` means `floor(T / delta)`.
    #[serde(default)]
    pub rights: Option<usize>,
}

/// State index of spot level `k` (`-N..=N`) in the binomial embedding.
pub fn binomial_state(steps: usize, k: isize) -> usize {
    (k + steps as isize) as usize
}

pub fn spot_model(grid: TimeGrid, spot: &SpotModel) -> Result<(Vec<f64>, Vec<Kernel>, usize)> {
    match *spot {
        SpotModel::Deterministic { s0 } => Ok((vec![s0], vec![Kernel::identity(1)], 0)),
        SpotModel::Binomial { s0, mu, sigma } => {
            if !(s0 > 0.0 && sigma > 0.0) {
                return Err(Error::InvalidModel(
                    "binomial spot needs s0 > 0 and sigma > 0".into(),
                ));
            }
            let n = grid.steps;
            let u = (sigma * grid.dt.sqrt()).exp();
            let d = 1.0 / u;
            let p = ((mu * grid.dt).exp() - d) / (u - d);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidModel(format!(
                    "binomial up probability {p} outside [0, 1]; refine dt"
                )));
            }
            let size = 2 * n + 1;
            let spots = (0..size)
                .map(|s| s0 * u.powi(s as i32 - n as i32))
                .collect();
            let rows = (0..size)
                .map(|s| {
                    // the edges are unreachable from the centre within N steps
                    let up = (s + 1).min(size - 1);
                    let down = s.saturating_sub(1);
                    if up == down {
                        vec![(s, 1.0)]
                    } else if up == s {
                        vec![(down, 1.0 - p), (s, p)]
                    } else if down == s {
                        vec![(s, 1.0 - p), (up, p)]
                    } else {
                        vec![(down, 1.0 - p), (up, p)]
                    }
                })
                .collect();
            Ok((spots, vec![Kernel::from_rows(rows)?], binomial_state(n, 0)))
        }
    }
}

/// The contract as a model on `(spot, volume)` with its volume menu.
pub fn swing_model(grid: TimeGrid, contract: &SwingContract) -> Result<(MarkovLattice, ImpulseMenu)> {
    if !contract.volume_increment.is_finite() {
        return Err(Error::InvalidModel("volume increment must be finite".into()));
    }
    let (spots, kernels, start) = spot_model(grid, &contract.spot)?;
    let states = spots.iter().map(|&s| vec![s, 0.0]).collect();
    let reward = Reward::Swing {
        spot: 0,
        volume: 1,
        layers: contract.layers.clone(),
    };
    let model = MarkovLattice::new(grid, states, kernels, reward)?
        .with_initial(crate::model::InitialCondition::State(start))?;
    let menu = ImpulseMenu::new(
        vec![vec![0.0, contract.volume_increment]],
        vec![contract.exercise_cost],
    )?;
    Ok((model, menu))
}

pub fn max_exercises(grid: &TimeGrid, contract: &SwingContract) -> usize {
    contract
        .rights
        .map_or(grid.max_impulses(), |r| r.min(grid.max_impulses()))
}

#[derive(Debug, Clone)]
pub struct SwingReport {
    pub price: f64,
    pub rights: usize,
    pub model: MarkovLattice,
    pub menu: ImpulseMenu,
    pub solve: FiniteReport,
}

pub fn price_swing(grid: TimeGrid, contract: &SwingContract) -> Result<SwingReport> {
    let (model, menu) = swing_model(grid, contract)?;
    let rights = max_exercises(&grid, contract);
    let solve = lattice_rn::solve_with_depth(&model, &menu, rights)?;
    Ok(SwingReport {
        price: solve.value,
        rights,
        model,
        menu,
        solve,
    })
}

impl SwingReport {
    /// For every number of rights left, owned volume and time: the lowest
    /// and highest spot at which the rule exercises (empty when it never
    /// does). Columns `rights_left,volume,i,time,min_spot,max_spot`.
    pub fn exercise_boundary_csv(&self) -> String {
        let grid = self.model.grid;
        let rule = &self.solve.rule;
        let mut out = String::from("rights_left,volume,i,time,min_spot,max_spot\n");
        for (k, level) in rule.levels.iter().enumerate() {
            for (a_id, stop) in level.stop.iter().enumerate() {
                let Some(stop) = stop else { continue };
                let volume = self.solve.lattice.value(a_id)[1];
                for i in 0..grid.steps {
                    let spots = (0..self.model.n_states())
                        .filter(|&s| stop[i * self.model.n_states() + s])
                        .map(|s| self.model.states[s][0]);
                    let (lo, hi) = spots.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    });
                    let fmt = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
                    let _ = writeln!(
                        out,
                        "{},{volume},{i},{},{},{}",
                        k + 1,
                        grid.time(i),
                        fmt(lo),
                        fmt(hi)
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Criterion;
    use crate::oracle;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 0.25, 0.125).unwrap()
    }

    fn layers() -> Vec<StrikeLayer> {
        vec![
            StrikeLayer { upto: Some(1.0), strike: 1.0 },
            StrikeLayer { upto: None, strike: 1.1 },
        ]
    }

    #[test]
    fn zero_increment_is_worthless() {
        let c = SwingContract {
            spot: SpotModel::Binomial { s0: 1.0, mu: 0.0, sigma: 0.3 },
            volume_increment: 0.0,
            exercise_cost: 0.0,
            layers: vec![StrikeLayer { upto: None, strike: 1.0 }],
            rights: None,
        };
        assert_eq!(price_swing(grid(), &c).unwrap().price, 0.0);
    }

    #[test]
    fn deterministic_spot_matches_enumeration() {
        let c = SwingContract {
            spot: SpotModel::Deterministic { s0: 2.0 },
            volume_increment: 1.0,
            exercise_cost: 0.05,
            layers: vec![StrikeLayer { upto: None, strike: 1.0 }],
            rights: Some(3),
        };
        let report = price_swing(grid(), &c).unwrap();
        let (v, trace) = oracle::enumerate_deterministic(&report.model, &report.menu, Criterion::RiskNeutral).unwrap();
        assert!((report.price - v).abs() < 1e-12, "{} vs {v}", report.price);
        assert_eq!(trace.decisions.len(), 3);
    }

    #[test]
    fn more_rights_never_hurt() {
        let mut c = SwingContract {
            spot: SpotModel::Binomial { s0: 1.0, mu: 0.0, sigma: 0.4 },
            volume_increment: 1.0,
            exercise_cost: 0.01,
            layers: layers(),
            rights: Some(2),
        };
        let two = price_swing(grid(), &c).unwrap().price;
        c.rights = Some(3);
        let three = price_swing(grid(), &c).unwrap().price;
        assert!(three >= two - 1e-12);
        assert!(two > 0.0);
    }

    #[test]
    fn binomial_kernel_is_martingale_for_zero_drift() {
        let (spots, kernels, start) =
            spot_model(grid(), &SpotModel::Binomial { s0: 1.0, mu: 0.0, sigma: 0.3 }).unwrap();
        assert_eq!(spots.len(), 17);
        assert_eq!(start, 8);
        for s in 1..16 {
            let e = kernels[0].expect(s, &spots);
            assert!((e - spots[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_csv_shape() {
        let c = SwingContract {
            spot: SpotModel::Binomial { s0: 1.0, mu: 0.0, sigma: 0.4 },
            volume_increment: 1.0,
            exercise_cost: 0.0,
            layers: layers(),
            rights: Some(2),
        };
        let report = price_swing(grid(), &c).unwrap();
        let csv = report.exercise_boundary_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("rights_left,volume,i,time,min_spot,max_spot"));
        assert!(lines.all(|l| l.split(',').count() == 6));
    }
}
