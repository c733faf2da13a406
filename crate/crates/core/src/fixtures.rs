//! Small reference instances used by the verification suites, the tests
//! and the CLI examples.
//!
//! * `d1`: one state `x = 0`, `g(t, x) = x`, menu `{+1}` at cost 0.1,
//!   `T = 1`, `delta = 0.4`, `dt = 0.1`. Optimal value 0.6.
//! * `d2`: one state, `g(t, x) = x`, menu `{+1}` at cost 0.2, `delta = 0.5`,
//!   discounted at rate 1 over an infinite horizon.
//! * `r3(seed)`: three states, `N = 8`, `d = 2`, two menu items, seeded
//!   kernels, costs and reward table.
//! * `swing`: three exercise rights on an 8-step binomial spot.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    CumulativeLattice, ImpulseMenu, InitialCondition, Kernel, MarkovLattice, Reward, StrikeLayer,
    TimeGrid,
};
use crate::swing::{swing_model, SpotModel, SwingContract};

pub fn d1() -> (MarkovLattice, ImpulseMenu) {
    let grid = TimeGrid::new(1.0, 0.4, 0.1).expect("valid grid");
    let model = MarkovLattice::new(
        grid,
        vec![vec![0.0]],
        vec![Kernel::identity(1)],
        Reward::LinearLevel(vec![1.0]),
    )
    .expect("valid model");
    let menu = ImpulseMenu::new(vec![vec![1.0]], vec![0.1]).expect("valid menu");
    (model, menu)
}

pub const D2_RATE: f64 = 1.0;
pub const D2_COST: f64 = 0.2;
pub const D2_DELAY: f64 = 0.5;

/// Closed-form value of `d2`: an impulse at every multiple of delta.
pub fn d2_value() -> f64 {
    let q = (-D2_RATE * D2_DELAY).exp();
    (1.0 / D2_RATE - D2_COST) * q / (1.0 - q)
}

/// `d2` on a provisional grid; the infinite-horizon solver regrids it to
/// its truncation horizon.
pub fn d2() -> (MarkovLattice, ImpulseMenu) {
    let grid = TimeGrid::new(1.0, D2_DELAY, 0.25).expect("valid grid");
    let model = MarkovLattice::new(
        grid,
        vec![vec![0.0]],
        vec![Kernel::identity(1)],
        Reward::LinearLevel(vec![1.0]),
    )
    .expect("valid model");
    let menu = ImpulseMenu::new(vec![vec![1.0]], vec![D2_COST]).expect("valid menu");
    (model, menu)
}

fn random_kernel(rng: &mut ChaCha8Rng, n: usize) -> Kernel {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut w: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < 0.2 {
                        0.0
                    } else {
                        rng.random_range(0.05..1.0)
                    }
                })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                w[0] = 1.0;
            }
            let total: f64 = w.iter().sum();
            let mut row: Vec<f64> = w.iter().map(|v| v / total).collect();
            // make the row sum to one exactly
            let last = row.iter().rposition(|&v| v > 0.0).expect("nonzero row");
            let rest: f64 = row.iter().enumerate().filter(|&(k, _)| k != last).map(|(_, v)| v).sum();
            row[last] = 1.0 - rest;
            row
        })
        .collect();
    Kernel::from_dense(&rows).expect("stochastic rows")
}

const R3_MENUS: [[f64; 2]; 4] = [[1.0, -1.0], [1.0, 2.0], [0.5, -1.0], [-1.0, 1.5]];

/// Three-state instance with `N = 8`, `d = 2`, two menu items. Seed 0 is
/// the base instance; other seeds vary kernels, costs, rewards and items.
pub fn r3(seed: u64) -> (MarkovLattice, ImpulseMenu) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5233_0000 + seed);
    let grid = TimeGrid::new(1.0, 0.25, 0.125).expect("valid grid");
    let items = R3_MENUS[(seed % R3_MENUS.len() as u64) as usize];
    let costs = vec![rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
    let menu = ImpulseMenu::new(vec![vec![items[0]], vec![items[1]]], costs).expect("valid menu");
    let lattice = CumulativeLattice::new(&menu, grid.max_impulses()).expect("small lattice");
    let kernels = (0..grid.steps).map(|_| random_kernel(&mut rng, 3)).collect();
    let table: Vec<Vec<Vec<f64>>> = (0..grid.steps)
        .map(|_| {
            (0..3)
                .map(|_| (0..lattice.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let model = MarkovLattice::new(
        grid,
        vec![vec![-1.0], vec![0.0], vec![1.0]],
        kernels,
        Reward::Table(table),
    )
    .expect("valid model")
    .with_initial(InitialCondition::State(1))
    .expect("valid initial state");
    (model, menu)
}

/// Three-state time-homogeneous instance with a bounded pointwise reward,
/// for the discounted infinite-horizon solver.
pub fn r3_infinite(seed: u64) -> (MarkovLattice, ImpulseMenu) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5249_0000 + seed);
    let grid = TimeGrid::new(1.0, 0.5, 0.25).expect("valid grid");
    let kernel = random_kernel(&mut rng, 3);
    let phase: f64 = rng.random_range(0.0..3.0);
    let tilt: f64 = rng.random_range(0.2..1.0);
    let reward = Reward::Custom(Arc::new(move |_t, x: &[f64]| {
        (tilt * x[0] - phase).sin() + 0.3 * (x[0] * 0.7).tanh()
    }));
    let menu = ImpulseMenu::new(
        vec![vec![1.0], vec![-1.0]],
        vec![rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)],
    )
    .expect("valid menu");
    let model = MarkovLattice::new(grid, vec![vec![-1.0], vec![0.0], vec![1.0]], vec![kernel], reward)
        .expect("valid model")
        .with_initial(InitialCondition::State(1))
        .expect("valid initial state")
        .with_gamma_bound(1.3);
    (model, menu)
}

/// Grid of the swing fixture: `T = 1`, `delta = 0.25`, `dt = 0.125`.
pub fn swing_grid() -> TimeGrid {
    TimeGrid::new(1.0, 0.25, 0.125).expect("valid grid")
}

/// Three rights on a driftless binomial spot with two strike layers.
pub fn swing_contract() -> SwingContract {
    SwingContract {
        spot: SpotModel::Binomial {
            s0: 1.0,
            mu: 0.0,
            sigma: 0.4,
        },
        volume_increment: 1.0,
        exercise_cost: 0.01,
        layers: vec![
            StrikeLayer {
                upto: Some(1.0),
                strike: 1.0,
            },
            StrikeLayer {
                upto: None,
                strike: 1.1,
            },
        ],
        rights: Some(3),
    }
}

/// The swing fixture as a model and menu.
pub fn swing() -> (MarkovLattice, ImpulseMenu) {
    swing_model(swing_grid(), &swing_contract()).expect("valid swing model")
}

/// Every finite-horizon fixture: `d1`, `r3` for seeds 0 to 3, `swing`.
pub fn finite_fixtures() -> Vec<(String, MarkovLattice, ImpulseMenu)> {
    let mut out = Vec::new();
    let (m, menu) = d1();
    out.push(("d1".to_string(), m, menu));
    for seed in 0..4 {
        let (m, menu) = r3(seed);
        out.push((format!("r3[{seed}]"), m, menu));
    }
    let (m, menu) = swing();
    out.push(("swing".to_string(), m, menu));
    out
}
