//! Solver dispatch and the files written by the command-line tool.
//!
//! * `report.json`: [`SolveSummary`].
//! * `fields.csv`: `level,a_id,i,time,state,Y,O`, on the stored scale (log
//!   scale when `log_space` is true). `O` is empty for level 0.
//! * `strategy.csv`: see [`StrategyRule::to_csv`].
//!
//! Numbers use Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, SwingConfig};
use crate::error::{Error, Result};
use crate::infinite_rn::{self, InfiniteOptions};
use crate::lattice_rn::{self, Diagnostics, FiniteReport};
use crate::lattice_rs;
use crate::lsmc::{self, LsmcOptions, PathSpec, RegressionBasis};
use crate::model::{CumulativeLattice, ImpulseMenu, MarkovLattice, TimeGrid};
use crate::scheme::{LevelField, Scale};
use crate::strategy::{self, StrategyRule};
use crate::swing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rn,
    Rs,
    Inf,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rn" => Ok(Mode::Rn),
            "rs" => Ok(Mode::Rs),
            "inf" => Ok(Mode::Inf),
            other => Err(Error::Config(format!("unknown mode {other:?}; use rn, rs or inf"))),
        }
    }
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rn => "rn",
            Mode::Rs => "rs",
            Mode::Inf => "inf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfiniteSummary {
    pub rate: f64,
    #[serde(rename = "T_trunc")]
    pub t_trunc: f64,
    pub tail_bound: f64,
    pub epsilon: f64,
    pub epsilon_fix: f64,
    pub gamma_bound: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub self_consistency: f64,
    pub bound_excess: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub mode: Mode,
    pub criterion: String,
    pub value: f64,
    /// Value on the scale of `fields.csv`.
    pub stored_value: f64,
    pub log_space: bool,
    pub max_impulses: usize,
    /// `Y^n_0` at the initial condition, `n = 0, 1, ...` (iterates for `inf`).
    pub level_values: Vec<f64>,
    /// Exact payoff of the rule in `strategy.csv`.
    pub strategy_value: f64,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infinite: Option<InfiniteSummary>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub summary: SolveSummary,
    pub fields_csv: String,
    pub strategy_csv: String,
    pub rule: StrategyRule,
}

/// Writes `fields.csv` rows for a list of levels.
pub fn fields_csv<'a>(
    grid: &TimeGrid,
    n_states: usize,
    levels: impl IntoIterator<Item = (String, &'a LevelField)>,
) -> String {
    let mut out = String::from("level,a_id,i,time,state,Y,O\n");
    for (label, field) in levels {
        for (a_id, y) in field.y.iter().enumerate() {
            let Some(y) = y else { continue };
            let o = field.obstacle(a_id);
            for i in 0..=grid.steps {
                for s in 0..n_states {
                    let ov = o.map(|o| o.at(i, s).to_string()).unwrap_or_default();
                    let _ = writeln!(out, "{label},{a_id},{i},{},{s},{},{ov}", grid.time(i), y.at(i, s));
                }
            }
        }
    }
    out
}

fn finite_output(
    mode: Mode,
    report: FiniteReport,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
) -> Result<SolveOutput> {
    let strategy_value = match report.scale {
        Scale::Log => strategy::evaluate_rule_exact_log(&report.rule, model, menu, &report.lattice, report.criterion)?.exp(),
        _ => strategy::evaluate_rule_exact(&report.rule, model, menu, &report.lattice, report.criterion)?,
    };
    let fields = fields_csv(
        &model.grid,
        model.n_states(),
        report.fields.iter().map(|f| (f.level.to_string(), f)),
    );
    Ok(SolveOutput {
        summary: SolveSummary {
            mode,
            criterion: report.criterion.name().to_string(),
            value: report.value,
            stored_value: report.stored_value,
            log_space: report.scale == Scale::Log,
            max_impulses: report.max_impulses,
            level_values: report.level_values.clone(),
            strategy_value,
            diagnostics: report.diagnostics.clone(),
            infinite: None,
        },
        fields_csv: fields,
        strategy_csv: report.rule.to_csv(),
        rule: report.rule,
    })
}

/// Command-line overrides for a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveOverrides {
    /// Truncation tail target (`inf`).
    pub epsilon: Option<f64>,
    /// Largest admissible truncation horizon (`inf`).
    pub t_max: Option<f64>,
}

pub fn solve_model(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    mode: Mode,
    cfg: &ModelConfig,
    overrides: SolveOverrides,
) -> Result<SolveOutput> {
    match mode {
        Mode::Rn => {
            let depth = cfg.max_impulses.unwrap_or(model.grid.max_impulses());
            let report = lattice_rn::solve_with_depth(model, menu, depth)?;
            finite_output(mode, report, model, menu)
        }
        Mode::Rs => {
            let report = lattice_rs::rs_solve_with(model, menu, cfg.rs_options())?;
            finite_output(mode, report, model, menu)
        }
        Mode::Inf => {
            let mut options = cfg.infinite_options(None)?;
            apply_overrides(&mut options, overrides);
            solve_infinite(model, menu, &options)
        }
    }
}

fn apply_overrides(options: &mut InfiniteOptions, overrides: SolveOverrides) {
    if let Some(e) = overrides.epsilon {
        options.epsilon = e;
    }
    if let Some(t) = overrides.t_max {
        options.t_max = Some(t);
    }
}

pub fn solve_infinite(model: &MarkovLattice, menu: &ImpulseMenu, options: &InfiniteOptions) -> Result<SolveOutput> {
    let report = infinite_rn::inf_iterate(model, menu, options)?;
    let strategy_value = infinite_rn::inf_evaluate_strategy(&report.rule, &report.problem)?;
    let p = &report.problem;
    let fields = fields_csv(
        &p.model.grid,
        p.model.n_states(),
        [("0".to_string(), &report.level_zero), ("limit".to_string(), &report.limit)],
    );
    let cert = p.certificate;
    Ok(SolveOutput {
        summary: SolveSummary {
            mode: Mode::Inf,
            criterion: p.criterion().name().to_string(),
            value: report.value,
            stored_value: report.value,
            log_space: false,
            max_impulses: p.cap(),
            level_values: report.level_values.clone(),
            strategy_value,
            diagnostics: report.diagnostics.clone(),
            infinite: Some(InfiniteSummary {
                rate: p.rate,
                t_trunc: cert.t_trunc,
                tail_bound: cert.tail_bound,
                epsilon: cert.epsilon,
                epsilon_fix: options.epsilon_fix,
                gamma_bound: cert.gamma_bound,
                iterations: report.iterations,
                residuals: report.residuals.clone(),
                self_consistency: report.self_consistency,
                bound_excess: report.bound_excess,
            }),
        },
        fields_csv: fields,
        strategy_csv: report.rule.to_csv(),
        rule: report.rule,
    })
}

pub fn solve_config(cfg: &ModelConfig, mode: Mode, overrides: SolveOverrides) -> Result<SolveOutput> {
    let (model, menu) = cfg.build()?;
    solve_model(&model, &menu, mode, cfg, overrides)
}

impl SolveOutput {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.summary_json())?;
        std::fs::write(dir.join("fields.csv"), &self.fields_csv)?;
        std::fs::write(dir.join("strategy.csv"), &self.strategy_csv)?;
        Ok(())
    }
}

/// Re-reads a `strategy.csv` and evaluates it exactly on the finite model.
pub fn reevaluate_strategy_csv(
    text: &str,
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    mode: Mode,
    cfg: &ModelConfig,
) -> Result<f64> {
    let depth = match mode {
        Mode::Rn | Mode::Rs => cfg.max_impulses.unwrap_or(model.grid.max_impulses()),
        Mode::Inf => return Err(Error::Config("use inf_evaluate_strategy for the infinite horizon".into())),
    };
    let lattice = CumulativeLattice::new(menu, depth)?;
    let rule = StrategyRule::from_csv(text, model.grid, model.n_states(), lattice.len())?;
    match mode {
        Mode::Rn => strategy::evaluate_rule_exact(&rule, model, menu, &lattice, crate::model::Criterion::RiskNeutral),
        _ => lattice_rs::rs_evaluate_strategy_exact(&rule, model, menu, cfg.rs_options().theta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwingSummary {
    pub mode: &'static str,
    pub price: f64,
    pub rights: usize,
    pub level_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct SwingOutput {
    pub summary: SwingSummary,
    pub boundary_csv: String,
    pub fields_csv: String,
    pub strategy_csv: String,
}

pub fn price_swing_config(cfg: &SwingConfig) -> Result<SwingOutput> {
    let grid = cfg.grid()?;
    let report = swing::price_swing(grid, &cfg.contract)?;
    let fields = fields_csv(
        &grid,
        report.model.n_states(),
        report.solve.fields.iter().map(|f| (f.level.to_string(), f)),
    );
    Ok(SwingOutput {
        summary: SwingSummary {
            mode: "swing",
            price: report.price,
            rights: report.rights,
            level_values: report.solve.level_values.clone(),
            diagnostics: report.solve.diagnostics.clone(),
        },
        boundary_csv: report.exercise_boundary_csv(),
        fields_csv: fields,
        strategy_csv: report.solve.rule.to_csv(),
    })
}

impl SwingOutput {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.summary_json())?;
        std::fs::write(dir.join("boundary.csv"), &self.boundary_csv)?;
        std::fs::write(dir.join("fields.csv"), &self.fields_csv)?;
        std::fs::write(dir.join("strategy.csv"), &self.strategy_csv)?;
        Ok(())
    }
}

/// Contents of the `simulate` results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub value_insample: f64,
    pub stderr_insample: f64,
    pub value_oos: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub seeds: (u64, u64),
    pub n_paths: usize,
    pub basis: RegressionBasis,
    pub max_condition_number: f64,
    pub ridge_fits: usize,
    /// Exact value of the finite model the paths were drawn from.
    pub exact_value: f64,
    pub warnings: Vec<String>,
}

/// Regression Monte Carlo on paths of a finite model: fit on `n_paths`
/// paths from `seed`, evaluate on `n_paths` fresh paths from `seed + 1`.
pub fn simulate_model(
    model: &MarkovLattice,
    menu: &ImpulseMenu,
    max_impulses: Option<usize>,
    n_paths: usize,
    seed: u64,
    basis: RegressionBasis,
) -> Result<SimulationSummary> {
    let depth = max_impulses.unwrap_or(model.grid.max_impulses());
    let exact = lattice_rn::solve_with_depth(model, menu, depth)?.value;
    let spec = PathSpec::Markov(Box::new(model.clone()));
    let fresh_seed = seed.wrapping_add(1);
    let fit = lsmc::simulate_paths(&spec, model.grid, n_paths, seed, false)?;
    let fresh = lsmc::simulate_paths(&spec, model.grid, n_paths, fresh_seed, false)?;
    let options = LsmcOptions {
        basis,
        max_impulses: Some(depth),
        ..LsmcOptions::default()
    };
    let report = lsmc::lsmc_solve(&fit, menu, &model.reward, &options)?;
    let oos = lsmc::simulate_strategy_payoff(&report.rule, &fresh)?;
    Ok(SimulationSummary {
        value_insample: report.value_insample,
        stderr_insample: report.stderr_insample,
        value_oos: oos.mean,
        stderr: oos.stderr,
        ci95: oos.ci95,
        seeds: (seed, fresh_seed),
        n_paths,
        basis,
        max_condition_number: report.max_condition_number,
        ridge_fits: report.ridge_fits,
        exact_value: exact,
        warnings: oos.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    const D1: &str = r#"{"schema": 1, "grid": {"T": 1.0, "delta": 0.4, "dt": 0.1},
        "states": [[0.0]], "kernels": [[[1.0]]],
        "menu": {"items": [[1.0]], "costs": [0.1]},
        "reward": {"kind": "linear_level", "params": [1.0]},
        "infinite": {"rate": 1.0}}"#;

    #[test]
    fn d1_modes() {
        let cfg = ModelConfig::from_json(D1).unwrap();
        let rn = solve_config(&cfg, Mode::Rn, SolveOverrides::default()).unwrap();
        assert!((rn.summary.value - 0.6).abs() < 1e-12);
        assert!((rn.summary.strategy_value - 0.6).abs() < 1e-12);
        let rs = solve_config(&cfg, Mode::Rs, SolveOverrides::default()).unwrap();
        assert!((rs.summary.value - 0.6f64.exp()).abs() < 1e-12);
        let json: serde_json::Value = serde_json::from_str(&rs.summary_json()).unwrap();
        assert_eq!(json["mode"], "rs");
        assert_eq!(json["log_space"], false);
    }

    #[test]
    fn d2_infinite_summary() {
        let (model, menu) = fixtures::d2();
        let out = solve_infinite(&model, &menu, &InfiniteOptions::new(fixtures::D2_RATE)).unwrap();
        let inf = out.summary.infinite.as_ref().unwrap();
        assert!((out.summary.value - fixtures::d2_value()).abs() <= 1e-8 + 2.0 * inf.tail_bound);
        assert!(out.fields_csv.lines().nth(1).unwrap().starts_with("0,0,0,0,0,"));
        let json: serde_json::Value = serde_json::from_str(&out.summary_json()).unwrap();
        assert!(json["infinite"]["T_trunc"].as_f64().unwrap() > 13.0);
    }

    #[test]
    fn t_max_is_enforced() {
        let cfg = ModelConfig::from_json(D1).unwrap();
        let over = SolveOverrides {
            t_max: Some(5.0),
            ..SolveOverrides::default()
        };
        assert!(matches!(solve_config(&cfg, Mode::Inf, over), Err(Error::TooLarge(_))));
    }

    #[test]
    fn strategy_csv_round_trip() {
        let cfg = ModelConfig::from_json(D1).unwrap();
        let (model, menu) = cfg.build().unwrap();
        for mode in [Mode::Rn, Mode::Rs] {
            let out = solve_model(&model, &menu, mode, &cfg, SolveOverrides::default()).unwrap();
            let v = reevaluate_strategy_csv(&out.strategy_csv, &model, &menu, mode, &cfg).unwrap();
            assert!((v - out.summary.value).abs() < 1e-10);
        }
    }
}
