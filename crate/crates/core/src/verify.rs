//! Verification checks run by `delay-impulse verify` and the acceptance
//! tests. Each check is numbered by the acceptance criterion it covers.
//!
//! Suites: `oracle` (1, 2, 3, 7, 10), `invariants` (4, 5, 6, 8) and `mc` (9).

use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::infinite_rn::{self, FixedPointReport, InfiniteOptions};
use crate::lattice_rn::{self, FiniteReport};
use crate::lattice_rs;
use crate::lsmc::{self, LsmcOptions, PathSpec, RegressionBasis};
use crate::model::{Criterion, ImpulseMenu, InitialCondition, Kernel, MarkovLattice, Reward, TimeGrid};
use crate::oracle;
use crate::scheme::Scale;
use crate::strategy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy (criterion specific).
    pub measured: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {:<28} measured {:.3e} tol {:.1e} ({:.2} s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.measured,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Oracle,
    Invariants,
    Mc,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Suite::Oracle),
            "invariants" => Ok(Suite::Invariants),
            "mc" => Ok(Suite::Mc),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; use oracle, invariants or mc"
            ))),
        }
    }
}

fn finish(criterion: u8, name: &str, start: Instant, measured: f64, tolerance: f64, ok: bool, detail: String) -> CheckResult {
    CheckResult {
        criterion,
        name: name.to_string(),
        passed: ok && !measured.is_nan(),
        measured,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
        detail,
    }
}

fn failed(criterion: u8, name: &str, start: Instant, e: Error) -> CheckResult {
    CheckResult {
        criterion,
        name: name.to_string(),
        passed: false,
        measured: f64::NAN,
        tolerance: f64::NAN,
        seconds: start.elapsed().as_secs_f64(),
        detail: format!("error: {e}"),
    }
}

fn run(criterion: u8, name: &str, tolerance: f64, body: impl FnOnce() -> Result<(f64, bool, String)>) -> CheckResult {
    let start = Instant::now();
    match body() {
        Ok((measured, ok, detail)) => finish(criterion, name, start, measured, tolerance, ok && measured <= tolerance, detail),
        Err(e) => failed(criterion, name, start, e),
    }
}

/// Seeds of the `r3` family used by criteria 1 and 2: the base instance
/// and 20 variants, shifted by `seed`.
pub fn r3_seeds(seed: u64) -> std::ops::Range<u64> {
    seed..seed + 21
}

/// 1: risk-neutral lattice value equals the history-tree oracle.
pub fn oracle_equivalence_rn(seed: u64) -> CheckResult {
    run(1, "oracle equivalence (rn)", 1e-10, || {
        let mut worst: f64 = 0.0;
        for s in r3_seeds(seed) {
            let (m, menu) = fixtures::r3(s);
            let v = lattice_rn::solve(&m, &menu)?.value;
            let o = oracle::brute_force_tree_value(&m, &menu, Criterion::RiskNeutral, None)?;
            worst = worst.max((v - o).abs());
        }
        Ok((worst, true, format!("{} instances", r3_seeds(seed).count())))
    })
}

/// 2: risk-sensitive lattice value equals the oracle (relative error).
pub fn oracle_equivalence_rs(seed: u64) -> CheckResult {
    run(2, "oracle equivalence (rs)", 1e-10, || {
        let mut worst: f64 = 0.0;
        for s in r3_seeds(seed) {
            let (m, menu) = fixtures::r3(s);
            let v = lattice_rs::rs_solve(&m, &menu)?.value;
            let o = oracle::brute_force_tree_value(&m, &menu, Criterion::RiskSensitive { theta: 1.0 }, None)?;
            worst = worst.max(((v - o) / o).abs());
        }
        Ok((worst, true, format!("{} instances", r3_seeds(seed).count())))
    })
}

/// 3: closed forms on the deterministic fixtures. `measured` is the worst
/// error relative to each tolerance (pass when at most 1).
pub fn closed_forms() -> CheckResult {
    run(3, "deterministic closed forms", 1.0, || {
        let (m, menu) = fixtures::d1();
        let rn = (lattice_rn::solve(&m, &menu)?.value - 0.6).abs();
        let rs = (lattice_rs::rs_solve(&m, &menu)?.value - 0.6f64.exp()).abs();
        let (m2, menu2) = fixtures::d2();
        let options = InfiniteOptions::new(fixtures::D2_RATE);
        let inf = infinite_rn::inf_iterate(&m2, &menu2, &options)?;
        let tol = options.epsilon_fix + 2.0 * inf.problem.certificate.tail_bound;
        let d2 = (inf.value - fixtures::d2_value()).abs();
        let ratio = (rn / 1e-12).max(rs / 1e-12).max(d2 / tol);
        Ok((
            ratio,
            true,
            format!("d1 rn {rn:.1e}, d1 rs {rs:.1e}, d2 {d2:.1e} (tol {tol:.1e})"),
        ))
    })
}

fn finite_reports(m: &MarkovLattice, menu: &ImpulseMenu) -> Result<[FiniteReport; 2]> {
    Ok([lattice_rn::solve(m, menu)?, lattice_rs::rs_solve(m, menu)?])
}

fn infinite_fixtures() -> Vec<(String, MarkovLattice, ImpulseMenu)> {
    let (m, menu) = fixtures::d2();
    let mut out = vec![("d2".to_string(), m, menu)];
    for seed in 0..3 {
        let (m, menu) = fixtures::r3_infinite(seed);
        out.push((format!("r3_infinite[{seed}]"), m, menu));
    }
    out
}

fn infinite_options(name: &str) -> InfiniteOptions {
    let rate = if name == "d2" { fixtures::D2_RATE } else { 1.0 };
    InfiniteOptions::new(rate)
}

/// 4: `Y^n = O^n` on `i >= N - d` for every fixture, level and mode.
pub fn restriction_identity() -> CheckResult {
    run(4, "restriction identity", 1e-12, || {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (_, m, menu) in fixtures::finite_fixtures() {
            for r in finite_reports(&m, &menu)? {
                worst = r.diagnostics.restriction_gap.iter().fold(worst, |w, &g| w.max(g));
                count += 1;
            }
        }
        for (name, m, menu) in infinite_fixtures() {
            let r = infinite_rn::inf_iterate(&m, &menu, &infinite_options(&name))?;
            worst = r.diagnostics.restriction_gap.iter().fold(worst, |w, &g| w.max(g));
            count += 1;
        }
        Ok((worst, true, format!("{count} solves")))
    })
}

/// 5: `Y^n_N` is exactly 0 (risk-neutral) or 1 (risk-sensitive).
pub fn terminal_conditions() -> CheckResult {
    run(5, "terminal conditions", 0.0, || {
        let mut worst: f64 = 0.0;
        for (_, m, menu) in fixtures::finite_fixtures() {
            let [rn, rs] = finite_reports(&m, &menu)?;
            for (r, terminal) in [(&rn, 0.0), (&rs, 1.0)] {
                for f in &r.fields {
                    for y in f.y.iter().flatten() {
                        for &v in y.row(m.grid.steps) {
                            let natural = if r.scale == Scale::Log { v.exp() } else { v };
                            worst = worst.max((natural - terminal).abs());
                        }
                    }
                }
            }
        }
        Ok((worst, true, String::new()))
    })
}

/// 6: exact payoff of the extracted rule equals the solver value
/// (relative error for the risk-sensitive criterion).
pub fn strategy_identity() -> CheckResult {
    run(6, "strategy identity", 1e-10, || {
        let mut worst: f64 = 0.0;
        for (_, m, menu) in fixtures::finite_fixtures() {
            let [rn, rs] = finite_reports(&m, &menu)?;
            let rule = lattice_rn::extract_strategy(&rn, &m, &menu)?;
            let v = lattice_rn::evaluate_strategy_exact(&rule, &m, &menu)?;
            worst = worst.max((v - rn.value).abs());
            let rule = lattice_rs::rs_extract_strategy(&rs, &m, &menu)?;
            let v = lattice_rs::rs_evaluate_strategy_exact(&rule, &m, &menu, 1.0)?;
            worst = worst.max(((v - rs.value) / rs.value).abs());
        }
        Ok((worst, true, String::new()))
    })
}

pub const DOMINANCE_RULES: u64 = 100;

/// 7: no random admissible rule beats the solver value.
pub fn dominance(seed: u64) -> CheckResult {
    run(7, "dominance", 1e-10, || {
        let mut worst = f64::NEG_INFINITY;
        let mut count = 0;
        for (_, m, menu) in fixtures::finite_fixtures() {
            let [rn, rs] = finite_reports(&m, &menu)?;
            let levels = m.grid.max_impulses();
            for k in 0..DOMINANCE_RULES {
                let rule = oracle::random_admissible_strategy(&m, &menu, levels, seed.wrapping_mul(1000) + k)?;
                let v = strategy::evaluate_rule_exact(&rule, &m, &menu, &rn.lattice, Criterion::RiskNeutral)?;
                worst = worst.max(v - rn.value);
                let v = lattice_rs::rs_evaluate_strategy_exact(&rule, &m, &menu, 1.0)?;
                worst = worst.max((v - rs.value) / rs.value);
                count += 2;
            }
        }
        Ok((worst, true, format!("{count} rule evaluations; measured is the largest excess")))
    })
}

fn limit_below_level_zero(r: &FixedPointReport) -> f64 {
    let mut worst: f64 = 0.0;
    for (y, y0) in r.limit.y.iter().zip(&r.level_zero.y) {
        if let (Some(y), Some(y0)) = (y, y0) {
            for (a, b) in y.values().iter().zip(y0.values()) {
                worst = worst.max(b - a);
            }
        }
    }
    worst
}

/// 8: monotone iteration, sandwich between `Y^0` and the bound field, and
/// stability under doubling the truncation horizon. `measured` is the worst
/// violation relative to its tolerance.
pub fn infinite_horizon() -> CheckResult {
    run(8, "infinite-horizon sandwich", 1.0, || {
        let mut ratio: f64 = 0.0;
        let mut shifts = Vec::new();
        for (name, m, menu) in infinite_fixtures() {
            let options = infinite_options(&name);
            let r = infinite_rn::inf_iterate(&m, &menu, &options)?;
            let mono = r.diagnostics.monotonicity_residual.iter().fold(0.0f64, |w, &v| w.max(v));
            ratio = ratio.max(mono / 1e-12);
            ratio = ratio.max(limit_below_level_zero(&r) / 1e-12);
            ratio = ratio.max(r.bound_excess / 1e-12);
            let cert = r.problem.certificate;
            let doubled = InfiniteOptions {
                t_min: Some(2.0 * cert.t_trunc),
                ..options
            };
            let r2 = infinite_rn::inf_iterate(&m, &menu, &doubled)?;
            let shift = (r2.value - r.value).abs();
            ratio = ratio.max(shift / (2.0 * cert.tail_bound));
            shifts.push(format!("{name} {shift:.1e}/{:.1e}", 2.0 * cert.tail_bound));
        }
        Ok((ratio, true, format!("doubling shifts: {}", shifts.join(", "))))
    })
}

pub const MC_PATHS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McOutcome {
    pub exact: f64,
    pub insample: f64,
    pub insample_stderr: f64,
    pub oos: f64,
    pub oos_stderr: f64,
}

/// Regression Monte Carlo on the swing fixture with paths drawn from its
/// binomial chain: `paths` fitting paths from `seed`, as many fresh ones
/// from `seed + 1`.
pub fn lsmc_swing(paths: usize, seed: u64) -> Result<McOutcome> {
    let grid = fixtures::swing_grid();
    let contract = fixtures::swing_contract();
    let report = crate::swing::price_swing(grid, &contract)?;
    let spec = PathSpec::Markov(Box::new(report.model.clone()));
    let fit = lsmc::simulate_paths(&spec, grid, paths, seed, false)?;
    let fresh = lsmc::simulate_paths(&spec, grid, paths, seed.wrapping_add(1), false)?;
    let options = LsmcOptions {
        basis: RegressionBasis::default(),
        criterion: Criterion::RiskNeutral,
        max_impulses: Some(report.rights),
    };
    let solved = lsmc::lsmc_solve(&fit, &report.menu, &report.model.reward, &options)?;
    let oos = lsmc::simulate_strategy_payoff(&solved.rule, &fresh)?;
    Ok(McOutcome {
        exact: report.price,
        insample: solved.value_insample,
        insample_stderr: solved.stderr_insample,
        oos: oos.mean,
        oos_stderr: oos.stderr,
    })
}

/// 9: in-sample and out-of-sample values within 3 standard errors of the
/// exact lattice price, and out-of-sample not above it by more than that.
/// `measured` is the largest deviation in standard errors.
pub fn lsmc_consistency(seed: u64) -> CheckResult {
    run(9, "lsmc consistency", 3.0, || {
        let o = lsmc_swing(MC_PATHS, 0x4c53_0000 + 2 * seed)?;
        let z_in = (o.insample - o.exact).abs() / o.insample_stderr;
        let z_oos = (o.oos - o.exact).abs() / o.oos_stderr;
        let above = (o.oos - o.exact) / o.oos_stderr;
        Ok((
            z_in.max(z_oos).max(above),
            true,
            format!(
                "exact {:.6}, in-sample {:.6} +- {:.1e}, out-of-sample {:.6} +- {:.1e}",
                o.exact, o.insample, o.insample_stderr, o.oos, o.oos_stderr
            ),
        ))
    })
}

/// Grids of criterion 10 with their expected impulse counts.
pub const COUNT_CASES: [(f64, f64, usize); 3] = [(1.0, 0.4, 2), (1.0, 0.5, 2), (1.0, 0.3, 3)];

/// 10: `floor(T / delta)` impulses are allowed, and no admissible schedule
/// on the grid executes one more. `measured` counts mismatches.
pub fn impulse_count() -> CheckResult {
    run(10, "impulse count", 0.0, || {
        let mut mismatches = 0usize;
        let mut detail = Vec::new();
        for (t, delta, expect) in COUNT_CASES {
            let grid = TimeGrid::new(t, delta, 0.1)?;
            // every impulse is worth more than its cost
            let m = MarkovLattice::new(grid, vec![vec![0.0]], vec![Kernel::identity(1)], Reward::LinearLevel(vec![1.0]))?
                .with_initial(InitialCondition::State(0))?;
            let menu = ImpulseMenu::new(vec![vec![1.0]], vec![0.0])?;
            let report = lattice_rn::solve(&m, &menu)?;
            let deeper = lattice_rn::solve_with_depth(&m, &menu, expect + 1)?;
            let executable = oracle::max_executable_impulses(&grid);
            if grid.max_impulses() != expect
                || report.max_impulses != expect
                || report.level_values.len() != expect + 1
                || executable != expect
                || deeper.value != report.value
            {
                mismatches += 1;
            }
            detail.push(format!(
                "(T={t}, delta={delta}): allowed {}, executable {executable}",
                report.max_impulses
            ));
        }
        Ok((mismatches as f64, true, detail.join("; ")))
    })
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    match suite {
        Suite::Oracle => vec![
            oracle_equivalence_rn(seed),
            oracle_equivalence_rs(seed),
            closed_forms(),
            dominance(seed),
            impulse_count(),
        ],
        Suite::Invariants => vec![
            restriction_identity(),
            terminal_conditions(),
            strategy_identity(),
            infinite_horizon(),
        ],
        Suite::Mc => vec![lsmc_consistency(seed)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("mc".parse::<Suite>().unwrap(), Suite::Mc);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn failing_body_is_reported() {
        let r = run(1, "x", 1.0, || Err(Error::Config("boom".into())));
        assert!(!r.passed);
        assert!(r.line().starts_with("FAIL"));
        let r = run(1, "x", 1.0, || Ok((2.0, true, String::new())));
        assert!(!r.passed);
        let r = run(1, "x", 1.0, || Ok((0.5, true, String::new())));
        assert!(r.passed);
    }

    #[test]
    fn small_lsmc_run_is_close() {
        let o = lsmc_swing(20_000, 3).unwrap();
        assert!((o.insample - o.exact).abs() < 5.0 * o.insample_stderr);
    }
}
