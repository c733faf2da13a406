//! Least-squares projection on polynomial path features.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Reward, TimeGrid};

use super::paths::PathEnsemble;

/// Features at index `i`: a constant, powers `1..=degree` of every
/// standardized coordinate of the current state and, optionally, the
/// running reward integral up to `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
    pub running_reward: bool,
    /// Ridge added to the normal equations, relative to their largest
    /// eigenvalue, when the design is singular or worse conditioned than
    /// `max_condition`.
    pub ridge: f64,
    pub max_condition: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 2,
            running_reward: false,
            ridge: 1e-10,
            max_condition: 1e12,
        }
    }
}

impl RegressionBasis {
    pub fn with_degree(degree: usize) -> Self {
        RegressionBasis {
            degree,
            ..RegressionBasis::default()
        }
    }

    /// Number of features before constant columns are dropped.
    pub fn size(&self, dim: usize) -> usize {
        1 + dim * self.degree + usize::from(self.running_reward)
    }

    /// Raw inputs at the last point of `prefix` (flattened, `dim` per point):
    /// the state coordinates, then the running reward.
    pub fn inputs(&self, grid: &TimeGrid, reward: &Reward, dim: usize, prefix: &[f64]) -> Vec<f64> {
        let n = prefix.len() / dim;
        let mut x = prefix[(n - 1) * dim..].to_vec();
        if self.running_reward {
            let mut acc = 0.0;
            for j in 0..n - 1 {
                let p = &prefix[j * dim..(j + 1) * dim];
                acc += reward.at_point(grid.time(j), p).unwrap_or(0.0) * grid.dt;
            }
            x.push(acc);
        }
        x
    }
}

/// Standardization of the raw inputs at one index. Inputs with no spread
/// are dropped; the constant column absorbs them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub degree: usize,
    /// `(input index, mean, std)` for every kept input.
    pub kept: Vec<(usize, f64, f64)>,
}

impl FeatureScaling {
    pub fn fit(inputs: &[Vec<f64>], degree: usize) -> Self {
        let m = inputs.len() as f64;
        let width = inputs.first().map_or(0, Vec::len);
        let mut kept = Vec::new();
        for k in 0..width {
            let mean = inputs.iter().map(|x| x[k]).sum::<f64>() / m;
            let var = inputs.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / m;
            let std = var.sqrt();
            if std > 1e-12 * (1.0 + mean.abs()) {
                kept.push((k, mean, std));
            }
        }
        FeatureScaling { degree, kept }
    }

    pub fn width(&self) -> usize {
        1 + self.kept.len() * self.degree
    }

    pub fn features(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        for &(k, mean, std) in &self.kept {
            let z = (input[k] - mean) / std;
            let mut p = 1.0;
            for _ in 0..self.degree {
                p *= z;
                out.push(p);
            }
        }
    }
}

/// Projection onto the span of the features at one index of an ensemble.
#[derive(Debug, Clone)]
pub struct Projector {
    pub scaling: FeatureScaling,
    design: DMatrix<f64>,
    factor: Cholesky<f64, nalgebra::Dyn>,
    pub condition_number: f64,
    pub ridge_used: bool,
}

impl Projector {
    pub fn new(inputs: &[Vec<f64>], basis: &RegressionBasis) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::BadSpec("regression needs at least one path".into()));
        }
        let scaling = FeatureScaling::fit(inputs, basis.degree);
        let b = scaling.width();
        let m = inputs.len();
        let mut design = DMatrix::zeros(m, b);
        let mut row = Vec::with_capacity(b);
        for (r, x) in inputs.iter().enumerate() {
            scaling.features(x, &mut row);
            for (c, v) in row.iter().enumerate() {
                design[(r, c)] = *v;
            }
        }
        let gram = design.tr_mul(&design) / m as f64;
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let plain = if condition_number <= basis.max_condition {
            Cholesky::new(gram.clone())
        } else {
            None
        };
        let (factor, ridge_used) = match plain {
            Some(f) => (f, false),
            None => {
                let ridged = gram + DMatrix::identity(b, b) * (basis.ridge * hi.max(1.0));
                let f = Cholesky::new(ridged).ok_or_else(|| {
                    Error::BadSpec("regression design is singular even with ridge".into())
                })?;
                (f, true)
            }
        };
        Ok(Projector {
            scaling,
            design,
            factor,
            condition_number,
            ridge_used,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.design.nrows()
    }

    pub fn fit(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.len() != self.n_paths() {
            return Err(Error::BadSpec("one target per path is required".into()));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadSpec("regression targets must be finite".into()));
        }
        let y = DVector::from_column_slice(targets);
        let rhs = self.design.tr_mul(&y) / self.n_paths() as f64;
        Ok(self.factor.solve(&rhs).iter().copied().collect())
    }

    /// Fitted values on the paths the projector was built from.
    pub fn predict_in_sample(&self, coefs: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(coefs);
        (&self.design * c).iter().copied().collect()
    }

    /// Fitted value on path `m` of the building ensemble.
    pub fn predict_path(&self, m: usize, coefs: &[f64]) -> f64 {
        coefs
            .iter()
            .enumerate()
            .map(|(c, w)| w * self.design[(m, c)])
            .sum()
    }
}

pub fn predict(scaling: &FeatureScaling, input: &[f64], coefs: &[f64]) -> f64 {
    let mut row = Vec::with_capacity(coefs.len());
    scaling.features(input, &mut row);
    row.iter().zip(coefs).map(|(a, b)| a * b).sum()
}

/// A fitted conditional expectation at one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub index: usize,
    pub basis: RegressionBasis,
    pub scaling: FeatureScaling,
    pub coefs: Vec<f64>,
    pub condition_number: f64,
    pub ridge_used: bool,
}

impl Predictor {
    /// Prediction from a path prefix `x_0..=x_i` (flattened).
    pub fn predict(&self, grid: &TimeGrid, reward: &Reward, dim: usize, prefix: &[f64]) -> f64 {
        predict(&self.scaling, &self.basis.inputs(grid, reward, dim, prefix), &self.coefs)
    }
}

/// Inputs at index `i` for every path.
pub fn ensemble_inputs(ensemble: &PathEnsemble, basis: &RegressionBasis, reward: &Reward, i: usize) -> Vec<Vec<f64>> {
    (0..ensemble.n_paths)
        .map(|m| basis.inputs(&ensemble.grid, reward, ensemble.dim, ensemble.prefix(m, i)))
        .collect()
}

/// Regresses `targets` (one per path) on the features at index `i`.
pub fn fit_conditional_expectation(
    ensemble: &PathEnsemble,
    targets: &[f64],
    basis: &RegressionBasis,
    reward: &Reward,
    i: usize,
) -> Result<Predictor> {
    if i > ensemble.grid.steps {
        return Err(Error::BadSpec(format!("index {i} is past the horizon")));
    }
    let proj = Projector::new(&ensemble_inputs(ensemble, basis, reward, i), basis)?;
    let coefs = proj.fit(targets)?;
    Ok(Predictor {
        index: i,
        basis: *basis,
        scaling: proj.scaling.clone(),
        coefs,
        condition_number: proj.condition_number,
        ridge_used: proj.ridge_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsmc::paths::{simulate_paths, PathSpec};

    fn ensemble() -> PathEnsemble {
        let spec = PathSpec::Gbm {
            x0: vec![1.0],
            coord: 0,
            mu: 0.0,
            sigma: 0.3,
        };
        simulate_paths(&spec, TimeGrid::new(1.0, 0.25, 0.125).unwrap(), 2000, 5, false).unwrap()
    }

    #[test]
    fn constant_targets() {
        let e = ensemble();
        let basis = RegressionBasis::default();
        let p = fit_conditional_expectation(&e, &vec![3.5; 2000], &basis, &Reward::Constant(0.0), 4).unwrap();
        for m in [0, 17, 1999] {
            let v = p.predict(&e.grid, &Reward::Constant(0.0), 1, e.prefix(m, 4));
            assert!((v - 3.5).abs() < 1e-10);
        }
        // at i = 0 every path starts at the same point: only the intercept remains
        let p0 = fit_conditional_expectation(&e, &vec![1.25; 2000], &basis, &Reward::Constant(0.0), 0).unwrap();
        assert_eq!(p0.coefs.len(), 1);
        assert!((p0.coefs[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn in_span_targets_are_recovered() {
        let e = ensemble();
        let basis = RegressionBasis::default();
        let targets: Vec<f64> = (0..2000)
            .map(|m| {
                let x = e.point(m, 5)[0];
                2.0 - 0.5 * x + 0.75 * x * x
            })
            .collect();
        let p = fit_conditional_expectation(&e, &targets, &basis, &Reward::Constant(0.0), 5).unwrap();
        assert!(!p.ridge_used);
        for m in 0..2000 {
            let v = p.predict(&e.grid, &Reward::Constant(0.0), 1, e.prefix(m, 5));
            assert!((v - targets[m]).abs() < 1e-10, "{v} vs {}", targets[m]);
        }
    }

    #[test]
    fn singular_design_falls_back_to_ridge() {
        let grid = TimeGrid::new(1.0, 0.25, 0.125).unwrap();
        // two distinct values: x and x^2 are collinear after centering
        let data: Vec<f64> = (0..100)
            .flat_map(|m| std::iter::repeat_n(if m % 2 == 0 { 1.0 } else { 2.0 }, 9))
            .collect();
        let e = PathEnsemble::from_data(grid, 100, 1, 0, data).unwrap();
        let targets: Vec<f64> = (0..100).map(|m| if m % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let p = fit_conditional_expectation(&e, &targets, &RegressionBasis::default(), &Reward::Constant(0.0), 3)
            .unwrap();
        assert!(p.ridge_used);
        let v = p.predict(&grid, &Reward::Constant(0.0), 1, e.prefix(1, 3));
        assert!((v - 3.0).abs() < 1e-6);
    }

    #[test]
    fn running_reward_input_uses_prefix_only() {
        let e = ensemble();
        let basis = RegressionBasis {
            running_reward: true,
            ..RegressionBasis::default()
        };
        let reward = Reward::LinearLevel(vec![1.0]);
        let x = basis.inputs(&e.grid, &reward, 1, e.prefix(3, 4));
        let expect: f64 = (0..4).map(|j| e.point(3, j)[0] * 0.125).sum();
        assert!((x[1] - expect).abs() < 1e-15);
    }
}
