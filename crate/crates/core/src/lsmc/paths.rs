//! Seeded path ensembles of the uncontrolled process.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MarkovLattice, TimeGrid};

pub type CoefficientFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// How paths are produced.
#[derive(Clone)]
pub enum PathSpec {
    /// Every path stays at `x0`.
    Constant { x0: Vec<f64> },
    /// Geometric Brownian motion on coordinate `coord` (exact log scheme);
    /// other coordinates stay at their `x0` value.
    Gbm {
        x0: Vec<f64>,
        coord: usize,
        mu: f64,
        sigma: f64,
    },
    /// Euler scheme for `dX = b(t, X) dt + sigma(t, X) dB` with diagonal
    /// noise.
    Ito {
        x0: Vec<f64>,
        drift: CoefficientFn,
        vol: CoefficientFn,
    },
    /// Sampled from a finite-state model; the path records state vectors.
    Markov(Box<MarkovLattice>),
    /// Given paths, `paths[m][i]` the state at index `i`.
    Replay(Vec<Vec<Vec<f64>>>),
}

impl fmt::Debug for PathSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathSpec::Constant { x0 } => f.debug_struct("Constant").field("x0", x0).finish(),
            PathSpec::Gbm { x0, coord, mu, sigma } => f
                .debug_struct("Gbm")
                .field("x0", x0)
                .field("coord", coord)
                .field("mu", mu)
                .field("sigma", sigma)
                .finish(),
            PathSpec::Ito { x0, .. } => f.debug_struct("Ito").field("x0", x0).finish(),
            PathSpec::Markov(m) => write!(f, "Markov({} states)", m.n_states()),
            PathSpec::Replay(p) => write!(f, "Replay({} paths)", p.len()),
        }
    }
}

impl PathSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PathSpec::Constant { .. } => "constant",
            PathSpec::Gbm { .. } => "gbm",
            PathSpec::Ito { .. } => "ito",
            PathSpec::Markov(_) => "markov",
            PathSpec::Replay(_) => "replay",
        }
    }
}

/// `M` paths on `N + 1` grid points in dimension `l`, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim: usize,
    pub seed: u64,
    pub antithetic: bool,
    data: Vec<f64>,
}

impl PathEnsemble {
    /// Wraps replayed paths laid out path-major, then time, then coordinate.
    /// Features only read indices up to the current one, but whether the
    /// replayed values are themselves adapted is up to the caller.
    pub fn from_data(grid: TimeGrid, n_paths: usize, dim: usize, seed: u64, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_paths * (grid.steps + 1) * dim {
            return Err(Error::BadSpec(format!(
                "expected {} values, got {}",
                n_paths * (grid.steps + 1) * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadSpec("path values must be finite".into()));
        }
        Ok(PathEnsemble {
            grid,
            n_paths,
            dim,
            seed,
            antithetic: false,
            data,
        })
    }

    fn stride(&self) -> usize {
        (self.grid.steps + 1) * self.dim
    }

    /// All points of path `m`, flattened `[i * dim + k]`.
    pub fn path(&self, m: usize) -> &[f64] {
        &self.data[m * self.stride()..(m + 1) * self.stride()]
    }

    pub fn point(&self, m: usize, i: usize) -> &[f64] {
        let start = m * self.stride() + i * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Points `0..=i` of path `m`.
    pub fn prefix(&self, m: usize, i: usize) -> &[f64] {
        &self.path(m)[..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// `path_id,i,x_1,...,x_l` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path_id,i");
        for k in 0..self.dim {
            let _ = write!(out, ",x_{}", k + 1);
        }
        out.push('\n');
        for m in 0..self.n_paths {
            for i in 0..=self.grid.steps {
                let _ = write!(out, "{m},{i}");
                for v in self.point(m, i) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str, grid: TimeGrid) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::BadSpec("empty path file".into()))?;
        let dim = header.split(',').count().saturating_sub(2);
        if dim == 0 {
            return Err(Error::BadSpec("path file needs at least one coordinate".into()));
        }
        let mut paths: Vec<Vec<Vec<f64>>> = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::BadSpec(format!("path file line {}: {msg}", ln + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != dim + 2 {
                return Err(bad("wrong column count"));
            }
            let m: usize = cols[0].trim().parse().map_err(|_| bad("bad path id"))?;
            let i: usize = cols[1].trim().parse().map_err(|_| bad("bad index"))?;
            let x = cols[2..]
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<Vec<f64>>>()?;
            if m != paths.len() && m + 1 != paths.len() {
                return Err(bad("paths must be listed in order"));
            }
            if m == paths.len() {
                paths.push(Vec::new());
            }
            if i != paths[m].len() {
                return Err(bad("indices must be listed in order"));
            }
            paths[m].push(x);
        }
        replay(grid, paths, 0)
    }
}

fn replay(grid: TimeGrid, paths: Vec<Vec<Vec<f64>>>, seed: u64) -> Result<PathEnsemble> {
    let dim = paths
        .first()
        .and_then(|p| p.first())
        .map(Vec::len)
        .ok_or_else(|| Error::BadSpec("no paths".into()))?;
    let mut data = Vec::with_capacity(paths.len() * (grid.steps + 1) * dim);
    for (m, p) in paths.iter().enumerate() {
        if p.len() != grid.steps + 1 {
            return Err(Error::BadSpec(format!(
                "path {m} has {} points, grid needs {}",
                p.len(),
                grid.steps + 1
            )));
        }
        for x in p {
            if x.len() != dim {
                return Err(Error::BadSpec(format!("path {m} has mixed dimensions")));
            }
            data.extend_from_slice(x);
        }
    }
    PathEnsemble::from_data(grid, paths.len(), dim, seed, data)
}

/// Random stream of path `m`: antithetic pairs share a stream.
fn stream(seed: u64, m: usize, antithetic: bool) -> (ChaCha8Rng, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (index, sign) = if antithetic {
        (m / 2, if m % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (m, 1.0)
    };
    rng.set_stream(index as u64);
    (rng, sign)
}

/// Simulates `n_paths` paths on `grid`. Path `m` depends only on
/// `(seed, m)`, so results are identical for any thread count.
pub fn simulate_paths(
    spec: &PathSpec,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::BadSpec("need at least one path".into()));
    }
    let steps = grid.steps;
    let dt = grid.dt;
    let (dim, fill): (usize, Box<dyn Fn(usize, &mut [f64]) -> Result<()> + Sync>) = match spec {
        PathSpec::Replay(paths) => {
            let mut e = replay(grid, paths.clone(), seed)?;
            if e.n_paths != n_paths {
                return Err(Error::BadSpec(format!(
                    "replay holds {} paths, {n_paths} requested",
                    e.n_paths
                )));
            }
            e.antithetic = false;
            return Ok(e);
        }
        PathSpec::Constant { x0 } => (
            x0.len(),
            Box::new(move |_, out: &mut [f64]| {
                for chunk in out.chunks_mut(x0.len()) {
                    chunk.copy_from_slice(x0);
                }
                Ok(())
            }),
        ),
        PathSpec::Gbm { x0, coord, mu, sigma } => {
            if *coord >= x0.len() || !(*sigma >= 0.0) || x0[*coord] <= 0.0 {
                return Err(Error::BadSpec(
                    "gbm needs a positive start, sigma >= 0 and a valid coordinate".into(),
                ));
            }
            let (coord, mu, sigma) = (*coord, *mu, *sigma);
            let l = x0.len();
            (
                l,
                Box::new(move |m, out: &mut [f64]| {
                    let (mut rng, sign) = stream(seed, m, antithetic);
                    out[..l].copy_from_slice(x0);
                    let drift = (mu - 0.5 * sigma * sigma) * dt;
                    let scale = sigma * dt.sqrt();
                    for i in 1..=steps {
                        let z: f64 = rng.sample(StandardNormal);
                        let (prev, cur) = out.split_at_mut(i * l);
                        cur[..l].copy_from_slice(&prev[(i - 1) * l..]);
                        cur[coord] = prev[(i - 1) * l + coord] * (drift + scale * sign * z).exp();
                    }
                    Ok(())
                }),
            )
        }
        PathSpec::Ito { x0, drift, vol } => {
            let l = x0.len();
            (
                l,
                Box::new(move |m, out: &mut [f64]| {
                    let (mut rng, sign) = stream(seed, m, antithetic);
                    out[..l].copy_from_slice(x0);
                    let sq = dt.sqrt();
                    for i in 1..=steps {
                        let (prev, cur) = out.split_at_mut(i * l);
                        let x = &prev[(i - 1) * l..];
                        let t = grid.time(i - 1);
                        let b = drift(t, x);
                        let s = vol(t, x);
                        if b.len() != l || s.len() != l {
                            return Err(Error::BadSpec("drift and vol must return one value per coordinate".into()));
                        }
                        for k in 0..l {
                            let z: f64 = rng.sample(StandardNormal);
                            cur[k] = x[k] + b[k] * dt + s[k] * sq * sign * z;
                        }
                    }
                    if out.iter().any(|v| !v.is_finite()) {
                        return Err(Error::BadSpec(format!("path {m} diverged")));
                    }
                    Ok(())
                }),
            )
        }
        PathSpec::Markov(model) => {
            if model.grid.steps != steps {
                return Err(Error::BadSpec("model grid differs from the path grid".into()));
            }
            let l = model.dim();
            let weights = model.initial_weights();
            (
                l,
                Box::new(move |m, out: &mut [f64]| {
                    let (mut rng, _) = stream(seed, m, false);
                    let pick = |rng: &mut ChaCha8Rng, probs: &mut dyn Iterator<Item = (usize, f64)>| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut last = 0;
                        for (s, p) in probs {
                            if p <= 0.0 {
                                continue;
                            }
                            acc += p;
                            last = s;
                            if u < acc {
                                return s;
                            }
                        }
                        last
                    };
                    let mut s = pick(&mut rng, &mut weights.iter().copied().enumerate());
                    out[..l].copy_from_slice(&model.states[s]);
                    for i in 1..=steps {
                        s = pick(&mut rng, &mut model.kernel(i - 1).row(s).iter().copied());
                        out[i * l..(i + 1) * l].copy_from_slice(&model.states[s]);
                    }
                    Ok(())
                }),
            )
        }
    };
    let stride = (steps + 1) * dim;
    let mut data = vec![0.0; n_paths * stride];
    data.par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(m, out)| fill(m, out))?;
    let mut e = PathEnsemble::from_data(grid, n_paths, dim, seed, data)?;
    e.antithetic = antithetic && matches!(spec, PathSpec::Gbm { .. } | PathSpec::Ito { .. });
    Ok(e)
}
