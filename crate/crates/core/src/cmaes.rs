//! CMA-ES with rank-one and rank-μ covariance updates, cumulative step-size
//! adaptation and clip-to-box boundary handling.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CmaesError;
use crate::evaluation::mpe;
use crate::geometry::{decode, GeometryVector, GridSpec};
use crate::scattering::{dscs, DscsProfile, Illumination};

const EIGEN_FLOOR: f64 = 1e-14;
/// Objective assigned when a whole generation is non-finite.
const FALLBACK_PENALTY: f64 = 1e300;

/// `4 + ⌊3 ln d⌋`.
pub fn default_lambda(d: usize) -> usize {
    4 + (3.0 * (d as f64).ln()).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaesConfig {
    pub sigma0: f64,
    pub population: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self {
            sigma0: 0.07,
            population: 70,
            iterations: 1500,
            seeds: vec![0, 1, 2, 3],
        }
    }
}

impl CmaesConfig {
    pub fn check(&self) -> Result<(), CmaesError> {
        if self.population < 2 {
            return Err(CmaesError::Config("population must be at least 2".into()));
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(CmaesError::Config("sigma0 must be positive".into()));
        }
        if self.iterations == 0 || self.seeds.is_empty() {
            return Err(CmaesError::Config("need at least one iteration and one seed".into()));
        }
        Ok(())
    }

    pub fn evaluations_per_seed(&self) -> u64 {
        (self.iterations * self.population) as u64
    }
}

/// Search state over the box `[0, 1]^d`.
#[derive(Debug, Clone)]
pub struct Cmaes {
    dim: usize,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: u64,
    evals: u64,
    best: Option<(Vec<f64>, f64)>,
    rng: ChaCha8Rng,
}

impl Cmaes {
    pub fn new(mean: Vec<f64>, sigma0: f64, lambda: usize, seed: u64) -> Result<Self, CmaesError> {
        let dim = mean.len();
        if dim == 0 || lambda < 2 || !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(CmaesError::Config(format!(
                "need d >= 1, lambda >= 2 and sigma0 > 0 (d = {dim}, lambda = {lambda}, sigma0 = {sigma0})"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(CmaesError::Config("initial mean must be finite".into()));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let n = dim as f64;
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            dim,
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: DVector::from_vec(mean),
            sigma: sigma0,
            cov: DMatrix::identity(dim, dim),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            generation: 0,
            evals: 0,
            best: None,
            rng,
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }
    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn generation(&self) -> u64 {
        self.generation
    }
    pub fn evaluations(&self) -> u64 {
        self.evals
    }
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, f)| (x.as_slice(), *f))
    }

    /// λ candidates `m + σ·B·D·z`, clipped to `[0, 1]^d`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let bd = &self.basis * DMatrix::from_diagonal(&self.scales);
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(self.dim, |_, _| self.rng.sample::<f64, _>(StandardNormal));
                let x = &self.mean + self.sigma * (&bd * z);
                x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates.
    pub fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<(), CmaesError> {
        if candidates.len() != self.lambda || values.len() != self.lambda {
            return Err(CmaesError::PopulationSize {
                expected: self.lambda,
                got: candidates.len().min(values.len()),
            });
        }
        if candidates.iter().any(|c| c.len() != self.dim) {
            return Err(CmaesError::Config("candidate dimension mismatch".into()));
        }
        let worst = values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let penalty = if worst.is_finite() {
            if worst > 0.0 {
                worst * 10.0
            } else {
                worst.abs() * 10.0 + 1.0
            }
        } else {
            FALLBACK_PENALTY
        };
        let fitness: Vec<f64> = values
            .iter()
            .map(|&v| if v.is_finite() { v } else { penalty })
            .collect();
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        self.evals += self.lambda as u64;
        self.generation += 1;
        let top = order[0];
        if values[top].is_finite() && self.best.as_ref().is_none_or(|(_, f)| values[top] < *f) {
            self.best = Some((candidates[top].clone(), values[top]));
        }

        let n = self.dim as f64;
        let steps: Vec<DVector<f64>> = order[..self.weights.len()]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &self.mean) / self.sigma)
            .collect();
        let y_w = steps
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.dim), |acc, (y, w)| acc + y * *w);
        self.mean += self.sigma * &y_w;

        let inv_sqrt = &self.basis * DMatrix::from_diagonal(&self.scales.map(|s| 1.0 / s)) * self.basis.transpose();
        self.p_sigma = (1.0 - self.c_sigma) * &self.p_sigma
            + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * (inv_sqrt * &y_w);
        let ps_norm = self.p_sigma.norm();
        let denom = (1.0 - (1.0 - self.c_sigma).powf(2.0 * self.generation as f64)).sqrt();
        let h_sigma = ps_norm / denom < (1.4 + 2.0 / (n + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - self.c_c) * &self.p_c + h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt() * &y_w;
        let delta = (1.0 - h) * self.c_c * (2.0 - self.c_c);

        let rank_mu = steps
            .iter()
            .zip(&self.weights)
            .fold(DMatrix::zeros(self.dim, self.dim), |acc, (y, w)| {
                acc + *w * y * y.transpose()
            });
        self.cov = (1.0 - self.c_1 - self.c_mu) * &self.cov
            + self.c_1 * (&self.p_c * self.p_c.transpose() + delta * &self.cov)
            + self.c_mu * rank_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(CmaesError::Factorization);
        }
        self.refactor()
    }

    fn refactor(&mut self) -> Result<(), CmaesError> {
        if self.cov.iter().any(|v| !v.is_finite()) {
            return Err(CmaesError::Factorization);
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
        self.basis = eig.eigenvectors;
        self.scales = vals.map(f64::sqrt);
        self.cov = &self.basis * DMatrix::from_diagonal(&vals) * self.basis.transpose();
        Ok(())
    }
}

/// One row of the convergence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub seed: u64,
    pub generation: u64,
    pub best_value: f64,
    pub evals: u64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_vector: Vec<f64>,
    pub best_value: f64,
    pub evals: u64,
    pub wall_clock_s: f64,
    pub history: Vec<GenerationRecord>,
}

/// Minimizes `f` over `[0,1]^d` from a uniformly drawn initial mean.
/// Objective calls within a generation run in parallel.
pub fn minimize<F>(f: F, dim: usize, config: &CmaesConfig, seed: u64) -> Result<SeedResult, CmaesError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.check()?;
    let started = Instant::now();
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let mean: Vec<f64> = (0..dim).map(|_| init.random::<f64>()).collect();
    let mut es = Cmaes::new(mean, config.sigma0, config.population, seed)?;
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let xs = es.ask();
        let fs: Vec<f64> = xs.par_iter().map(|x| f(x)).collect();
        es.tell(&xs, &fs)?;
        history.push(GenerationRecord {
            seed,
            generation: es.generation(),
            best_value: es.best().map_or(f64::INFINITY, |(_, v)| v),
            evals: es.evaluations(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
    }
    let (best_vector, best_value) = es
        .best()
        .map(|(x, v)| (x.to_vec(), v))
        .unwrap_or_else(|| (es.mean().to_vec(), f64::INFINITY));
    Ok(SeedResult {
        seed,
        best_vector,
        best_value,
        evals: es.evaluations(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        history,
    })
}

/// MPE of the decoded design's DSCS against `target`; `NaN` when the solver fails.
pub fn mpe_objective(x: &[f64], grid: &GridSpec, ill: &Illumination, target: &DscsProfile) -> f64 {
    let Ok(v) = GeometryVector::new(x.to_vec(), *grid) else {
        return f64::NAN;
    };
    match dscs(&decode(&v), ill, &target.angles) {
        Ok(p) => mpe(&p.values, &target.values).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    }
}

/// Inverse design by CMA-ES, one independent run per configured seed.
pub fn optimize(
    target: &DscsProfile,
    grid: &GridSpec,
    ill: &Illumination,
    config: &CmaesConfig,
) -> Result<Vec<SeedResult>, CmaesError> {
    config.check()?;
    if target.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CmaesError::Config("target DSCS must be finite and positive".into()));
    }
    config
        .seeds
        .iter()
        .map(|&seed| minimize(|x| mpe_objective(x, grid, ill, target), grid.dimension(), config, seed))
        .collect()
}

/// Writes `seed,generation,best_mpe,evals,elapsed_seconds`.
pub fn history_csv(results: &[SeedResult]) -> String {
    let mut out = String::from("seed,generation,best_mpe,evals,elapsed_seconds\n");
    for r in results {
        for h in &r.history {
            out += &format!(
                "{},{},{},{},{}\n",
                h.seed, h.generation, h.best_value, h.evals, h.elapsed_seconds
            );
        }
    }
    out
}
