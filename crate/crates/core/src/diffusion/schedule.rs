use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::DiffusionError;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// Cosine noise schedule with tables indexed by `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    timesteps: usize,
    offset: f64,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    alpha_bar_unclipped: Vec<f64>,
}

/// `f(τ) = cos²((τ + s)/(1 + s) · π/2)`, written as a sine of the
/// complementary angle so that `f(1)` is exactly zero.
pub fn cosine_f(tau: f64, s: f64) -> f64 {
    let v = (((1.0 - tau) / (1.0 + s)) * FRAC_PI_2).sin();
    v * v
}

/// Domain in which the diffusion operates on geometry vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataDomain {
    /// `y_0` is the `[0, 1]` design vector itself.
    #[default]
    Unit,
    /// `y_0 = 2x − 1`.
    Symmetric,
}

impl DataDomain {
    pub fn to_model(self, x: f64) -> f64 {
        match self {
            Self::Unit => x,
            Self::Symmetric => 2.0 * x - 1.0,
        }
    }

    pub fn from_model(self, y: f64) -> f64 {
        match self {
            Self::Unit => y,
            Self::Symmetric => (y + 1.0) / 2.0,
        }
    }

    /// Model-space image of the design box.
    pub fn bounds(self) -> (f64, f64) {
        (self.to_model(0.0), self.to_model(1.0))
    }
}

impl NoiseSchedule {
    pub fn new(timesteps: usize, offset: f64) -> Result<Self, DiffusionError> {
        if timesteps == 0 || !(0.0..1.0).contains(&offset) {
            return Err(DiffusionError::Schedule(format!(
                "need T >= 1 and 0 <= s < 1, got T = {timesteps}, s = {offset}"
            )));
        }
        let f0 = cosine_f(0.0, offset);
        let alpha_bar_unclipped: Vec<f64> = (0..=timesteps)
            .map(|t| cosine_f(t as f64 / timesteps as f64, offset) / f0)
            .collect();
        let mut alpha = vec![1.0];
        let mut beta = vec![0.0];
        let mut alpha_bar = vec![1.0];
        for t in 1..=timesteps {
            let b = (1.0 - alpha_bar_unclipped[t] / alpha_bar_unclipped[t - 1]).min(MAX_BETA);
            beta.push(b);
            alpha.push(1.0 - b);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - b));
        }
        Ok(Self {
            timesteps,
            offset,
            alpha_bar,
            alpha,
            beta,
            alpha_bar_unclipped,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    /// `f(t/T)/f(0)` before β clipping.
    pub fn alpha_bar_unclipped(&self, t: usize) -> f64 {
        self.alpha_bar_unclipped[t]
    }

    fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.timesteps {
            return Err(DiffusionError::Timestep { t, max: self.timesteps });
        }
        Ok(())
    }

    /// `y_t = √ᾱ_t·y_0 + √(1 − ᾱ_t)·ε`.
    pub fn forward_noise(&self, y0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        self.check_t(t)?;
        if y0.len() != eps.len() {
            return Err(DiffusionError::Config("noise and signal lengths differ".into()));
        }
        let (a, b) = (self.alpha_bar[t].sqrt(), (1.0 - self.alpha_bar[t]).sqrt());
        Ok(y0.iter().zip(eps).map(|(y, e)| a * y + b * e).collect())
    }

    /// `ŷ_0 = (y_t − √(1 − ᾱ_t)·ε̂)/√ᾱ_t`.
    pub fn predict_x0(&self, yt: &[f64], eps: &[f64], t: usize) -> Result<Vec<f64>, DiffusionError> {
        self.check_t(t)?;
        let (a, b) = (self.alpha_bar[t].sqrt(), (1.0 - self.alpha_bar[t]).sqrt());
        Ok(yt.iter().zip(eps).map(|(y, e)| (y - b * e) / a).collect())
    }

    /// Posterior mean of `y_{t−1}` given `y_t` and `ŷ_0`.
    pub fn posterior_mean(&self, yt: &[f64], x0: &[f64], t: usize) -> Result<Vec<f64>, DiffusionError> {
        self.check_t(t)?;
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let c0 = ab_prev.sqrt() * self.beta[t] / (1.0 - ab);
        let ct = self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok(yt.iter().zip(x0).map(|(y, x)| c0 * x + ct * y).collect())
    }

    /// `√((1 − ᾱ_{t−1})/(1 − ᾱ_t)·β_t)`; zero at `t = 1`.
    pub fn posterior_std(&self, t: usize) -> Result<f64, DiffusionError> {
        self.check_t(t)?;
        Ok(((1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]).sqrt())
    }

    /// One ancestral step `y_t → y_{t−1}` given predicted noise and a fresh draw `z`.
    pub fn reverse_step(&self, yt: &[f64], eps: &[f64], t: usize, z: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        self.reverse_step_clipped(yt, eps, t, z, (f64::NEG_INFINITY, f64::INFINITY))
    }

    /// As [`reverse_step`](Self::reverse_step), with `ŷ_0` clamped to `bounds` before
    /// forming the posterior mean.
    pub fn reverse_step_clipped(
        &self,
        yt: &[f64],
        eps: &[f64],
        t: usize,
        z: &[f64],
        bounds: (f64, f64),
    ) -> Result<Vec<f64>, DiffusionError> {
        let x0: Vec<f64> = self
            .predict_x0(yt, eps, t)?
            .into_iter()
            .map(|x| x.clamp(bounds.0, bounds.1))
            .collect();
        let mean = self.posterior_mean(yt, &x0, t)?;
        let sigma = self.posterior_std(t)?;
        Ok(mean.iter().zip(z).map(|(m, z)| m + sigma * z).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn default() -> NoiseSchedule {
        NoiseSchedule::new(DEFAULT_TIMESTEPS, DEFAULT_OFFSET).unwrap()
    }

    #[test]
    fn endpoints() {
        let s = default();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.alpha_bar_unclipped(0), 1.0);
        assert_eq!(s.alpha_bar_unclipped(1000), 0.0);
        assert!(s.alpha_bar(1000) > 0.0 && s.alpha_bar(1000) < 1e-3);
        assert!(s.alpha_bar(500) < s.alpha_bar(100));
    }

    #[test]
    fn tables_consistent() {
        for (t_max, off) in [(1000, 0.008), (1, 0.0), (7, 0.5), (50, 0.2)] {
            let s = NoiseSchedule::new(t_max, off).unwrap();
            let mut prod = 1.0;
            for t in 1..=t_max {
                assert!(s.beta(t) > 0.0 && s.beta(t) <= MAX_BETA);
                assert_eq!(s.alpha(t), 1.0 - s.beta(t));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prod *= s.alpha(t);
                assert!((s.alpha_bar(t) - prod).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::new(0, 0.008).is_err());
        assert!(NoiseSchedule::new(10, 1.0).is_err());
        assert!(NoiseSchedule::new(10, -0.1).is_err());
        assert!(NoiseSchedule::new(10, f64::NAN).is_err());
        let s = default();
        assert!(s.forward_noise(&[0.0], 0, &[0.0]).is_err());
        assert!(s.forward_noise(&[0.0], 1001, &[0.0]).is_err());
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = default();
        let y0 = [0.2, 0.9, -0.4];
        let yt = s.forward_noise(&y0, 300, &[0.0; 3]).unwrap();
        for (a, b) in yt.iter().zip(&y0) {
            assert_eq!(*a, s.alpha_bar(300).sqrt() * b);
        }
    }

    #[test]
    fn identity_when_alpha_bar_is_one() {
        // no built schedule has ᾱ_t = 1 for t >= 1, so exercise the formula directly
        let sched = NoiseSchedule {
            alpha_bar: vec![1.0, 1.0],
            alpha: vec![1.0, 1.0],
            beta: vec![0.0, 0.0],
            alpha_bar_unclipped: vec![1.0, 1.0],
            timesteps: 1,
            offset: DEFAULT_OFFSET,
        };
        let y0 = [0.3, 0.7];
        assert_eq!(sched.forward_noise(&y0, 1, &[5.0, -3.0]).unwrap(), y0);
    }

    #[test]
    fn monte_carlo_variance() {
        let s = default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                s.forward_noise(&[0.0], 500, &[e]).unwrap()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = 1.0 - s.alpha_bar(500);
        assert!((var - expect).abs() / expect < 0.02, "{var} vs {expect}");
    }

    #[test]
    fn last_step_is_deterministic() {
        let s = default();
        assert_eq!(s.posterior_std(1).unwrap(), 0.0);
        let yt = [0.4, -0.1];
        let eps = [0.3, 0.2];
        assert_eq!(
            s.reverse_step(&yt, &eps, 1, &[1.0, -1.0]).unwrap(),
            s.reverse_step(&yt, &eps, 1, &[-7.0, 9.0]).unwrap()
        );
        assert!(s.posterior_std(2).unwrap() > 0.0);
    }

    #[test]
    fn posterior_mean_of_exact_x0_at_t1_is_x0() {
        let s = default();
        let y0 = [0.25, 0.75];
        let eps = [0.6, -1.1];
        let y1 = s.forward_noise(&y0, 1, &eps).unwrap();
        let back = s.reverse_step(&y1, &eps, 1, &[0.0, 0.0]).unwrap();
        for (a, b) in back.iter().zip(&y0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn oracle_inversion(t in 1usize..=1000, y0 in proptest::collection::vec(0.0f64..1.0, 12), seed in any::<u64>()) {
            let s = default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
            let yt = s.forward_noise(&y0, t, &eps).unwrap();
            let x0 = s.predict_x0(&yt, &eps, t).unwrap();
            // error is bounded by rounding in y_t amplified by 1/√ᾱ_t
            let tol = 8.0 * f64::EPSILON * (1.0 + 4.0 * (1.0 - s.alpha_bar(t)).sqrt()) / s.alpha_bar(t).sqrt();
            for (a, b) in x0.iter().zip(&y0) {
                prop_assert!((a - b).abs() <= tol, "t={} {} vs {} tol {}", t, a, b, tol);
            }
        }
    }
}
