use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::schedule::{DataDomain, NoiseSchedule};
use super::train::TrainedModel;
use crate::error::{DiffusionError, NnError};
use crate::geometry::{GeometryVector, GridSpec};
use crate::nn::{Denoiser, ParamStore};

/// Rows per parallel denoiser call during sampling.
const SAMPLE_CHUNK: usize = 8;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Ancestral sampling of `n` designs conditioned on the normalized vector `c`.
///
/// Each step clamps the predicted `ŷ_0` to the design box; without it the
/// near-unit `β_T` amplifies the first noise-prediction error ~30-fold.
///
/// Sample `i` draws all of its noise from stream `i` of `seed`, so each design
/// is independent of `n` and of the thread count.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    net: &Denoiser,
    params: &ParamStore<f32>,
    schedule: &NoiseSchedule,
    domain: DataDomain,
    grid: &GridSpec,
    c: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<GeometryVector>, DiffusionError> {
    let cfg = net.config();
    if cfg.timesteps != schedule.timesteps() {
        return Err(DiffusionError::Mismatch(format!(
            "network trained for {} steps, schedule has {}",
            cfg.timesteps,
            schedule.timesteps()
        )));
    }
    if c.len() != cfg.cond_dim || grid.dimension() != cfg.input_len {
        return Err(DiffusionError::Mismatch(format!(
            "network expects {} conditioning values and {} design entries, got {} and {}",
            cfg.cond_dim,
            cfg.input_len,
            c.len(),
            grid.dimension()
        )));
    }
    net.check_params(params)?;
    let len = cfg.input_len;
    let c32: Vec<f32> = c.iter().map(|&v| v as f32).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i);
            r
        })
        .collect();
    let mut y: Vec<Vec<f64>> = rngs.iter_mut().map(|r| normals(r, len)).collect();

    for t in (1..=schedule.timesteps()).rev() {
        let eps: Vec<Vec<f64>> = y
            .par_chunks(SAMPLE_CHUNK)
            .map(|rows| {
                let input: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
                let ts = vec![t - 1; rows.len()];
                let cs: Vec<f32> = c32.repeat(rows.len());
                let out = net.predict(params, &input, &ts, &cs)?;
                Ok(out
                    .chunks_exact(len)
                    .map(|r| r.iter().map(|&v| v as f64).collect())
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, NnError>>()?
            .into_iter()
            .flatten()
            .collect();
        for ((yi, ei), rng) in y.iter_mut().zip(&eps).zip(rngs.iter_mut()) {
            let z = if t > 1 { normals(rng, len) } else { vec![0.0; len] };
            *yi = schedule.reverse_step_clipped(yi, ei, t, &z, domain.bounds())?;
        }
    }

    y.into_iter()
        .map(|yi| {
            if yi.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite("sampled design".into()).into());
            }
            let x: Vec<f64> = yi.iter().map(|&v| domain.from_model(v).clamp(0.0, 1.0)).collect();
            Ok(GeometryVector::new(x, *grid).expect("clamped values are valid"))
        })
        .collect()
}

impl TrainedModel {
    /// Samples with the EMA weights, conditioned on a raw DSCS target.
    pub fn sample(&self, target_dscs: &[f64], n: usize, seed: u64) -> Result<Vec<GeometryVector>, DiffusionError> {
        let c = self.condition(target_dscs)?;
        sample(
            &self.net,
            &self.ema,
            &self.schedule,
            self.meta.settings.data_domain,
            &self.meta.grid,
            &c,
            n,
            seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::UNetConfig;

    fn small() -> (Denoiser, ParamStore<f32>, NoiseSchedule) {
        let cfg = UNetConfig {
            channels: vec![8, 8, 8, 8],
            downsample_at: vec![],
            time_dim: 16,
            cond_embed_dim: 8,
            film_hidden: 16,
            timesteps: 20,
            ..UNetConfig::default()
        };
        let net = Denoiser::new(cfg).unwrap();
        let params = net.init_params(2);
        (net, params, NoiseSchedule::new(20, 0.008).unwrap())
    }

    #[test]
    fn outputs_in_unit_cube() {
        let (net, params, sched) = small();
        let c = vec![0.1; 10];
        let out = sample(&net, &params, &sched, DataDomain::Unit, &GridSpec::default(), &c, 40, 7).unwrap();
        assert_eq!(out.len(), 40);
        for v in &out {
            assert!(v.values().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn sample_i_is_independent_of_n() {
        let (net, params, sched) = small();
        let c = vec![-0.3; 10];
        let grid = GridSpec::default();
        let a = sample(&net, &params, &sched, DataDomain::Symmetric, &grid, &c, 3, 1).unwrap();
        let b = sample(&net, &params, &sched, DataDomain::Symmetric, &grid, &c, 11, 1).unwrap();
        assert_eq!(a[..], b[..3]);
        let again = sample(&net, &params, &sched, DataDomain::Symmetric, &grid, &c, 3, 1).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn samples_are_distinct() {
        let (net, params, sched) = small();
        let out = sample(
            &net,
            &params,
            &sched,
            DataDomain::Unit,
            &GridSpec::default(),
            &[0.2; 10],
            40,
            3,
        )
        .unwrap();
        for (i, a) in out.iter().enumerate() {
            assert!(out[i + 1..].iter().all(|b| a != b), "sample {i} repeated");
            assert!(a.values().iter().any(|x| *x > 0.0 && *x < 1.0), "sample {i} saturated");
        }
    }

    #[test]
    fn clipped_step_matches_plain_step_inside_the_box() {
        let sched = NoiseSchedule::new(20, 0.008).unwrap();
        let y = [0.4, 0.6, 0.5];
        let eps = [0.0, 0.0, 0.0];
        let z = [0.3, -0.2, 0.1];
        let plain = sched.reverse_step(&y, &eps, 5, &z).unwrap();
        let clipped = sched
            .reverse_step_clipped(&y, &eps, 5, &z, DataDomain::Unit.bounds())
            .unwrap();
        assert_eq!(plain, clipped);
        let wild = sched
            .reverse_step_clipped(&[50.0; 3], &eps, 20, &[0.0; 3], (0.0, 1.0))
            .unwrap();
        assert!(wild.iter().all(|v| v.abs() < 2.0), "{wild:?}");
    }

    #[test]
    fn mismatches_rejected() {
        let (net, params, _) = small();
        let other = NoiseSchedule::new(30, 0.008).unwrap();
        let grid = GridSpec::default();
        assert!(matches!(
            sample(&net, &params, &other, DataDomain::Unit, &grid, &[0.0; 10], 1, 0),
            Err(DiffusionError::Mismatch(_))
        ));
        let sched = NoiseSchedule::new(20, 0.008).unwrap();
        assert!(sample(&net, &params, &sched, DataDomain::Unit, &grid, &[0.0; 9], 1, 0).is_err());
    }
}
