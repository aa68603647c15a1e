use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::{DataDomain, NoiseSchedule, DEFAULT_OFFSET, DEFAULT_TIMESTEPS};
use crate::dataset::{Dataset, NormalizationStats};
use crate::error::DiffusionError;
use crate::geometry::GridSpec;
use crate::nn::unet::mse;
use crate::nn::{ema_update, Adam, Checkpoint, Denoiser, ParamStore, UNetConfig};
use crate::scattering::{AngleGrid, Illumination};

const EPOCH_STREAM: u64 = 0xE0 << 56;
const STEP_STREAM: u64 = 0x57 << 56;
const LOSS_SMOOTHING: f64 = 0.99;

pub const GROUP_LIVE: &str = "live";
pub const GROUP_EMA: &str = "ema";
pub const GROUP_ADAM_M: &str = "adam_m";
pub const GROUP_ADAM_V: &str = "adam_v";

/// U-Net hyperparameters that do not depend on the data shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSpec {
    pub channels: Vec<usize>,
    pub downsample_at: Vec<usize>,
    pub kernel_size: usize,
    pub groups: usize,
    pub time_dim: usize,
    pub cond_embed_dim: usize,
    pub film_hidden: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        let u = UNetConfig::default();
        Self {
            channels: u.channels,
            downsample_at: u.downsample_at,
            kernel_size: u.kernel_size,
            groups: u.groups,
            time_dim: u.time_dim,
            cond_embed_dim: u.cond_embed_dim,
            film_hidden: u.film_hidden,
        }
    }
}

impl ArchSpec {
    pub fn unet(&self, input_len: usize, cond_dim: usize, timesteps: usize) -> UNetConfig {
        UNetConfig {
            input_len,
            cond_dim,
            channels: self.channels.clone(),
            downsample_at: self.downsample_at.clone(),
            kernel_size: self.kernel_size,
            groups: self.groups,
            time_dim: self.time_dim,
            cond_embed_dim: self.cond_embed_dim,
            film_hidden: self.film_hidden,
            timesteps,
        }
    }
}

/// Everything that determines the trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub timesteps: usize,
    pub schedule_offset: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub data_domain: DataDomain,
    /// Train on at most this many records of the training partition.
    pub count_limit: Option<usize>,
    /// Rows per gradient work unit; fixes the summation order independently of threads.
    pub microbatch: usize,
    pub arch: ArchSpec,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            timesteps: DEFAULT_TIMESTEPS,
            schedule_offset: DEFAULT_OFFSET,
            lr: 4e-6,
            batch_size: 16,
            epochs: 116,
            ema_decay: 0.995,
            seed: 0,
            checkpoint_interval: 1000,
            data_domain: DataDomain::Unit,
            count_limit: None,
            microbatch: 4,
            arch: ArchSpec::default(),
        }
    }
}

impl TrainSettings {
    pub fn check(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::Config(m.into()));
        if self.batch_size == 0 || self.epochs == 0 || self.microbatch == 0 {
            return bad("batch_size, epochs and microbatch must be positive");
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1]");
        }
        if self.count_limit == Some(0) {
            return bad("count_limit must be positive");
        }
        NoiseSchedule::new(self.timesteps, self.schedule_offset)?;
        Ok(())
    }
}

/// Metadata stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: u64,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    pub smoothed_loss: Option<f64>,
    pub settings: TrainSettings,
    pub arch: UNetConfig,
    pub stats: NormalizationStats,
    pub grid: GridSpec,
    pub angles: AngleGrid,
    pub illumination: Illumination,
    pub dataset_size: usize,
    pub train_size: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from the newest checkpoint in the output directory.
    pub resume: bool,
    /// Stop (without writing an extra checkpoint) once this step is reached.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub start_step: u64,
    pub final_step: u64,
    pub total_steps: u64,
    pub checkpoints: Vec<PathBuf>,
    pub last_loss: Option<f64>,
    pub smoothed_loss: Option<f64>,
    pub wall_clock_s: f64,
}

/// `⌈n / batch⌉`; the last batch of an epoch may be short.
pub fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step}.bin")
}

/// Checkpoints in `dir`, ordered by step.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>, DiffusionError> {
    let mut out = vec![];
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.strip_suffix(".bin"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn meta_to_json(meta: &CheckpointMeta) -> serde_json::Value {
    serde_json::to_value(meta).expect("metadata serializes")
}

pub(crate) fn meta_from_json(v: &serde_json::Value) -> Result<CheckpointMeta, DiffusionError> {
    serde_json::from_value(v.clone()).map_err(|e| DiffusionError::Mismatch(format!("checkpoint metadata: {e}")))
}

struct Example {
    y0: Vec<f64>,
    cond: Vec<f32>,
}

struct State {
    step: u64,
    live: ParamStore<f32>,
    ema: ParamStore<f32>,
    adam: Adam<f32>,
    smoothed: Option<f64>,
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EPOCH_STREAM | epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mean loss and summed gradients over `rows`, computed in fixed-size
/// microbatches whose results are reduced in order.
fn batch_gradient(
    net: &Denoiser,
    params: &ParamStore<f32>,
    y: &[f32],
    t: &[usize],
    c: &[f32],
    target: &[f32],
    micro: usize,
) -> Result<(f64, ParamStore<f32>), DiffusionError> {
    let len = net.config().input_len;
    let cdim = net.config().cond_dim;
    let rows = t.len();
    let denom = rows * len;
    let parts: Vec<_> = (0..rows)
        .step_by(micro)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + micro).min(rows);
            let (pred, cache) = net.forward(
                params,
                &y[start * len..end * len],
                &t[start..end],
                &c[start * cdim..end * cdim],
            )?;
            let (loss, grad) = mse(&pred, &target[start * len..end * len], denom);
            let g = net.backward(params, &cache, &grad)?;
            Ok::<_, DiffusionError>((loss, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<ParamStore<f32>> = None;
    for part in parts {
        let (loss, g) = part?;
        total += loss;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.add_assign(&g),
        }
    }
    Ok((total, grads.expect("at least one row")))
}

fn save_checkpoint(dir: &Path, state: &State, meta: &CheckpointMeta) -> Result<PathBuf, DiffusionError> {
    let mut ck = Checkpoint::new(meta_to_json(meta));
    ck.groups.insert(GROUP_LIVE.into(), state.live.clone());
    ck.groups.insert(GROUP_EMA.into(), state.ema.clone());
    ck.groups.insert(GROUP_ADAM_M.into(), state.adam.m.clone());
    ck.groups.insert(GROUP_ADAM_V.into(), state.adam.v.clone());
    let path = dir.join(checkpoint_name(state.step));
    ck.save(&path)?;
    Ok(path)
}

const LOG_HEADER: &str = "step,epoch,loss,smoothed_loss";

/// Keeps only log rows up to `step` so a resumed run appends seamlessly.
fn truncate_log(path: &Path, step: u64) -> Result<(), DiffusionError> {
    let mut kept = vec![LOG_HEADER.to_string()];
    if path.exists() {
        for line in fs::read_to_string(path)?.lines().skip(1) {
            match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                Some(s) if s <= step => kept.push(line.to_string()),
                _ => {}
            }
        }
    }
    fs::write(path, kept.join("\n") + "\n")?;
    Ok(())
}

/// Trains the conditional denoiser on the dataset's training partition,
/// writing `ckpt_<step>.bin` every `checkpoint_interval` steps and at the end,
/// plus `train_log.csv`.
pub fn train(
    dataset: &Dataset,
    settings: &TrainSettings,
    out_dir: &Path,
    options: &TrainOptions,
) -> Result<TrainSummary, DiffusionError> {
    let started = Instant::now();
    settings.check()?;
    let schedule = NoiseSchedule::new(settings.timesteps, settings.schedule_offset)?;
    let meta_ds = &dataset.meta;
    let mut train_records = dataset.train_records()?;
    if let Some(limit) = settings.count_limit {
        train_records.truncate(limit);
    }
    if train_records.is_empty() {
        return Err(DiffusionError::Config("training partition is empty".into()));
    }
    let stats = &meta_ds.stats;
    let examples: Vec<Example> = train_records
        .iter()
        .map(|r| Example {
            y0: r
                .vector
                .values()
                .iter()
                .map(|&x| settings.data_domain.to_model(x))
                .collect(),
            cond: stats.normalize(&r.dscs).iter().map(|&v| v as f32).collect(),
        })
        .collect();

    let arch = settings
        .arch
        .unet(meta_ds.grid.dimension(), meta_ds.angles.len(), settings.timesteps);
    let net = Denoiser::new(arch.clone())?;
    let n = examples.len();
    let spe = steps_per_epoch(n, settings.batch_size);
    let total = spe * settings.epochs as u64;
    let mut meta = CheckpointMeta {
        step: 0,
        epoch: 0,
        steps_per_epoch: spe,
        total_steps: total,
        smoothed_loss: None,
        settings: settings.clone(),
        arch,
        stats: stats.clone(),
        grid: meta_ds.grid,
        angles: meta_ds.angles.clone(),
        illumination: meta_ds.illumination.clone(),
        dataset_size: meta_ds.count,
        train_size: n,
    };

    fs::create_dir_all(out_dir)?;
    let mut state = match list_checkpoints(out_dir)?.pop().filter(|_| options.resume) {
        Some((_, path)) => resume_state(&path, &meta, &net)?,
        None => {
            let live = net.init_params::<f32>(settings.seed);
            State {
                step: 0,
                ema: live.clone(),
                adam: Adam::new(&live, settings.lr),
                live,
                smoothed: None,
            }
        }
    };
    let start_step = state.step;
    let log_path = out_dir.join("train_log.csv");
    truncate_log(&log_path, start_step)?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path)?;

    let len = net.config().input_len;
    let mut checkpoints = vec![];
    let mut last_loss = None;
    let mut order: Option<(u64, Vec<usize>)> = None;
    while state.step < total {
        if options.stop_after.is_some_and(|s| state.step >= s) {
            break;
        }
        let epoch = state.step / spe;
        let k = (state.step % spe) as usize;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(settings.seed, epoch, n)));
        }
        let perm = &order.as_ref().expect("order set").1;
        let rows = &perm[k * settings.batch_size..((k + 1) * settings.batch_size).min(n)];

        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(STEP_STREAM | state.step);
        let mut y = Vec::with_capacity(rows.len() * len);
        let mut target = Vec::with_capacity(rows.len() * len);
        let mut ts = Vec::with_capacity(rows.len());
        let mut c = Vec::with_capacity(rows.len() * net.config().cond_dim);
        for &row in rows {
            let ex = &examples[row];
            let t = rng.random_range(1..=settings.timesteps);
            let eps: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let yt = schedule.forward_noise(&ex.y0, t, &eps)?;
            y.extend(yt.iter().map(|&v| v as f32));
            target.extend(eps.iter().map(|&v| v as f32));
            ts.push(t - 1);
            c.extend_from_slice(&ex.cond);
        }
        let (loss, grads) = batch_gradient(&net, &state.live, &y, &ts, &c, &target, settings.microbatch)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(DiffusionError::Divergence {
                step: state.step + 1,
                loss,
            });
        }
        state.adam.update(&mut state.live, &grads)?;
        ema_update(&mut state.ema, &state.live, settings.ema_decay)?;
        state.step += 1;
        state.smoothed = Some(match state.smoothed {
            None => loss,
            Some(s) => LOSS_SMOOTHING * s + (1.0 - LOSS_SMOOTHING) * loss,
        });
        last_loss = Some(loss);
        writeln!(
            log,
            "{},{},{},{}",
            state.step,
            epoch,
            loss,
            state.smoothed.expect("set above")
        )?;

        if state.step % settings.checkpoint_interval == 0 || state.step == total {
            meta.step = state.step;
            meta.epoch = state.step / spe;
            meta.smoothed_loss = state.smoothed;
            checkpoints.push(save_checkpoint(out_dir, &state, &meta)?);
        }
    }
    Ok(TrainSummary {
        start_step,
        final_step: state.step,
        total_steps: total,
        checkpoints,
        last_loss,
        smoothed_loss: state.smoothed,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

fn resume_state(path: &Path, expected: &CheckpointMeta, net: &Denoiser) -> Result<State, DiffusionError> {
    let ck = Checkpoint::<f32>::load(path)?;
    let meta = meta_from_json(&ck.metadata)?;
    let same = meta.settings == expected.settings
        && meta.arch == expected.arch
        && meta.stats == expected.stats
        && meta.dataset_size == expected.dataset_size
        && meta.train_size == expected.train_size
        && meta.total_steps == expected.total_steps;
    if !same {
        return Err(DiffusionError::Mismatch(format!(
            "{} was produced by a different configuration or dataset",
            path.display()
        )));
    }
    let live = ck.group(GROUP_LIVE)?.clone();
    net.check_params(&live)?;
    let mut adam = Adam::new(&live, meta.settings.lr);
    adam.m = ck.group(GROUP_ADAM_M)?.clone();
    adam.v = ck.group(GROUP_ADAM_V)?.clone();
    adam.step = meta.step;
    let ema = ck.group(GROUP_EMA)?.clone();
    if !live.congruent(&ema) || !live.congruent(&adam.m) || !live.congruent(&adam.v) {
        return Err(DiffusionError::Mismatch("checkpoint tensor groups disagree".into()));
    }
    Ok(State {
        step: meta.step,
        live,
        ema,
        adam,
        smoothed: meta.smoothed_loss,
    })
}

/// A checkpoint loaded for inference.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub meta: CheckpointMeta,
    pub net: Denoiser,
    pub live: ParamStore<f32>,
    pub ema: ParamStore<f32>,
    pub schedule: NoiseSchedule,
}

impl TrainedModel {
    pub fn from_checkpoint(ck: &Checkpoint<f32>) -> Result<Self, DiffusionError> {
        let meta = meta_from_json(&ck.metadata)?;
        let net = Denoiser::new(meta.arch.clone())?;
        let live = ck.group(GROUP_LIVE)?.clone();
        let ema = ck.group(GROUP_EMA)?.clone();
        net.check_params(&live)?;
        net.check_params(&ema)?;
        let schedule = NoiseSchedule::new(meta.settings.timesteps, meta.settings.schedule_offset)?;
        Ok(Self {
            meta,
            net,
            live,
            ema,
            schedule,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Normalized conditioning vector for a raw DSCS profile.
    pub fn condition(&self, dscs: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        if dscs.len() != self.meta.stats.len() {
            return Err(DiffusionError::Mismatch(format!(
                "target has {} angles, model expects {}",
                dscs.len(),
                self.meta.stats.len()
            )));
        }
        Ok(self.meta.stats.normalize(dscs))
    }
}
