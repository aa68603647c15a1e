//! 1D U-Net noise predictor with FiLM conditioning.
//!
//! The design vector enters as a single channel of length `input_len`.
//! Encoder blocks widen the channels and halve the length where listed in
//! `downsample_at`; decoder blocks mirror them, upsampling and concatenating
//! the matching encoder output. Every block is
//! `SiLU(FiLM(group norm(conv x))) + P x` with `P` a 1×1 convolution, so the
//! absolute level of the signal survives normalization. `(γ, β)` come from a
//! two-layer generator fed `[timestep embedding, conditioning embedding]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::*;
use super::tensor::{ParamStore, Real, Tensor};
use crate::error::NnError;

/// Scale applied to the Kaiming bound of each FiLM generator's output layer.
pub const FILM_OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub input_len: usize,
    pub cond_dim: usize,
    /// Encoder channels followed by decoder channels.
    pub channels: Vec<usize>,
    /// Encoder block indices preceded by a 2× average pool.
    pub downsample_at: Vec<usize>,
    pub kernel_size: usize,
    pub groups: usize,
    pub time_dim: usize,
    pub cond_embed_dim: usize,
    pub film_hidden: usize,
    /// Number of diffusion steps; valid timestep indices are `0..timesteps`.
    pub timesteps: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            input_len: 12,
            cond_dim: 10,
            channels: vec![16, 32, 64, 128, 128, 64, 32, 16],
            downsample_at: vec![2, 3],
            kernel_size: 3,
            groups: 8,
            time_dim: 128,
            cond_embed_dim: 128,
            film_hidden: 128,
            timesteps: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BlockInput {
    Signal,
    Previous { pool: bool },
    Skip { skip: usize, from_len: usize },
}

#[derive(Debug, Clone)]
struct BlockPlan {
    c_in: usize,
    c_out: usize,
    len: usize,
    groups: usize,
    input: BlockInput,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: UNetConfig,
    plan: Vec<BlockPlan>,
}

struct BlockCache<T> {
    input: Vec<T>,
    norm: GroupNormCache<T>,
    modulated: Vec<T>,
    gamma: Vec<T>,
    film_pre: Vec<T>,
    film_hidden: Vec<T>,
}

/// Activations saved by [`Denoiser::forward`] for the backward pass.
pub struct ForwardCache<T> {
    batch: usize,
    cond: Vec<T>,
    cond_pre: Vec<T>,
    emb: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    last: Vec<T>,
}

fn conv_w(i: usize) -> String {
    format!("blocks.{i}.conv.weight")
}
fn conv_b(i: usize) -> String {
    format!("blocks.{i}.conv.bias")
}
fn skip_w(i: usize) -> String {
    format!("blocks.{i}.skip.weight")
}
fn skip_b(i: usize) -> String {
    format!("blocks.{i}.skip.bias")
}
fn film_w(i: usize, layer: usize) -> String {
    format!("blocks.{i}.film.{layer}.weight")
}
fn film_b(i: usize, layer: usize) -> String {
    format!("blocks.{i}.film.{layer}.bias")
}
const COND_W: &str = "cond_embed.weight";
const COND_B: &str = "cond_embed.bias";
const OUT_W: &str = "out.weight";
const OUT_B: &str = "out.bias";

impl UNetConfig {
    fn effective_groups(&self, channels: usize) -> usize {
        if channels < self.groups {
            1
        } else {
            self.groups
        }
    }

    fn emb_dim(&self) -> usize {
        self.time_dim + self.cond_embed_dim
    }

    /// Number of scalar parameters implied by the architecture.
    pub fn param_count(&self) -> usize {
        let k = self.kernel_size;
        let h = self.film_hidden;
        let e = self.emb_dim();
        let depth = self.channels.len() / 2;
        let mut total = self.cond_embed_dim * self.cond_dim + self.cond_embed_dim;
        for (i, &c_out) in self.channels.iter().enumerate() {
            let c_in = match i {
                0 => 1,
                i if i <= depth => self.channels[i - 1],
                i => self.channels[i - 1] + self.channels[2 * depth - 1 - i],
            };
            total += c_out * c_in * k + c_out;
            total += c_out * c_in + c_out;
            total += h * e + h + 2 * c_out * h + 2 * c_out;
        }
        total + self.channels.last().copied().unwrap_or(0) * k + 1
    }
}

impl Denoiser {
    pub fn new(config: UNetConfig) -> Result<Self, NnError> {
        let bad = |m: String| Err(NnError::Shape(m));
        let n = config.channels.len();
        if n < 2 || !n.is_multiple_of(2) {
            return bad(format!("need an even number (>= 2) of channel entries, got {n}"));
        }
        if config.kernel_size.is_multiple_of(2) || !config.time_dim.is_multiple_of(2) || config.groups == 0 {
            return bad("kernel size must be odd, time_dim even, groups positive".into());
        }
        if [
            config.input_len,
            config.cond_dim,
            config.cond_embed_dim,
            config.film_hidden,
            config.timesteps,
        ]
        .contains(&0)
            || config.channels.contains(&0)
        {
            return bad("dimensions must be positive".into());
        }
        let depth = n / 2;
        if config.downsample_at.iter().any(|&i| i == 0 || i >= depth) {
            return bad(format!("downsample_at entries must lie in 1..{depth}"));
        }
        let mut plan: Vec<BlockPlan> = Vec::with_capacity(n);
        for (i, &c_out) in config.channels.iter().enumerate() {
            let (c_in, len, input) = if i == 0 {
                (1, config.input_len, BlockInput::Signal)
            } else if i < depth {
                let pool = config.downsample_at.contains(&i);
                let prev = &plan[i - 1];
                let len = if pool { prev.len / 2 } else { prev.len };
                (prev.c_out, len, BlockInput::Previous { pool })
            } else if i == depth {
                (plan[i - 1].c_out, plan[i - 1].len, BlockInput::Previous { pool: false })
            } else {
                let skip = 2 * depth - 1 - i;
                let prev = &plan[i - 1];
                (
                    prev.c_out + plan[skip].c_out,
                    plan[skip].len,
                    BlockInput::Skip {
                        skip,
                        from_len: prev.len,
                    },
                )
            };
            if len == 0 {
                return bad(format!("block {i} would have zero length"));
            }
            let groups = config.effective_groups(c_out);
            if c_out % groups != 0 {
                return bad(format!("{c_out} channels not divisible into {groups} groups"));
            }
            plan.push(BlockPlan {
                c_in,
                c_out,
                len,
                groups,
                input,
            });
        }
        Ok(Self { config, plan })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let k = c.kernel_size;
        let mut out = vec![
            (COND_W.to_string(), vec![c.cond_embed_dim, c.cond_dim]),
            (COND_B.to_string(), vec![c.cond_embed_dim]),
        ];
        for (i, b) in self.plan.iter().enumerate() {
            out.push((conv_w(i), vec![b.c_out, b.c_in, k]));
            out.push((conv_b(i), vec![b.c_out]));
            out.push((skip_w(i), vec![b.c_out, b.c_in, 1]));
            out.push((skip_b(i), vec![b.c_out]));
            out.push((film_w(i, 0), vec![c.film_hidden, c.emb_dim()]));
            out.push((film_b(i, 0), vec![c.film_hidden]));
            out.push((film_w(i, 1), vec![2 * b.c_out, c.film_hidden]));
            out.push((film_b(i, 1), vec![2 * b.c_out]));
        }
        let last = self.plan.last().expect("non-empty plan").c_out;
        out.push((OUT_W.to_string(), vec![1, last, k]));
        out.push((OUT_B.to_string(), vec![1]));
        out
    }

    /// Kaiming-uniform (fan-in) weights, zero biases; FiLM generators start at
    /// `γ = 1, β = 0` with small output weights. Shortcuts start at zero.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in self.layout() {
            let count: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let mut bound = (6.0 / fan_in as f64).sqrt();
                if name.ends_with("film.1.weight") {
                    bound *= FILM_OUTPUT_INIT_SCALE;
                }
                if name.ends_with("skip.weight") {
                    bound = 0.0;
                }
                (0..count)
                    .map(|_| T::of((2.0 * rng.random::<f64>() - 1.0) * bound))
                    .collect()
            } else if name.ends_with("film.1.bias") {
                let half = count / 2;
                (0..count)
                    .map(|j| if j < half { T::one() } else { T::zero() })
                    .collect()
            } else {
                vec![T::zero(); count]
            };
            store
                .insert(name, Tensor::new(shape, data).expect("layout shape"))
                .expect("unique layout names");
        }
        store
    }

    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<(), NnError> {
        let layout = self.layout();
        if params.len() != layout.len() {
            return Err(NnError::Shape(format!(
                "expected {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(params.iter()) {
            if name != got_name || t.shape() != shape.as_slice() {
                return Err(NnError::Shape(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_inputs<T: Real>(&self, y: &[T], t: &[usize], c: &[T]) -> Result<usize, NnError> {
        let cfg = &self.config;
        let batch = t.len();
        if batch == 0 || y.len() != batch * cfg.input_len || c.len() != batch * cfg.cond_dim {
            return Err(NnError::Shape(format!(
                "batch {batch}: y has {} values (expected {}), c has {} (expected {})",
                y.len(),
                batch * cfg.input_len,
                c.len(),
                batch * cfg.cond_dim
            )));
        }
        if let Some(&bad) = t.iter().find(|&&t| t >= cfg.timesteps) {
            return Err(NnError::Shape(format!(
                "timestep index {bad} outside 0..{}",
                cfg.timesteps
            )));
        }
        Ok(batch)
    }

    /// Predicted noise for a batch: `y` is `[batch, input_len]`, `t` holds one
    /// timestep index per row and `c` is `[batch, cond_dim]`.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        y: &[T],
        t: &[usize],
        c: &[T],
    ) -> Result<(Vec<T>, ForwardCache<T>), NnError> {
        self.check_params(params)?;
        let batch = self.check_inputs(y, t, c)?;
        let cfg = &self.config;
        let k = cfg.kernel_size;
        let e_dim = cfg.emb_dim();

        let cond_pre = linear_forward(
            c,
            params.slice(COND_W),
            params.slice(COND_B),
            cfg.cond_dim,
            cfg.cond_embed_dim,
        );
        let cond_emb = silu_forward(&cond_pre);
        let mut emb = Vec::with_capacity(batch * e_dim);
        for (b, &tb) in t.iter().enumerate() {
            emb.extend(timestep_embedding::<T>(tb, cfg.time_dim));
            emb.extend_from_slice(&cond_emb[b * cfg.cond_embed_dim..(b + 1) * cfg.cond_embed_dim]);
        }

        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.plan.len());
        let mut caches = Vec::with_capacity(self.plan.len());
        for (i, blk) in self.plan.iter().enumerate() {
            let input = match blk.input {
                BlockInput::Signal => y.to_vec(),
                BlockInput::Previous { pool: false } => outputs[i - 1].clone(),
                BlockInput::Previous { pool: true } => avg_pool2_forward(&outputs[i - 1], self.plan[i - 1].len),
                BlockInput::Skip { skip, from_len } => {
                    let up = upsample_forward(&outputs[i - 1], from_len, blk.len);
                    concat_channels(
                        &up,
                        &outputs[skip],
                        self.plan[i - 1].c_out,
                        self.plan[skip].c_out,
                        blk.len,
                    )
                }
            };
            let h = conv1d_forward(
                &input,
                params.slice(&conv_w(i)),
                params.slice(&conv_b(i)),
                blk.c_in,
                blk.c_out,
                blk.len,
                k,
            );
            let norm = group_norm_forward(&h, blk.c_out, blk.len, blk.groups);

            let film_pre = linear_forward(
                &emb,
                params.slice(&film_w(i, 0)),
                params.slice(&film_b(i, 0)),
                e_dim,
                cfg.film_hidden,
            );
            let film_hidden = silu_forward(&film_pre);
            let gb = linear_forward(
                &film_hidden,
                params.slice(&film_w(i, 1)),
                params.slice(&film_b(i, 1)),
                cfg.film_hidden,
                2 * blk.c_out,
            );
            let (gamma, beta): (Vec<T>, Vec<T>) = {
                let mut g = Vec::with_capacity(batch * blk.c_out);
                let mut be = Vec::with_capacity(batch * blk.c_out);
                for row in gb.chunks_exact(2 * blk.c_out) {
                    g.extend_from_slice(&row[..blk.c_out]);
                    be.extend_from_slice(&row[blk.c_out..]);
                }
                (g, be)
            };
            let modulated = film_forward(&norm.xhat, &gamma, &beta, blk.len);
            let mut out = silu_forward(&modulated);
            let shortcut = conv1d_forward(
                &input,
                params.slice(&skip_w(i)),
                params.slice(&skip_b(i)),
                blk.c_in,
                blk.c_out,
                blk.len,
                1,
            );
            accumulate(&mut out, &shortcut);
            outputs.push(out);
            caches.push(BlockCache {
                input,
                norm,
                modulated,
                gamma,
                film_pre,
                film_hidden,
            });
        }
        let last_blk = self.plan.last().expect("non-empty plan");
        let last = outputs.pop().expect("non-empty outputs");
        let out = conv1d_forward(
            &last,
            params.slice(OUT_W),
            params.slice(OUT_B),
            last_blk.c_out,
            1,
            cfg.input_len,
            k,
        );
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("denoiser output".into()));
        }
        Ok((
            out,
            ForwardCache {
                batch,
                cond: c.to_vec(),
                cond_pre,
                emb,
                blocks: caches,
                last,
            },
        ))
    }

    pub fn predict<T: Real>(&self, params: &ParamStore<T>, y: &[T], t: &[usize], c: &[T]) -> Result<Vec<T>, NnError> {
        self.forward(params, y, t, c).map(|(out, _)| out)
    }

    /// Reverse-mode gradients of a scalar loss given `∂loss/∂output`.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        cache: &ForwardCache<T>,
        grad_output: &[T],
    ) -> Result<ParamStore<T>, NnError> {
        let cfg = &self.config;
        let k = cfg.kernel_size;
        let e_dim = cfg.emb_dim();
        let batch = cache.batch;
        if grad_output.len() != batch * cfg.input_len {
            return Err(NnError::Shape("gradient does not match output shape".into()));
        }
        let mut grads = params.zeros_like();

        let last_blk = self.plan.last().expect("non-empty plan");
        let mut g_outputs: Vec<Vec<T>> = self
            .plan
            .iter()
            .map(|b| vec![T::zero(); batch * b.c_out * b.len])
            .collect();
        {
            let (gw, gb) = two_grads(&mut grads, OUT_W, OUT_B);
            conv1d_backward(
                &cache.last,
                params.slice(OUT_W),
                grad_output,
                last_blk.c_out,
                1,
                cfg.input_len,
                k,
                gw,
                gb,
                g_outputs.last_mut().map(|g| g.as_mut_slice()),
            );
        }

        let mut g_emb = vec![T::zero(); batch * e_dim];
        for i in (0..self.plan.len()).rev() {
            let blk = &self.plan[i];
            let bc = &cache.blocks[i];
            let g = std::mem::take(&mut g_outputs[i]);
            let g_mod = silu_backward(&bc.modulated, &g);
            let (g_xhat, g_gamma, g_beta) = film_backward(&bc.norm.xhat, &bc.gamma, &g_mod, blk.len);
            let g_h = group_norm_backward(&bc.norm, &g_xhat, blk.c_out / blk.groups * blk.len);

            let mut g_input = match blk.input {
                BlockInput::Signal => None,
                _ => Some(vec![T::zero(); bc.input.len()]),
            };
            {
                let (gw, gb) = two_grads(&mut grads, &conv_w(i), &conv_b(i));
                conv1d_backward(
                    &bc.input,
                    params.slice(&conv_w(i)),
                    &g_h,
                    blk.c_in,
                    blk.c_out,
                    blk.len,
                    k,
                    gw,
                    gb,
                    g_input.as_deref_mut(),
                );
            }
            {
                let (gw, gb) = two_grads(&mut grads, &skip_w(i), &skip_b(i));
                conv1d_backward(
                    &bc.input,
                    params.slice(&skip_w(i)),
                    &g,
                    blk.c_in,
                    blk.c_out,
                    blk.len,
                    1,
                    gw,
                    gb,
                    g_input.as_deref_mut(),
                );
            }

            let mut g_gb = Vec::with_capacity(batch * 2 * blk.c_out);
            for b in 0..batch {
                g_gb.extend_from_slice(&g_gamma[b * blk.c_out..(b + 1) * blk.c_out]);
                g_gb.extend_from_slice(&g_beta[b * blk.c_out..(b + 1) * blk.c_out]);
            }
            let mut g_hidden = vec![T::zero(); batch * cfg.film_hidden];
            {
                let (gw, gb) = two_grads(&mut grads, &film_w(i, 1), &film_b(i, 1));
                linear_backward(
                    &bc.film_hidden,
                    params.slice(&film_w(i, 1)),
                    &g_gb,
                    cfg.film_hidden,
                    2 * blk.c_out,
                    gw,
                    gb,
                    Some(&mut g_hidden),
                );
            }
            let g_pre = silu_backward(&bc.film_pre, &g_hidden);
            {
                let (gw, gb) = two_grads(&mut grads, &film_w(i, 0), &film_b(i, 0));
                linear_backward(
                    &cache.emb,
                    params.slice(&film_w(i, 0)),
                    &g_pre,
                    e_dim,
                    cfg.film_hidden,
                    gw,
                    gb,
                    Some(&mut g_emb),
                );
            }

            match (blk.input, g_input) {
                (BlockInput::Signal, _) | (_, None) => {}
                (BlockInput::Previous { pool }, Some(gi)) => {
                    let gi = if pool {
                        avg_pool2_backward(&gi, self.plan[i - 1].len)
                    } else {
                        gi
                    };
                    accumulate(&mut g_outputs[i - 1], &gi);
                }
                (BlockInput::Skip { skip, from_len }, Some(gi)) => {
                    let (g_up, g_skip) = split_channels(&gi, self.plan[i - 1].c_out, self.plan[skip].c_out, blk.len);
                    accumulate(&mut g_outputs[i - 1], &upsample_backward(&g_up, from_len, blk.len));
                    accumulate(&mut g_outputs[skip], &g_skip);
                }
            }
        }

        let mut g_cond_emb = Vec::with_capacity(batch * cfg.cond_embed_dim);
        for row in g_emb.chunks_exact(e_dim) {
            g_cond_emb.extend_from_slice(&row[cfg.time_dim..]);
        }
        let g_cond_pre = silu_backward(&cache.cond_pre, &g_cond_emb);
        let (gw, gb) = two_grads(&mut grads, COND_W, COND_B);
        linear_backward(
            &cache.cond,
            params.slice(COND_W),
            &g_cond_pre,
            cfg.cond_dim,
            cfg.cond_embed_dim,
            gw,
            gb,
            None,
        );
        Ok(grads)
    }

    /// Mean squared error against `target` and its parameter gradients.
    pub fn loss_and_grad<T: Real>(
        &self,
        params: &ParamStore<T>,
        y: &[T],
        t: &[usize],
        c: &[T],
        target: &[T],
    ) -> Result<(f64, ParamStore<T>), NnError> {
        let (pred, cache) = self.forward(params, y, t, c)?;
        let (loss, grad) = mse(&pred, target, pred.len());
        let grads = self.backward(params, &cache, &grad)?;
        Ok((loss, grads))
    }
}

/// `mean((pred − target)²)` over `denominator` elements and its gradient.
pub fn mse<T: Real>(pred: &[T], target: &[T], denominator: usize) -> (f64, Vec<T>) {
    let scale = 1.0 / denominator as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (*p - *t).as_f64();
            loss += d * d;
            T::of(2.0 * d * scale)
        })
        .collect();
    (loss * scale, grad)
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn two_grads<'a, T: Real>(grads: &'a mut ParamStore<T>, w: &str, b: &str) -> (&'a mut [T], &'a mut [T]) {
    // weight and bias are distinct entries; split the borrow through raw indices.
    let wi = grads.names().position(|n| n == w).expect("weight grad");
    let bi = grads.names().position(|n| n == b).expect("bias grad");
    let mut iter = grads.iter_mut().enumerate();
    let mut gw = None;
    let mut gb = None;
    for (idx, (_, t)) in &mut iter {
        if idx == wi {
            gw = Some(t.data_mut());
        } else if idx == bi {
            gb = Some(t.data_mut());
        }
    }
    (gw.expect("weight grad"), gb.expect("bias grad"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> UNetConfig {
        UNetConfig {
            input_len: 12,
            cond_dim: 3,
            channels: vec![2, 4, 4, 8, 8, 4, 4, 2],
            downsample_at: vec![2, 3],
            kernel_size: 3,
            groups: 2,
            time_dim: 4,
            cond_embed_dim: 3,
            film_hidden: 5,
            timesteps: 50,
        }
    }

    fn inputs(batch: usize, cfg: &UNetConfig, seed: u64) -> (Vec<f64>, Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect() };
        let y = r(batch * cfg.input_len);
        let c = r(batch * cfg.cond_dim);
        let target = r(batch * cfg.input_len);
        let t = (0..batch).map(|b| (7 * b + 3) % cfg.timesteps).collect();
        (y, t, c, target)
    }

    #[test]
    fn param_count_matches_layout() {
        for cfg in [
            UNetConfig::default(),
            tiny_config(),
            UNetConfig {
                cond_dim: 7,
                input_len: 27,
                ..UNetConfig::default()
            },
        ] {
            let net = Denoiser::new(cfg.clone()).unwrap();
            let params = net.init_params::<f32>(0);
            assert_eq!(params.scalar_count(), cfg.param_count());
        }
    }

    #[test]
    fn default_plan_lengths() {
        let net = Denoiser::new(UNetConfig::default()).unwrap();
        let lens: Vec<usize> = net.plan.iter().map(|b| b.len).collect();
        assert_eq!(lens, vec![12, 12, 6, 3, 3, 6, 12, 12]);
        let c_in: Vec<usize> = net.plan.iter().map(|b| b.c_in).collect();
        assert_eq!(c_in, vec![1, 16, 32, 64, 128, 192, 96, 48]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Denoiser::new(UNetConfig {
            channels: vec![16, 32, 64],
            ..UNetConfig::default()
        })
        .is_err());
        assert!(Denoiser::new(UNetConfig {
            kernel_size: 2,
            ..UNetConfig::default()
        })
        .is_err());
        assert!(Denoiser::new(UNetConfig {
            downsample_at: vec![0],
            ..UNetConfig::default()
        })
        .is_err());
        assert!(Denoiser::new(UNetConfig {
            input_len: 2,
            ..UNetConfig::default()
        })
        .is_err());
        assert!(Denoiser::new(UNetConfig {
            channels: vec![12, 12],
            groups: 8,
            ..UNetConfig::default()
        })
        .is_err());
    }

    #[test]
    fn output_shape_and_determinism() {
        let net = Denoiser::new(UNetConfig::default()).unwrap();
        let params = net.init_params::<f32>(1);
        let (y, t, c, _) = inputs(3, net.config(), 2);
        let y: Vec<f32> = y.iter().map(|v| *v as f32).collect();
        let c: Vec<f32> = c.iter().map(|v| *v as f32).collect();
        let a = net.predict(&params, &y, &t, &c).unwrap();
        let b = net.predict(&params, &y, &t, &c).unwrap();
        assert_eq!(a.len(), y.len());
        assert_eq!(a, b);
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = Denoiser::new(UNetConfig::default()).unwrap();
        let params = net.init_params::<f32>(1);
        let (y, t, c, _) = inputs(4, net.config(), 3);
        let y: Vec<f32> = y.iter().map(|v| *v as f32).collect();
        let c: Vec<f32> = c.iter().map(|v| *v as f32).collect();
        let all = net.predict(&params, &y, &t, &c).unwrap();
        for b in 0..4 {
            let one = net
                .predict(
                    &params,
                    &y[b * 12..(b + 1) * 12],
                    &t[b..b + 1],
                    &c[b * 10..(b + 1) * 10],
                )
                .unwrap();
            assert_eq!(one, all[b * 12..(b + 1) * 12]);
        }
    }

    #[test]
    fn conditioning_changes_output_at_init() {
        let net = Denoiser::new(UNetConfig::default()).unwrap();
        let params = net.init_params::<f64>(5);
        let (y, t, c, _) = inputs(2, net.config(), 4);
        let base = net.predict(&params, &y, &t, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shifted: Vec<f64> = c.iter().map(|v| v + rng.random::<f64>() - 0.5).collect();
        let moved = net.predict(&params, &y, &t, &shifted).unwrap();
        let diff: f64 = base.iter().zip(&moved).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(diff.sqrt() > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = Denoiser::new(tiny_config()).unwrap();
        let params = net.init_params::<f64>(0);
        let (y, t, c, _) = inputs(2, net.config(), 0);
        assert!(net.predict(&params, &y[1..], &t, &c).is_err());
        assert!(net.predict(&params, &y, &[0, 50], &c).is_err());
        let mut wrong = params.clone();
        wrong.get_mut(OUT_B).unwrap().data_mut()[0] = f64::NAN;
        assert!(matches!(net.predict(&wrong, &y, &t, &c), Err(NnError::NonFinite(_))));
        let other = Denoiser::new(UNetConfig::default()).unwrap().init_params::<f64>(0);
        assert!(net.predict(&other, &y, &t, &c).is_err());
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let net = Denoiser::new(tiny_config()).unwrap();
        let params = net.init_params::<f64>(3);
        let (y, t, c, _) = inputs(2, net.config(), 1);
        let pred = net.predict(&params, &y, &t, &c).unwrap();
        let (loss, grads) = net.loss_and_grad(&params, &y, &t, &c, &pred).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|(_, g)| g.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn every_parameter_matches_finite_differences() {
        let net = Denoiser::new(tiny_config()).unwrap();
        let mut params = net.init_params::<f64>(11);
        // perturb the identity starts so every path carries gradient
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += 0.1 * (rng.random::<f64>() - 0.5);
            }
        }
        let (y, t, c, target) = inputs(3, net.config(), 13);
        let (_, grads) = net.loss_and_grad(&params, &y, &t, &c, &target).unwrap();
        let loss = |p: &ParamStore<f64>| {
            let pred = net.predict(p, &y, &t, &c).unwrap();
            mse(&pred, &target, pred.len()).0
        };
        let h = 1e-5;
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let n = params.get(&name).unwrap().len();
            for j in 0..n {
                let orig = params.get(&name).unwrap().data()[j];
                params.get_mut(&name).unwrap().data_mut()[j] = orig + h;
                let up = loss(&params);
                params.get_mut(&name).unwrap().data_mut()[j] = orig - h;
                let down = loss(&params);
                params.get_mut(&name).unwrap().data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.get(&name).unwrap().data()[j];
                let scale = fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() / scale < 1e-4, "{name}[{j}]: fd {fd} vs {an}");
            }
        }
    }
}
