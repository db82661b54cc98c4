//! Conditional density model of the cost-to-go: a stack of rational
//! quadratic spline layers, each conditioned on the state through its own
//! small network, with a standard normal base. Training minimizes exact
//! negative log likelihood by hand-written reverse-mode differentiation;
//! value estimates average draws pulled backward through the closed-form
//! spline inverses and are clamped at zero, since a cost-to-go cannot be
//! negative.

mod mlp;
// The spline primitives double as the reference surface for flow
// correctness checks, so test builds get at them directly.
#[cfg(feature = "testutil")]
pub mod spline;
#[cfg(not(feature = "testutil"))]
mod spline;

use crate::rng::{self, role};
use crate::{Error, Result};
use mlp::{Adam, LayerLayout, MlpCache};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MODEL_MAGIC: &[u8; 4] = b"VFM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub bins: usize,
    pub flow_layers: usize,
    pub bound: f64,
    pub min_bin: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 96, bins: 8, flow_layers: 4, bound: 4.0, min_bin: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Samples per gradient accumulation chunk; chunk sums are reduced in a
    /// fixed order so results do not depend on the thread count.
    pub grad_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch_size: 256, epochs: 200, grad_chunk: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub epochs: usize,
}

#[derive(Clone)]
pub struct ValueModel {
    cfg: ModelConfig,
    n_ctx: usize,
    layouts: Vec<LayerLayout>,
    params: Vec<f64>,
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    j_mean: f64,
    j_std: f64,
    normalized: bool,
}

impl ValueModel {
    pub fn new(n_ctx: usize, cfg: ModelConfig, master_seed: u64) -> Self {
        assert!(n_ctx > 0 && cfg.bins >= 2 && cfg.flow_layers >= 1);
        let n_out = 3 * cfg.bins - 1;
        let mut layouts = Vec::with_capacity(cfg.flow_layers);
        let mut off = 0;
        for _ in 0..cfg.flow_layers {
            let l = LayerLayout::new(off, n_ctx, cfg.hidden, n_out);
            off = l.end;
            layouts.push(l);
        }
        let mut params = vec![0.0; off];
        for (i, l) in layouts.iter().enumerate() {
            let mut rng = rng::stream(master_seed, &[role::TRAIN_INIT, i as u64]);
            l.init(&mut params, &mut rng);
        }
        Self {
            cfg,
            n_ctx,
            layouts,
            params,
            x_mean: vec![0.0; n_ctx],
            x_std: vec![1.0; n_ctx],
            j_mean: 0.0,
            j_std: 1.0,
            normalized: false,
        }
    }

    pub fn n_ctx(&self) -> usize {
        self.n_ctx
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    #[cfg(any(test, feature = "testutil"))]
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mean NLL with its parameter gradient, for finite-difference checks
    /// against the analytic backward pass.
    #[cfg(any(test, feature = "testutil"))]
    pub fn nll_gradient(&self, states: &[f64], costs: &[f64]) -> (Vec<f64>, f64) {
        let idx: Vec<usize> = (0..costs.len()).collect();
        self.batch_gradient(states, costs, &idx, 8)
    }

    /// Input statistics are frozen the first time training runs so that
    /// warm-started refits keep operating on the same feature scale.
    pub fn fit_normalizers(&mut self, states: &[f64], costs: &[f64]) {
        let n = costs.len();
        assert!(n > 0 && states.len() == n * self.n_ctx);
        for d in 0..self.n_ctx {
            let mean = (0..n).map(|i| states[i * self.n_ctx + d]).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|i| (states[i * self.n_ctx + d] - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            self.x_mean[d] = mean;
            self.x_std[d] = var.sqrt().max(1e-6);
        }
        let jm = costs.iter().sum::<f64>() / n as f64;
        let jv = costs.iter().map(|j| (j - jm).powi(2)).sum::<f64>() / n as f64;
        self.j_mean = jm;
        self.j_std = jv.sqrt().max(1e-6);
        self.normalized = true;
    }

    fn normalize_ctx(&self, x: &[f64], out: &mut [f64]) {
        for d in 0..self.n_ctx {
            out[d] = (x[d] - self.x_mean[d]) / self.x_std[d];
        }
    }

    /// Spline parameter sets for one (normalized) context.
    fn condition(&self, ctx: &[f64]) -> Vec<spline::SplineParams> {
        let n_out = 3 * self.cfg.bins - 1;
        let mut cache = MlpCache::new(self.cfg.hidden);
        let mut raw = vec![0.0; n_out];
        self.layouts
            .iter()
            .map(|l| {
                mlp::mlp_forward(l, &self.params, ctx, &mut cache, &mut raw);
                spline::build_params(&raw, self.cfg.bins, self.cfg.bound, self.cfg.min_bin)
            })
            .collect()
    }

    /// Negative log likelihood of one (state, cost) pair under the model.
    pub fn nll(&self, x: &[f64], j: f64) -> f64 {
        let mut ctx = vec![0.0; self.n_ctx];
        self.normalize_ctx(x, &mut ctx);
        let sp = self.condition(&ctx);
        let mut v = (j - self.j_mean) / self.j_std;
        let mut ld_sum = 0.0;
        for p in &sp {
            let (y, ld, _) = spline::forward(p, v);
            v = y;
            ld_sum += ld;
        }
        0.5 * v * v + 0.5 * LN_2PI - ld_sum + self.j_std.ln()
    }

    pub fn mean_nll(&self, states: &[f64], costs: &[f64]) -> f64 {
        let n = costs.len();
        let total: f64 = (0..n)
            .map(|i| self.nll(&states[i * self.n_ctx..(i + 1) * self.n_ctx], costs[i]))
            .sum();
        total / n as f64
    }

    /// Loss and parameter gradient for one sample (normalized inputs; the
    /// constant corrections for the cost scale are left to the caller).
    fn sample_loss_grad(&self, ctx: &[f64], j_norm: f64, grad: &mut [f64]) -> f64 {
        let layers = self.cfg.flow_layers;
        let n_out = 3 * self.cfg.bins - 1;
        let mut caches: Vec<MlpCache> = Vec::with_capacity(layers);
        let mut sp = Vec::with_capacity(layers);
        let mut sc = Vec::with_capacity(layers);
        let mut raw = vec![0.0; n_out];
        let mut v = j_norm;
        let mut ld_sum = 0.0;
        for l in &self.layouts {
            let mut cache = MlpCache::new(self.cfg.hidden);
            mlp::mlp_forward(l, &self.params, ctx, &mut cache, &mut raw);
            let p = spline::build_params(&raw, self.cfg.bins, self.cfg.bound, self.cfg.min_bin);
            let (y, ld, c) = spline::forward(&p, v);
            v = y;
            ld_sum += ld;
            caches.push(cache);
            sp.push(p);
            sc.push(c);
        }
        let z = v;
        let nll = 0.5 * z * z + 0.5 * LN_2PI - ld_sum;

        let mut g_out = z;
        let mut g_raw = vec![0.0; n_out];
        for l in (0..layers).rev() {
            g_raw.iter_mut().for_each(|g| *g = 0.0);
            let g_in = spline::backward(&sp[l], &sc[l], g_out, -1.0, &mut g_raw);
            mlp::mlp_backward(&self.layouts[l], &self.params, ctx, &caches[l], &g_raw, grad);
            g_out = g_in;
        }
        nll
    }

    /// Mean loss and gradient over the index set. Work is split into fixed
    /// chunks whose partial sums are combined in index order.
    fn batch_gradient(
        &self,
        states: &[f64],
        costs: &[f64],
        idx: &[usize],
        chunk: usize,
    ) -> (Vec<f64>, f64) {
        let chunks: Vec<&[usize]> = idx.chunks(chunk.max(1)).collect();
        let partials: Vec<(Vec<f64>, f64)> = chunks
            .par_iter()
            .map(|c| {
                let mut g = vec![0.0; self.params.len()];
                let mut loss = 0.0;
                let mut ctx = vec![0.0; self.n_ctx];
                for &i in c.iter() {
                    self.normalize_ctx(&states[i * self.n_ctx..(i + 1) * self.n_ctx], &mut ctx);
                    let jn = (costs[i] - self.j_mean) / self.j_std;
                    loss += self.sample_loss_grad(&ctx, jn, &mut g);
                }
                (g, loss)
            })
            .collect();
        let inv = 1.0 / idx.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (g, l) in partials {
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
            loss += l;
        }
        grad.iter_mut().for_each(|g| *g *= inv);
        (grad, loss * inv + self.j_std.ln())
    }

    /// Likelihood training with a fresh optimizer; pass a distinct `round`
    /// per refit so the shuffle streams never repeat.
    pub fn train(
        &mut self,
        states: &[f64],
        costs: &[f64],
        tc: &TrainConfig,
        master_seed: u64,
        round: u64,
    ) -> Result<TrainStats> {
        let n = costs.len();
        if n == 0 || states.len() != n * self.n_ctx {
            return Err(Error::TrainingFailure(format!(
                "dataset shape mismatch: {} states for {} costs",
                states.len() / self.n_ctx.max(1),
                n
            )));
        }
        if !self.normalized {
            self.fit_normalizers(states, costs);
        }
        let initial_nll = self.mean_nll(states, costs);
        let mut adam = Adam::new(self.params.len(), tc.lr);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..tc.epochs {
            let mut rng =
                rng::stream(master_seed, &[role::TRAIN_SHUFFLE, round, epoch as u64]);
            // Fisher-Yates on the index order.
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for batch in order.chunks(tc.batch_size) {
                let (grad, loss) = self.batch_gradient(states, costs, batch, tc.grad_chunk);
                if !loss.is_finite() {
                    return Err(Error::TrainingFailure(format!(
                        "non-finite loss at epoch {epoch}"
                    )));
                }
                adam.step(&mut self.params, &grad);
            }
        }
        let final_nll = self.mean_nll(states, costs);
        if !final_nll.is_finite() {
            return Err(Error::TrainingFailure("non-finite loss after training".into()));
        }
        Ok(TrainStats { initial_nll, final_nll, epochs: tc.epochs })
    }

    /// Expected cost-to-go per state: the given base draws are pulled
    /// backward through the spline stack and averaged, sharing the same
    /// draws across all states, then clamped at zero.
    pub fn value_estimate(&self, states: &[f64], z_draws: &[f64]) -> Vec<f64> {
        assert!(!z_draws.is_empty());
        let n = states.len() / self.n_ctx;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut ctx = vec![0.0; self.n_ctx];
                self.normalize_ctx(&states[i * self.n_ctx..(i + 1) * self.n_ctx], &mut ctx);
                let sp = self.condition(&ctx);
                let mut sum = 0.0;
                for &z in z_draws {
                    let mut v = z;
                    for p in sp.iter().rev() {
                        v = spline::inverse(p, v);
                    }
                    sum += v;
                }
                let j = self.j_mean + self.j_std * sum / z_draws.len() as f64;
                j.max(0.0)
            })
            .collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(64 + self.params.len() * 8);
        bytes.extend_from_slice(MODEL_MAGIC);
        for v in [
            self.n_ctx as u32,
            self.cfg.hidden as u32,
            self.cfg.bins as u32,
            self.cfg.flow_layers as u32,
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.cfg.bound, self.cfg.min_bin, self.j_mean, self.j_std] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(self.normalized as u8);
        for v in self.x_mean.iter().chain(&self.x_std) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::fsio::write_atomic(path, &bytes)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MODEL_MAGIC {
            return Err(Error::Checkpoint("bad model file magic".into()));
        }
        let n_ctx = cur.u32()? as usize;
        let hidden = cur.u32()? as usize;
        let bins = cur.u32()? as usize;
        let flow_layers = cur.u32()? as usize;
        let bound = cur.f64()?;
        let min_bin = cur.f64()?;
        let j_mean = cur.f64()?;
        let j_std = cur.f64()?;
        let normalized = cur.take(1)?[0] != 0;
        if n_ctx == 0 || bins < 2 || flow_layers == 0 || hidden == 0 {
            return Err(Error::Checkpoint("corrupt model dimensions".into()));
        }
        let mut x_mean = vec![0.0; n_ctx];
        let mut x_std = vec![0.0; n_ctx];
        for v in x_mean.iter_mut().chain(x_std.iter_mut()) {
            *v = cur.f64()?;
        }
        let n_params = cur.u64()? as usize;
        let cfg = ModelConfig { hidden, bins, flow_layers, bound, min_bin };
        let mut model = Self::new(n_ctx, cfg, 0);
        if model.params.len() != n_params {
            return Err(Error::Checkpoint("model parameter count mismatch".into()));
        }
        for v in model.params.iter_mut() {
            *v = cur.f64()?;
        }
        model.x_mean = x_mean;
        model.x_std = x_std;
        model.j_mean = j_mean;
        model.j_std = j_std;
        model.normalized = normalized;
        Ok(model)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deterministic standard normal draws for value sampling, keyed per control
/// step so every state in a batch shares the same set.
pub fn draw_latents(master_seed: u64, iteration: u64, step: u64, m: usize) -> Vec<f64> {
    let mut rng = rng::stream(master_seed, &[role::VALUE_LATENT, iteration, step]);
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..m)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            unit.inverse_cdf(u)
        })
        .collect()
}
