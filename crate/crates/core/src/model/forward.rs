use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::weights::{RETRIEVED, VALID};
use super::{CacheEntry, DenoiserWeights, KvCache, LatentFrame, ModelError, Result};
use crate::tensor::{GradTape, SpatialFilter, Tensor, Var};

/// Frequency filtering of attention keys/values for a set of layers.
#[derive(Clone, Debug)]
pub struct SfsSpec {
    pub filter: Arc<SpatialFilter>,
    pub layers: Vec<usize>,
}

impl SfsSpec {
    fn applies_to(&self, layer: usize) -> bool {
        !self.filter.is_identity() && self.layers.contains(&layer)
    }
}

/// Per-layer hidden states (concatenated) for a layer set.
///
/// Stored token-major: row `p = r·W + c` holds the `channels` features of
/// cell (r, c).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub data: Tensor,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    /// Feature vector of one cell.
    pub fn column(&self, cell: (usize, usize)) -> &[f64] {
        let d = self.channels();
        let p = cell.0 * self.width + cell.1;
        &self.data.data()[p * d..(p + 1) * d]
    }
}

/// Tape handles produced by one pass of the block stack.
pub struct Trace {
    /// Hidden state after each layer, (H·W)×dim.
    pub hidden: Vec<Var>,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

fn check_layers(weights: &DenoiserWeights, layers: &[usize]) -> Result<()> {
    let n = weights.config().layers;
    if layers.is_empty() {
        return Err(ModelError::State("layer set is empty".into()));
    }
    match layers.iter().find(|&&l| l >= n) {
        Some(&layer) => Err(ModelError::LayerOutOfRange { layer, layers: n }),
        None => Ok(()),
    }
}

fn check_latent(weights: &DenoiserWeights, z: &[usize]) -> Result<()> {
    let c = weights.config();
    if z != [c.channels, c.height, c.width] {
        return Err(ModelError::State(format!(
            "latent shape {z:?} does not match the model grid {:?}",
            [c.channels, c.height, c.width]
        )));
    }
    Ok(())
}

/// Runs the block stack on `z` (a C×H×W tape value) for frame `frame_index`
/// at timestep `t`, attending over `Concat(cached, current)` keys/values.
/// Stops after layer `last_layer`.
#[allow(clippy::too_many_arguments)]
pub fn forward_on_tape(
    tape: &mut GradTape,
    weights: &DenoiserWeights,
    z: Var,
    frame_index: usize,
    t: usize,
    cache: &KvCache,
    sfs: Option<&SfsSpec>,
    last_layer: usize,
) -> Result<Trace> {
    let cfg = weights.config();
    check_latent(weights, tape.shape(z))?;
    let n = cfg.tokens();
    let flat = tape.reshape(z, vec![cfg.channels, n])?;
    let tokens = tape.transpose(flat)?;
    let embed = tape.constant(weights.embed().clone());
    let lifted = tape.matmul(tokens, embed)?;
    let emb = tape.constant(weights.token_embedding(t, frame_index));
    let mut h = tape.add(lifted, emb)?;

    let mut trace = Trace {
        hidden: Vec::new(),
        keys: Vec::new(),
        values: Vec::new(),
    };
    for (l, lw) in weights.layers().iter().enumerate().take(last_layer + 1) {
        let wq = tape.constant(lw.wq.clone());
        let wk = tape.constant(lw.wk.clone());
        let wv = tape.constant(lw.wv.clone());
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        trace.keys.push(k);
        trace.values.push(v);

        let filter = sfs.filter(|s| s.applies_to(l)).map(|s| s.filter.clone());
        let mut k_parts = Vec::with_capacity(cache.len() + 1);
        let mut v_parts = Vec::with_capacity(cache.len() + 1);
        for entry in cache.entries() {
            let (ck, cv) = (&entry.keys[l], &entry.values[l]);
            let (ck, cv) = match &filter {
                // Cached context is detached history: filter outside the tape.
                Some(f) => {
                    let cols = ck.shape()[1];
                    (
                        Tensor::new(ck.shape().to_vec(), f.apply_frames(ck.data(), cols))?,
                        Tensor::new(cv.shape().to_vec(), f.apply_frames(cv.data(), cols))?,
                    )
                }
                None => (ck.clone(), cv.clone()),
            };
            k_parts.push(tape.constant(ck));
            v_parts.push(tape.constant(cv));
        }
        let (k_cur, v_cur) = match &filter {
            Some(f) => (
                tape.spatial_filter(k, f.clone())?,
                tape.spatial_filter(v, f.clone())?,
            ),
            None => (k, v),
        };
        k_parts.push(k_cur);
        v_parts.push(v_cur);
        let k_all = tape.concat_rows(&k_parts)?;
        let v_all = tape.concat_rows(&v_parts)?;
        let att = tape.attention(q, k_all, v_all, cfg.heads)?;
        let wo = tape.constant(lw.wo.clone());
        let o = tape.matmul(att, wo)?;
        h = tape.add(h, o)?;
        let w1 = tape.constant(lw.w1.clone());
        let w2 = tape.constant(lw.w2.clone());
        let pre = tape.matmul(h, w1)?;
        let act = tape.tanh(pre);
        let mlp = tape.matmul(act, w2)?;
        h = tape.add(h, mlp)?;
        trace.hidden.push(h);
    }
    Ok(trace)
}

/// Context-gated estimate of the clean latent from the final hidden state.
fn clean_estimate(weights: &DenoiserWeights, hidden: &[f64]) -> Vec<f64> {
    let cfg = weights.config();
    let (n, d, c) = (cfg.tokens(), cfg.dim, cfg.channels);
    let prior = weights.prior().data();
    let mut mu = vec![0.0; c * n];
    for p in 0..n {
        let row = &hidden[p * d..(p + 1) * d];
        let valid = row[VALID];
        for ch in 0..c {
            mu[ch * n + p] = valid * row[RETRIEVED + ch] + (1.0 - valid) * prior[ch * n + p];
        }
    }
    mu
}

/// One denoising step `t → t−1`: `z − step_t·(z − x̂₀)`.
pub fn denoise_step(frame: &LatentFrame, cache: &KvCache, weights: &DenoiserWeights) -> Result<LatentFrame> {
    if frame.t == 0 {
        return Err(ModelError::State("frame is already clean (t = 0)".into()));
    }
    let cfg = weights.config();
    if frame.t > cfg.timesteps {
        return Err(ModelError::State(format!("timestep {} exceeds T = {}", frame.t, cfg.timesteps)));
    }
    let mut tape = GradTape::new();
    let z = tape.constant(frame.z.clone());
    let trace = forward_on_tape(&mut tape, weights, z, frame.frame_index, frame.t, cache, None, cfg.layers - 1)?;
    let last = *trace.hidden.last().expect("at least one layer");
    let mu = clean_estimate(weights, tape.data(last));
    let step = cfg.step_size(frame.t);
    let next: Vec<f64> = frame
        .z
        .data()
        .iter()
        .zip(&mu)
        .map(|(z, m)| z - step * (z - m))
        .collect();
    Ok(LatentFrame {
        frame_index: frame.frame_index,
        t: frame.t - 1,
        z: Tensor::new(frame.z.shape().to_vec(), next)?,
    })
}

/// Denoises until the frame reaches timestep `until`.
pub fn denoise_to(
    mut frame: LatentFrame,
    until: usize,
    cache: &KvCache,
    weights: &DenoiserWeights,
) -> Result<LatentFrame> {
    if until > frame.t {
        return Err(ModelError::State(format!("cannot denoise from t={} up to t={until}", frame.t)));
    }
    while frame.t > until {
        frame = denoise_step(&frame, cache, weights)?;
    }
    Ok(frame)
}

/// Standard-normal latent at t = T.
pub fn sample_noise(weights: &DenoiserWeights, frame_index: usize, noise_seed: u64) -> LatentFrame {
    let cfg = weights.config();
    let mut rng = ChaCha20Rng::seed_from_u64(noise_seed);
    let z = Tensor::from_fn(vec![cfg.channels, cfg.height, cfg.width], |_| {
        rng.sample::<f64, _>(StandardNormal)
    })
    .expect("finite normal draws");
    LatentFrame {
        frame_index,
        t: cfg.timesteps,
        z,
    }
}

/// Keys and values of a clean frame, as they enter the cache.
pub fn cache_entry(frame: &LatentFrame, cache: &KvCache, weights: &DenoiserWeights) -> Result<CacheEntry> {
    if frame.t != 0 {
        return Err(ModelError::State("only clean frames enter the cache".into()));
    }
    let cfg = weights.config();
    let mut tape = GradTape::new();
    let z = tape.constant(frame.z.clone());
    let trace = forward_on_tape(&mut tape, weights, z, frame.frame_index, 0, cache, None, cfg.layers - 1)?;
    Ok(CacheEntry {
        frame_index: frame.frame_index,
        keys: trace.keys.iter().map(|k| tape.value(*k)).collect(),
        values: trace.values.iter().map(|v| tape.value(*v)).collect(),
    })
}

/// Samples, fully denoises and caches one frame.
pub fn generate_frame(
    cache: &KvCache,
    weights: &DenoiserWeights,
    frame_index: usize,
    noise_seed: u64,
) -> Result<(LatentFrame, KvCache)> {
    let noise = sample_noise(weights, frame_index, noise_seed);
    let clean = denoise_to(noise, 0, cache, weights)?;
    let entry = cache_entry(&clean, cache, weights)?;
    let mut next = cache.clone();
    next.push(entry)?;
    Ok((clean, next))
}

/// Records the feature path for a tape latent and returns the concatenated
/// (H·W)×D_f feature matrix.
#[allow(clippy::too_many_arguments)]
pub fn features_on_tape(
    tape: &mut GradTape,
    weights: &DenoiserWeights,
    z: Var,
    frame_index: usize,
    t: usize,
    cache: &KvCache,
    layer_set: &[usize],
    sfs: Option<&SfsSpec>,
) -> Result<Var> {
    check_layers(weights, layer_set)?;
    let last = *layer_set.iter().max().expect("non-empty");
    let trace = forward_on_tape(tape, weights, z, frame_index, t, cache, sfs, last)?;
    let parts: Vec<Var> = layer_set.iter().map(|&l| trace.hidden[l]).collect();
    Ok(tape.concat_cols(&parts)?)
}

/// Detached features of `frame` at `layer_set`.
pub fn extract_features(
    frame: &LatentFrame,
    cache: &KvCache,
    weights: &DenoiserWeights,
    layer_set: &[usize],
    sfs: Option<&SfsSpec>,
) -> Result<FeatureMap> {
    let cfg = weights.config();
    let mut tape = GradTape::new();
    let z = tape.constant(frame.z.clone());
    let f = features_on_tape(&mut tape, weights, z, frame.frame_index, frame.t, cache, layer_set, sfs)?;
    Ok(FeatureMap {
        height: cfg.height,
        width: cfg.width,
        data: tape.value(f),
    })
}
