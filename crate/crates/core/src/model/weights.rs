use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{ModelConfig, Result};
use crate::tensor::{fft2, ifft2, ComplexField, Tensor};

// Hidden-dimension layout shared by the embedding and the context head.
pub(crate) const RETRIEVED: usize = 4;
pub(crate) const BIAS: usize = 8;
pub(crate) const KEY_TIME: usize = 9;
pub(crate) const CLEAN: usize = 10;
pub(crate) const VALID: usize = 11;
pub(crate) const POS: usize = 12;
pub(crate) const POS_FREQS: usize = 3;
pub(crate) const TEMPORAL: usize = 24;
pub(crate) const RANDOM: usize = 32;

const POS_SHARPNESS: f64 = 15.0;
const TEMPORAL_SHARPNESS: f64 = 3.0;
const TEMPORAL_PHASE: f64 = PI / 4.0;
const STALE_KEY: f64 = -30.0;
const GAIN: f64 = 0.5;

const BLOB_AMPLITUDE: f64 = 0.3;
const BLOB_SIGMA: f64 = 2.0;
const BLOB_NOISE: f64 = 0.01;
const TEXTURE_GAIN: f64 = 0.15;
const TEXTURE_BANDWIDTH: f64 = 0.08;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

/// Seeded weights of the toy denoiser plus its scene prior.
///
/// Layer 0 head 0 is a fixed context-copy head: it attends from each token to
/// the same spatial position in recent clean cached frames and copies their
/// content and a validity flag into reserved hidden dims. All other heads and
/// MLPs are random and write only into the upper half of the hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserWeights {
    config: ModelConfig,
    embed: Tensor,
    layers: Vec<LayerWeights>,
    prior: Tensor,
    blob_centres: [(usize, usize); 2],
    checksum: String,
}

fn normal(rng: &mut ChaCha20Rng, shape: Vec<usize>, gain: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal) * gain)
        .expect("finite normal draws")
}

fn edit(t: Tensor, f: impl FnOnce(&mut Vec<f64>, usize)) -> Tensor {
    let shape = t.shape().to_vec();
    let cols = shape[1];
    let mut data = t.into_data();
    f(&mut data, cols);
    Tensor::new(shape, data).expect("edited weights stay finite")
}

impl DenoiserWeights {
    /// Builds weights deterministically from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let (c, d) = (config.channels, config.dim);
        let hd = config.head_dim();
        let rd = 1.0 / (d as f64).sqrt();

        let random_embed = normal(&mut rng, vec![c, d - RANDOM], GAIN);
        let embed = Tensor::from_fn(vec![c, d], |i| {
            let (r, col) = (i / d, i % d);
            if col < c {
                if r == col {
                    1.0
                } else {
                    0.0
                }
            } else if col >= RANDOM {
                random_embed.data()[r * (d - RANDOM) + col - RANDOM]
            } else {
                0.0
            }
        })?;

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let wq = normal(&mut rng, vec![d, d], GAIN * rd);
            let wk = normal(&mut rng, vec![d, d], GAIN * rd);
            let wv = normal(&mut rng, vec![d, d], rd);
            let wo = normal(&mut rng, vec![d, d], GAIN * rd);
            let w1 = normal(&mut rng, vec![d, 2 * d], GAIN * rd);
            let w2 = normal(&mut rng, vec![2 * d, d], GAIN / ((2 * d) as f64).sqrt());
            let keep_upper = |w: &mut Vec<f64>, cols: usize| {
                for row in w.chunks_mut(cols) {
                    row[..RANDOM].iter_mut().for_each(|x| *x = 0.0);
                }
            };
            let mut wo = edit(wo, keep_upper);
            let w2 = edit(w2, keep_upper);
            let (mut wq, mut wk, mut wv) = (wq, wk, wv);
            if l == 0 {
                let zero_head = |w: &mut Vec<f64>, cols: usize| {
                    for row in w.chunks_mut(cols) {
                        row[..hd].iter_mut().for_each(|x| *x = 0.0);
                    }
                };
                let pos = (4.0 * POS_SHARPNESS).sqrt();
                let temporal = (4.0 * TEMPORAL_SHARPNESS).sqrt();
                let head = (hd as f64).sqrt();
                wq = edit(wq, |w, cols| {
                    zero_head(w, cols);
                    w[BIAS * cols] = head;
                    for j in 0..4 * POS_FREQS {
                        w[(POS + j) * cols + 1 + j] = pos;
                    }
                    w[TEMPORAL * cols + 13] = temporal;
                    w[(TEMPORAL + 1) * cols + 14] = temporal;
                });
                wk = edit(wk, |w, cols| {
                    zero_head(w, cols);
                    w[KEY_TIME * cols] = 1.0;
                    for j in 0..4 * POS_FREQS {
                        w[(POS + j) * cols + 1 + j] = pos;
                    }
                    w[TEMPORAL * cols + 13] = temporal;
                    w[(TEMPORAL + 1) * cols + 14] = temporal;
                });
                wv = edit(wv, |w, cols| {
                    zero_head(w, cols);
                    for ch in 0..c {
                        w[ch * cols + ch] = 1.0;
                    }
                    w[CLEAN * cols + c] = 1.0;
                });
                wo = edit(wo, |w, cols| {
                    for row in w.chunks_mut(cols).take(hd) {
                        row.iter_mut().for_each(|x| *x = 0.0);
                    }
                    for ch in 0..c {
                        w[ch * cols + RETRIEVED + ch] = 1.0;
                    }
                    w[c * cols + VALID] = 1.0;
                });
            }
            layers.push(LayerWeights { wq, wk, wv, wo, w1, w2 });
        }

        let (prior, blob_centres) = scene_prior(config, &mut rng)?;
        let mut weights = Self {
            config: config.clone(),
            embed,
            layers,
            prior,
            blob_centres,
            checksum: String::new(),
        };
        weights.checksum = weights.compute_checksum();
        Ok(weights)
    }

    fn compute_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serialises"));
        let mut feed = |t: &Tensor| {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        };
        feed(&self.embed);
        for l in &self.layers {
            for t in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2] {
                feed(t);
            }
        }
        feed(&self.prior);
        hex::encode(h.finalize())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn embed(&self) -> &Tensor {
        &self.embed
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    /// Scene prior (C×H×W) that the denoiser falls back to where no cached
    /// context is available.
    pub fn prior(&self) -> &Tensor {
        &self.prior
    }

    /// Cell centres of the prior's two blobs (channel 0 and channel 2).
    pub fn blob_centres(&self) -> [(usize, usize); 2] {
        self.blob_centres
    }

    /// Constant part of the token embedding for timestep `t` of frame
    /// `frame_index`, shape (H·W)×dim.
    pub fn token_embedding(&self, t: usize, frame_index: usize) -> Tensor {
        let cfg = &self.config;
        let (h, w, d) = (cfg.height, cfg.width, cfg.dim);
        let period = 2.0 * h.max(w) as f64;
        let phase = TEMPORAL_PHASE * frame_index as f64;
        let mut data = vec![0.0; h * w * d];
        for (p, row) in data.chunks_mut(d).enumerate() {
            let (r, c) = ((p / w) as f64, (p % w) as f64);
            row[BIAS] = 1.0;
            row[KEY_TIME] = if t == 0 { 0.0 } else { STALE_KEY };
            row[CLEAN] = if t == 0 { 1.0 } else { 0.0 };
            for f in 0..POS_FREQS {
                let om = 2.0 * PI * (f + 1) as f64 / period;
                row[POS + 4 * f] = (om * r).cos();
                row[POS + 4 * f + 1] = (om * r).sin();
                row[POS + 4 * f + 2] = (om * c).cos();
                row[POS + 4 * f + 3] = (om * c).sin();
            }
            row[TEMPORAL] = phase.cos();
            row[TEMPORAL + 1] = phase.sin();
        }
        Tensor::from_parts(vec![h * w, d], data)
    }
}

fn gaussian_blob(h: usize, w: usize, centre: (usize, usize)) -> Vec<f64> {
    let (r0, c0) = (centre.0 as f64, centre.1 as f64);
    (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            BLOB_AMPLITUDE * (-((r - r0).powi(2) + (c - c0).powi(2)) / (2.0 * BLOB_SIGMA.powi(2))).exp()
        })
        .collect()
}

fn signed_freq(i: usize, n: usize) -> f64 {
    let f = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    f / n as f64
}

// Gaussian low-pass of white noise, normalised to unit std.
fn smooth_texture(rng: &mut ChaCha20Rng, h: usize, w: usize) -> Result<Vec<f64>> {
    let noise = normal(rng, vec![h, w], 1.0);
    let spec = fft2(&noise)?;
    let mut re = spec.re().to_vec();
    let mut im = spec.im().to_vec();
    for u in 0..h {
        for v in 0..w {
            let (fu, fv) = (signed_freq(u, h), signed_freq(v, w));
            let g = (-(fu * fu + fv * fv) / (2.0 * TEXTURE_BANDWIDTH.powi(2))).exp();
            re[u * w + v] *= g;
            im[u * w + v] *= g;
        }
    }
    let out = ifft2(&ComplexField::new(vec![h, w], re, im)?)?;
    let sd = out.std();
    Ok(out.data().iter().map(|x| x / sd.max(1e-12)).collect())
}

fn scene_prior(cfg: &ModelConfig, rng: &mut ChaCha20Rng) -> Result<(Tensor, [(usize, usize); 2])> {
    let (h, w) = (cfg.height, cfg.width);
    let (mr, mc) = (h / 4, w / 4);
    let a = (mr + rng.random_range(0..h - 2 * mr), mc + rng.random_range(0..w - 2 * mc));
    let min_sep = (3 * h.min(w)) as f64 / 8.0;
    let dist = |p: (usize, usize)| {
        ((p.0 as f64 - a.0 as f64).powi(2) + (p.1 as f64 - a.1 as f64).powi(2)).sqrt()
    };
    let mut b = (0, 0);
    let mut best = -1.0;
    for _ in 0..64 {
        let cand = (rng.random_range(0..h), rng.random_range(0..w));
        if dist(cand) > best {
            best = dist(cand);
            b = cand;
        }
        if best >= min_sep {
            break;
        }
    }
    let blob_a = gaussian_blob(h, w, a);
    let blob_b = gaussian_blob(h, w, b);
    let n = h * w;
    let noise_a = normal(rng, vec![n], BLOB_NOISE);
    let tex_1 = smooth_texture(rng, h, w)?;
    let noise_b = normal(rng, vec![n], BLOB_NOISE);
    let tex_3 = smooth_texture(rng, h, w)?;
    let mut data = Vec::with_capacity(4 * n);
    data.extend((0..n).map(|i| blob_a[i] + noise_a.data()[i]));
    data.extend((0..n).map(|i| TEXTURE_GAIN * tex_1[i] - 0.5 * blob_a[i]));
    data.extend((0..n).map(|i| blob_b[i] + noise_b.data()[i]));
    data.extend((0..n).map(|i| TEXTURE_GAIN * tex_3[i]));
    Ok((Tensor::new(vec![4, h, w], data)?, [a, b]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_checksum() {
        let cfg = ModelConfig::default();
        let a = DenoiserWeights::init(&cfg).unwrap();
        let b = DenoiserWeights::init(&cfg).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a, b);
        let other = DenoiserWeights::init(&ModelConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
        assert_ne!(a.checksum(), other.checksum());
    }

    #[test]
    fn random_paths_write_only_upper_dims() {
        let w = DenoiserWeights::init(&ModelConfig::default()).unwrap();
        for l in w.layers() {
            for t in [&l.wo, &l.w2] {
                let cols = t.shape()[1];
                for (i, v) in t.data().iter().enumerate() {
                    let (r, c) = (i / cols, i % cols);
                    let crafted = std::ptr::eq(t, &w.layers()[0].wo) && r < 16;
                    if c < RANDOM && !crafted {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn blobs_are_separated_and_inside() {
        for seed in 0..20 {
            let cfg = ModelConfig { seed, ..ModelConfig::default() };
            let w = DenoiserWeights::init(&cfg).unwrap();
            let [a, b] = w.blob_centres();
            assert!((4..12).contains(&a.0) && (4..12).contains(&a.1));
            let d = ((a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2)).sqrt();
            assert!(d >= 6.0, "seed {seed}: {a:?} {b:?}");
        }
    }
}
