use std::collections::BTreeMap;
use std::sync::Arc;

use dragstream_core::drag::{DragInstruction, DragMode, Mask, TargetResolution};
use dragstream_core::metrics::{dai, objmc, track_centroid, Track};
use dragstream_core::model::{
    cache_entry, cell_to_pixel, decode_frame, denoise_to, sample_noise, CacheEntry, DenoiserWeights, KvCache,
    LatentFrame, VideoFrame,
};
use dragstream_core::optim::{
    neighbor_stats, neighbor_stats_per_channel, optimize_latent, LatentStats, OptimContext, OptimizationReport,
    RectifyTarget, StatsPooling,
};
use dragstream_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::store::Store;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Streaming,
    Optimizing,
    Paused,
    Closed,
}

/// One entry of the replayable command log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    NextFrame,
    SubmitDrag { instruction: DragInstruction },
    Pause,
    Resume,
}

/// Per-frame state kept while the frame can still be edited or serve as
/// context for an edit.
#[derive(Clone, Debug)]
struct FrameState {
    noise: Tensor,
    /// Latent at T′ after any optimisation.
    z_prime: Tensor,
    clean: Tensor,
    entry: CacheEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub frame_index: usize,
    /// sha256 of the planar RGB bytes.
    pub checksum: String,
    /// Moments of this frame's latent at T′.
    pub latent: LatentStats,
    /// Pooled moments of the recent T′ latents, including this one.
    pub window: LatentStats,
    pub cache_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub frame: VideoFrame,
    pub info: FrameInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulationResult {
    pub mode: DragMode,
    /// Frames produced or re-rendered, in index order.
    pub frames: Vec<FrameInfo>,
    pub reports: Vec<OptimizationReport>,
    pub dai: f64,
    pub objmc: Option<f64>,
    pub track: Option<Track>,
    /// Commanded pixel trajectory of the first handle.
    pub target_pixels: Vec<(f64, f64)>,
    /// Set when the optimiser diverged; the result is then partial.
    pub error: Option<String>,
}

pub fn frame_checksum(frame: &VideoFrame) -> String {
    hex::encode(Sha256::digest(&frame.rgb))
}

/// Scales a latent-grid mask up to decoded pixel resolution.
pub fn upsample_mask(mask: &Mask, s: usize) -> Mask {
    Mask::from_fn(mask.height() * s, mask.width() * s, |r, c| mask.get(r / s, c / s))
}

pub struct Session {
    id: String,
    config: EngineConfig,
    weights: Arc<DenoiserWeights>,
    status: Status,
    next_index: usize,
    cache: KvCache,
    live: BTreeMap<usize, FrameState>,
    sfs_rng: ChaCha20Rng,
    log: Vec<Command>,
    frames: BTreeMap<usize, VideoFrame>,
    clean: BTreeMap<usize, Tensor>,
    results: Vec<ManipulationResult>,
    store: Option<Store>,
}

impl Session {
    pub fn start(id: impl Into<String>, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let weights = Arc::new(DenoiserWeights::init(&config.model)?);
        Self::with_weights(id, config, weights)
    }

    /// Starts a session on shared, already initialised weights.
    pub fn with_weights(id: impl Into<String>, config: EngineConfig, weights: Arc<DenoiserWeights>) -> Result<Self> {
        config.validate()?;
        if weights.config() != &config.model {
            return Err(EngineError::Config("weights were built for a different model config".into()));
        }
        Ok(Self {
            id: id.into(),
            cache: KvCache::new(config.model.cache_len),
            sfs_rng: ChaCha20Rng::seed_from_u64(config.optim.rng_seed),
            config,
            weights,
            status: Status::Streaming,
            next_index: 0,
            live: BTreeMap::new(),
            log: Vec::new(),
            frames: BTreeMap::new(),
            clean: BTreeMap::new(),
            results: Vec::new(),
            store: None,
        })
    }

    /// Persists every subsequent command and output under `store`.
    pub fn attach_store(&mut self, store: Store) -> Result<()> {
        store.init(&self.config)?;
        self.store = Some(store);
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn weights(&self) -> &Arc<DenoiserWeights> {
        &self.weights
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    pub fn log(&self) -> &[Command] {
        &self.log
    }

    pub fn frames(&self) -> &BTreeMap<usize, VideoFrame> {
        &self.frames
    }

    /// Clean latents by frame index.
    pub fn latents(&self) -> &BTreeMap<usize, Tensor> {
        &self.clean
    }

    pub fn results(&self) -> &[ManipulationResult] {
        &self.results
    }

    pub fn latest(&self) -> Option<usize> {
        self.next_index.checked_sub(1)
    }

    /// Latent at T′ of a live frame.
    pub fn latent_at_t_prime(&self, k: usize) -> Option<&Tensor> {
        self.live.get(&k).map(|f| &f.z_prime)
    }

    /// T′ latents of the frames that precede `k` within the statistics window.
    fn window_before(&self, k: usize) -> Vec<&Tensor> {
        let span = self.config.optim.neighbor_window + 1;
        (k.saturating_sub(span)..k)
            .filter_map(|i| self.live.get(&i).map(|f| &f.z_prime))
            .collect()
    }

    /// Pooled moments of the latest T′ latents, as used for the next frame.
    pub fn ring_stats(&self) -> Option<LatentStats> {
        neighbor_stats(&self.window_before(self.next_index))
    }

    fn rectify_target(&self, k: usize) -> Option<RectifyTarget> {
        let window = self.window_before(k);
        match self.config.optim.stats_pooling {
            StatsPooling::Global => neighbor_stats(&window).map(RectifyTarget::Global),
            StatsPooling::PerChannel => neighbor_stats_per_channel(&window).map(RectifyTarget::PerChannel),
        }
    }

    fn context_for(&self, k: usize) -> Result<KvCache> {
        let from = k.saturating_sub(self.config.model.cache_len);
        let entries = (from..k).filter_map(|i| self.live.get(&i).map(|f| f.entry.clone()));
        Ok(KvCache::from_entries(self.config.model.cache_len, entries)?)
    }

    fn retain(&self) -> usize {
        let c = self.config.model.cache_len;
        c + c.max(self.config.optim.neighbor_window + 1)
    }

    fn ensure_status(&self, allowed: &[Status]) -> Result<()> {
        if allowed.contains(&self.status) {
            Ok(())
        } else if self.status == Status::Optimizing {
            Err(EngineError::Busy)
        } else {
            Err(EngineError::Status(self.status))
        }
    }

    /// Applies a logged command; used both live and for replay.
    pub fn apply(&mut self, cmd: &Command) -> Result<()> {
        match cmd {
            Command::NextFrame => self.next_frame().map(|_| ()),
            Command::SubmitDrag { instruction } => self.submit_drag(instruction).map(|_| ()),
            Command::Pause => self.pause(),
            Command::Resume => self.resume(),
        }
    }

    fn record(&mut self, cmd: Command) -> Result<()> {
        if let Some(store) = &self.store {
            store.append_command(&cmd)?;
        }
        self.log.push(cmd);
        Ok(())
    }

    pub fn pause(&mut self) -> Result<()> {
        self.ensure_status(&[Status::Streaming, Status::Paused])?;
        self.status = Status::Paused;
        self.record(Command::Pause)
    }

    pub fn resume(&mut self) -> Result<()> {
        self.ensure_status(&[Status::Streaming, Status::Paused])?;
        self.status = Status::Streaming;
        self.record(Command::Resume)
    }

    pub fn close(&mut self) {
        self.status = Status::Closed;
    }

    /// Denoises frame `k` to T′ in the current cache window.
    fn noise_to_t_prime(&self, k: usize) -> Result<(Tensor, Tensor)> {
        let noise = sample_noise(&self.weights, k, self.config.noise_seed(k));
        let zt = denoise_to(noise.clone(), self.config.optim.t_prime, &self.cache, &self.weights)?;
        Ok((noise.z, zt.z))
    }

    /// Finishes denoising from T′, decodes, and appends frame `k`.
    fn commit_new(&mut self, k: usize, noise: Tensor, z_prime: Tensor) -> Result<FrameOutput> {
        let frame = LatentFrame {
            frame_index: k,
            t: self.config.optim.t_prime,
            z: z_prime.clone(),
        };
        let clean = denoise_to(frame, 0, &self.cache, &self.weights)?;
        let entry = cache_entry(&clean, &self.cache, &self.weights)?;
        self.cache.push(entry.clone())?;
        self.live.insert(
            k,
            FrameState {
                noise,
                z_prime,
                clean: clean.z.clone(),
                entry,
            },
        );
        self.next_index = k + 1;
        while self.live.len() > self.retain() {
            self.live.pop_first();
        }
        self.emit(k, &clean)
    }

    fn emit(&mut self, k: usize, clean: &LatentFrame) -> Result<FrameOutput> {
        let frame = decode_frame(clean, self.config.model.upscale)?;
        let z_prime = &self.live[&k].z_prime;
        let window = neighbor_stats(&self.window_before(k + 1)).unwrap_or_else(|| LatentStats::of(z_prime));
        let info = FrameInfo {
            frame_index: k,
            checksum: frame_checksum(&frame),
            latent: LatentStats::of(z_prime),
            window,
            cache_len: self.cache.len(),
        };
        if let Some(store) = &self.store {
            store.write_frame(&frame, &clean.z)?;
        }
        self.frames.insert(k, frame.clone());
        self.clean.insert(k, clean.z.clone());
        Ok(FrameOutput { frame, info })
    }

    /// Generates the next frame of the stream.
    pub fn next_frame(&mut self) -> Result<FrameOutput> {
        self.ensure_status(&[Status::Streaming])?;
        let k = self.next_index;
        let (noise, zt) = self.noise_to_t_prime(k)?;
        let out = self.commit_new(k, noise, zt)?;
        self.record(Command::NextFrame)?;
        Ok(out)
    }

    /// Runs a drag. Editing replaces a live frame in place and re-renders
    /// the frames after it; Animation appends one optimised frame per
    /// trajectory point.
    pub fn submit_drag(&mut self, instruction: &DragInstruction) -> Result<(ManipulationResult, Vec<FrameOutput>)> {
        self.ensure_status(&[Status::Streaming, Status::Paused])?;
        let grid = (self.config.model.height, self.config.model.width);
        let resolved = instruction.resolve_all(grid)?;
        let k = instruction.frame_index;
        match instruction.mode {
            DragMode::Editing => {
                let oldest = self.next_index.saturating_sub(self.config.model.cache_len);
                if k >= self.next_index || k < oldest || !self.live.contains_key(&k) {
                    return Err(EngineError::StaleFrame { frame: k, oldest });
                }
            }
            DragMode::Animation => {
                if self.latest() != Some(k) {
                    return Err(EngineError::NotLatest {
                        frame: k,
                        latest: self.latest(),
                    });
                }
            }
        }
        let previous = self.status;
        self.status = Status::Optimizing;
        let outcome = match instruction.mode {
            DragMode::Editing => self.run_editing(instruction, &resolved[0]),
            DragMode::Animation => self.run_animation(instruction, &resolved),
        };
        self.status = previous;
        let (result, outputs) = outcome?;
        self.record(Command::SubmitDrag {
            instruction: instruction.clone(),
        })?;
        if let Some(store) = &self.store {
            store.write_result(self.results.len(), &result)?;
        }
        self.results.push(result.clone());
        Ok((result, outputs))
    }

    fn optimise(
        &mut self,
        k_prime: usize,
        z: &Tensor,
        reference: &Tensor,
        cache: &KvCache,
        handles: &[TargetResolution],
        mask: &Mask,
    ) -> Result<(Tensor, OptimizationReport)> {
        let target = self.rectify_target(k_prime);
        let ctx = OptimContext {
            weights: &self.weights,
            cache,
            frame_index: k_prime,
            reference,
        };
        Ok(optimize_latent(
            z,
            handles,
            mask,
            &ctx,
            &self.config.optim,
            target.as_ref(),
            &mut self.sfs_rng,
        )?)
    }

    fn run_editing(
        &mut self,
        instruction: &DragInstruction,
        handles: &[TargetResolution],
    ) -> Result<(ManipulationResult, Vec<FrameOutput>)> {
        let k = instruction.frame_index;
        let t_prime = self.config.optim.t_prime;
        let ctx = self.context_for(k)?;
        let state = self.live[&k].clone();
        let zt = denoise_to(
            LatentFrame {
                frame_index: k,
                t: self.config.model.timesteps,
                z: state.noise.clone(),
            },
            t_prime,
            &ctx,
            &self.weights,
        )?;
        let (z_opt, report) = self.optimise(k, &zt.z, &zt.z, &ctx, handles, &instruction.non_editable)?;
        let error = report.diverged.then(|| format!("optimiser diverged on frame {k}"));
        let clean = denoise_to(
            LatentFrame {
                frame_index: k,
                t: t_prime,
                z: z_opt.clone(),
            },
            0,
            &ctx,
            &self.weights,
        )?;
        let entry = cache_entry(&clean, &ctx, &self.weights)?;
        let original = state.clean.clone();
        self.live.insert(
            k,
            FrameState {
                z_prime: z_opt,
                clean: clean.z.clone(),
                entry,
                ..state
            },
        );
        let mut outputs = vec![self.emit(k, &clean)?];

        // Later frames keep their own T′ latents and re-finish in the edited context.
        for j in k + 1..self.next_index {
            let ctx_j = self.context_for(j)?;
            let st = self.live[&j].clone();
            let clean_j = denoise_to(
                LatentFrame {
                    frame_index: j,
                    t: t_prime,
                    z: st.z_prime.clone(),
                },
                0,
                &ctx_j,
                &self.weights,
            )?;
            let entry_j = cache_entry(&clean_j, &ctx_j, &self.weights)?;
            self.live.insert(
                j,
                FrameState {
                    clean: clean_j.z.clone(),
                    entry: entry_j,
                    ..st
                },
            );
            outputs.push(self.emit(j, &clean_j)?);
        }
        let tail = self.live.range(..self.next_index).map(|(_, f)| f.entry.clone());
        self.cache = KvCache::from_entries(self.config.model.cache_len, tail)?;

        let src: Vec<_> = instruction.handles.iter().map(|h| h.handle_point).collect();
        let dst: Vec<_> = instruction.handles.iter().map(|h| h.trajectory[0]).collect();
        let dai_value = dai(
            &original,
            &self.live[&k].clean,
            &src,
            &dst,
            self.config.metrics.dai_radius,
            self.config.metrics.dai_norm,
        )?;
        let s = self.config.model.upscale;
        let target_pixels = vec![cell_to_pixel((dst[0].0 as f64, dst[0].1 as f64), s)];
        let result = ManipulationResult {
            mode: DragMode::Editing,
            frames: outputs.iter().map(|o| o.info.clone()).collect(),
            reports: vec![report],
            dai: dai_value,
            objmc: None,
            track: None,
            target_pixels,
            error,
        };
        Ok((result, outputs))
    }

    fn run_animation(
        &mut self,
        instruction: &DragInstruction,
        resolved: &[Vec<TargetResolution>],
    ) -> Result<(ManipulationResult, Vec<FrameOutput>)> {
        let k = instruction.frame_index;
        let reference = self.live[&k].z_prime.clone();
        let source_clean = self.live[&k].clean.clone();
        let source_frame = self.frames[&k].clone();
        let mut outputs = Vec::new();
        let mut reports = Vec::new();
        let mut dai_sum = 0.0;
        let mut error = None;
        let src: Vec<_> = instruction.handles.iter().map(|h| h.handle_point).collect();
        for (step, handles) in resolved.iter().enumerate() {
            let k_prime = k + step + 1;
            let (noise, zt) = self.noise_to_t_prime(k_prime)?;
            let cache = self.cache.clone();
            let (z_opt, report) = self.optimise(k_prime, &zt, &reference, &cache, handles, &instruction.non_editable)?;
            let diverged = report.diverged;
            reports.push(report);
            let out = self.commit_new(k_prime, noise, z_opt)?;
            let dst: Vec<_> = instruction.handles.iter().map(|h| h.trajectory[step]).collect();
            dai_sum += dai(
                &source_clean,
                &self.live[&k_prime].clean,
                &src,
                &dst,
                self.config.metrics.dai_radius,
                self.config.metrics.dai_norm,
            )?;
            outputs.push(out);
            if diverged {
                error = Some(format!("optimiser diverged on frame {k_prime}; stopped after it"));
                break;
            }
        }

        let s = self.config.model.upscale;
        let lead = &instruction.handles[0];
        let target_pixels: Vec<_> = lead.trajectory[..outputs.len()]
            .iter()
            .map(|p| cell_to_pixel((p.0 as f64, p.1 as f64), s))
            .collect();
        let (objmc_value, track) = if self.config.metrics.objmc {
            let mut clip = vec![source_frame];
            clip.extend(outputs.iter().map(|o| o.frame.clone()));
            let track = track_centroid(&clip, &upsample_mask(&lead.region, s))?;
            (Some(objmc(&track.points[1..], &target_pixels)?), Some(track))
        } else {
            (None, None)
        };
        let result = ManipulationResult {
            mode: DragMode::Animation,
            frames: outputs.iter().map(|o| o.info.clone()).collect(),
            reports,
            dai: dai_sum / outputs.len().max(1) as f64,
            objmc: objmc_value,
            track,
            target_pixels,
            error,
        };
        Ok((result, outputs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EngineConfig {
        let mut cfg = EngineConfig::default();
        cfg.model.height = 8;
        cfg.model.width = 8;
        cfg
    }

    #[test]
    fn frames_fill_the_cache() {
        let mut s = Session::start("a", small()).unwrap();
        assert_eq!(s.status(), Status::Streaming);
        let occupancy: Vec<_> = (0..4).map(|_| s.next_frame().unwrap().info.cache_len).collect();
        assert_eq!(occupancy, vec![1, 2, 3, 3]);
        assert_eq!(s.latest(), Some(3));
        assert_eq!(s.log().len(), 4);
    }

    #[test]
    fn reported_window_matches_recomputation() {
        let mut s = Session::start("a", small()).unwrap();
        for _ in 0..6 {
            let out = s.next_frame().unwrap();
            let k = out.info.frame_index;
            let lo = k.saturating_sub(3);
            let window: Vec<&Tensor> = (lo..=k).map(|i| s.latent_at_t_prime(i).unwrap()).collect();
            assert_eq!(out.info.window, neighbor_stats(&window).unwrap());
            assert_eq!(s.ring_stats().unwrap(), out.info.window);
        }
    }

    #[test]
    fn same_seed_same_frames() {
        let mut a = Session::start("a", small()).unwrap();
        let mut b = Session::start("b", small()).unwrap();
        for _ in 0..3 {
            assert_eq!(a.next_frame().unwrap().info.checksum, b.next_frame().unwrap().info.checksum);
        }
    }

    #[test]
    fn paused_sessions_refuse_frames() {
        let mut s = Session::start("a", small()).unwrap();
        s.pause().unwrap();
        assert!(matches!(s.next_frame(), Err(EngineError::Status(Status::Paused))));
        s.resume().unwrap();
        s.next_frame().unwrap();
        s.close();
        assert!(s.next_frame().is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = small();
        cfg.optim.layer_set = vec![9];
        assert!(matches!(Session::start("a", cfg), Err(EngineError::Optim(_))));
    }

    #[test]
    fn upsampled_masks_cover_blocks() {
        let m = Mask::rect(2, 2, 0, 1, 0, 1);
        let up = upsample_mask(&m, 3);
        assert_eq!(up.dims(), (6, 6));
        assert_eq!(up.count(), 9);
        assert!(up.get(2, 5) && !up.get(3, 5));
    }
}
