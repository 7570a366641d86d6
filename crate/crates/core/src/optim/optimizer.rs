use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::css::{css_map, BoxSpec, CssMap};
use super::loss::{build_reference, expand_mask, total_loss, LossTerms};
use super::sfs::{draw_cutoff, sfs_spec};
use super::stats::{rectify, LatentStats, RectifyTarget};
use super::{OptimConfig, OptimError, OptimizerKind, Result};
use crate::drag::{Mask, TargetResolution};
use crate::model::{extract_features, features_on_tape, DenoiserWeights, FeatureMap, KvCache, LatentFrame};
use crate::tensor::{GradTape, Tensor, Var};

/// Everything the feature extractor needs besides the latent itself.
#[derive(Clone, Copy)]
pub struct OptimContext<'a> {
    pub weights: &'a DenoiserWeights,
    /// Context window the optimised frame attends to.
    pub cache: &'a KvCache,
    /// Index of the frame being optimised.
    pub frame_index: usize,
    /// Latent at T′ whose features are dragged (frame k).
    pub reference: &'a Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub omega: f64,
    pub l_rec: f64,
    pub l_cst: f64,
    pub l_tot: f64,
    /// Latent statistics after the update, before rectification.
    pub pre: LatentStats,
    /// Latent statistics after rectification.
    pub post: LatentStats,
    pub rectified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub frame_index: usize,
    pub iterations: Vec<IterationRecord>,
    pub target: Option<RectifyTarget>,
    /// Unfiltered losses at the starting latent.
    pub initial: LossTerms,
    /// Unfiltered losses at the returned latent.
    #[serde(rename = "final")]
    pub final_: LossTerms,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn direction(&mut self, g: &[f64], step: usize, cfg: &OptimConfig) -> Vec<f64> {
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(step as i32);
        let c2 = 1.0 - b2.powi(step as i32);
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&gi, (m, v))| {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                (*m / c1) / ((*v / c2).sqrt() + cfg.eps)
            })
            .collect()
    }
}

struct References {
    init: FeatureMap,
    reference: FeatureMap,
}

/// Iteratively drags the features of `z` (at T′) so that every handle's
/// source features reappear at its target cells while the non-editable
/// region keeps its initial features.
///
/// Each iteration draws a cutoff, extracts frequency-filtered features,
/// takes an optimiser step scaled per handle by its CSS map, and re-matches
/// the latent moments to `target` when given.
pub fn optimize_latent(
    z: &Tensor,
    handles: &[TargetResolution],
    non_editable: &Mask,
    ctx: &OptimContext<'_>,
    cfg: &OptimConfig,
    target: Option<&RectifyTarget>,
    rng: &mut impl Rng,
) -> Result<(Tensor, OptimizationReport)> {
    let mcfg = ctx.weights.config();
    cfg.validate(mcfg)?;
    let grid = (mcfg.height, mcfg.width);
    let shape = [mcfg.channels, mcfg.height, mcfg.width];
    if z.shape() != shape || ctx.reference.shape() != shape {
        return Err(OptimError::Shape(format!(
            "latents {:?} / {:?} do not match the model grid {shape:?}",
            z.shape(),
            ctx.reference.shape()
        )));
    }
    if handles.is_empty() {
        return Err(OptimError::Shape("no handles to optimise".into()));
    }
    if non_editable.dims() != grid || handles.iter().any(|h| h.target.dims() != grid) {
        return Err(OptimError::Shape("mask dims do not match the latent grid".into()));
    }

    let d_f = mcfg.dim * cfg.layer_set.len();
    let m_exp = expand_mask(non_editable, d_f);
    let y_exp: Vec<Tensor> = handles.iter().map(|h| expand_mask(&h.target, d_f)).collect();
    let maps: Vec<CssMap> = handles
        .iter()
        .map(|h| {
            let bbox = BoxSpec::of_mask(&h.target);
            match (cfg.css, bbox) {
                (true, Some(b)) => css_map(b, cfg.css_alpha, grid),
                _ => CssMap::uniform(grid),
            }
        })
        .collect();

    let z_init = z.clone();
    let frame = |z: &Tensor| LatentFrame {
        frame_index: ctx.frame_index,
        t: cfg.t_prime,
        z: z.clone(),
    };
    let compute_refs = |omega: f64| -> Result<References> {
        let spec = sfs_spec(omega, cfg.butterworth_order, grid, &cfg.layer_set)?;
        let sfs = (omega < 1.0).then_some(&spec);
        Ok(References {
            init: extract_features(&frame(&z_init), ctx.cache, ctx.weights, &cfg.layer_set, sfs)?,
            reference: extract_features(&frame(ctx.reference), ctx.cache, ctx.weights, &cfg.layer_set, sfs)?,
        })
    };
    let mut refs: HashMap<u64, References> = HashMap::new();
    let ensure = |refs: &mut HashMap<u64, References>, omega: f64| -> Result<u64> {
        let key = omega.to_bits();
        if let Entry::Vacant(slot) = refs.entry(key) {
            slot.insert(compute_refs(omega)?);
        }
        Ok(key)
    };

    let evaluate = |z: &Tensor, r: &References| -> Result<LossTerms> {
        let f = extract_features(&frame(z), ctx.cache, ctx.weights, &cfg.layer_set, None)?;
        let mut terms = LossTerms::default();
        for (i, h) in handles.iter().enumerate() {
            let mapped = build_reference(&r.reference, &h.mapping);
            let t = total_loss(&f, &mapped, &h.target, &r.init, non_editable, cfg.reduction)?;
            terms.rec += t.rec;
            if i == 0 {
                terms.cst = t.cst;
            }
        }
        terms.total = terms.rec + terms.cst;
        Ok(terms)
    };
    let unit = ensure(&mut refs, 1.0)?;
    let initial = evaluate(&z_init, &refs[&unit])?;

    let mut report = OptimizationReport {
        frame_index: ctx.frame_index,
        iterations: Vec::with_capacity(cfg.iterations),
        target: target.cloned(),
        initial,
        final_: initial,
        diverged: false,
        warnings: Vec::new(),
    };
    if target.is_none() && cfg.adsr {
        report
            .warnings
            .push("no neighbouring statistics; rectification skipped".into());
    }

    let n = z.len();
    let mut adam: Vec<Adam> = handles.iter().map(|_| Adam::new(n)).collect();
    let mut z = z.clone();
    for it in 0..cfg.iterations {
        let omega = if cfg.sfs { draw_cutoff(&cfg.cutoffs, rng) } else { 1.0 };
        let spec = sfs_spec(omega, cfg.butterworth_order, grid, &cfg.layer_set)?;
        let key = ensure(&mut refs, omega)?;
        let r = &refs[&key];

        let mut tape = GradTape::new();
        let zv = tape.leaf(z.clone().with_grad());
        let f = features_on_tape(
            &mut tape,
            ctx.weights,
            zv,
            ctx.frame_index,
            cfg.t_prime,
            ctx.cache,
            &cfg.layer_set,
            (omega < 1.0).then_some(&spec),
        )?;
        let f_init = tape.constant(r.init.data.clone());
        let cst = tape.l1_loss(f, f_init, &m_exp, cfg.reduction)?;
        let mut l_rec = 0.0;
        let mut losses: Vec<Option<Var>> = Vec::with_capacity(handles.len());
        for (h, y) in handles.iter().zip(&y_exp) {
            let mapped = build_reference(&r.reference, &h.mapping);
            let fm = tape.constant(mapped.data);
            let rec = tape.l1_loss(f, fm, y, cfg.reduction)?;
            l_rec += tape.scalar(rec)?;
            losses.push(match (cfg.use_rec, cfg.use_cst) {
                (true, true) => Some(tape.add(rec, cst)?),
                (true, false) => Some(rec),
                (false, true) => Some(cst),
                (false, false) => None,
            });
        }
        let l_cst = tape.scalar(cst)?;
        let l_tot = if cfg.use_rec { l_rec } else { 0.0 } + if cfg.use_cst { l_cst } else { 0.0 };
        if !l_tot.is_finite() {
            report.diverged = true;
            report.warnings.push(format!("non-finite loss at iteration {it}"));
            break;
        }

        let mut update = vec![0.0; n];
        for ((loss, state), g_map) in losses.iter().zip(adam.iter_mut()).zip(&maps) {
            let grad = match loss {
                Some(l) => tape.backward(*l, zv)?.into_data(),
                None => vec![0.0; n],
            };
            let dir = match cfg.optimizer {
                OptimizerKind::Adam => state.direction(&grad, it + 1, cfg),
                OptimizerKind::Sgd => grad,
            };
            for (u, s) in update.iter_mut().zip(g_map.scale(&dir)) {
                *u += s;
            }
        }
        let decay = match cfg.optimizer {
            OptimizerKind::Adam => cfg.weight_decay,
            OptimizerKind::Sgd => 0.0,
        };
        let stepped: Vec<f64> = z
            .data()
            .iter()
            .zip(&update)
            .map(|(zi, u)| zi - cfg.lr * u - cfg.lr * decay * zi)
            .collect();
        let Ok(stepped) = Tensor::new(z.shape().to_vec(), stepped) else {
            report.diverged = true;
            report.warnings.push(format!("non-finite latent at iteration {it}"));
            break;
        };
        let pre = LatentStats::of(&stepped);
        let (next, rectified) = match (cfg.adsr, target) {
            (true, Some(t)) => rectify(&stepped, t),
            _ => (stepped, false),
        };
        if cfg.adsr && target.is_some() && !rectified {
            report.warnings.push(format!("rectification skipped at iteration {it}"));
        }
        report.iterations.push(IterationRecord {
            omega,
            l_rec,
            l_cst,
            l_tot,
            pre,
            post: LatentStats::of(&next),
            rectified,
        });
        z = next;
    }
    report.final_ = evaluate(&z, &refs[&unit])?;
    Ok((z, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drag::translate_region;
    use crate::model::{channel_peak, denoise_to, generate_frame, sample_noise, ModelConfig};
    use crate::optim::neighbor_stats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        weights: DenoiserWeights,
        cache: KvCache,
        z: Tensor,
        peak: (i64, i64),
    }

    fn fixture(seed: u64) -> Fixture {
        let cfg = ModelConfig {
            height: 8,
            width: 8,
            seed,
            ..ModelConfig::default()
        };
        let weights = DenoiserWeights::init(&cfg).unwrap();
        let mut cache = KvCache::new(cfg.cache_len);
        for k in 0..2 {
            cache = generate_frame(&cache, &weights, k, 5 + k as u64).unwrap().1;
        }
        let z = denoise_to(sample_noise(&weights, 2, 99), 3, &cache, &weights).unwrap().z;
        let (p, _) = channel_peak(&z.data()[..64], 8, 8);
        let peak = (p.0.round() as i64, p.1.round() as i64);
        Fixture { weights, cache, z, peak }
    }

    fn ctx(f: &Fixture) -> OptimContext<'_> {
        OptimContext {
            weights: &f.weights,
            cache: &f.cache,
            frame_index: 2,
            reference: &f.z,
        }
    }

    fn handle(f: &Fixture, offset: (i64, i64)) -> TargetResolution {
        let (r, c) = f.peak;
        let region = Mask::rect(8, 8, r - 1, c - 1, r + 1, c + 1);
        translate_region(&region, offset, (8, 8))
    }

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(3)
    }

    #[test]
    fn translation_lowers_reconstruction_loss() {
        let f = fixture(1);
        let h = handle(&f, (0, 1));
        let m = Mask::full(8, 8).difference(&h.target.union(&handle(&f, (0, 0)).target));
        let cfg = OptimConfig {
            adsr: false,
            ..OptimConfig::default()
        };
        let (z, rep) = optimize_latent(&f.z, &[h], &m, &ctx(&f), &cfg, None, &mut rng()).unwrap();
        assert_eq!(rep.iterations.len(), 4);
        assert!(rep.final_.rec < rep.initial.rec, "{rep:?}");
        assert!(z.max_abs_diff(&f.z) > 0.0);
        assert_eq!(rep.initial.cst, 0.0);
    }

    #[test]
    fn zero_offset_drag_is_a_fixed_point() {
        let f = fixture(2);
        let h = handle(&f, (0, 0));
        let m = Mask::full(8, 8).difference(&h.target);
        let cfg = OptimConfig {
            adsr: false,
            ..OptimConfig::default()
        };
        let (z, rep) = optimize_latent(&f.z, &[h], &m, &ctx(&f), &cfg, None, &mut rng()).unwrap();
        assert_eq!(rep.initial.total, 0.0);
        assert!(rep.final_.total <= 1e-12);
        assert!(z.max_abs_diff(&f.z) < 1e-12);
    }

    #[test]
    fn rectification_holds_after_every_iteration() {
        let f = fixture(3);
        let shifted = f.z.map(|v| 1.3 * v + 0.2).unwrap();
        let target = RectifyTarget::Global(neighbor_stats(&[&f.z, &shifted]).unwrap());
        let h = handle(&f, (1, 0));
        let m = Mask::new(8, 8);
        let cfg = OptimConfig {
            iterations: 3,
            ..OptimConfig::default()
        };
        let (z, rep) = optimize_latent(&f.z, &[h], &m, &ctx(&f), &cfg, Some(&target), &mut rng()).unwrap();
        let RectifyTarget::Global(s) = &target else { unreachable!() };
        for it in &rep.iterations {
            assert!(it.rectified);
            assert!((it.post.mean - s.mean).abs() < 1e-6 && (it.post.std - s.std).abs() < 1e-6);
        }
        assert!(target.matches(&z, 1e-6));
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn disabled_losses_leave_the_latent_alone() {
        let f = fixture(4);
        let cfg = OptimConfig {
            use_rec: false,
            use_cst: false,
            adsr: false,
            iterations: 2,
            ..OptimConfig::default()
        };
        let (z, rep) =
            optimize_latent(&f.z, &[handle(&f, (0, 1))], &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).unwrap();
        assert_eq!(z, f.z);
        assert!(rep.iterations.iter().all(|i| i.l_tot == 0.0));
    }

    #[test]
    fn huge_steps_are_reported_as_divergence() {
        let f = fixture(5);
        let cfg = OptimConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 1e308,
            adsr: false,
            sfs: false,
            ..OptimConfig::default()
        };
        let (z, rep) =
            optimize_latent(&f.z, &[handle(&f, (0, 1))], &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).unwrap();
        assert!(rep.diverged);
        assert!(z.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_target_warns_and_rejects_bad_input() {
        let f = fixture(6);
        let cfg = OptimConfig {
            iterations: 1,
            ..OptimConfig::default()
        };
        let h = handle(&f, (0, 1));
        let (_, rep) = optimize_latent(&f.z, std::slice::from_ref(&h), &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).unwrap();
        assert_eq!(rep.warnings.len(), 1);
        assert!(!rep.iterations[0].rectified);

        assert!(optimize_latent(&f.z, &[], &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).is_err());
        assert!(optimize_latent(&f.z, std::slice::from_ref(&h), &Mask::new(4, 4), &ctx(&f), &cfg, None, &mut rng()).is_err());
        let small = Tensor::zeros(vec![4, 4, 4]);
        assert!(optimize_latent(&small, &[h], &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).is_err());
    }

    #[test]
    fn report_serializes_final_field() {
        let f = fixture(7);
        let cfg = OptimConfig {
            iterations: 1,
            ..OptimConfig::default()
        };
        let (_, rep) =
            optimize_latent(&f.z, &[handle(&f, (0, 1))], &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"final\""));
        let back: OptimizationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let f = fixture(8);
        let cfg = OptimConfig::default();
        let run = || {
            optimize_latent(&f.z, &[handle(&f, (0, 1))], &Mask::new(8, 8), &ctx(&f), &cfg, None, &mut rng()).unwrap()
        };
        assert_eq!(run(), run());
    }
}
