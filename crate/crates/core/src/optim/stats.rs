use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Mean and population standard deviation of a latent or a pooled set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: f64,
    pub std: f64,
}

impl LatentStats {
    pub fn of(t: &Tensor) -> Self {
        Self::pooled(std::iter::once(t.data()))
    }

    fn pooled<'a>(parts: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let n: usize = parts.clone().map(|p| p.len()).sum();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = parts.clone().flat_map(|p| p.iter()).sum::<f64>() / n as f64;
        let var = parts.flat_map(|p| p.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self { mean, std: var.sqrt() }
    }

    /// Per-channel statistics of a C×H×W latent.
    pub fn per_channel(t: &Tensor) -> Vec<Self> {
        let c = t.shape()[0];
        let n = t.len() / c.max(1);
        t.data().chunks(n).map(|ch| Self::pooled(std::iter::once(ch))).collect()
    }
}

/// ADSR target statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectifyTarget {
    Global(LatentStats),
    PerChannel(Vec<LatentStats>),
}

/// Element-pooled statistics over preceding latents. `None` for an empty
/// window; callers then fall back to the current frame's own statistics.
pub fn neighbor_stats(latents: &[&Tensor]) -> Option<LatentStats> {
    if latents.is_empty() {
        return None;
    }
    Some(LatentStats::pooled(latents.iter().map(|t| t.data())))
}

/// Per-channel pooled statistics over preceding C×H×W latents.
pub fn neighbor_stats_per_channel(latents: &[&Tensor]) -> Option<Vec<LatentStats>> {
    let first = latents.first()?;
    let c = first.shape()[0];
    let n = first.len() / c;
    Some(
        (0..c)
            .map(|ch| LatentStats::pooled(latents.iter().map(move |t| &t.data()[ch * n..(ch + 1) * n])))
            .collect(),
    )
}

fn rectify_slice(data: &mut [f64], target: LatentStats) -> bool {
    let own = LatentStats::pooled(std::iter::once(&*data));
    if own.std <= 0.0 || target.std <= 0.0 || !own.std.is_finite() {
        return false;
    }
    for v in data.iter_mut() {
        *v = (*v - own.mean) / own.std * target.std + target.mean;
    }
    true
}

/// Re-standardises `z` to the target moments. Returns the (possibly
/// unchanged) latent and whether rectification was applied; a degenerate
/// zero std on either side skips it with a warning.
pub fn adsr_rectify(z: &Tensor, target: LatentStats) -> (Tensor, bool) {
    let mut data = z.data().to_vec();
    if !rectify_slice(&mut data, target) {
        log::warn!("skipping latent rectification: degenerate standard deviation");
        return (z.clone(), false);
    }
    match Tensor::new(z.shape().to_vec(), data) {
        Ok(t) => (t, true),
        Err(_) => (z.clone(), false),
    }
}

/// Applies either pooling mode.
pub fn rectify(z: &Tensor, target: &RectifyTarget) -> (Tensor, bool) {
    match target {
        RectifyTarget::Global(s) => adsr_rectify(z, *s),
        RectifyTarget::PerChannel(per) => {
            let c = z.shape()[0];
            let n = z.len() / c;
            let mut data = z.data().to_vec();
            let mut all = true;
            for (ch, s) in per.iter().enumerate().take(c) {
                all &= rectify_slice(&mut data[ch * n..(ch + 1) * n], *s);
            }
            if !all {
                log::warn!("skipping rectification of a channel with degenerate standard deviation");
            }
            (Tensor::new(z.shape().to_vec(), data).unwrap_or_else(|_| z.clone()), all)
        }
    }
}

impl RectifyTarget {
    /// Whether `z` matches the target moments within `tol`.
    pub fn matches(&self, z: &Tensor, tol: f64) -> bool {
        let close = |a: LatentStats, b: LatentStats| (a.mean - b.mean).abs() < tol && (a.std - b.std).abs() < tol;
        match self {
            RectifyTarget::Global(s) => close(LatentStats::of(z), *s),
            RectifyTarget::PerChannel(per) => LatentStats::per_channel(z).into_iter().zip(per).all(|(a, b)| close(a, *b)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, scale: f64, shift: f64) -> Tensor {
        Tensor::from_fn(vec![n], |i| ((i * 7919) % 101) as f64 / 101.0 * scale + shift).unwrap()
    }

    #[test]
    fn pooled_moments_of_two_constant_frames() {
        let a = Tensor::full(vec![4, 2, 2], 1.0);
        let b = Tensor::full(vec![4, 2, 2], 3.0);
        let s = neighbor_stats(&[&a, &b]).unwrap();
        assert_eq!(s, LatentStats { mean: 2.0, std: 1.0 });
        assert!(neighbor_stats(&[]).is_none());
        assert_eq!(neighbor_stats(&[&a]).unwrap().std, 0.0);
    }

    #[test]
    fn rectify_matches_target_and_is_idempotent() {
        let z = ramp(200, 3.0, -1.0);
        let target = LatentStats { mean: 0.5, std: 2.0 };
        let (r, applied) = adsr_rectify(&z, target);
        assert!(applied);
        let s = LatentStats::of(&r);
        assert!((s.mean - 0.5).abs() < 1e-12 && (s.std - 2.0).abs() < 1e-12);
        let (rr, _) = adsr_rectify(&r, target);
        assert!(rr.max_abs_diff(&r) < 1e-12);
        let own = LatentStats::of(&z);
        assert!(adsr_rectify(&z, own).0.max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn degenerate_std_skips() {
        let z = Tensor::full(vec![10], 2.0);
        let (r, applied) = adsr_rectify(&z, LatentStats { mean: 0.0, std: 1.0 });
        assert!(!applied);
        assert_eq!(r, z);
        let y = ramp(10, 1.0, 0.0);
        assert!(!adsr_rectify(&y, LatentStats { mean: 0.0, std: 0.0 }).1);
    }

    #[test]
    fn per_channel_pooling() {
        let a = Tensor::from_fn(vec![2, 3], |i| if i < 3 { 1.0 } else { 5.0 + i as f64 }).unwrap();
        let b = Tensor::from_fn(vec![2, 3], |i| if i < 3 { 3.0 } else { 2.0 * i as f64 }).unwrap();
        let per = neighbor_stats_per_channel(&[&a, &b]).unwrap();
        assert_eq!(per[0], LatentStats { mean: 2.0, std: 1.0 });
        let z = Tensor::from_fn(vec![2, 3], |i| (i * i) as f64).unwrap();
        let target = RectifyTarget::PerChannel(per);
        let (r, applied) = rectify(&z, &target);
        assert!(applied && target.matches(&r, 1e-12));
    }
}
