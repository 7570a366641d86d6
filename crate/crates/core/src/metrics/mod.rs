//! Drag quality metrics: DAI over latent windows, ObjMC over tracked
//! trajectories, and a centroid tracker for decoded frames.

mod tracker;

pub use tracker::{track_centroid, Track, TRACK_MIN_INTENSITY};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drag::Point;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaiNorm {
    #[default]
    L2,
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub dai_radius: usize,
    pub dai_norm: DaiNorm,
    pub objmc: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            dai_radius: 2,
            dai_norm: DaiNorm::L2,
            objmc: true,
        }
    }
}

/// Mean over point pairs of `‖z_dst[Ω(p_dst, r)] − z_src[Ω(p_src, r)]‖ / (1+2r)²`.
///
/// The norm runs over channels × window. Window offsets that fall outside
/// the grid on either side contribute nothing; the divisor stays fixed.
pub fn dai(
    z_src: &Tensor,
    z_dst: &Tensor,
    src_points: &[Point],
    dst_points: &[Point],
    radius: usize,
    norm: DaiNorm,
) -> Result<f64> {
    if src_points.is_empty() {
        return Err(MetricError::Empty("no point pairs".into()));
    }
    if src_points.len() != dst_points.len() {
        return Err(MetricError::Length(src_points.len(), dst_points.len()));
    }
    if z_src.shape() != z_dst.shape() || z_src.rank() != 3 {
        return Err(MetricError::Shape(format!("{:?} vs {:?}", z_src.shape(), z_dst.shape())));
    }
    let (c, h, w) = (z_src.shape()[0], z_src.shape()[1] as i64, z_src.shape()[2] as i64);
    let r = radius as i64;
    let area = ((1 + 2 * radius) * (1 + 2 * radius)) as f64;
    let inside = |p: (i64, i64)| p.0 >= 0 && p.1 >= 0 && p.0 < h && p.1 < w;
    let mut total = 0.0;
    for (ps, pd) in src_points.iter().zip(dst_points) {
        let mut acc = 0.0;
        for dr in -r..=r {
            for dc in -r..=r {
                let (a, b) = ((ps.0 + dr, ps.1 + dc), (pd.0 + dr, pd.1 + dc));
                if !inside(a) || !inside(b) {
                    continue;
                }
                for ch in 0..c {
                    let ia = (ch as i64 * h + a.0) * w + a.1;
                    let ib = (ch as i64 * h + b.0) * w + b.1;
                    let d = z_dst.data()[ib as usize] - z_src.data()[ia as usize];
                    acc += match norm {
                        DaiNorm::L2 => d * d,
                        DaiNorm::L1 => d.abs(),
                    };
                }
            }
        }
        total += match norm {
            DaiNorm::L2 => acc.sqrt(),
            DaiNorm::L1 => acc,
        } / area;
    }
    Ok(total / src_points.len() as f64)
}

/// Mean Euclidean distance between corresponding trajectory points.
pub fn objmc(tracked: &[(f64, f64)], target: &[(f64, f64)]) -> Result<f64> {
    if tracked.len() != target.len() {
        return Err(MetricError::Length(tracked.len(), target.len()));
    }
    if tracked.is_empty() {
        return Err(MetricError::Empty("empty trajectory".into()));
    }
    let sum: f64 = tracked
        .iter()
        .zip(target)
        .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
        .sum();
    Ok(sum / tracked.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dai_closed_form() {
        let a = Tensor::zeros(vec![4, 8, 8]);
        let b = Tensor::full(vec![4, 8, 8], 1.0);
        let v = dai(&a, &b, &[(4, 4)], &[(4, 4)], 1, DaiNorm::L2).unwrap();
        assert_eq!(v, 2.0 / 3.0);
        assert_eq!(dai(&a, &a, &[(4, 4)], &[(4, 4)], 2, DaiNorm::L2).unwrap(), 0.0);
        let l1 = dai(&a, &b, &[(4, 4)], &[(4, 4)], 1, DaiNorm::L1).unwrap();
        assert_eq!(l1, 4.0);
    }

    #[test]
    fn dai_radius_zero_is_channel_distance() {
        let a = Tensor::from_fn(vec![2, 3, 3], |i| i as f64).unwrap();
        let b = Tensor::zeros(vec![2, 3, 3]);
        let v = dai(&a, &b, &[(1, 2)], &[(0, 0)], 0, DaiNorm::L2).unwrap();
        assert_eq!(v, ((5.0f64).powi(2) + (14.0f64).powi(2)).sqrt());
    }

    #[test]
    fn border_windows_keep_the_divisor() {
        let a = Tensor::zeros(vec![1, 4, 4]);
        let b = Tensor::full(vec![1, 4, 4], 1.0);
        // At the corner only the 2×2 in-grid part of the 3×3 window counts.
        let v = dai(&a, &b, &[(0, 0)], &[(0, 0)], 1, DaiNorm::L2).unwrap();
        assert_eq!(v, 2.0 / 9.0);
    }

    #[test]
    fn dai_errors() {
        let a = Tensor::zeros(vec![1, 4, 4]);
        assert!(dai(&a, &a, &[], &[], 1, DaiNorm::L2).is_err());
        assert!(dai(&a, &a, &[(0, 0)], &[], 1, DaiNorm::L2).is_err());
    }

    #[test]
    fn objmc_cases() {
        let a = [(0.0, 0.0), (1.0, 1.0)];
        assert_eq!(objmc(&a, &a).unwrap(), 0.0);
        let b = [(3.0, 4.0), (4.0, 5.0)];
        assert_eq!(objmc(&a, &b).unwrap(), 5.0);
        assert!(objmc(&a, &b[..1]).is_err());
        assert!(objmc(&[], &[]).is_err());
    }
}
