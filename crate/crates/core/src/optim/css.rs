use serde::{Deserialize, Serialize};

use crate::drag::Mask;
use crate::tensor::Tensor;

/// Elliptical Gaussian gradient-scaling map over the latent grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CssMap {
    pub height: usize,
    pub width: usize,
    /// Column (x) and row (y) of the centre.
    pub x_c: f64,
    pub y_c: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub values: Vec<f64>,
}

/// Bounding rectangle given by centre and side lengths in cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub x_c: f64,
    pub y_c: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxSpec {
    /// Minimum bounding rectangle of a mask's set cells.
    pub fn of_mask(mask: &Mask) -> Option<Self> {
        let (r0, c0, r1, c1) = mask.bbox()?;
        Some(Self {
            x_c: (c0 + c1) as f64 / 2.0,
            y_c: (r0 + r1) as f64 / 2.0,
            width: (c1 - c0 + 1) as f64,
            height: (r1 - r0 + 1) as f64,
        })
    }
}

/// `G[y, x] = exp(−((x−x_c)²/(2σ_x²) + (y−y_c)²/(2σ_y²)))` with
/// `σ_x = W/2·α`, `σ_y = H/2·α`.
pub fn css_map(bbox: BoxSpec, alpha: f64, grid: (usize, usize)) -> CssMap {
    let (h, w) = grid;
    let sigma_x = bbox.width.max(1.0) / 2.0 * alpha;
    let sigma_y = bbox.height.max(1.0) / 2.0 * alpha;
    let values = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (-((x - bbox.x_c).powi(2) / (2.0 * sigma_x * sigma_x) + (y - bbox.y_c).powi(2) / (2.0 * sigma_y * sigma_y))).exp()
        })
        .collect();
    CssMap {
        height: h,
        width: w,
        x_c: bbox.x_c,
        y_c: bbox.y_c,
        sigma_x,
        sigma_y,
        values,
    }
}

impl CssMap {
    pub fn uniform(grid: (usize, usize)) -> Self {
        Self {
            height: grid.0,
            width: grid.1,
            x_c: 0.0,
            y_c: 0.0,
            sigma_x: f64::INFINITY,
            sigma_y: f64::INFINITY,
            values: vec![1.0; grid.0 * grid.1],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Elementwise product with a C×H×W tensor, broadcasting over channels.
    pub fn scale(&self, t: &[f64]) -> Vec<f64> {
        let n = self.values.len();
        t.iter().enumerate().map(|(i, v)| v * self.values[i % n]).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], self.values.clone()).expect("finite map")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_points() {
        let b = BoxSpec { x_c: 6.0, y_c: 5.0, width: 4.0, height: 2.0 };
        let g = css_map(b, 1.0, (16, 16));
        assert_eq!(g.at(5, 6), 1.0);
        assert!((g.at(5, 8) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.at(6, 6) - (-0.5f64).exp()).abs() < 1e-15);
        let sq = css_map(BoxSpec { x_c: 7.0, y_c: 7.0, width: 3.0, height: 3.0 }, 1.0, (16, 16));
        for d in 1..6 {
            assert_eq!(sq.at(7, 7 + d), sq.at(7 + d, 7));
        }
    }

    #[test]
    fn bbox_of_mask() {
        let m = Mask::rect(16, 16, 2, 3, 4, 8);
        let b = BoxSpec::of_mask(&m).unwrap();
        assert_eq!(b, BoxSpec { x_c: 5.5, y_c: 3.0, width: 6.0, height: 3.0 });
    }
}
