use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Result, Tensor, TensorError};

/// Complex spectrum of a real field, same layout as the source tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexField {
    pub fn new(shape: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.len() < 2 || re.len() != numel || im.len() != numel {
            return Err(TensorError::Shape(format!(
                "complex field {shape:?} with re/im lengths {}/{}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { shape, re, im })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        let r = self.shape.len();
        (self.shape[r - 2], self.shape[r - 1])
    }

    /// Squared magnitude per bin.
    pub fn power(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .collect()
    }
}

struct Plans {
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    // Unnormalised 2D transform of one h×w grid, in place.
    fn transform(&self, buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut transposed = vec![Complex64::default(); buf.len()];
        for r in 0..height {
            for c in 0..width {
                transposed[c * height + r] = buf[r * width + c];
            }
        }
        col.process(&mut transposed);
        for c in 0..width {
            for r in 0..height {
                buf[r * width + c] = transposed[c * height + r];
            }
        }
    }
}

/// Unnormalised forward DFT over the last two dimensions, per leading index.
pub fn fft2(t: &Tensor) -> Result<ComplexField> {
    let (h, w) = t.spatial_dims()?;
    let plans = Plans::new(h, w);
    let mut re = Vec::with_capacity(t.len());
    let mut im = Vec::with_capacity(t.len());
    for grid in t.data().chunks(h * w) {
        let mut buf: Vec<Complex64> = grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plans.transform(&mut buf, h, w, false);
        re.extend(buf.iter().map(|c| c.re));
        im.extend(buf.iter().map(|c| c.im));
    }
    ComplexField::new(t.shape().to_vec(), re, im)
}

/// Inverse DFT with 1/(h·w) normalisation.
///
/// The input is expected to be conjugate-symmetric; an imaginary residue
/// above 1e-8 (relative to the output scale) is reported as an error.
pub fn ifft2(f: &ComplexField) -> Result<Tensor> {
    let (h, w) = f.spatial_dims();
    let plans = Plans::new(h, w);
    let norm = 1.0 / (h * w) as f64;
    let mut out = Vec::with_capacity(f.re.len());
    let mut residue = 0.0f64;
    for (gre, gim) in f.re.chunks(h * w).zip(f.im.chunks(h * w)) {
        let mut buf: Vec<Complex64> = gre
            .iter()
            .zip(gim)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        plans.transform(&mut buf, h, w, true);
        for c in &buf {
            residue = residue.max((c.im * norm).abs());
            out.push(c.re * norm);
        }
    }
    let scale = out.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if residue > 1e-8 * scale {
        return Err(TensorError::ImaginaryResidue(residue));
    }
    Tensor::new(f.shape.clone(), out)
}

/// Butterworth low-pass gain at radial frequency `d` for cutoff radius `cutoff`.
pub fn butterworth_gain(d: f64, cutoff: f64, order: u32) -> f64 {
    1.0 / (1.0 + (d / cutoff).powi(2 * order as i32))
}

fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Low-pass gain mask in FFT-native (unshifted) bin order.
///
/// `D(u, v)` is the distance of bin (u, v) from DC using signed frequencies,
/// `D_max` the largest such distance on the grid, and the cutoff radius is
/// `omega · D_max`. `omega == 1` yields the all-ones bypass mask.
pub fn butterworth_mask(height: usize, width: usize, omega: f64, order: u32) -> Result<Tensor> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(TensorError::Domain(format!(
            "cutoff must lie in (0, 1], got {omega}"
        )));
    }
    if order < 1 {
        return Err(TensorError::Domain("butterworth order must be >= 1".into()));
    }
    if height == 0 || width == 0 {
        return Err(TensorError::Shape("empty grid".into()));
    }
    if omega == 1.0 {
        return Ok(Tensor::full(vec![height, width], 1.0));
    }
    let radius = |u: usize, v: usize| {
        let fu = signed_freq(u, height);
        let fv = signed_freq(v, width);
        (fu * fu + fv * fv).sqrt()
    };
    let mut d_max = 0.0f64;
    for u in 0..height {
        for v in 0..width {
            d_max = d_max.max(radius(u, v));
        }
    }
    let cutoff = omega * d_max;
    Tensor::from_fn(vec![height, width], |i| {
        let (u, v) = (i / width, i % width);
        if u == 0 && v == 0 {
            1.0
        } else {
            butterworth_gain(radius(u, v), cutoff, order)
        }
    })
}

/// A fixed frequency-domain filter over h×w grids.
///
/// With a radially symmetric real gain the filter is a real symmetric
/// convolution, so it is its own adjoint; the tape reuses it for backward.
pub struct SpatialFilter {
    height: usize,
    width: usize,
    gains: Option<Vec<f64>>,
    plans: Plans,
}

impl std::fmt::Debug for SpatialFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpatialFilter")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("identity", &self.gains.is_none())
            .finish()
    }
}

impl SpatialFilter {
    pub fn butterworth(height: usize, width: usize, omega: f64, order: u32) -> Result<Self> {
        let mask = butterworth_mask(height, width, omega, order)?;
        let gains = if omega == 1.0 {
            None
        } else {
            Some(mask.into_data())
        };
        Ok(Self {
            height,
            width,
            gains,
            plans: Plans::new(height, width),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.gains.is_none()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Filters one row-major h×w grid.
    pub fn apply_grid(&self, grid: &[f64]) -> Vec<f64> {
        let Some(gains) = &self.gains else {
            return grid.to_vec();
        };
        let n = self.height * self.width;
        assert_eq!(grid.len(), n, "grid size mismatch");
        let mut buf: Vec<Complex64> = grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.plans.transform(&mut buf, self.height, self.width, false);
        for (c, g) in buf.iter_mut().zip(gains) {
            *c *= g;
        }
        self.plans.transform(&mut buf, self.height, self.width, true);
        let norm = 1.0 / n as f64;
        buf.iter().map(|c| c.re * norm).collect()
    }

    /// Filters every column of a token-major `(h·w) × cols` matrix as an
    /// h×w grid.
    pub fn apply_columns(&self, data: &[f64], cols: usize) -> Vec<f64> {
        if self.gains.is_none() {
            return data.to_vec();
        }
        let n = self.height * self.width;
        assert_eq!(data.len(), n * cols, "token matrix size mismatch");
        let mut out = vec![0.0; data.len()];
        let mut grid = vec![0.0; n];
        for c in 0..cols {
            for (p, g) in grid.iter_mut().enumerate() {
                *g = data[p * cols + c];
            }
            let filtered = self.apply_grid(&grid);
            for (p, v) in filtered.into_iter().enumerate() {
                out[p * cols + c] = v;
            }
        }
        out
    }

    /// Filters a token-major matrix holding several frames stacked by rows.
    pub fn apply_frames(&self, data: &[f64], cols: usize) -> Vec<f64> {
        let per_frame = self.height * self.width * cols;
        assert_eq!(data.len() % per_frame, 0, "not a whole number of frames");
        data.chunks(per_frame)
            .flat_map(|frame| self.apply_columns(frame, cols))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct O(n^4) DFT used as an independent oracle.
    fn naive_dft(grid: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for r in 0..h {
                    for c in 0..w {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                        re[u * w + v] += grid[r * w + c] * ang.cos();
                        im[u * w + v] += grid[r * w + c] * ang.sin();
                    }
                }
            }
        }
        (re, im)
    }

    fn lcg_field(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_field_has_only_dc() {
        let t = Tensor::full(vec![4, 4], 2.5);
        let f = fft2(&t).unwrap();
        assert!((f.re()[0] - 16.0 * 2.5).abs() < 1e-12);
        for i in 1..16 {
            assert!(f.re()[i].abs() < 1e-12 && f.im()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_spectrum_is_flat() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let f = fft2(&t).unwrap();
        let (re, im) = naive_dft(t.data(), 2, 2);
        for i in 0..4 {
            assert!((f.re()[i] - 1.0).abs() < 1e-15);
            assert!((f.re()[i] - re[i]).abs() < 1e-15 && (f.im()[i] - im[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_is_rejected() {
        let t = Tensor::new(vec![4], vec![0.0; 4]).unwrap();
        assert!(matches!(fft2(&t), Err(TensorError::Shape(_))));
    }

    #[test]
    fn matches_naive_dft_on_random_8x8() {
        let data = lcg_field(7, 64);
        let t = Tensor::new(vec![8, 8], data.clone()).unwrap();
        let f = fft2(&t).unwrap();
        let (re, im) = naive_dft(&data, 8, 8);
        for i in 0..64 {
            assert!((f.re()[i] - re[i]).abs() < 1e-10);
            assert!((f.im()[i] - im[i]).abs() < 1e-10);
        }
        let back = ifft2(&f).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-10);
    }

    #[test]
    fn zero_field_round_trips_to_zero() {
        let t = Tensor::zeros(vec![3, 5, 6]);
        let back = ifft2(&fft2(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn non_symmetric_spectrum_is_reported() {
        let mut im = vec![0.0; 16];
        im[1] = 1.0;
        let f = ComplexField::new(vec![4, 4], vec![0.0; 16], im).unwrap();
        assert!(matches!(ifft2(&f), Err(TensorError::ImaginaryResidue(_))));
    }

    #[test]
    fn butterworth_reference_points() {
        assert_eq!(butterworth_gain(0.0, 3.0, 2), 1.0);
        assert!((butterworth_gain(0.5 * 10.0, 0.5 * 10.0, 2) - 0.5).abs() < 1e-15);
        let bypass = butterworth_mask(16, 16, 1.0, 2).unwrap();
        assert!(bypass.data().iter().all(|&g| g == 1.0));
        // On 16x16, D_max = sqrt(128); omega = 0.5 puts the cutoff at sqrt(32) = D(4, 4).
        let m = butterworth_mask(16, 16, 0.5, 2).unwrap();
        assert!((m.data()[4 * 16 + 4] - 0.5).abs() < 1e-9);
        assert_eq!(m.data()[0], 1.0);
        assert!(butterworth_mask(4, 4, 0.0, 2).is_err());
        assert!(butterworth_mask(4, 4, -0.3, 2).is_err());
        assert!(butterworth_mask(4, 4, 0.5, 0).is_err());
    }

    #[test]
    fn spatial_filter_keeps_constants_and_is_self_adjoint() {
        let f = SpatialFilter::butterworth(8, 8, 0.2, 2).unwrap();
        let c = vec![3.0; 64];
        let out = f.apply_grid(&c);
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let x = lcg_field(1, 64);
        let y = lcg_field(2, 64);
        let fx = f.apply_grid(&x);
        let fy = f.apply_grid(&y);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&fy).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
