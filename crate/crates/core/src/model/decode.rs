use serde::{Deserialize, Serialize};

use super::{LatentFrame, ModelError, Result};

const BACKGROUND: [f64; 3] = [20.0, 20.0, 30.0];
const BLOB_COLOURS: [[f64; 3]; 2] = [[220.0, 0.0, 0.0], [0.0, 200.0, 0.0]];
/// Latent channel carrying each rendered blob.
pub const BLOB_CHANNELS: [usize; 2] = [0, 2];
const PEAK_FLOOR: f64 = 0.04;
const PEAK_RANGE: f64 = 0.08;

/// A decoded RGB frame, stored planar (3 × height × width).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
}

impl VideoFrame {
    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.rgb[(channel * self.height + row) * self.width + col]
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.rgb[channel * n..(channel + 1) * n]
    }

    /// Binary PPM (P6), interleaved RGB.
    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(3 * n);
        for p in 0..n {
            for ch in 0..3 {
                out.push(self.rgb[ch * n + p]);
            }
        }
        out
    }

    pub fn from_ppm(frame_index: usize, bytes: &[u8]) -> Result<Self> {
        let bad = || ModelError::Snapshot("malformed PPM".into());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad());
        }
        let width: usize = fields[1].parse().map_err(|_| bad())?;
        let height: usize = fields[2].parse().map_err(|_| bad())?;
        let n = width * height;
        let body = bytes.get(pos..pos + 3 * n).ok_or_else(bad)?;
        let mut rgb = vec![0u8; 3 * n];
        for p in 0..n {
            for ch in 0..3 {
                rgb[ch * n + p] = body[3 * p + ch];
            }
        }
        Ok(Self {
            frame_index,
            height,
            width,
            rgb,
        })
    }
}

/// Sub-cell peak of one latent channel: argmax refined by a 3×3 centroid
/// weighted by `v − min`. Returns ((row, col), peak value).
pub fn channel_peak(grid: &[f64], height: usize, width: usize) -> ((f64, f64), f64) {
    let (idx, &peak) = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty grid");
    let (r, c) = (idx / width, idx % width);
    let rows = r.saturating_sub(1)..(r + 2).min(height);
    let cols = c.saturating_sub(1)..(c + 2).min(width);
    let mut cells = Vec::with_capacity(9);
    for rr in rows {
        for cc in cols.clone() {
            cells.push((rr, cc, grid[rr * width + cc]));
        }
    }
    let min = cells.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    let total: f64 = cells.iter().map(|x| x.2 - min).sum();
    if total <= 0.0 {
        return ((r as f64, c as f64), peak);
    }
    let rc = cells.iter().map(|x| x.0 as f64 * (x.2 - min)).sum::<f64>() / total;
    let cc = cells.iter().map(|x| x.1 as f64 * (x.2 - min)).sum::<f64>() / total;
    ((rc, cc), peak)
}

/// Pixel coordinates of the centre of a (fractional) latent cell.
pub fn cell_to_pixel(cell: (f64, f64), upscale: usize) -> (f64, f64) {
    let s = upscale as f64;
    let half = (s - 1.0) / 2.0;
    (cell.0 * s + half, cell.1 * s + half)
}

/// Renders blobs located in channels 0 and 2 as additive Gaussians over a
/// fixed background. A pure function of the latent.
pub fn decode_frame(frame: &LatentFrame, upscale: usize) -> Result<VideoFrame> {
    if frame.t != 0 {
        return Err(ModelError::State(format!("decode needs a clean frame, got t = {}", frame.t)));
    }
    let shape = frame.z.shape();
    if shape.len() != 3 || shape[0] < 3 {
        return Err(ModelError::State(format!("cannot decode latent of shape {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let (hp, wp) = (h * upscale, w * upscale);
    let sigma = upscale as f64;
    let mut planes = BACKGROUND.map(|b| vec![b; hp * wp]);
    for (blob, &ch) in BLOB_CHANNELS.iter().enumerate() {
        let grid = &frame.z.data()[ch * h * w..(ch + 1) * h * w];
        let (cell, peak) = channel_peak(grid, h, w);
        let amp = ((peak - PEAK_FLOOR) / PEAK_RANGE).clamp(0.0, 1.0);
        if amp == 0.0 {
            continue;
        }
        let (pr, pc) = cell_to_pixel(cell, upscale);
        for r in 0..hp {
            for c in 0..wp {
                let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
                let g = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for (plane, colour) in planes.iter_mut().zip(BLOB_COLOURS[blob]) {
                    plane[r * wp + c] += colour * g;
                }
            }
        }
    }
    let rgb = planes
        .iter()
        .flat_map(|p| p.iter().map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    Ok(VideoFrame {
        frame_index: frame.frame_index,
        height: hp,
        width: wp,
        rgb,
    })
}
