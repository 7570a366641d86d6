use serde::{Deserialize, Serialize};

use super::{MetricError, Result};
use crate::drag::Mask;
use crate::model::VideoFrame;

/// Peak intensity (above the frame median) below which the object counts as
/// lost for that frame.
pub const TRACK_MIN_INTENSITY: f64 = 16.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    /// Pixel (row, col) per frame.
    pub points: Vec<(f64, f64)>,
    /// Frames where the object was lost and the previous point carried.
    pub lost: Vec<bool>,
    /// RGB channel followed.
    pub channel: usize,
}

fn median(values: &[u8]) -> f64 {
    let mut counts = [0usize; 256];
    for &v in values {
        counts[v as usize] += 1;
    }
    let half = values.len() / 2;
    let mut seen = 0;
    for (v, &n) in counts.iter().enumerate() {
        seen += n;
        if seen > half {
            return v as f64;
        }
    }
    0.0
}

/// Follows the object painted by `region` (pixel mask on frame 0) through
/// `frames` by intensity-weighted centroids of its dominant colour channel.
pub fn track_centroid(frames: &[VideoFrame], region: &Mask) -> Result<Track> {
    let Some(first) = frames.first() else {
        return Err(MetricError::Empty("no frames".into()));
    };
    let (r0, c0, r1, c1) = region
        .bbox()
        .ok_or_else(|| MetricError::Empty("empty initial region".into()))?;
    if region.dims() != (first.height, first.width) {
        return Err(MetricError::Shape(format!(
            "region {:?} vs frame {}x{}",
            region.dims(),
            first.height,
            first.width
        )));
    }
    let count = region.count() as f64;
    let start = region
        .iter_set()
        .fold((0.0, 0.0), |acc, (r, c)| (acc.0 + r as f64 / count, acc.1 + c as f64 / count));

    let channel = (0..3)
        .map(|ch| {
            let plane = first.plane(ch);
            let med = median(plane);
            let excess: f64 = region
                .iter_set()
                .map(|(r, c)| plane[r * first.width + c] as f64 - med)
                .sum();
            (ch, excess)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|x| x.0)
        .unwrap_or(0);

    let half_h = (r1 - r0 + 1) as f64;
    let half_w = (c1 - c0 + 1) as f64;
    let mut points = vec![start];
    let mut lost = vec![false];
    for f in &frames[1..] {
        let prev = *points.last().expect("seeded");
        let plane = f.plane(channel);
        let med = median(plane);
        let rows = ((prev.0 - half_h).floor().max(0.0) as usize)..=((prev.0 + half_h).ceil().min(f.height as f64 - 1.0) as usize);
        let cols = ((prev.1 - half_w).floor().max(0.0) as usize)..=((prev.1 + half_w).ceil().min(f.width as f64 - 1.0) as usize);
        let (mut sw, mut sr, mut sc, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
        for r in rows {
            for c in cols.clone() {
                let v = (plane[r * f.width + c] as f64 - med).max(0.0);
                peak = peak.max(v);
                sw += v;
                sr += v * r as f64;
                sc += v * c as f64;
            }
        }
        if peak < TRACK_MIN_INTENSITY || sw <= 0.0 {
            points.push(prev);
            lost.push(true);
        } else {
            points.push((sr / sw, sc / sw));
            lost.push(false);
        }
    }
    Ok(Track { points, lost, channel })
}
