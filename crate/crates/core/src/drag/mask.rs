use serde::{Deserialize, Serialize};

use super::DragError;
use crate::tensor::Tensor;

/// Binary grid, row-major.
///
/// Serialises as a run-length encoding: `runs` alternate between unset and
/// set cells in row-major order, starting with an (possibly empty) unset run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleMask", into = "RleMask")]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RleMask {
    height: usize,
    width: usize,
    runs: Vec<usize>,
}

impl From<Mask> for RleMask {
    fn from(m: Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &c in &m.cells {
            if c == current {
                len += 1;
            } else {
                runs.push(len);
                current = c;
                len = 1;
            }
        }
        if len > 0 || runs.is_empty() {
            runs.push(len);
        }
        RleMask {
            height: m.height,
            width: m.width,
            runs,
        }
    }
}

impl TryFrom<RleMask> for Mask {
    type Error = DragError;

    fn try_from(r: RleMask) -> Result<Self, DragError> {
        let n = r.height * r.width;
        let total: usize = r.runs.iter().sum();
        if total != n {
            return Err(DragError::Rle(format!(
                "runs cover {total} cells of a {}x{} mask",
                r.height, r.width
            )));
        }
        let mut cells = Vec::with_capacity(n);
        for (i, &len) in r.runs.iter().enumerate() {
            cells.extend(std::iter::repeat_n(i % 2 == 1, len));
        }
        Ok(Mask {
            height: r.height,
            width: r.width,
            cells,
        })
    }
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![true; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, DragError> {
        let mut m = Self::new(height, width);
        for (r, c) in cells {
            if r >= height || c >= width {
                return Err(DragError::Invalid {
                    field: "mask".into(),
                    message: format!("cell ({r}, {c}) outside {height}x{width}"),
                });
            }
            m.set(r, c, true);
        }
        Ok(m)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            height,
            width,
            cells: (0..height * width).map(|i| f(i / width, i % width)).collect(),
        }
    }

    /// Rectangle of rows `r0..=r1`, cols `c0..=c1`, clipped to the grid.
    pub fn rect(height: usize, width: usize, r0: i64, c0: i64, r1: i64, c1: i64) -> Self {
        Self::from_fn(height, width, |r, c| {
            let (r, c) = (r as i64, c as i64);
            r >= r0 && r <= r1 && c >= c0 && c <= c1
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.width + c]
    }

    /// Membership test for possibly out-of-grid coordinates.
    pub fn contains(&self, r: i64, c: i64) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width && self.get(r as usize, c as usize)
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Set cells in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    /// Inclusive bounding box `(r0, c0, r1, c1)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut it = self.iter_set();
        let (r, c) = it.next()?;
        Some(it.fold((r, c, r, c), |(r0, c0, r1, c1), (r, c)| {
            (r0.min(r), c0.min(c), r1.max(r), c1.max(c))
        }))
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.cells.iter().zip(&other.cells).any(|(a, b)| *a && *b)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a && !*b).collect(),
        }
    }

    /// 0/1 tensor of shape H×W.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        )
        .expect("0/1 values")
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trips() {
        let cases = [
            Mask::new(3, 4),
            Mask::full(3, 4),
            Mask::from_cells(3, 4, [(0, 0), (1, 2), (1, 3), (2, 3)]).unwrap(),
        ];
        for m in cases {
            let json = serde_json::to_string(&m).unwrap();
            let back: Mask = serde_json::from_str(&json).unwrap();
            assert_eq!(back, m);
        }
        let json = serde_json::to_string(&Mask::from_cells(2, 2, [(0, 0)]).unwrap()).unwrap();
        assert_eq!(json, r#"{"height":2,"width":2,"runs":[0,1,3]}"#);
    }

    #[test]
    fn bad_run_totals_are_rejected() {
        let err = serde_json::from_str::<Mask>(r#"{"height":2,"width":2,"runs":[1,1]}"#);
        assert!(err.is_err());
    }

    #[test]
    fn bbox_and_set_algebra() {
        let a = Mask::rect(8, 8, 2, 3, 4, 5);
        assert_eq!(a.bbox(), Some((2, 3, 4, 5)));
        assert_eq!(a.count(), 9);
        let b = Mask::rect(8, 8, 4, 5, 9, 9);
        assert!(a.intersects(&b));
        assert_eq!(a.difference(&b).count(), 8);
        assert_eq!(a.union(&b).count(), 9 + 12 - 1);
        assert_eq!(Mask::new(4, 4).bbox(), None);
    }
}
