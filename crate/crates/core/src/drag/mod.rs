//! Drag instructions and their resolution into target masks and
//! source→target cell mappings.

mod geometry;
mod mask;

pub use geometry::{angle_at_center, downsample_mask, rotate_region, translate_region};
pub use mask::Mask;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DragError {
    #[error("invalid instruction field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("handle {handle} has an empty region")]
    EmptyRegion { handle: usize },
    #[error("handle {handle} is a rotation without a center")]
    MissingCenter { handle: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("non-editable mask overlaps the target region of handle {handle} at frame {frame}")]
    MaskOverlap { handle: usize, frame: usize },
    #[error("run-length mask error: {0}")]
    Rle(String),
    #[error("malformed instruction document: {0}")]
    Document(String),
}

/// Latent cell coordinate `(row, col)`; may lie outside the grid.
pub type Point = (i64, i64);
/// In-grid cell `(row, col)`.
pub type Cell = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DragMode {
    /// Modify an existing frame in place.
    Editing,
    /// Generate new frames that follow a trajectory.
    Animation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    Translation,
    /// Translation applied to an edge sub-region; resolved exactly like
    /// [`OpType::Translation`].
    Deformation,
    Rotation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandleSpec {
    #[serde(rename = "type")]
    pub op: OpType,
    pub region: Mask,
    #[serde(rename = "h")]
    pub handle_point: Point,
    #[serde(rename = "points")]
    pub trajectory: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Point>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragInstruction {
    #[serde(rename = "k")]
    pub frame_index: usize,
    pub mode: DragMode,
    #[serde(rename = "mask")]
    pub non_editable: Mask,
    pub handles: Vec<HandleSpec>,
}

/// Target mask `Y` and mapping `Π` for one handle at one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetResolution {
    pub target: Mask,
    pub mapping: Vec<(Cell, Cell)>,
}

fn invalid(field: &str, message: impl Into<String>) -> DragError {
    DragError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl DragInstruction {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instruction serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, DragError> {
        serde_json::from_str(s).map_err(|e| DragError::Document(e.to_string()))
    }

    /// Number of frames this instruction produces or modifies.
    pub fn steps(&self) -> usize {
        match self.mode {
            DragMode::Editing => 1,
            DragMode::Animation => self.handles.first().map_or(0, |h| h.trajectory.len()),
        }
    }

    /// Frame indices k′ the instruction targets.
    pub fn target_frames(&self) -> Vec<usize> {
        match self.mode {
            DragMode::Editing => vec![self.frame_index],
            DragMode::Animation => (1..=self.steps()).map(|j| self.frame_index + j).collect(),
        }
    }

    /// Structural checks that do not need geometry resolution.
    pub fn validate(&self, grid: (usize, usize)) -> Result<(), DragError> {
        if self.handles.is_empty() {
            return Err(invalid("handles", "at least one handle is required"));
        }
        if self.non_editable.dims() != grid {
            return Err(invalid("mask", format!("expected {grid:?}, got {:?}", self.non_editable.dims())));
        }
        let steps = self.handles[0].trajectory.len();
        for (i, h) in self.handles.iter().enumerate() {
            if h.region.dims() != grid {
                return Err(invalid("handles.region", format!("handle {i}: expected {grid:?}, got {:?}", h.region.dims())));
            }
            if h.region.is_empty() {
                return Err(DragError::EmptyRegion { handle: i });
            }
            if !h.region.contains(h.handle_point.0, h.handle_point.1) {
                return Err(invalid("handles.h", format!("handle {i}: point {:?} is outside its region", h.handle_point)));
            }
            if h.trajectory.is_empty() {
                return Err(invalid("handles.points", format!("handle {i}: empty trajectory")));
            }
            if self.mode == DragMode::Editing && h.trajectory.len() != 1 {
                return Err(invalid("handles.points", format!("handle {i}: editing takes exactly one target point")));
            }
            if h.trajectory.len() != steps {
                return Err(invalid("handles.points", "all handles need trajectories of equal length"));
            }
            if h.op == OpType::Rotation && h.center.is_none() {
                return Err(DragError::MissingCenter { handle: i });
            }
        }
        Ok(())
    }

    /// Resolves every handle at every target frame and checks that the
    /// non-editable mask stays clear of all target regions. Indexed as
    /// `[step][handle]`.
    pub fn resolve_all(&self, grid: (usize, usize)) -> Result<Vec<Vec<TargetResolution>>, DragError> {
        self.validate(grid)?;
        let mut out = Vec::with_capacity(self.steps());
        for k_prime in self.target_frames() {
            let mut per_handle = Vec::with_capacity(self.handles.len());
            for (i, h) in self.handles.iter().enumerate() {
                let res = resolve_target(self.frame_index, k_prime, h, self.mode, grid)?;
                if res.target.intersects(&self.non_editable) {
                    return Err(DragError::MaskOverlap { handle: i, frame: k_prime });
                }
                per_handle.push(res);
            }
            out.push(per_handle);
        }
        Ok(out)
    }
}

/// Resolves one handle for target frame `k_prime` of an instruction issued
/// at frame `k`.
pub fn resolve_target(
    k: usize,
    k_prime: usize,
    handle: &HandleSpec,
    mode: DragMode,
    grid: (usize, usize),
) -> Result<TargetResolution, DragError> {
    if handle.region.is_empty() {
        return Err(DragError::EmptyRegion { handle: 0 });
    }
    let step = match mode {
        DragMode::Editing if k_prime == k => 0,
        DragMode::Animation if k_prime > k && k_prime - k <= handle.trajectory.len() => k_prime - k - 1,
        _ => {
            return Err(invalid(
                "k",
                format!("frame {k_prime} is not a target of a {mode:?} drag issued at frame {k}"),
            ))
        }
    };
    let point = *handle
        .trajectory
        .get(step)
        .ok_or_else(|| invalid("handles.points", "empty trajectory"))?;
    match handle.op {
        OpType::Rotation => {
            let center = handle.center.ok_or(DragError::MissingCenter { handle: 0 })?;
            let theta = angle_at_center(handle.handle_point, center, point)?;
            Ok(rotate_region(&handle.region, center, theta, grid))
        }
        OpType::Translation | OpType::Deformation => {
            let offset = (point.0 - handle.handle_point.0, point.1 - handle.handle_point.1);
            Ok(translate_region(&handle.region, offset, grid))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(op: OpType, points: Vec<Point>) -> HandleSpec {
        HandleSpec {
            op,
            region: Mask::rect(16, 16, 3, 3, 5, 5),
            handle_point: (4, 4),
            trajectory: points,
            center: (op == OpType::Rotation).then_some((4, 8)),
        }
    }

    fn instruction(mode: DragMode, handles: Vec<HandleSpec>) -> DragInstruction {
        DragInstruction {
            frame_index: 3,
            mode,
            non_editable: Mask::rect(16, 16, 12, 0, 15, 15),
            handles,
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ins = instruction(
            DragMode::Animation,
            vec![handle(OpType::Rotation, vec![(4, 5), (5, 6)]), handle(OpType::Translation, vec![(4, 6), (4, 7)])],
        );
        let text = ins.to_json();
        let back = DragInstruction::from_json(&text).unwrap();
        assert_eq!(back, ins);
        assert_eq!(back.to_json(), text);
        assert!(text.contains(r#""type":"rotation""#) && text.contains(r#""k":3"#));
    }

    #[test]
    fn editing_targets_its_own_frame() {
        let ins = instruction(DragMode::Editing, vec![handle(OpType::Translation, vec![(4, 6)])]);
        assert_eq!(ins.target_frames(), vec![3]);
        let res = ins.resolve_all((16, 16)).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0][0].target.bbox(), Some((3, 5, 5, 7)));
        let two = instruction(DragMode::Editing, vec![handle(OpType::Translation, vec![(4, 6), (4, 7)])]);
        assert!(two.validate((16, 16)).is_err());
        assert!(resolve_target(3, 4, &ins.handles[0], DragMode::Editing, (16, 16)).is_err());
    }

    #[test]
    fn animation_steps_follow_the_trajectory() {
        let ins = instruction(DragMode::Animation, vec![handle(OpType::Translation, vec![(4, 5), (4, 6), (4, 7)])]);
        assert_eq!(ins.target_frames(), vec![4, 5, 6]);
        let res = ins.resolve_all((16, 16)).unwrap();
        for (j, step) in res.iter().enumerate() {
            assert_eq!(step[0].target.bbox(), Some((3, 4 + j, 5, 6 + j)));
        }
    }

    #[test]
    fn deformation_resolves_like_translation() {
        let t = handle(OpType::Translation, vec![(6, 2)]);
        let d = HandleSpec { op: OpType::Deformation, ..t.clone() };
        assert_eq!(
            resolve_target(3, 3, &t, DragMode::Editing, (16, 16)).unwrap(),
            resolve_target(3, 3, &d, DragMode::Editing, (16, 16)).unwrap()
        );
    }

    #[test]
    fn structural_errors() {
        let grid = (16, 16);
        let mut ins = instruction(DragMode::Editing, vec![]);
        assert!(ins.validate(grid).is_err());
        let mut h = handle(OpType::Rotation, vec![(4, 6)]);
        h.center = None;
        ins.handles = vec![h];
        assert_eq!(ins.validate(grid), Err(DragError::MissingCenter { handle: 0 }));
        let mut h = handle(OpType::Translation, vec![(4, 6)]);
        h.handle_point = (9, 9);
        ins.handles = vec![h];
        assert!(matches!(ins.validate(grid), Err(DragError::Invalid { .. })));
        let mut h = handle(OpType::Translation, vec![(4, 6)]);
        h.region = Mask::new(16, 16);
        ins.handles = vec![h];
        assert_eq!(ins.validate(grid), Err(DragError::EmptyRegion { handle: 0 }));
        let mut overlap = instruction(DragMode::Editing, vec![handle(OpType::Translation, vec![(12, 4)])]);
        overlap.non_editable = Mask::rect(16, 16, 12, 0, 15, 15);
        assert!(matches!(overlap.resolve_all(grid), Err(DragError::MaskOverlap { .. })));
        assert!(DragInstruction::from_json("{\"k\":1}").is_err());
    }
}
