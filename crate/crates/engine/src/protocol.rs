//! JSON-lines wire API. Every request is one line; the server answers with
//! one response line carrying the same `id`. Subscribed connections also
//! receive `frame` push lines whenever the session produces frames.

use base64::Engine as _;
use dragstream_core::drag::DragInstruction;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{EngineError, ErrorKind};
use crate::session::{FrameInfo, FrameOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Request {
    StartSession {
        #[serde(default)]
        config: Option<EngineConfig>,
    },
    NextFrame {
        session_id: String,
    },
    SubmitDrag {
        session_id: String,
        instruction: DragInstruction,
    },
    RunFixture {
        fixture_id: String,
    },
    ExportSession {
        session_id: String,
        path: String,
    },
    Subscribe {
        session_id: String,
    },
    Pause {
        session_id: String,
    },
    Resume {
        session_id: String,
    },
    CloseSession {
        session_id: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default)]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub request: Request,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&EngineError> for WireError {
    fn from(e: &EngineError) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Response {
    pub fn ok(id: Option<u64>, result: serde_json::Value) -> Self {
        Self {
            id,
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: Option<u64>, e: &EngineError) -> Self {
        Self {
            id,
            ok: false,
            result: None,
            error: Some(e.into()),
        }
    }
}

/// Server-pushed frame. `pixels` is base64 of interleaved 8-bit RGB,
/// row-major, `height × width × 3` bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePush {
    pub push: String,
    pub session_id: String,
    pub frame_index: usize,
    pub width: usize,
    pub height: usize,
    pub format: String,
    pub pixels: String,
    pub stats: FrameInfo,
}

pub fn interleave(frame: &dragstream_core::model::VideoFrame) -> Vec<u8> {
    let n = frame.height * frame.width;
    (0..n).flat_map(|i| (0..3).map(move |c| frame.rgb[c * n + i])).collect()
}

impl FramePush {
    pub fn new(session_id: &str, out: &FrameOutput) -> Self {
        Self {
            push: "frame".into(),
            session_id: session_id.into(),
            frame_index: out.info.frame_index,
            width: out.frame.width,
            height: out.frame.height,
            format: "rgb8".into(),
            pixels: base64::engine::general_purpose::STANDARD.encode(interleave(&out.frame)),
            stats: out.info.clone(),
        }
    }

    pub fn decode_pixels(&self) -> Result<Vec<u8>, EngineError> {
        base64::engine::general_purpose::STANDARD
            .decode(&self.pixels)
            .map_err(|e| EngineError::Protocol(e.to_string()))
    }
}
