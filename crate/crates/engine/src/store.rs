//! Directory-per-session persistence and portable archives.
//!
//! Layout shared by live stores and exported archives:
//!
//! ```text
//! config.toml           full session config
//! commands.jsonl        append-only command log, one JSON object per line
//! frames/frame_NNNNNN.ppm   decoded frames, binary PPM (P6, 8-bit RGB)
//! latents/frame_NNNNNN.dslt clean latents, little-endian snapshot
//! results/drag_NNN.json     manipulation results with optimisation reports
//! manifest.json         sha256 of every file above (archives only)
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use dragstream_core::model::snapshot::encode_latent;
use dragstream_core::model::VideoFrame;
use dragstream_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::session::{frame_checksum, Command, ManipulationResult, Session};

/// Environment variable naming the root directory for session stores.
pub const STORE_ENV: &str = "DRAGSTREAM_STORE";
const DEFAULT_ROOT: &str = "dragstream-sessions";

pub fn store_root() -> PathBuf {
    std::env::var_os(STORE_ENV).map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| EngineError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| EngineError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| EngineError::io(path, e))
}

fn frame_name(k: usize) -> String {
    format!("frame_{k:06}")
}

#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Store for `session_id` under the configured root.
    pub fn for_session(session_id: &str) -> Self {
        Self::new(store_root().join(session_id))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn init(&self, config: &EngineConfig) -> Result<()> {
        write(&self.dir.join("config.toml"), config.to_toml().as_bytes())?;
        write(&self.dir.join("commands.jsonl"), b"")
    }

    pub fn append_command(&self, cmd: &Command) -> Result<()> {
        let path = self.dir.join("commands.jsonl");
        let mut f = OpenOptions::new()
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| EngineError::io(&path, e))?;
        let line = serde_json::to_string(cmd).expect("command serialises");
        writeln!(f, "{line}").map_err(|e| EngineError::io(&path, e))
    }

    pub fn write_frame(&self, frame: &VideoFrame, clean: &Tensor) -> Result<()> {
        let name = frame_name(frame.frame_index);
        write(&self.dir.join("frames").join(format!("{name}.ppm")), &frame.to_ppm())?;
        write(&self.dir.join("latents").join(format!("{name}.dslt")), &encode_latent(clean)?)
    }

    pub fn write_result(&self, n: usize, result: &ManipulationResult) -> Result<()> {
        let json = serde_json::to_vec_pretty(result).expect("result serialises");
        write(&self.dir.join("results").join(format!("drag_{n:03}.json")), &json)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path → sha256 hex.
    pub files: BTreeMap<String, String>,
    /// Frame index → sha256 of its planar RGB bytes.
    pub frames: BTreeMap<usize, String>,
    pub weights: String,
}

fn encode_log(log: &[Command]) -> String {
    log.iter()
        .map(|c| serde_json::to_string(c).expect("command serialises") + "\n")
        .collect()
}

pub fn parse_log(text: &str) -> Result<Vec<Command>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| EngineError::Archive(format!("command log: {e}"))))
        .collect()
}

/// Writes a self-contained archive of `session` into directory `path`.
pub fn export_session(session: &Session, path: &Path) -> Result<Manifest> {
    let store = Store::new(path);
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("config.toml".into(), session.config().to_toml().into_bytes()),
        ("commands.jsonl".into(), encode_log(session.log()).into_bytes()),
    ];
    for (k, frame) in session.frames() {
        files.push((format!("frames/{}.ppm", frame_name(*k)), frame.to_ppm()));
    }
    for (k, z) in session.latents() {
        files.push((format!("latents/{}.dslt", frame_name(*k)), encode_latent(z)?));
    }
    for (n, r) in session.results().iter().enumerate() {
        files.push((format!("results/drag_{n:03}.json"), serde_json::to_vec_pretty(r).expect("result serialises")));
    }
    let mut manifest = Manifest {
        weights: session.weights().checksum().to_string(),
        ..Manifest::default()
    };
    for (rel, bytes) in &files {
        write(&store.dir.join(rel), bytes)?;
        manifest.files.insert(rel.clone(), hex::encode(Sha256::digest(bytes)));
    }
    for (k, frame) in session.frames() {
        manifest.frames.insert(*k, frame_checksum(frame));
    }
    write(&store.dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest).expect("manifest serialises"))?;
    Ok(manifest)
}

/// Verifies file checksums, then rebuilds the session by replaying its log
/// and checks that every regenerated frame matches the archive.
pub fn import_session(path: &Path, id: &str) -> Result<Session> {
    let manifest: Manifest = serde_json::from_slice(&read(&path.join("manifest.json"))?)
        .map_err(|e| EngineError::Archive(format!("manifest: {e}")))?;
    for (rel, sum) in &manifest.files {
        let actual = hex::encode(Sha256::digest(read(&path.join(rel))?));
        if &actual != sum {
            return Err(EngineError::Archive(format!("{rel}: checksum mismatch")));
        }
    }
    let config = EngineConfig::from_toml(&String::from_utf8_lossy(&read(&path.join("config.toml"))?))?;
    let log = parse_log(&String::from_utf8_lossy(&read(&path.join("commands.jsonl"))?))?;
    let mut session = Session::start(id, config)?;
    if session.weights().checksum() != manifest.weights {
        return Err(EngineError::Archive("weights checksum differs".into()));
    }
    for cmd in &log {
        session.apply(cmd)?;
    }
    let regenerated: BTreeMap<usize, String> = session.frames().iter().map(|(k, f)| (*k, frame_checksum(f))).collect();
    if regenerated != manifest.frames {
        return Err(EngineError::Archive("replayed frames differ from the archive".into()));
    }
    Ok(session)
}
