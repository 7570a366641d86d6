use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, TryLockError};
use std::thread;

use serde_json::{json, Value};

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::fixtures;
use crate::protocol::{Envelope, FramePush, Request, Response};
use crate::session::{FrameOutput, Session};
use crate::store::{export_session, Store};

struct Slot {
    session: Mutex<Session>,
    subscribers: Mutex<Vec<Sender<String>>>,
}

/// Session registry. Each session runs one command at a time; a request
/// that arrives while another is in flight gets a busy error.
pub struct Service {
    defaults: EngineConfig,
    persist: bool,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
    counter: AtomicUsize,
}

impl Service {
    pub fn new(defaults: EngineConfig, persist: bool) -> Self {
        Self {
            defaults,
            persist,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicUsize::new(0),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        self.sessions
            .lock()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownSession(id.into()))
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        let slot = self.slot(id)?;
        let mut guard = match slot.session.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(EngineError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        f(&mut guard)
    }

    fn push(&self, id: &str, outputs: &[FrameOutput]) {
        let Ok(slot) = self.slot(id) else { return };
        let mut subs = slot.subscribers.lock().expect("subscriber lock");
        for out in outputs {
            let line = serde_json::to_string(&FramePush::new(id, out)).expect("push serialises");
            subs.retain(|tx| tx.send(line.clone()).is_ok());
        }
    }

    /// Handles one request. `sink` receives push lines if the request
    /// subscribes.
    pub fn handle(&self, request: Request, sink: Option<&Sender<String>>) -> Result<Value> {
        match request {
            Request::StartSession { config } => {
                let config = config.unwrap_or_else(|| self.defaults.clone());
                let n = self.counter.fetch_add(1, Ordering::SeqCst);
                let id = format!("session-{n:04}");
                let mut session = Session::start(id.clone(), config)?;
                if self.persist {
                    session.attach_store(Store::for_session(&id))?;
                }
                let status = session.status();
                let slot = Slot {
                    session: Mutex::new(session),
                    subscribers: Mutex::new(Vec::new()),
                };
                self.sessions.lock().expect("registry lock").insert(id.clone(), Arc::new(slot));
                Ok(json!({ "session_id": id, "status": status }))
            }
            Request::NextFrame { session_id } => {
                let out = self.with_session(&session_id, |s| s.next_frame())?;
                self.push(&session_id, std::slice::from_ref(&out));
                let push = FramePush::new(&session_id, &out);
                Ok(serde_json::to_value(push).expect("frame serialises"))
            }
            Request::SubmitDrag { session_id, instruction } => {
                let (result, outputs) = self.with_session(&session_id, |s| s.submit_drag(&instruction))?;
                self.push(&session_id, &outputs);
                Ok(serde_json::to_value(result).expect("result serialises"))
            }
            Request::RunFixture { fixture_id } => {
                let fixture = fixtures::builtin(&fixture_id)?;
                let (report, _) = fixtures::run_fixture(&fixture)?;
                Ok(serde_json::to_value(report).expect("report serialises"))
            }
            Request::ExportSession { session_id, path } => {
                let manifest = self.with_session(&session_id, |s| export_session(s, Path::new(&path)))?;
                Ok(serde_json::to_value(manifest).expect("manifest serialises"))
            }
            Request::Subscribe { session_id } => {
                let slot = self.slot(&session_id)?;
                let tx = sink.ok_or_else(|| EngineError::Protocol("subscribe needs a connection".into()))?;
                slot.subscribers.lock().expect("subscriber lock").push(tx.clone());
                Ok(json!({ "subscribed": session_id }))
            }
            Request::Pause { session_id } => {
                self.with_session(&session_id, |s| s.pause())?;
                Ok(json!({ "status": "paused" }))
            }
            Request::Resume { session_id } => {
                self.with_session(&session_id, |s| s.resume())?;
                Ok(json!({ "status": "streaming" }))
            }
            Request::CloseSession { session_id } => {
                self.with_session(&session_id, |s| {
                    s.close();
                    Ok(())
                })?;
                self.sessions.lock().expect("registry lock").remove(&session_id);
                Ok(json!({ "status": "closed" }))
            }
        }
    }

    /// Parses and answers one request line.
    pub fn handle_line(&self, line: &str, sink: Option<&Sender<String>>) -> Response {
        match serde_json::from_str::<Envelope>(line) {
            Ok(env) => match self.handle(env.request, sink) {
                Ok(v) => Response::ok(env.id, v),
                Err(e) => Response::err(env.id, &e),
            },
            Err(e) => Response::err(None, &EngineError::Protocol(e.to_string())),
        }
    }
}

fn serve_connection(service: Arc<Service>, stream: TcpStream) {
    let Ok(mut writer) = stream.try_clone() else { return };
    let (tx, rx) = mpsc::channel::<String>();
    let pump = thread::spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let response = service.handle_line(&line, Some(&tx));
        if tx.send(serde_json::to_string(&response).expect("response serialises")).is_err() {
            break;
        }
    }
    drop(tx);
    let _ = pump.join();
}

/// Accepts connections forever, one thread each.
pub fn serve(service: Arc<Service>, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                let svc = Arc::clone(&service);
                thread::spawn(move || serve_connection(svc, s));
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}
