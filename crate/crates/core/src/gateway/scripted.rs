use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use super::{BackendKind, ChatBackend, ChatRequest};
use crate::error::GatewayError;

/// Replays canned replies from FIFO queues keyed by stage label.
///
/// A request pops from the case-scoped queue `"<scope>/<stage>"` when that
/// queue has replies left, otherwise from the shared `"<stage>"` queue.
/// Prompt content is never inspected.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, queue: &str, reply: impl Into<String>) {
        self.queues
            .lock()
            .expect("script lock poisoned")
            .entry(queue.to_string())
            .or_default()
            .push_back(reply.into());
    }

    pub fn extend<I, S>(&self, queue: &str, replies: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for r in replies {
            self.push(queue, r);
        }
    }

    pub fn remaining(&self, queue: &str) -> usize {
        self.queues
            .lock()
            .expect("script lock poisoned")
            .get(queue)
            .map_or(0, VecDeque::len)
    }

    /// Loads scripts from a JSON file (`{"<queue>": ["reply", ...]}`) or
    /// from a directory where each `<queue>.json` holds a reply array and
    /// subdirectories name case scopes (`<case_id>/<stage>.json`).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let backend = Self::new();
        if path.is_dir() {
            backend.load_dir(path, "")?;
        } else {
            let text = read(path)?;
            let doc: HashMap<String, Vec<String>> = serde_json::from_str(&text)
                .map_err(|e| GatewayError::Backend(format!("{}: {e}", path.display())))?;
            let mut keys: Vec<_> = doc.into_iter().collect();
            keys.sort_by(|a, b| a.0.cmp(&b.0));
            for (queue, replies) in keys {
                backend.extend(&queue, replies);
            }
        }
        Ok(backend)
    }

    fn load_dir(&self, dir: &Path, prefix: &str) -> Result<(), GatewayError> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| GatewayError::Backend(format!("{}: {e}", dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .collect();
        entries.sort();
        for p in entries {
            let stem = if p.is_dir() { p.file_name() } else { p.file_stem() };
            let Some(stem) = stem.and_then(|s| s.to_str()) else {
                continue;
            };
            let name = format!("{prefix}{stem}");
            if p.is_dir() {
                self.load_dir(&p, &format!("{name}/"))?;
            } else if p.extension().is_some_and(|x| x == "json") {
                let text = read(&p)?;
                let replies: Vec<String> = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::Backend(format!("{}: {e}", p.display())))?;
                self.extend(&name, replies);
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, GatewayError> {
    fs::read_to_string(path).map_err(|e| GatewayError::Backend(format!("{}: {e}", path.display())))
}

impl ChatBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn send(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut queues = self.queues.lock().expect("script lock poisoned");
        if let Some(scope) = &request.scope {
            let scoped = format!("{scope}/{}", request.stage);
            if let Some(reply) = queues.get_mut(&scoped).and_then(VecDeque::pop_front) {
                return Ok(reply);
            }
        }
        queues
            .get_mut(&request.stage)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| GatewayError::ScriptUnderrun {
                stage: request.stage.clone(),
            })
    }

    fn order_sensitive(&self) -> bool {
        true
    }
}

type StubFn = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;

/// Computes replies from the request with a closure. Stateless, so safe
/// to fan out concurrently.
pub struct StubBackend {
    respond: Box<StubFn>,
}

impl StubBackend {
    pub fn new<F>(respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        Self {
            respond: Box::new(respond),
        }
    }
}

impl ChatBackend for StubBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn send(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (self.respond)(request)
    }
}
