use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::GatewayError;

/// Directory of cached completions, one `<key>.json` file per request key.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    content: String,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, GatewayError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => {
                let entry: Entry = serde_json::from_slice(&bytes)
                    .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
                Ok(Some(entry.content))
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, key: &str, content: &str) -> Result<(), GatewayError> {
        let body = serde_json::to_vec(&Entry {
            content: content.to_string(),
        })
        .expect("cache entry serializes");
        write_atomic(&self.path_for(key), &body).map_err(|e| GatewayError::Cache(e.to_string()))
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
