//! On-disk completion cache: one JSON document per record.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{GatewayError, TemplateId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    pub model: String,
    pub template: TemplateId,
    pub temperature: f64,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Value>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn cache_key(model: &str, template: TemplateId, prompt_hash: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    for part in [model.as_bytes(), template.as_str().as_bytes(), prompt_hash.as_bytes()] {
        h.update(part);
        h.update([0u8]);
    }
    h.update(temperature.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        fs::create_dir_all(dir).map_err(|e| GatewayError::cache(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), write_lock: Mutex::new(()) })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A record that is missing or unreadable counts as a miss.
    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, record: &CompletionRecord) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path(key);
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let body = serde_json::to_vec_pretty(record).map_err(|e| GatewayError::cache(&path, e))?;
        let mut f = fs::File::create(&tmp).map_err(|e| GatewayError::cache(&tmp, e))?;
        f.write_all(&body).map_err(|e| GatewayError::cache(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| GatewayError::cache(&path, e))
    }
}
