//! Shared plumbing for model-backed clients: a JSON-over-HTTP call and an
//! on-disk response cache keyed by content hash.
//!
//! Every remote adapter (encoder, chat, OCR) routes through [`CachedCall`], so a
//! second run over the same inputs never touches the network.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {endpoint} failed: {message}")]
    Http { endpoint: String, message: String },
    #[error("unexpected response from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("cache {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("{0}")]
    Other(String),
}

/// Hex SHA-256 of the concatenated parts, with a separator so that
/// `("ab", "c")` and `("a", "bc")` differ.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new<P: Into<PathBuf>>(dir: P) -> Self {
        DiskCache { dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<(), ClientError> {
        let cache_err = |source| ClientError::Cache {
            path: self.dir.display().to_string(),
            source,
        };
        std::fs::create_dir_all(&self.dir).map_err(cache_err)?;
        let json = serde_json::to_string(value).expect("cache value serializes");
        // Write-then-rename so concurrent readers never see a torn file.
        let tmp = self.dir.join(format!("{key}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, json).map_err(cache_err)?;
        std::fs::rename(&tmp, self.path(key)).map_err(cache_err)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn post_json<B: Serialize, T: DeserializeOwned>(
    endpoint: &str,
    body: &B,
    credential_env: Option<&str>,
) -> Result<T, ClientError> {
    let mut req = ureq::post(endpoint).timeout(Duration::from_secs(120));
    if let Some(var) = credential_env {
        if let Ok(token) = std::env::var(var) {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
    }
    let resp = req.send_json(body).map_err(|e| ClientError::Http {
        endpoint: endpoint.to_string(),
        message: e.to_string(),
    })?;
    resp.into_json().map_err(|e| ClientError::Protocol {
        endpoint: endpoint.to_string(),
        message: e.to_string(),
    })
}

/// An HTTP endpoint fronted by an optional disk cache.
#[derive(Debug, Clone)]
pub struct CachedCall {
    pub endpoint: String,
    pub cache: Option<DiskCache>,
    pub credential_env: Option<String>,
}

impl CachedCall {
    pub fn call<B: Serialize, T: Serialize + DeserializeOwned>(&self, key: &str, body: &B) -> Result<T, ClientError> {
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(key)) {
            return Ok(hit);
        }
        let value: T = post_json(&self.endpoint, body, self.credential_env.as_deref())?;
        if let Some(cache) = &self.cache {
            cache.put(key, &value)?;
        }
        Ok(value)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! A one-shot-per-connection HTTP server for exercising remote adapters.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    pub struct FakeServer {
        pub url: String,
        pub hits: Arc<AtomicUsize>,
    }

    /// Serves `respond(request_body)` as JSON to every POST.
    pub fn serve<F>(respond: F) -> FakeServer
    where
        F: Fn(&serde_json::Value) -> serde_json::Value + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                let out = respond(&req).to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    out.len(),
                    out
                );
            }
        });
        FakeServer { url, hits }
    }
}
