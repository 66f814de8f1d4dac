//! Versioned JSON container for trained models.
//!
//! ```json
//! {"format": "emocap-detector", "version": 1, "body": {...}}
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected a {expected} checkpoint, found {found}")]
    Format {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: unsupported checkpoint version {found} (this build reads {VERSION})")]
    Version { path: String, found: u32 },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    body: T,
}

pub fn save<T: Serialize>(path: &Path, format: &str, body: &T) -> Result<(), CheckpointError> {
    let p = path.display().to_string();
    let env = Envelope {
        format: format.to_string(),
        version: VERSION,
        body,
    };
    let text = serde_json::to_string(&env).map_err(|source| CheckpointError::Json {
        path: p.clone(),
        source,
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: p.clone(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| CheckpointError::Io { path: p, source })
}

pub fn load<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T, CheckpointError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: p.clone(),
        source,
    })?;
    let env: Envelope<serde_json::Value> = serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
        path: p.clone(),
        source,
    })?;
    if env.format != format {
        return Err(CheckpointError::Format {
            path: p,
            expected: format.to_string(),
            found: env.format,
        });
    }
    if env.version != VERSION {
        return Err(CheckpointError::Version {
            path: p,
            found: env.version,
        });
    }
    serde_json::from_value(env.body).map_err(|source| CheckpointError::Json { path: p, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_format_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/m.json");
        save(&path, "thing", &vec![1.5, 2.0]).unwrap();
        let back: Vec<f64> = load(&path, "thing").unwrap();
        assert_eq!(back, [1.5, 2.0]);
        assert!(matches!(
            load::<Vec<f64>>(&path, "other"),
            Err(CheckpointError::Format { .. })
        ));
        std::fs::write(&path, r#"{"format":"thing","version":99,"body":[]}"#).unwrap();
        assert!(matches!(
            load::<Vec<f64>>(&path, "thing"),
            Err(CheckpointError::Version { found: 99, .. })
        ));
    }
}
