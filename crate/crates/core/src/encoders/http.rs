use std::path::PathBuf;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Embedding, EncoderClient};
use crate::dataset::ImageRecord;
use crate::remote::{content_hash, CachedCall, ClientError, DiskCache};

/// Encoder served over HTTP.
///
/// Request: `{"input_type": "image", "data_base64": ...}` or
/// `{"input_type": "text", "text": ...}`. Response: `{"embedding": [...]}`.
/// Responses are cached under `cache_dir` by content hash.
#[derive(Debug, Clone)]
pub struct HttpEncoder {
    call: CachedCall,
    dim: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    input_type: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_base64: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Response {
    embedding: Vec<f64>,
}

impl HttpEncoder {
    pub fn new(endpoint: String, dim: usize, cache_dir: Option<PathBuf>) -> Self {
        HttpEncoder {
            call: CachedCall {
                endpoint,
                cache: cache_dir.map(DiskCache::new),
                credential_env: Some("EMOCAP_ENCODER_TOKEN".into()),
            },
            dim,
        }
    }

    fn finish(&self, r: Response) -> Result<Embedding, ClientError> {
        let protocol = |message: String| ClientError::Protocol {
            endpoint: self.call.endpoint.clone(),
            message,
        };
        if r.embedding.len() != self.dim {
            return Err(protocol(format!(
                "embedding has dim {}, expected {}",
                r.embedding.len(),
                self.dim
            )));
        }
        Embedding::new(r.embedding).map_err(|e| protocol(e.to_string()))
    }
}

impl EncoderClient for HttpEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, record: &ImageRecord) -> Result<Embedding, ClientError> {
        let bytes = record
            .source
            .read_bytes()
            .map_err(|e| ClientError::Other(format!("record {:?}: {e}", record.id)))?;
        let key = content_hash(&[b"image", &bytes]);
        let body = Request {
            input_type: "image",
            text: None,
            data_base64: Some(base64::engine::general_purpose::STANDARD.encode(&bytes)),
        };
        let r: Response = self.call.call(&key, &body)?;
        self.finish(r)
    }

    fn encode_text(&self, text: &str) -> Result<Embedding, ClientError> {
        let key = content_hash(&[b"text", text.as_bytes()]);
        let body = Request {
            input_type: "text",
            text: Some(text),
            data_base64: None,
        };
        let r: Response = self.call.call(&key, &body)?;
        self.finish(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remote::testing::serve;
    use std::sync::atomic::Ordering;

    #[test]
    fn caches_by_content() {
        let server = serve(|req| {
            let v = if req["input_type"] == "text" { 1.0 } else { 2.0 };
            serde_json::json!({"embedding": [v, 0.5]})
        });
        let dir = tempfile::tempdir().unwrap();
        let enc = HttpEncoder::new(server.url.clone(), 2, Some(dir.path().to_path_buf()));
        let t = enc.encode_text("A photo of a cat").unwrap();
        assert_eq!(t.values(), &[1.0, 0.5]);
        enc.encode_text("A photo of a cat").unwrap();
        let img = ImageRecord::from_buffer("i", vec![1, 2, 3]);
        assert_eq!(enc.encode_image(&img).unwrap().values(), &[2.0, 0.5]);
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);

        // A fresh client over the same cache never needs the server.
        let offline = HttpEncoder::new("http://127.0.0.1:9/x".into(), 2, Some(dir.path().to_path_buf()));
        assert_eq!(offline.encode_text("A photo of a cat").unwrap(), t);
    }

    #[test]
    fn wrong_dimension_is_protocol_error() {
        let server = serve(|_| serde_json::json!({"embedding": [1.0]}));
        let enc = HttpEncoder::new(server.url.clone(), 3, None);
        assert!(matches!(enc.encode_text("x"), Err(ClientError::Protocol { .. })));
    }
}
