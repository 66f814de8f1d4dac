use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::remote::{content_hash, CachedCall, ClientError, DiskCache};

/// One chat sample. `image` is attached for captioning and absent for
/// text-only prompts.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub prompt: &'a str,
    pub image: Option<&'a ImageRecord>,
    pub sample_index: usize,
}

/// A (possibly multimodal) chat model. Implementations must return the same
/// text for the same request.
pub trait ChatClient: Send + Sync {
    fn generate(&self, request: &ChatRequest<'_>) -> Result<String, ClientError>;
}

/// Any `Fn(prompt, sample_index)` is a text-only client.
impl<F> ChatClient for F
where
    F: Fn(&str, usize) -> Result<String, ClientError> + Send + Sync,
{
    fn generate(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        self(request.prompt, request.sample_index)
    }
}

/// Scripted replies.
///
/// `captions` maps an image id to the raw chain responses for samples
/// `0, 1, ...` (cycled). `text_replies` maps a snippet of text to the reply
/// for any text-only prompt containing it; the longest matching snippet
/// wins. `default_captions` serves images without their own script.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockChatFixtures {
    pub captions: BTreeMap<String, Vec<String>>,
    pub text_replies: BTreeMap<String, String>,
    pub default_captions: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct MockChat {
    fixtures: MockChatFixtures,
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl MockChat {
    pub fn new(fixtures: MockChatFixtures) -> Self {
        MockChat { fixtures }
    }

    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        let fixtures =
            serde_json::from_str(&text).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(MockChat::new(fixtures))
    }

    pub fn fixtures(&self) -> &MockChatFixtures {
        &self.fixtures
    }
}

impl ChatClient for MockChat {
    fn generate(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let pick = |v: &[String]| v[request.sample_index % v.len()].clone();
        if let Some(img) = request.image {
            if let Some(v) = self.fixtures.captions.get(&img.id).filter(|v| !v.is_empty()) {
                return Ok(pick(v));
            }
            if !self.fixtures.default_captions.is_empty() {
                return Ok(pick(&self.fixtures.default_captions));
            }
            return Err(ClientError::Fixture(format!(
                "no scripted caption for image {:?}",
                img.id
            )));
        }
        let prompt = squash(request.prompt);
        self.fixtures
            .text_replies
            .iter()
            .filter(|(k, _)| prompt.contains(&squash(k)))
            .max_by(|a, b| a.0.len().cmp(&b.0.len()).then(b.0.cmp(a.0)))
            .map(|(_, reply)| reply.clone())
            .ok_or_else(|| ClientError::Fixture("no scripted reply matches the prompt".into()))
    }
}

/// Chat model behind HTTP.
///
/// Request: `{"model", "temperature", "prompt", "sample_index",
/// "image_base64"?}`. Response: `{"text"}`. Replies are cached by the hash
/// of the prompt, the attached image bytes and the sample index.
#[derive(Debug, Clone)]
pub struct RemoteChat {
    call: CachedCall,
    model_name: String,
    temperature: f64,
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    temperature: f64,
    prompt: &'a str,
    sample_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_base64: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Response {
    text: String,
}

impl RemoteChat {
    pub fn new(endpoint: String, model_name: String, temperature: f64, cache_dir: Option<PathBuf>) -> Self {
        RemoteChat {
            call: CachedCall {
                endpoint,
                cache: cache_dir.map(DiskCache::new),
                credential_env: Some("EMOCAP_CHAT_TOKEN".into()),
            },
            model_name,
            temperature,
        }
    }
}

impl ChatClient for RemoteChat {
    fn generate(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let bytes = match request.image {
            Some(img) => Some(
                img.source
                    .read_bytes()
                    .map_err(|e| ClientError::Other(format!("record {:?}: {e}", img.id)))?,
            ),
            None => None,
        };
        let key = content_hash(&[
            b"chat",
            self.model_name.as_bytes(),
            &self.temperature.to_le_bytes(),
            request.prompt.as_bytes(),
            bytes.as_deref().unwrap_or_default(),
            &(request.sample_index as u64).to_le_bytes(),
        ]);
        let body = Request {
            model: &self.model_name,
            temperature: self.temperature,
            prompt: request.prompt,
            sample_index: request.sample_index,
            image_base64: bytes.map(|b| base64::engine::general_purpose::STANDARD.encode(b)),
        };
        let r: Response = self.call.call(&key, &body)?;
        Ok(r.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatConfig {
    pub kind: ChatKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Mock only: JSON file of [`MockChatFixtures`].
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

fn default_temperature() -> f64 {
    0.7
}

impl ChatConfig {
    pub fn build(&self) -> Result<Box<dyn ChatClient>, ClientError> {
        match self.kind {
            ChatKind::Mock => Ok(Box::new(match &self.fixtures {
                Some(p) => MockChat::from_file(p)?,
                None => MockChat::default(),
            })),
            ChatKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ClientError::Other("remote chat needs an endpoint".into()))?;
                Ok(Box::new(RemoteChat::new(
                    endpoint,
                    self.model_name.clone().unwrap_or_default(),
                    self.temperature,
                    self.cache_dir.clone(),
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remote::testing::serve;
    use std::sync::atomic::Ordering;

    #[test]
    fn mock_cycles_and_matches_text() {
        let mut f = MockChatFixtures::default();
        f.captions.insert("img1".into(), vec!["a".into(), "b".into()]);
        f.text_replies.insert("happy".into(), "joy".into());
        f.text_replies.insert("so happy today".into(), "positive".into());
        let m = MockChat::new(f);
        let img = ImageRecord::from_buffer("img1", vec![]);
        let req = |i| ChatRequest {
            prompt: "p",
            image: Some(&img),
            sample_index: i,
        };
        assert_eq!(m.generate(&req(0)).unwrap(), "a");
        assert_eq!(m.generate(&req(3)).unwrap(), "b");
        let text = ChatRequest {
            prompt: "Text: \"So  happy today\"",
            image: None,
            sample_index: 0,
        };
        assert_eq!(m.generate(&text).unwrap(), "positive");
        let other = ImageRecord::from_buffer("img2", vec![]);
        assert!(m
            .generate(&ChatRequest {
                prompt: "p",
                image: Some(&other),
                sample_index: 0
            })
            .is_err());
    }

    #[test]
    fn closures_are_clients() {
        let c = |p: &str, i: usize| Ok::<_, ClientError>(format!("{p}{i}"));
        let req = ChatRequest {
            prompt: "x",
            image: None,
            sample_index: 4,
        };
        assert_eq!(ChatClient::generate(&c, &req).unwrap(), "x4");
    }

    #[test]
    fn remote_caches_per_sample() {
        let server = serve(|req| serde_json::json!({"text": format!("reply {}", req["sample_index"])}));
        let dir = tempfile::tempdir().unwrap();
        let chat = RemoteChat::new(server.url.clone(), "m".into(), 0.7, Some(dir.path().into()));
        let img = ImageRecord::from_buffer("i", vec![9, 9]);
        for _ in 0..2 {
            for i in 0..3 {
                let r = chat
                    .generate(&ChatRequest {
                        prompt: "p",
                        image: Some(&img),
                        sample_index: i,
                    })
                    .unwrap();
                assert_eq!(r, format!("reply {i}"));
            }
        }
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    }
}
