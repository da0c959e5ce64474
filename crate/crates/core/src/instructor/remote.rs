//! Blocking HTTP adapters for hosted language and detector services.

use std::time::Duration;

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Classification, Detection, DetectorClient, MllmClient};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::Mask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Extra attempts after the first on retryable failures.
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    2
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            timeout_ms: default_timeout(),
            retries: default_retries(),
        }
    }

    /// Read `{PREFIX}_URL`, `{PREFIX}_KEY`, `{PREFIX}_TIMEOUT_MS`,
    /// `{PREFIX}_RETRIES`. `None` when the URL is unset.
    pub fn from_env(prefix: &str) -> Result<Option<Self>> {
        let Ok(endpoint) = std::env::var(format!("{prefix}_URL")) else {
            return Ok(None);
        };
        let mut cfg = Self::new(endpoint);
        cfg.api_key = std::env::var(format!("{prefix}_KEY")).ok();
        if let Ok(v) = std::env::var(format!("{prefix}_TIMEOUT_MS")) {
            cfg.timeout_ms = v
                .parse()
                .map_err(|_| Error::Config(format!("{prefix}_TIMEOUT_MS is not an integer: {v}")))?;
        }
        if let Ok(v) = std::env::var(format!("{prefix}_RETRIES")) {
            cfg.retries = v
                .parse()
                .map_err(|_| Error::Config(format!("{prefix}_RETRIES is not an integer: {v}")))?;
        }
        Ok(Some(cfg))
    }
}

struct Transport {
    cfg: ClientConfig,
    http: reqwest::blocking::Client,
}

impl Transport {
    fn new(cfg: ClientConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self { cfg, http })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> Result<R> {
        let url = format!("{}/{route}", self.cfg.endpoint.trim_end_matches('/'));
        let max = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 1..=max {
            let mut req = self.http.post(&url).json(body);
            if let Some(k) = &self.cfg.api_key {
                req = req.bearer_auth(k);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<R>().map_err(|e| Error::Client {
                        message: format!("{url}: malformed response: {e}"),
                        attempts: attempt,
                        retryable: false,
                    });
                }
                Ok(resp) if resp.status().is_client_error() => {
                    return Err(Error::Client {
                        message: format!("{url}: HTTP {}", resp.status()),
                        attempts: attempt,
                        retryable: false,
                    });
                }
                Ok(resp) => last = format!("{url}: HTTP {}", resp.status()),
                Err(e) => last = format!("{url}: {e}"),
            }
            log::warn!("attempt {attempt}/{max} failed: {last}");
        }
        Err(Error::Client {
            message: last,
            attempts: max,
            retryable: true,
        })
    }
}

fn png_b64(image: &Image) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(image.encode_png()?))
}

/// Remote language model. Routes: `classify`, `describe`, `caption`.
pub struct HttpMllmClient {
    transport: Transport,
}

impl HttpMllmClient {
    pub fn new(cfg: ClientConfig) -> Result<Self> {
        Ok(Self {
            transport: Transport::new(cfg)?,
        })
    }
}

#[derive(Deserialize)]
struct DescribeResponse {
    description: String,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

impl MllmClient for HttpMllmClient {
    fn classify(&self, instruction: &str) -> Result<Classification> {
        self.transport
            .post("classify", &serde_json::json!({ "instruction": instruction }))
    }

    fn describe(&self, image: &Image) -> Result<String> {
        let r: DescribeResponse = self
            .transport
            .post("describe", &serde_json::json!({ "image_png_base64": png_b64(image)? }))?;
        Ok(r.description)
    }

    fn caption(&self, classification: &Classification, descriptor: &str) -> Result<String> {
        let r: CaptionResponse = self.transport.post(
            "caption",
            &serde_json::json!({ "classification": classification, "descriptor": descriptor }),
        )?;
        Ok(r.caption)
    }
}

/// Remote text-queried segmenter. Route: `detect`.
pub struct HttpDetectorClient {
    transport: Transport,
}

impl HttpDetectorClient {
    pub fn new(cfg: ClientConfig) -> Result<Self> {
        Ok(Self {
            transport: Transport::new(cfg)?,
        })
    }
}

#[derive(Deserialize)]
struct WireDetection {
    label: String,
    mask_png_base64: String,
    confidence: f64,
}

impl DetectorClient for HttpDetectorClient {
    fn detect(&self, image: &Image, query: &str) -> Result<Vec<Detection>> {
        let wire: Vec<WireDetection> = self.transport.post(
            "detect",
            &serde_json::json!({ "image_png_base64": png_b64(image)?, "query": query }),
        )?;
        wire.into_iter()
            .map(|d| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(d.mask_png_base64.trim())
                    .map_err(|e| Error::Client {
                        message: format!("detector returned invalid base64: {e}"),
                        attempts: 1,
                        retryable: false,
                    })?;
                Ok(Detection {
                    label: d.label,
                    mask: Mask::decode_png(&bytes)?,
                    confidence: d.confidence,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructor::EditType;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serve `responses` in order, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        format!("http://{addr}")
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let url = serve(vec![
            (503, "{}".into()),
            (200, r#"{"edit_type":"removal","object":"rose"}"#.into()),
        ]);
        let c = HttpMllmClient::new(ClientConfig::new(url)).unwrap();
        let cls = c.classify("remove the rose").unwrap();
        assert_eq!((cls.edit_type, cls.object.as_str()), (EditType::Removal, "rose"));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let url = serve(vec![(400, "{}".into())]);
        let c = HttpMllmClient::new(ClientConfig::new(url)).unwrap();
        match c.classify("x") {
            Err(Error::Client { attempts, retryable, .. }) => assert_eq!((attempts, retryable), (1, false)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_reports_attempts() {
        let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let mut cfg = ClientConfig::new(format!("http://{addr}"));
        cfg.retries = 1;
        cfg.timeout_ms = 500;
        let d = HttpDetectorClient::new(cfg).unwrap();
        match d.detect(&Image::filled(2, 2, [0.0; 3]), "cat") {
            Err(Error::Client { attempts, retryable, .. }) => assert_eq!((attempts, retryable), (2, true)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
