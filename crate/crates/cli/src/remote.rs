//! Remote prediction backend speaking the versioned wire protocol:
//!
//! ```text
//! POST /v1/predict
//! request:  {"prompt": <text>, "labels": [0,..,K-1], "want_probabilities": <bool>}
//! response: {"predictions": [{"id": 0, "label": 1,
//!                             "probabilities": {"0": 0.3, "1": 0.7}}, ...]}
//! ```
//!
//! `probabilities` is optional per prediction; when every prediction in
//! a response carries it (and probabilities were requested), the reply
//! takes the confidence-weighted path, otherwise labels-only. Transport
//! errors, non-200 statuses, and malformed bodies are retried with
//! exponential backoff until the retry budget runs out; at most
//! `max_concurrent` requests are in flight at a time.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use manyshot_core::codec::{validate_predictions, ParseFailureKind};
use manyshot_core::error::{Error, Result};
use manyshot_core::harness::{Backend, BackendOutput, BackendReply, PredictRequest};

pub const WIRE_PATH: &str = "/v1/predict";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub prompt: String,
    pub labels: Vec<u8>,
    pub want_probabilities: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WirePrediction {
    pub id: u32,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub predictions: Vec<WirePrediction>,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// `host:port` or `http://host:port[/path]`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff: Duration,
    pub max_concurrent: usize,
    pub want_probabilities: bool,
    /// Sent as `Authorization: Bearer <token>` when present (from the
    /// MANYSHOT_API_KEY environment variable in the CLI).
    pub bearer_token: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(100),
            max_concurrent: 4,
            want_probabilities: true,
            bearer_token: None,
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    addr: SocketAddr,
    host: String,
    path: String,
    /// Parse-failure tallies across the backend's lifetime, for reports.
    failure_counts: Mutex<BTreeMap<ParseFailureKind, u64>>,
    requests_sent: AtomicU64,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let (host, path) = split_endpoint(&config.endpoint)?;
        let addr = host
            .to_socket_addrs()
            .map_err(|e| Error::Backend(format!("cannot resolve '{host}': {e}")))?
            .next()
            .ok_or_else(|| Error::Backend(format!("'{host}' resolved to no address")))?;
        Ok(RemoteBackend {
            config,
            addr,
            host,
            path,
            failure_counts: Mutex::new(BTreeMap::new()),
            requests_sent: AtomicU64::new(0),
        })
    }

    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    fn call_once(
        &self,
        body: &str,
        expected_ids: &[u32],
        k: usize,
    ) -> std::result::Result<BackendReply, String> {
        self.requests_sent.fetch_add(1, Ordering::Relaxed);
        let (status, response_body) = http_post(
            self.addr,
            &self.host,
            &self.path,
            body,
            self.config.timeout,
            self.config.bearer_token.as_deref(),
        )
        .map_err(|e| format!("transport: {e}"))?;
        if status != 200 {
            return Err(format!("http status {status}"));
        }
        let parsed: WireResponse = match serde_json::from_str(&response_body) {
            Ok(p) => p,
            Err(e) => {
                self.record_failure(ParseFailureKind::Malformed);
                return Err(format!("malformed response body: {e}"));
            }
        };
        let pairs: Vec<(u32, u8)> = parsed.predictions.iter().map(|p| (p.id, p.label)).collect();
        let label_map = match validate_predictions(&pairs, expected_ids, k) {
            Ok(m) => m,
            Err(failure) => {
                self.record_failure(failure.kind);
                return Err(format!("invalid predictions: {}", failure.detail));
            }
        };

        let all_probs = self.config.want_probabilities
            && parsed.predictions.iter().all(|p| p.probabilities.is_some());
        let output = if all_probs {
            let mut maps = vec![BTreeMap::new(); expected_ids.len()];
            for p in &parsed.predictions {
                let slot = expected_ids.iter().position(|&id| id == p.id).unwrap();
                let mut map = BTreeMap::new();
                for (label_text, &score) in p.probabilities.as_ref().unwrap() {
                    let label: u8 = label_text.parse().map_err(|_| {
                        self.record_failure(ParseFailureKind::Malformed);
                        format!("probability key '{label_text}' is not a label")
                    })?;
                    if label as usize >= k {
                        self.record_failure(ParseFailureKind::LabelOutOfRange);
                        return Err(format!("probability label {label} out of range"));
                    }
                    map.insert(label, score);
                }
                maps[slot] = map;
            }
            BackendOutput::Probabilities(maps)
        } else {
            BackendOutput::Labels(
                expected_ids
                    .iter()
                    .map(|id| label_map.get(id).copied())
                    .collect(),
            )
        };
        Ok(BackendReply {
            output,
            parse_failures: Vec::new(),
        })
    }

    fn record_failure(&self, kind: ParseFailureKind) {
        *self.failure_counts.lock().unwrap().entry(kind).or_insert(0) += 1;
    }

    fn predict_one(&self, req: &PredictRequest<'_>) -> Result<BackendReply> {
        let expected_ids = req.task.query_ids();
        let wire = WireRequest {
            prompt: req.prompt.text(),
            labels: (0..req.task.k as u8).collect(),
            want_probabilities: self.config.want_probabilities && req.want_probabilities,
        };
        let body = serde_json::to_string(&wire)
            .map_err(|e| Error::Backend(format!("request encoding: {e}")))?;

        let mut parse_failures: Vec<ParseFailureKind> = Vec::new();
        let mut last_error = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * (1 << (attempt - 1).min(6)));
            }
            let before = snapshot(&self.failure_counts);
            match self.call_once(&body, &expected_ids, req.task.k) {
                Ok(mut reply) => {
                    reply.parse_failures = parse_failures;
                    return Ok(reply);
                }
                Err(e) => {
                    for kind in diff(&before, &snapshot(&self.failure_counts)) {
                        parse_failures.push(kind);
                    }
                    last_error = e;
                }
            }
        }
        Err(Error::Backend(format!(
            "retry budget exhausted ({} attempts): {last_error}",
            self.config.retries + 1
        )))
    }
}

fn snapshot(counts: &Mutex<BTreeMap<ParseFailureKind, u64>>) -> BTreeMap<ParseFailureKind, u64> {
    counts.lock().unwrap().clone()
}

fn diff(
    before: &BTreeMap<ParseFailureKind, u64>,
    after: &BTreeMap<ParseFailureKind, u64>,
) -> Vec<ParseFailureKind> {
    let mut kinds = Vec::new();
    for (&kind, &count) in after {
        let prior = before.get(&kind).copied().unwrap_or(0);
        for _ in prior..count {
            kinds.push(kind);
        }
    }
    kinds
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn predict_batch(&self, requests: &[PredictRequest<'_>]) -> Vec<Result<BackendReply>> {
        let pool = self.config.max_concurrent.max(1).min(requests.len().max(1));
        let next = AtomicU64::new(0);
        let results: Vec<Mutex<Option<Result<BackendReply>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..pool {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed) as usize;
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.predict_one(&requests[i]);
                    *results[i].lock().unwrap() = Some(result);
                });
            }
        });
        results
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().unwrap())
            .collect()
    }
}

fn split_endpoint(endpoint: &str) -> Result<(String, String)> {
    let trimmed = endpoint.trim();
    if trimmed.is_empty() {
        return Err(Error::Backend("empty endpoint".into()));
    }
    let rest = trimmed.strip_prefix("http://").unwrap_or(trimmed);
    if rest.starts_with("https://") || trimmed.starts_with("https://") {
        return Err(Error::Backend("https endpoints are not supported".into()));
    }
    match rest.find('/') {
        Some(at) => Ok((rest[..at].to_string(), rest[at..].to_string())),
        None => Ok((rest.to_string(), WIRE_PATH.to_string())),
    }
}

/// Minimal HTTP/1.1 POST over one connection. Reads the whole response,
/// honoring Content-Length when present.
pub fn http_post(
    addr: SocketAddr,
    host: &str,
    path: &str,
    body: &str,
    timeout: Duration,
    bearer_token: Option<&str>,
) -> std::io::Result<(u16, String)> {
    let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let auth = match bearer_token {
        Some(token) => format!("Authorization: Bearer {token}\r\n"),
        None => String::new(),
    };
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\n\
         {auth}Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes())?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    parse_http_response(&raw)
}

fn parse_http_response(raw: &[u8]) -> std::io::Result<(u16, String)> {
    let text = String::from_utf8_lossy(raw);
    let header_end = text.find("\r\n\r\n").ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::InvalidData, "no header terminator")
    })?;
    let (headers, body) = text.split_at(header_end);
    let body = &body[4..];
    let status_line = headers.lines().next().unwrap_or_default();
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad status line"))?;
    let content_length = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(body.len());
    Ok((status, body[..content_length.min(body.len())].to_string()))
}

/// Read one HTTP request from a stream: returns (path, body).
pub fn read_http_request(stream: &mut TcpStream) -> std::io::Result<(String, String)> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_subsequence(&buf, b"\r\n\r\n") {
            break Some(pos);
        }
        if buf.len() > 1 << 20 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "headers too large",
            ));
        }
    }
    .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "no headers"))?;

    let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let path = header_text
        .lines()
        .next()
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or("/")
        .to_string();
    let content_length = header_text
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    body.truncate(content_length);
    Ok((path, String::from_utf8_lossy(&body).to_string()))
}

pub fn write_http_response(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        _ => "Unknown",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_forms() {
        assert_eq!(
            split_endpoint("127.0.0.1:9000").unwrap(),
            ("127.0.0.1:9000".to_string(), WIRE_PATH.to_string())
        );
        assert_eq!(
            split_endpoint("http://10.0.0.1:80/custom/path").unwrap(),
            ("10.0.0.1:80".to_string(), "/custom/path".to_string())
        );
        assert!(split_endpoint("").is_err());
        assert!(split_endpoint("https://secure:443").is_err());
    }

    #[test]
    fn response_parsing_honors_content_length() {
        let raw = b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\nhelloEXTRA";
        let (status, body) = parse_http_response(raw).unwrap();
        assert_eq!(status, 200);
        assert_eq!(body, "hello");
    }

    #[test]
    fn wire_types_round_trip() {
        let resp = WireResponse {
            predictions: vec![
                WirePrediction {
                    id: 0,
                    label: 1,
                    probabilities: Some([("0".to_string(), 0.25), ("1".to_string(), 0.75)].into()),
                },
                WirePrediction {
                    id: 1,
                    label: 0,
                    probabilities: None,
                },
            ],
        };
        let text = serde_json::to_string(&resp).unwrap();
        let back: WireResponse = serde_json::from_str(&text).unwrap();
        assert_eq!(back.predictions.len(), 2);
        assert_eq!(back.predictions[0].probabilities.as_ref().unwrap()["1"], 0.75);
        assert!(back.predictions[1].probabilities.is_none());
    }
}
