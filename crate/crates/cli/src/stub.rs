//! Stub prediction server for wire-protocol testing.
//!
//! Serves the `/v1/predict` protocol with deterministic toy behaviors:
//! fixed labels, cycling labels, peaked probability maps, one truncated
//! response (to exercise parse-failure retries), or N leading HTTP 500s
//! (to exercise transport retries). Query ids are recovered from the
//! prompt's query block, which doubles as an end-to-end check of the
//! prompt layout.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};

use crate::remote::{read_http_request, write_http_response, WirePrediction, WireRequest, WireResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    /// Same label for every query.
    Fixed(u8),
    /// label = id mod K.
    Cycle,
    /// Probabilities peaked (0.6) on id mod K.
    Probs,
    /// First response is truncated JSON, then behaves like Cycle.
    TruncateOnce,
    /// First `n` requests answer HTTP 500, then Cycle.
    Flaky(u64),
}

impl StubMode {
    pub fn parse(mode: &str, label: u8, fail_first: u64) -> Result<StubMode> {
        Ok(match mode {
            "fixed" => StubMode::Fixed(label),
            "cycle" => StubMode::Cycle,
            "probs" => StubMode::Probs,
            "truncate-once" => StubMode::TruncateOnce,
            "flaky" => StubMode::Flaky(fail_first),
            other => anyhow::bail!("unknown stub mode '{other}'"),
        })
    }
}

/// Pull the 0-indexed query ids out of a version-1 prompt: the third
/// blank-line-separated section, first comma-delimited field per line.
pub fn query_ids_from_prompt(prompt: &str) -> Vec<u32> {
    let sections: Vec<&str> = prompt.split("\n\n").collect();
    let Some(query_block) = sections.get(2) else {
        return Vec::new();
    };
    query_block
        .lines()
        .filter_map(|line| line.split(',').next()?.trim().parse().ok())
        .collect()
}

fn respond(mode: StubMode, seen: &AtomicU64, request: &WireRequest) -> (u16, String) {
    let ids = query_ids_from_prompt(&request.prompt);
    let k = request.labels.len().max(1) as u32;
    let nth = seen.fetch_add(1, Ordering::SeqCst);

    let cycle = |id: u32| (id % k) as u8;
    let predictions = |labeler: &dyn Fn(u32) -> u8, with_probs: bool| -> String {
        let preds: Vec<WirePrediction> = ids
            .iter()
            .map(|&id| WirePrediction {
                id,
                label: labeler(id),
                probabilities: with_probs.then(|| {
                    let peak = labeler(id);
                    request
                        .labels
                        .iter()
                        .map(|&l| {
                            let p = if l == peak {
                                0.6
                            } else {
                                0.4 / (k as f64 - 1.0).max(1.0)
                            };
                            (l.to_string(), p)
                        })
                        .collect()
                }),
            })
            .collect();
        serde_json::to_string(&WireResponse { predictions: preds }).unwrap()
    };

    match mode {
        StubMode::Fixed(label) => (200, predictions(&|_| label, false)),
        StubMode::Cycle => (200, predictions(&cycle, false)),
        StubMode::Probs => (200, predictions(&cycle, request.want_probabilities)),
        StubMode::TruncateOnce => {
            if nth == 0 {
                let full = predictions(&cycle, false);
                (200, full[..full.len() / 2].to_string())
            } else {
                (200, predictions(&cycle, false))
            }
        }
        StubMode::Flaky(n) => {
            if nth < n {
                (500, "{\"error\":\"induced failure\"}".to_string())
            } else {
                (200, predictions(&cycle, false))
            }
        }
    }
}

fn handle(mut stream: TcpStream, mode: StubMode, seen: &AtomicU64) {
    let result = (|| -> Result<()> {
        let (path, body) = read_http_request(&mut stream)?;
        if path != crate::remote::WIRE_PATH {
            write_http_response(&mut stream, 404, "{\"error\":\"unknown path\"}")?;
            return Ok(());
        }
        match serde_json::from_str::<WireRequest>(&body) {
            Err(e) => {
                let msg = format!("{{\"error\":\"bad request: {e}\"}}");
                write_http_response(&mut stream, 400, &msg)?;
            }
            Ok(request) => {
                let (status, response) = respond(mode, seen, &request);
                write_http_response(&mut stream, status, &response)?;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        eprintln!("stub: connection error: {e}");
    }
}

/// Bind and serve forever (CLI entry).
pub fn serve(addr: &str, mode: StubMode) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("stub server listening on {} ({mode:?})", listener.local_addr()?);
    let seen = Arc::new(AtomicU64::new(0));
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                let seen = Arc::clone(&seen);
                std::thread::spawn(move || handle(s, mode, &seen));
            }
            Err(e) => eprintln!("stub: accept failed: {e}"),
        }
    }
    Ok(())
}

/// Spawn a stub on an OS-assigned port for tests; the thread serves
/// until the process exits.
pub fn spawn_ephemeral(mode: StubMode) -> Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0").context("binding ephemeral stub")?;
    let addr = listener.local_addr()?;
    let seen = Arc::new(AtomicU64::new(0));
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let seen = Arc::clone(&seen);
            std::thread::spawn(move || handle(stream, mode, &seen));
        }
    });
    Ok(addr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_recovered_from_prompt_layout() {
        let prompt = "header text\n\n1,2 | 0\n3,4 | 1\n\n0,5,6\n1,7,8\n2,9,1\n\ninstruction";
        assert_eq!(query_ids_from_prompt(prompt), vec![0, 1, 2]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(StubMode::parse("fixed", 3, 0).unwrap(), StubMode::Fixed(3));
        assert_eq!(StubMode::parse("flaky", 0, 2).unwrap(), StubMode::Flaky(2));
        assert!(StubMode::parse("nope", 0, 0).is_err());
    }
}
