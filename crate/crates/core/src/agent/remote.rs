//! Chat-completion backend over plain HTTP.
//!
//! Configured from a JSON file `{endpoint, model, timeout_ms}`; the API key is
//! read from the environment. Only `http://` endpoints are supported, so a
//! local proxy is expected for hosted models.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, LlmBackend, Prompt};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "ADON_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    30_000
}

impl RemoteConfig {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))
    }
}

pub struct RemoteChat {
    config: RemoteConfig,
    host: String,
    port: u16,
    path: String,
    api_key: Option<String>,
}

impl RemoteChat {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let rest = config
            .endpoint
            .strip_prefix("http://")
            .ok_or_else(|| BackendError::Unavailable(format!("only http:// endpoints are supported: {}", config.endpoint)))?;
        let (authority, path) = rest.split_once('/').map_or((rest, "/".to_string()), |(a, p)| (a, format!("/{p}")));
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (
                h.to_string(),
                p.parse().map_err(|_| BackendError::Unavailable(format!("bad port in {}", config.endpoint)))?,
            ),
            None => (authority.to_string(), 80),
        };
        Ok(Self {
            config,
            host,
            port,
            path,
            api_key: std::env::var(API_KEY_ENV).ok(),
        })
    }

    fn post(&self, body: &str) -> Result<String, BackendError> {
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let addr = (self.host.as_str(), self.port)
            .to_socket_addrs()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?
            .next()
            .ok_or_else(|| BackendError::Unavailable(format!("cannot resolve {}", self.host)))?;
        let io = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => BackendError::Timeout(self.config.timeout_ms),
            _ => BackendError::Unavailable(e.to_string()),
        };
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(io)?;
        stream.set_read_timeout(Some(timeout)).map_err(io)?;
        stream.set_write_timeout(Some(timeout)).map_err(io)?;
        let mut head = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
            self.path,
            self.host,
            body.len()
        );
        if let Some(key) = &self.api_key {
            head.push_str(&format!("Authorization: Bearer {key}\r\n"));
        }
        head.push_str("\r\n");
        stream.write_all(head.as_bytes()).map_err(io)?;
        stream.write_all(body.as_bytes()).map_err(io)?;

        let mut reader = BufReader::new(stream);
        let mut status = String::new();
        reader.read_line(&mut status).map_err(io)?;
        let code: u16 = status.split_whitespace().nth(1).and_then(|c| c.parse().ok()).unwrap_or(0);
        let mut length = None;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).map_err(io)?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse::<usize>().ok();
                }
            }
        }
        let mut body = Vec::new();
        match length {
            Some(n) => {
                body.resize(n, 0);
                reader.read_exact(&mut body).map_err(io)?;
            }
            None => {
                reader.read_to_end(&mut body).map_err(io)?;
            }
        }
        let text = String::from_utf8_lossy(&body).into_owned();
        if !(200..300).contains(&code) {
            return Err(BackendError::Unavailable(format!("HTTP {code}: {text}")));
        }
        Ok(text)
    }
}

impl LlmBackend for RemoteChat {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&mut self, prompt: &Prompt) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt.render()}],
        })
        .to_string();
        let reply: Value = serde_json::from_str(&self.post(&body)?)
            .map_err(|e| BackendError::Unavailable(format!("bad response body: {e}")))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Unavailable("response has no message content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PromptKind;
    use std::net::TcpListener;

    #[test]
    fn posts_prompt_and_reads_content() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            assert_eq!(req["model"], "m1");
            let reply = json!({"choices": [{"message": {"content": "ACTION: finish"}}]}).to_string();
            let mut stream = reader.into_inner();
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n{reply}", reply.len()).unwrap();
        });
        let mut chat = RemoteChat::new(RemoteConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            model: "m1".into(),
            timeout_ms: 5_000,
        })
        .unwrap();
        let out = chat.complete(&Prompt::new(PromptKind::React, "INIT".into(), vec![])).unwrap();
        assert_eq!(out, "ACTION: finish");
        server.join().unwrap();
        assert!(RemoteChat::new(RemoteConfig {
            endpoint: "https://example.invalid".into(),
            model: "m".into(),
            timeout_ms: 1
        })
        .is_err());
    }
}
