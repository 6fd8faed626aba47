//! Minimal HTTP/1.1 server standing in for a chat-completions endpoint.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Clone, Debug)]
pub enum Reply {
    /// Bare status with an empty JSON body.
    Status(u16),
    /// 200 with the given assistant text.
    Text(String),
    /// 200 echoing the prompt text of the request. A `wait=<ms>` word in the
    /// prompt delays the reply by that long.
    Echo,
    /// Sleep, then echo.
    Hang(Duration),
    /// 200 with the text paired to the first key the prompt contains.
    Keyed(Vec<(String, String)>),
    /// 200 with a body that is not chat-completions JSON.
    Garbage,
}

#[derive(Clone, Debug)]
pub struct Recorded {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

pub struct Stub {
    pub url: String,
    script: Mutex<VecDeque<Reply>>,
    fallback: Reply,
    delay: Duration,
    pub requests: Mutex<Vec<Recorded>>,
    in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

impl Stub {
    /// Serves `script` in order, then `fallback` forever. Every request is
    /// held for `delay` so concurrent calls overlap.
    pub fn start(script: Vec<Reply>, fallback: Reply, delay: Duration) -> Arc<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let stub = Arc::new(Stub {
            url,
            script: Mutex::new(script.into()),
            fallback,
            delay,
            requests: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let s = Arc::clone(&stub);
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { continue };
                let s = Arc::clone(&s);
                std::thread::spawn(move || s.handle(conn));
            }
        });
        stub
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    fn handle(&self, stream: TcpStream) {
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
        let mut headers = Vec::new();
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let len: usize = headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
            .map(|(_, v)| v.parse().unwrap())
            .unwrap_or(0);
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();

        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let reply = self.script.lock().unwrap().pop_front().unwrap_or_else(|| self.fallback.clone());
        let prompt = serde_json::from_slice::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v.pointer("/messages/0/content/0/text").and_then(|t| t.as_str()).map(str::to_string))
            .unwrap_or_default();
        self.requests.lock().unwrap().push(Recorded { path, headers, body });
        std::thread::sleep(self.delay);
        let (status, payload) = match reply {
            Reply::Status(code) => (code, "{}".to_string()),
            Reply::Text(t) => (200, completion(&t)),
            Reply::Echo => {
                if let Some(ms) = prompt.split_whitespace().find_map(|w| w.strip_prefix("wait=")?.parse().ok()) {
                    std::thread::sleep(Duration::from_millis(ms));
                }
                (200, completion(&prompt))
            }
            Reply::Hang(d) => {
                std::thread::sleep(d);
                (200, completion(&prompt))
            }
            Reply::Keyed(pairs) => {
                let text = pairs.iter().find(|(k, _)| prompt.contains(k.as_str())).map(|(_, v)| v.as_str()).unwrap_or("");
                (200, completion(text))
            }
            Reply::Garbage => (200, r#"{"unexpected": true}"#.to_string()),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        );
        let _ = stream.flush();
    }
}

pub fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}
