#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use style_retrieval::transport::{JsonTransport, TransportError};
use style_retrieval::{AnnotationDictionary, AnnotationEntry};

#[derive(Debug, Clone)]
pub struct Captured {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

/// Single-threaded HTTP/1.1 server answering every request through `handler`.
pub struct TestServer {
    pub base: String,
    pub requests: Arc<Mutex<Vec<Captured>>>,
}

impl TestServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&Captured) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    continue;
                }
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0usize;
                let mut authorization = None;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let (name, value) = line.split_once(':').unwrap();
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap(),
                        "authorization" => authorization = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let captured = Captured {
                    path,
                    authorization,
                    body: String::from_utf8(body).unwrap(),
                };
                let (status, resp) = handler(&captured);
                log.lock().unwrap().push(captured);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{resp}",
                    resp.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Self { base, requests }
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.requests.lock().unwrap().clone()
    }
}

/// Transport that records bodies and replies from a scripted queue; once
/// the queue is drained the last reply repeats.
pub struct ScriptedTransport {
    pub replies: Mutex<Vec<Result<String, TransportError>>>,
    pub calls: AtomicUsize,
    pub bodies: Mutex<Vec<(String, String)>>,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<Result<String, TransportError>>) -> Arc<Self> {
        Arc::new(Self {
            replies: Mutex::new(replies.into_iter().rev().collect()),
            calls: AtomicUsize::new(0),
            bodies: Mutex::new(Vec::new()),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl JsonTransport for ScriptedTransport {
    fn post_json(&self, url: &str, body: &str, _timeout: Duration) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.bodies.lock().unwrap().push((url.to_string(), body.to_string()));
        let mut q = self.replies.lock().unwrap();
        if q.len() > 1 {
            q.pop().unwrap()
        } else {
            q.last().cloned().expect("scripted transport has no replies")
        }
    }
}

pub fn chat_reply(content: &str) -> String {
    serde_json::json!({
        "id": "chatcmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

pub fn transport_down() -> Result<String, TransportError> {
    Err(TransportError::Request {
        url: "http://down".into(),
        message: "connection refused".into(),
    })
}

pub const SAMPLE_ROWS: [(&str, &str, &str); 4] = [
    (
        "I fell into the water and shouted for help",
        "Hurry up! Somebody call an ambulance!",
        "The tone of a shrill voice and an urgent cry for help",
    ),
    (
        "I whispered conspiracy.",
        "Shh, we should sneak through the room.",
        "Speaking privately with a speculative tone",
    ),
    (
        "Complaining sadly with a sense of frustration.",
        "Too late, my days are numbered.",
        "Somewhat weary and melancholic",
    ),
    (
        "Bragging proudly about himself.",
        "Mom, I got A+ in the final test!",
        "In a triumphant, proud tone",
    ),
];

pub fn sample_dictionary() -> AnnotationDictionary {
    AnnotationDictionary::from_entries(
        SAMPLE_ROWS
            .iter()
            .enumerate()
            .map(|(i, (_, _, label))| {
                AnnotationEntry::new(i as u32 + 1, *label, format!("ref{:03}", i + 1))
            })
            .collect(),
        None,
    )
    .unwrap()
}
