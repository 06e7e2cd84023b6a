//! Scriptable HTTP endpoint for webhook tests.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Hit {
    pub at: Instant,
    pub body: String,
    pub status: u16,
}

/// Decides the status for the n-th request (0-based).
pub type Script = Box<dyn Fn(usize) -> u16 + Send>;

pub struct Stub {
    pub url: String,
    hits: Arc<Mutex<Vec<Hit>>>,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl Stub {
    pub fn start(script: Script) -> Self {
        Self::start_with_delay(script, Duration::ZERO)
    }

    /// Every response is held back by `delay`.
    pub fn start_with_delay(script: Script, delay: Duration) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub"));
        let url = format!("http://{}/hook", server.server_addr().to_ip().expect("ip listener"));
        let hits = Arc::new(Mutex::new(Vec::new()));
        let (s, h) = (Arc::clone(&server), Arc::clone(&hits));
        let thread = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let at = Instant::now();
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let n = h.lock().unwrap().len();
                let status = script(n);
                h.lock().unwrap().push(Hit { at, body, status });
                std::thread::sleep(delay);
                let _ = req.respond(tiny_http::Response::from_string("ok").with_status_code(status));
            }
        });
        Stub { url, hits, server, thread: Some(thread) }
    }

    pub fn hits(&self) -> Vec<Hit> {
        self.hits.lock().unwrap().clone()
    }

    /// Bodies that were answered with a 2xx.
    pub fn delivered(&self) -> Vec<String> {
        self.hits().into_iter().filter(|h| (200..300).contains(&h.status)).map(|h| h.body).collect()
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A URL nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = l.local_addr().unwrap().port();
    drop(l);
    format!("http://127.0.0.1:{port}/hook")
}

pub fn read_lines(path: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(path).map(|s| s.lines().map(str::to_string).collect()).unwrap_or_default()
}
