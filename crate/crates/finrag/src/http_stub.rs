//! Minimal scripted HTTP server for exercising clients in tests.
//!
//! The server plays back a fixed list of responses, one per
//! connection, and records what each request looked like. `finish`
//! joins the server thread and hands the recordings back, failing the
//! test if fewer connections arrived than responses were scripted.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub(crate) struct StubResponse {
    pub status: u16,
    pub body: String,
    pub delay: Option<Duration>,
}

impl StubResponse {
    pub fn json(status: u16, body: impl Into<String>) -> StubResponse {
        StubResponse {
            status,
            body: body.into(),
            delay: None,
        }
    }
}

#[derive(Debug)]
pub(crate) struct RecordedRequest {
    pub request_line: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub received_at: Instant,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(key, _)| key.eq_ignore_ascii_case(name))
            .map(|(_, value)| value.as_str())
    }

    /// The request target, e.g. `/search?q=zinc`.
    pub fn target(&self) -> &str {
        self.request_line.split(' ').nth(1).unwrap_or("")
    }
}

pub(crate) struct StubServer {
    addr: SocketAddr,
    handle: JoinHandle<Vec<RecordedRequest>>,
}

impl StubServer {
    pub fn run(responses: Vec<StubResponse>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub listener");
        let addr = listener.local_addr().expect("stub listener address");
        let handle = std::thread::spawn(move || {
            let mut recorded = Vec::new();
            for response in responses {
                let (mut stream, _) = listener.accept().expect("accept stub connection");
                recorded.push(read_request(&mut stream));
                if let Some(delay) = response.delay {
                    std::thread::sleep(delay);
                }
                let payload = format!(
                    "HTTP/1.1 {} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    response.status,
                    reason(response.status),
                    response.body.len(),
                    response.body
                );
                let _ = stream.write_all(payload.as_bytes());
                let _ = stream.flush();
            }
            recorded
        });
        StubServer { addr, handle }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn finish(self) -> Vec<RecordedRequest> {
        self.handle.join().expect("stub server thread")
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn read_request(stream: &mut TcpStream) -> RecordedRequest {
    let received_at = Instant::now();
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .expect("set stub read timeout");
    let mut raw = Vec::new();
    let mut buf = [0u8; 1024];
    let header_end = loop {
        match find_header_end(&raw) {
            Some(end) => break end,
            None => {
                let n = stream.read(&mut buf).expect("read stub request");
                if n == 0 {
                    break raw.len();
                }
                raw.extend_from_slice(&buf[..n]);
            }
        }
    };
    let head = String::from_utf8_lossy(&raw[..header_end]).into_owned();
    let mut lines = head.split("\r\n");
    let request_line = lines.next().unwrap_or("").to_string();
    let headers: Vec<(String, String)> = lines
        .filter_map(|line| {
            line.split_once(':')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect();
    let content_length: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body_bytes = raw[(header_end + 4).min(raw.len())..].to_vec();
    while body_bytes.len() < content_length {
        let n = stream.read(&mut buf).expect("read stub request body");
        if n == 0 {
            break;
        }
        body_bytes.extend_from_slice(&buf[..n]);
    }
    RecordedRequest {
        request_line,
        headers,
        body: String::from_utf8_lossy(&body_bytes).into_owned(),
        received_at,
    }
}

fn find_header_end(raw: &[u8]) -> Option<usize> {
    raw.windows(4).position(|w| w == b"\r\n\r\n")
}
