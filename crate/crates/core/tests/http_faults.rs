use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crosscheck_core::reasoner::{render, ChatReasoner, Reasoner, TemplateId};
use crosscheck_core::tools::wire::{wire_decode_request, wire_encode_reply};
use crosscheck_core::tools::{invoke_backend, Budget, HttpTool, ToolRequest};
use crosscheck_core::types::{Adapter, ToolErrorKind};

#[derive(Clone, Copy)]
enum Mode {
    Silent,
    Status500,
    Garbage,
    Echo,
}

struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Vec<u8> {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0; len];
    let _ = reader.read_exact(&mut body);
    body
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn serve(mode: Mode) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/tool", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let held = Arc::new(Mutex::new(Vec::new()));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let held = held.clone();
            std::thread::spawn(move || {
                let body = read_request(&mut stream);
                match mode {
                    // keep the socket open and never answer
                    Mode::Silent => held.lock().unwrap().push(stream),
                    Mode::Status500 => respond(&mut stream, "500 Internal Server Error", "{}"),
                    Mode::Garbage => respond(&mut stream, "200 OK", "not json"),
                    Mode::Echo => {
                        let reply = match wire_decode_request(&body) {
                            Ok(req) => wire_encode_reply(&format!("echo: {}", req.query_text())),
                            Err(_) => r#"{"choices":[{"message":{"content":"Possible Answer: Yes\nReasoning: echoed."}}]}"#.to_string(),
                        };
                        respond(&mut stream, "200 OK", &reply);
                    }
                }
            });
        }
    });
    Server { url, hits }
}

fn call(server: &Server, retries: u32) -> crosscheck_core::types::ToolResponse {
    let tool = HttpTool::new(server.url.clone(), Adapter::Native, None, None);
    let req = ToolRequest::vqa("img_1", "Is there a dog in the image?").unwrap();
    invoke_backend(&tool, "remote", &req, Budget { timeout_ms: 300, retries })
}

#[test]
fn silent_server_times_out_after_every_retry() {
    let server = serve(Mode::Silent);
    let started = Instant::now();
    let resp = call(&server, 2);
    let err = resp.error.expect("silent server must fail");
    assert_eq!(err.kind, ToolErrorKind::Timeout);
    assert_eq!(err.attempts, 3);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    assert!(started.elapsed() < Duration::from_secs(5));
    assert!(resp.raw_text.is_empty());
}

#[test]
fn error_status_and_garbage_are_classified() {
    let server = serve(Mode::Status500);
    let err = call(&server, 1).error.unwrap();
    assert_eq!((err.kind, err.attempts), (ToolErrorKind::Status, 2));
    let server = serve(Mode::Garbage);
    let err = call(&server, 0).error.unwrap();
    assert_eq!((err.kind, err.attempts), (ToolErrorKind::MalformedReply, 1));
}

#[test]
fn unreachable_endpoint_is_a_connection_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let tool = HttpTool::new(format!("http://127.0.0.1:{port}/x"), Adapter::Native, None, None);
    let req = ToolRequest::detect("img_1");
    let err = invoke_backend(&tool, "t", &req, Budget { timeout_ms: 500, retries: 1 }).error.unwrap();
    assert_eq!((err.kind, err.attempts), (ToolErrorKind::Connection, 2));
}

#[test]
fn healthy_server_round_trips() {
    let server = serve(Mode::Echo);
    let resp = call(&server, 2);
    assert!(resp.is_ok(), "{:?}", resp.error);
    assert_eq!(resp.raw_text, "echo: Is there a dog in the image?");
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn chat_reasoner_retries_then_reports_backend() {
    let prompt = render(TemplateId::TargetObjectExtraction, &[("question", "Is there a dog in the image?")]).unwrap();
    let server = serve(Mode::Silent);
    let r = ChatReasoner::new(server.url.clone(), "m".into(), None, 200, 1);
    let err = r.complete(&prompt).unwrap_err();
    assert!(err.to_string().contains(&server.url), "{err}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
    let server = serve(Mode::Echo);
    let r = ChatReasoner::new(server.url.clone(), "m".into(), None, 2000, 0);
    assert!(r.complete(&prompt).unwrap().starts_with("Possible Answer: Yes"));
}
