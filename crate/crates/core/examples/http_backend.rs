//! Points the HTTP completion backend at a tiny in-process server that
//! speaks the chat-completions format.
//!
//!     cargo run --example http_backend

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use privgate::llm::{complete, BackendConfig, LlmRequest};
use privgate::{Backend, HttpBackend};

/// Answers one request with a canned completion and echoes the prompt size.
fn fake_server(listener: TcpListener) {
    let (mut stream, _) = listener.accept().unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let prompt = request["messages"][0]["content"].as_str().unwrap();
    let reply = serde_json::json!({
        "choices": [{"message": {"role": "assistant",
            "content": format!("Received {} characters. We will follow up with [[EMAIL_1]].", prompt.len())}}]
    })
    .to_string();
    write!(
        stream,
        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
        reply.len()
    )
    .unwrap();
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let base_url = format!("http://{}/v1", listener.local_addr()?);
    let server = std::thread::spawn(move || fake_server(listener));

    let config = BackendConfig {
        kind: "http".into(),
        base_url,
        model: "support-model".into(),
        timeout_ms: 2_000,
        ..BackendConfig::default()
    };
    let backend = HttpBackend::new(&config)?;
    let request = LlmRequest {
        prompt: "Customer query:\n\nwhere is my refund? my email is [[EMAIL_1]]".into(),
        max_output_terms: 64,
        temperature: 0.0,
        backend_id: backend.id().into(),
    };
    let response = complete(&request, &backend)?;
    println!(
        "{} replied in {} ms: {}",
        response.backend_id, response.latency_ms, response.text
    );
    server.join().unwrap();
    Ok(())
}
