//! Serves the JSON API on a local port and drives one session over HTTP.
//!
//!     cargo run --example http_server
//!
//! Pass `--serve` to keep the server running on 127.0.0.1:8080 instead.

use std::path::Path;
use std::sync::{mpsc, Arc};

use privgate::gateway::http::run;
use privgate::rag::read_kb_dir;
use privgate::{Detector, Gateway, KnowledgeBase};
use serde_json::{json, Value};

fn build() -> Result<Gateway, Box<dyn std::error::Error>> {
    let detector = Detector::with_defaults();
    let mut kb = KnowledgeBase::new();
    for (_, doc) in read_kb_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/kb"))? {
        kb.ingest(doc?, &detector)?;
    }
    Ok(Gateway::builder().knowledge_base(kb).build()?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep_running = std::env::args().any(|a| a == "--serve");
    let gateway = Arc::new(build()?);
    let runtime = tokio::runtime::Runtime::new()?;
    let addr = if keep_running { "127.0.0.1:8080" } else { "127.0.0.1:0" };
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let base = format!("http://{}", listener.local_addr()?);

    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let server = runtime.spawn(run(gateway, listener, async move {
        let _ = tokio::task::spawn_blocking(move || stop_rx.recv()).await;
    }));
    if keep_running {
        println!("listening on {base}; Ctrl-C to stop");
        runtime.block_on(tokio::signal::ctrl_c())?;
        drop(stop_tx);
        runtime.block_on(server)??;
        return Ok(());
    }

    let client = reqwest::blocking::Client::new();
    let created: Value = client
        .post(format!("{base}/v1/sessions"))
        .json(&json!({"level": "standard", "rag": true}))
        .send()?
        .json()?;
    let id = created["session_id"].as_str().unwrap().to_string();
    println!("POST /v1/sessions -> {created}");

    let reply: Value = client
        .post(format!("{base}/v1/sessions/{id}/messages"))
        .json(&json!({"text": "my email is a@b.co, where is my refund?"}))
        .send()?
        .json()?;
    println!("POST messages -> {reply}");

    let audit = client.get(format!("{base}/v1/audit?session={id}")).send()?.text()?;
    println!("GET /v1/audit -> {}", audit.trim_end());

    let status = client.delete(format!("{base}/v1/sessions/{id}")).send()?.status();
    println!("DELETE -> {status}");
    let status = client
        .post(format!("{base}/v1/sessions/{id}/messages"))
        .json(&json!({"text": "hello again"}))
        .send()?
        .status();
    println!("POST after delete -> {status}");

    let health = client.get(format!("{base}/healthz")).send()?.text()?;
    println!("GET /healthz -> {health}");

    drop(stop_tx);
    runtime.block_on(server)??;
    Ok(())
}
