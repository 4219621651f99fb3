mod common;

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{ok, s, Workspace};
use serde_json::{json, Value};
use txforge_gateway::session::Session;

fn start(checkpoint: &Path) -> SocketAddr {
    let session = Session::load(checkpoint).expect("session loads");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, txforge_gateway::http::router(session))
                .await
                .unwrap();
        });
    });
    rx.recv_timeout(Duration::from_secs(10)).expect("server started")
}

fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, payload) = raw.split_once("\r\n\r\n").expect("http response");
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    let value = if payload.is_empty() {
        Value::Null
    } else {
        serde_json::from_str(payload).unwrap()
    };
    (status, value)
}

fn get(addr: SocketAddr, path: &str) -> Value {
    let (status, v) = request(addr, "GET", path, None);
    assert_eq!(status, 200, "GET {path}: {v}");
    v
}

fn post(addr: SocketAddr, path: &str, body: Value) -> Value {
    let (status, v) = request(addr, "POST", path, Some(&body.to_string()));
    assert_eq!(status, 200, "POST {path}: {v}");
    v
}

fn commands(addr: SocketAddr) -> Vec<String> {
    get(addr, "/api/journal")
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["kind"] == "Command")
        .map(|e| e["payload"]["name"].as_str().unwrap().to_string())
        .collect()
}

fn session_file(w: &Workspace, with_fault: bool) -> std::path::PathBuf {
    let bundle = w.harvester(with_fault);
    let cp = w.path("session.json");
    std::fs::copy(bundle, &cp).unwrap();
    cp
}

#[test]
fn rail_reroute_over_http() {
    let w = Workspace::new();
    let cp = session_file(&w, true);
    let addr = start(&cp);

    let state = post(addr, "/api/run", json!({}));
    assert_eq!(state["mode"], json!({"state": "AwaitingRepair", "ticket": "T1"}));

    let (status, err) = request(addr, "POST", "/api/resume", None);
    assert_eq!(status, 409);
    assert_eq!(err["error"], "NoPatchApplied");

    let ticket = get(addr, "/api/repair/ticket");
    assert_eq!(ticket["ticket"]["ticketId"], "T1");
    assert!(ticket["fragment"].as_str().unwrap().contains("DoTransport"));
    assert_eq!(ticket["sidecar"]["ticketId"], "T1");

    let verdict = post(
        addr,
        "/api/repair/patch",
        json!({ "fragment": w.read("rail_reroute.bpmn"), "sidecar": w.read("rail_reroute.sidecar.json") }),
    );
    assert_eq!(verdict["verdict"], "accepted");

    let state = post(addr, "/api/resume", Value::Null);
    assert_eq!(state["mode"]["outcome"], "Success");

    // Reads are not journaled; each mutating call is, once, failures included.
    assert_eq!(commands(addr), ["run", "resume", "repair", "resume"]);

    // The session was persisted after each mutation, as a checkpoint.
    let saved = Session::load(&cp).unwrap();
    assert_eq!(
        saved.engine.journal().len() as u64,
        get(addr, "/api/session")["journalLength"].as_u64().unwrap()
    );
    assert_eq!(saved.engine.ledger().height(), 3);
    let (status, err) = request(addr, "POST", "/api/run", None);
    assert_eq!(status, 409);
    assert_eq!(err["error"], "InvalidMode");
}

#[test]
fn regions_match_the_cli() {
    let w = Workspace::new();
    let cp = session_file(&w, false);
    let cli = ok(&["regions", "--bundle", s(&cp)]);
    let addr = start(&cp);
    assert_eq!(get(addr, "/api/regions"), cli);
}

#[test]
fn request_errors_map_to_status_codes() {
    let w = Workspace::new();
    let cp = session_file(&w, false);
    let addr = start(&cp);

    assert_eq!(request(addr, "GET", "/api/nope", None).0, 404);
    let (status, err) = request(addr, "POST", "/api/step", Some("{not json"));
    assert_eq!(status, 400);
    assert_eq!(err["error"], "BadRequest");
    let (status, _) = request(addr, "POST", "/api/step", Some(r#"{"steps": 2}"#));
    assert_eq!(status, 400);
    let (status, err) = request(addr, "GET", "/api/repair/ticket", None);
    assert_eq!(status, 409);
    assert_eq!(err["error"], "NotAwaitingRepair");
    let (status, err) = request(addr, "POST", "/api/select", Some(r#"{"tx": {"a": "R999"}}"#));
    assert_eq!(status, 404);
    assert_eq!(err["error"], "UnknownRegion");
    let (status, err) = request(
        addr,
        "POST",
        "/api/fault",
        Some(r#"{"task": "Ghost", "attempt": 1, "message": "x"}"#),
    );
    assert_eq!(status, 404, "{err}");

    let stepped = post(addr, "/api/step", json!({ "n": 2 }));
    assert_eq!(stepped["steps"].as_array().unwrap().len(), 2);

    let (status, err) = request(addr, "POST", "/api/select", Some(r#"{"tx": {"a": "R1"}}"#));
    assert_eq!(status, 409);
    assert_eq!(err["error"], "AlreadyStarted");
    // Bodies that do not parse never become commands.
    assert_eq!(commands(addr), ["select", "fault", "step", "select"]);
}

#[test]
fn select_before_the_first_step_reselects() {
    let w = Workspace::new();
    let cp = session_file(&w, false);
    let addr = start(&cp);
    let state = post(addr, "/api/select", json!({ "tx": { "only_tx": "R1" } }));
    assert_eq!(state["mode"]["state"], "Running");
    let model = get(addr, "/api/model");
    let plan = model["plan"].to_string();
    assert!(plan.contains("only_tx"), "{plan}");
    assert!(!plan.contains("doTransport_tx"));
    post(addr, "/api/run", Value::Null);
    assert_eq!(commands(addr), ["select", "run"]);
    assert_eq!(get(addr, "/api/report")["mode"]["outcome"], "Success");
}

#[test]
fn events_stream_journal_entries() {
    let w = Workspace::new();
    let cp = session_file(&w, false);
    let addr = start(&cp);

    let mut sse = TcpStream::connect(addr).unwrap();
    write!(
        sse,
        "GET /api/events?from=1 HTTP/1.1\r\nHost: localhost\r\nAccept: text/event-stream\r\n\r\n"
    )
    .unwrap();
    sse.set_read_timeout(Some(Duration::from_millis(200))).unwrap();

    // Give the subscription a moment, then mutate.
    std::thread::sleep(Duration::from_millis(100));
    post(addr, "/api/run", Value::Null);
    let journal_len = get(addr, "/api/journal").as_array().unwrap().len();

    let deadline = Instant::now() + Duration::from_secs(10);
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    let last = format!("id: {journal_len}\n");
    while Instant::now() < deadline {
        match sse.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => {}
        }
        if String::from_utf8_lossy(&buf).contains(&last) {
            break;
        }
    }
    let text = String::from_utf8_lossy(&buf);
    assert!(text.contains("text/event-stream"), "{text}");
    assert!(text.contains("event: Command"), "{text}");
    assert!(text.contains("event: TxCommitted"), "{text}");
    assert!(text.contains(&last), "stream stopped short of the last entry");
    assert_eq!(text.matches("event: Command").count(), 1);
}

#[test]
fn serve_subcommand_listens_on_the_given_port() {
    let w = Workspace::new();
    let cp = session_file(&w, false);
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_txforge"))
        .args(["serve", "--checkpoint", s(&cp), "--port", &port.to_string()])
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let addr: SocketAddr = ([127, 0, 0, 1], port).into();
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(20));
    }
    let session = get(addr, "/api/session");
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(session["mode"]["state"], "Running");
    assert_eq!(session["checkpoint"], s(&cp));
}
