use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fig1").join(name)
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_storyweave"));
    c.env_remove("LLM_API_KEY").env_remove("LLM_BASE_URL");
    c
}

fn compose(out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("compose")
        .arg("--data")
        .arg(fixture("cars.csv"))
        .arg("--knowledge")
        .arg(fixture("knowledge.md"))
        .arg("--charts")
        .arg(fixture("prius.json"))
        .arg(fixture("plugin.json"))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn offline_compose_uses_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("deck.html");
    let o = compose(&out, &["--select", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("facts selected: 4"), "{report}");
    assert!(report.contains("placements: 0 by model, 4 by fallback"), "{report}");
    let html = std::fs::read_to_string(&out).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>") || html.starts_with("<!doctype html>"));
}

#[test]
fn capacity_one_gives_one_fact_per_slide() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("deck.json");
    let o = compose(&out, &["--select", "3", "--max-facts-per-slide", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let story = storyweave_core::export::parse_story(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(story.deck.slides.len(), 6);
    assert!(story.deck.slides.iter().all(|s| s.entries.len() == 1));
    assert!(stdout(&o).contains("wrote 6 slides"));
}

#[test]
fn scripted_compose_reports_suggestions_and_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("deck.md");
    let transcript = dir.path().join("t.jsonl");
    let mock = format!("mock:{}", fixture("mock.json").display());
    let o = compose(
        &out,
        &[
            "--llm",
            &mock,
            "--intent",
            "Show how plug-in cars replace hybrids",
            "--transcript",
            transcript.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("suggestions proposed: 2, verified: 1, accepted: 1"), "{report}");
    assert!(report.contains("placements: 2 by model, 0 by fallback"), "{report}");
    let lines = std::fs::read_to_string(&transcript).unwrap();
    assert_eq!(lines.lines().count(), 3);
    for l in lines.lines() {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
}

#[test]
fn intent_can_come_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let intent = dir.path().join("intent.txt");
    std::fs::write(&intent, "Plug-ins win\n").unwrap();
    let out = dir.path().join("deck.md");
    let o = compose(&out, &["--intent", &format!("@{}", intent.display())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn http_backend_without_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = compose(&dir.path().join("d.md"), &["--llm", "http:http://127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("d.md").exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.md");
    for extra in [
        vec!["--weights", "1,1"],
        vec!["--theme", "neon"],
        vec!["--llm", "carrier-pigeon"],
        vec!["--format", "pptx"],
    ] {
        let o = compose(&out, &extra);
        assert_eq!(o.status.code(), Some(1), "{extra:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{extra:?}");
    }
    let o = bin()
        .args(["compose", "--data", "/nonexistent.csv", "--charts", "x.json", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_refuses_busy_port() {
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port();
    let o = bin().args(["serve", "--port", &port.to_string()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("already in use"));
}

#[test]
fn serve_answers_health() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin()
        .args(["serve", "--port", &port.to_string()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let body = loop {
        if let Ok(mut s) = TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /api/health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
                .unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("\"status\":\"ok\""));
}
