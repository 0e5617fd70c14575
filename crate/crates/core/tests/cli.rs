mod common;

use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::io::Write;

use common::{world, PASSWORD};
use serde_json::Value;

fn run(server: &str, tokens: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_qpu-gatekeeper"))
        .args(args)
        .env("GATEWAY_SERVER_URL", server)
        .env_remove("GATEKEEPER_TOKEN")
        .env_remove("GATEKEEPER_PASSWORD")
        .arg("--tokens-path")
        .arg(tokens)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    if let Some(s) = stdin {
        input.write_all(s.as_bytes()).unwrap();
    }
    drop(input);
    child.wait_with_output().unwrap()
}

async fn cli(server: &str, tokens: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let (server, tokens) = (server.to_string(), tokens.to_path_buf());
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let stdin = stdin.map(str::to_string);
    tokio::task::spawn_blocking(move || {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&server, &tokens, &args, stdin.as_deref())
    })
    .await
    .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[tokio::test(flavor = "multi_thread")]
async fn login_and_admin_commands() {
    let w = world().await;
    let server = w.stack.edge_url().to_string();
    let dir = tempfile::tempdir().unwrap();
    let tokens = dir.path().join("tokens.json");

    let bad = cli(&server, &tokens, &["login", "--username", "root", "--password", "nope"], None).await;
    assert_eq!(bad.status.code(), Some(1));
    assert!(!tokens.exists());

    let ok = cli(&server, &tokens, &["login", "--username", "root"], Some(&format!("{PASSWORD}\n"))).await;
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let file: Value = serde_json::from_slice(&std::fs::read(&tokens).unwrap()).unwrap();
    for key in ["access_token", "refresh_token", "auth_server_url"] {
        assert!(file[key].is_string(), "{key}");
    }

    let created = cli(
        &server,
        &tokens,
        &["admin", "--json", "project", "create", "--org", "o1", "--id", "p9", "--budget-ms", "3600000"],
        None,
    )
    .await;
    assert!(created.status.success(), "{}", String::from_utf8_lossy(&created.stderr));
    let project: Value = serde_json::from_str(&stdout(&created)).unwrap();
    assert_eq!(project["budget_ms"], 3_600_000);
    assert_eq!(w.stack.accounting.project_snapshot("p9").unwrap().budget_ms, 3_600_000);

    let listed = cli(&server, &tokens, &["admin", "project", "list"], None).await;
    let text = stdout(&listed);
    assert!(text.starts_with("PROJECT_ID"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("p9 ")));

    let budget = cli(&server, &tokens, &["admin", "budget", "set", "--project", "p9", "--budget-ms", "7200000"], None).await;
    assert!(budget.status.success());
    assert_eq!(w.stack.accounting.project_snapshot("p9").unwrap().budget_ms, 7_200_000);

    let missing = cli(&server, &tokens, &["admin", "project", "update", "nope", "--budget-ms", "1"], None).await;
    assert_eq!(missing.status.code(), Some(4));

    let duplicate = cli(
        &server,
        &tokens,
        &["admin", "org", "create", "--id", "o1", "--name", "again", "--budget-ms", "1"],
        None,
    )
    .await;
    assert_eq!(duplicate.status.code(), Some(5));

    let slot = cli(
        &server,
        &tokens,
        &["admin", "--json", "slot", "create", "--org", "o1", "--start", "2026-03-02T10:00:00Z", "--end", "2026-03-02T12:00:00Z"],
        None,
    )
    .await;
    assert!(slot.status.success(), "{}", String::from_utf8_lossy(&slot.stderr));

    let report = cli(
        &server,
        &tokens,
        &["admin", "report", "--org", "o1", "--from", "2026-01-01T00:00:00Z", "--to", "2027-01-01T00:00:00Z"],
        None,
    )
    .await;
    assert!(report.status.success());
    assert!(stdout(&report).contains("total_qpu_ms"));

    // A regular user is refused admin operations.
    let alice_tokens = dir.path().join("alice.json");
    cli(&server, &alice_tokens, &["login", "--username", "alice", "--password", PASSWORD], None).await;
    let denied = cli(&server, &alice_tokens, &["admin", "org", "create", "--name", "x", "--budget-ms", "1"], None).await;
    assert_eq!(denied.status.code(), Some(3));

    // An expired access token is refreshed transparently and the file rewritten.
    w.clock.advance_ms(3_600_000);
    let before = std::fs::read(&tokens).unwrap();
    let after_expiry = cli(&server, &tokens, &["admin", "org", "list"], None).await;
    assert!(after_expiry.status.success(), "{}", String::from_utf8_lossy(&after_expiry.stderr));
    assert_ne!(std::fs::read(&tokens).unwrap(), before);

    w.stack.shutdown().await;
}
