use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::Parser;
use privinfer_cli::config::RunConfig;
use privinfer_cli::exit;
use privinfer_cli::tensor_io::{TensorData, TensorFile};
use privinfer_cli::CliError;
use privinfer_core::report;
use privinfer_net::identity::Identity;
use privinfer_net::registry::{ServerEntry, ServerRegistry, ServerRole};
use privinfer_net::NetError;
use proptest::prelude::*;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_privinfer");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("PRIVINFER_LOG", "error").env_remove("PRIVINFER_ROLE").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A registry whose servers listen on `model_ep` and `cloud_ep`.
fn registry(dir: &Path, model_ep: &str, cloud_ep: &str) -> String {
    let entry = |id: &str, role, ep: &str, tag: &str, shape: Option<Vec<usize>>| ServerEntry {
        id: id.into(),
        role,
        endpoint: ep.into(),
        capabilities: vec![tag.into()],
        public_key: Identity::generate().public_hex(),
        input_shape: shape,
        labels: vec![],
    };
    let reg = ServerRegistry {
        servers: vec![
            entry("xray", ServerRole::Model, model_ep, "cnn-chest-xray", Some(vec![1, 28, 28])),
            entry("cloud", ServerRole::Cloud, cloud_ep, "secure-compute", None),
        ],
    };
    let path = dir.join("registry.json");
    std::fs::write(&path, reg.to_json(None)).unwrap();
    path.display().to_string()
}

/// Listener that counts connection attempts.
fn counting_listener() -> (String, Arc<AtomicUsize>) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    thread::spawn(move || {
        for s in l.incoming() {
            h.fetch_add(1, Ordering::SeqCst);
            drop(s);
        }
    });
    (addr, hits)
}

fn closed_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

#[test]
fn usage_errors() {
    let o = run(&[]);
    assert_eq!(code(&o), exit::USAGE as i32);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--role"));
    let o = run(&["--role", "model-server"]);
    assert_eq!(code(&o), exit::USAGE as i32);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model"));
    assert_eq!(code(&run(&["--role", "bench", "--trunc", "round"])), exit::USAGE as i32);
    assert_eq!(code(&run(&["--role", "bench", "--ot", "magic"])), exit::USAGE as i32);
    assert_eq!(code(&run(&["--role", "wizard"])), exit::USAGE as i32);
}

#[test]
fn invalid_model_file() {
    let dir = TempDir::new().unwrap();
    let key = dir.path().join("k");
    assert!(run(&["--role", "keygen", "--out", key.to_str().unwrap()]).status.success());
    let bad = dir.path().join("bad.pim");
    std::fs::write(&bad, b"not a model").unwrap();
    let o = run(&[
        "--role", "model-server", "--model", bad.to_str().unwrap(), "--key", key.to_str().unwrap(),
        "--peer", "127.0.0.1:1", "--peer-key", key.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), exit::INVALID_INPUT as i32);
}

#[test]
fn unroutable_query_exits_with_no_route() {
    let dir = TempDir::new().unwrap();
    let (ep, hits) = counting_listener();
    let reg = registry(dir.path(), &ep, &ep);
    let x = dir.path().join("x.txt");
    std::fs::write(&x, "1 2 3").unwrap();
    let out = dir.path().join("logits");
    let o = run(&["--role", "user", "--registry", &reg, "--query", "what is the weather", "--input", x.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), exit::NO_ROUTE as i32, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["--role", "user", "--registry", &reg, "--query", "  ", "--input", x.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), exit::NO_ROUTE as i32);
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    assert!(!out.exists());
}

#[test]
fn bad_input_shape_is_rejected_before_any_connection() {
    let dir = TempDir::new().unwrap();
    let (ep, hits) = counting_listener();
    let reg = registry(dir.path(), &ep, &ep);
    let x = dir.path().join("x.txt");
    std::fs::write(&x, "shape: 2 2\n1 2\n3 4\n").unwrap();
    let o = run(&["--role", "user", "--registry", &reg, "--query", "chest scan", "--input", x.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(code(&o), exit::INVALID_INPUT as i32);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match the model input"));
    thread::sleep(Duration::from_millis(100));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
}

#[test]
fn unreachable_servers_and_tampered_registry() {
    let dir = TempDir::new().unwrap();
    let dead = closed_port();
    let reg = registry(dir.path(), &dead, &dead);
    let x = dir.path().join("x.txt");
    std::fs::write(&x, format!("shape: 1 28 28\n{}", "0.5 ".repeat(784))).unwrap();
    let args = ["--role", "user", "--registry", &reg, "--query", "chest scan", "--input", x.to_str().unwrap(), "--out", "/dev/null", "--timeout", "1"];
    assert_eq!(code(&run(&args)), exit::UNREACHABLE as i32);

    // A registry signed by one key does not verify under another.
    let sk = dir.path().join("sign.key");
    let other = dir.path().join("other.key");
    assert!(run(&["--role", "keygen", "--signing", "--out", sk.to_str().unwrap()]).status.success());
    let other_pub = stdout(&run(&["--role", "keygen", "--signing", "--out", other.to_str().unwrap()]));
    let signed = dir.path().join("signed.json");
    let good_pub = stdout(&run(&["--role", "sign-registry", "--registry", &reg, "--signing-key", sk.to_str().unwrap(), "--out", signed.to_str().unwrap()]));
    let mut args: Vec<&str> = args.to_vec();
    args[3] = signed.to_str().unwrap();
    args.extend(["--registry-key", other_pub.trim()]);
    let o = run(&args);
    assert_eq!(code(&o), exit::INVALID_INPUT as i32);
    assert!(String::from_utf8_lossy(&o.stderr).contains("signature"));
    // With the right key it gets as far as the network.
    let n = args.len();
    args[n - 1] = good_pub.trim();
    assert_eq!(code(&run(&args)), exit::UNREACHABLE as i32);
}

#[test]
fn bench_outputs() {
    let o = run(&["--role", "bench", "--models", ""]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "");

    let dir = TempDir::new().unwrap();
    let json = dir.path().join("bench.json");
    let o = run(&["--role", "bench", "--models", "tiny_resnet,mlp", "--batch", "2", "--ot", "dealer", "--seed", "1", "--json", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.lines().next().unwrap().contains("tiny_resnet"));
    assert!(table.contains("Communication(MB)") && table.contains("Comm. ratio"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    report::validate(&v).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let mlp = &rows[1];
    assert_eq!(mlp["batch"], 2);
    let per = mlp["comm_mb"].as_f64().unwrap();
    assert!((per * 2.0 - mlp["total_comm_mb"].as_f64().unwrap()).abs() < 1e-12);
    assert!(mlp["comm_ratio"].as_f64().is_some());
    assert!(rows[0]["comm_ratio"].is_null());

    assert_eq!(code(&run(&["--role", "bench", "--models", "no-such-model"])), exit::INVALID_INPUT as i32);
}

#[test]
fn daemon_stops_cleanly_on_signal_and_bind_conflicts_are_reported() {
    let dir = TempDir::new().unwrap();
    let key = dir.path().join("cloud.key");
    assert!(run(&["--role", "keygen", "--out", key.to_str().unwrap()]).status.success());
    let mut child = Command::new(BIN)
        .args(["--role", "cloud-server", "--key", key.to_str().unwrap()])
        .env("PRIVINFER_LOG", "error")
        .env("HOST", "127.0.0.1")
        .env("PORT", "0")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first.strip_prefix("listening ").unwrap().to_string();
    assert!(lines.next().unwrap().unwrap().starts_with("public-key "));

    let o = run(&["--role", "cloud-server", "--key", key.to_str().unwrap(), "--listen", &addr]);
    assert_eq!(code(&o), exit::BIND as i32);

    Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    let status = child.wait().unwrap();
    assert!(status.success());
    let stats = lines.next().unwrap().unwrap();
    assert!(stats.starts_with("stats {") && stats.contains("\"sessions_ok\":0"), "{stats}");
}

#[test]
fn fixture_writes_a_loadable_model_and_sample() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("m.pim");
    let sample = dir.path().join("x.txt");
    let o = run(&["--role", "fixture", "--fixture", "mlp", "--out", model.to_str().unwrap(), "--sample", sample.to_str().unwrap(), "--batch", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "mlp input 784");
    privinfer_cli::commands::load_model_file(&model).unwrap();
    assert_eq!(TensorFile::read(&sample).unwrap().shape, vec![3, 784]);
    assert_eq!(code(&run(&["--role", "fixture", "--fixture", "vgg", "--out", "/dev/null"])), exit::INVALID_INPUT as i32);
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"role": "bench", "models": ["mlp"], "seed": 9, "trunc": "local", "batch": 4}"#).unwrap();
    let c = RunConfig::try_parse_from(["privinfer", "--config", cfg.to_str().unwrap(), "--seed", "2"]).unwrap().resolve().unwrap();
    assert_eq!(c.seed, Some(2));
    assert_eq!(c.batch, Some(4));
    assert_eq!(c.models, Some(vec!["mlp".to_string()]));
    assert_eq!(c.session_options().unwrap().trunc.to_string(), "local");

    std::fs::write(&cfg, r#"{"role": "bench", "colour": "blue"}"#).unwrap();
    let e = RunConfig::try_parse_from(["privinfer", "--config", cfg.to_str().unwrap()]).unwrap().resolve().unwrap_err();
    assert_eq!(e.exit_code(), exit::USAGE);
}

#[test]
fn every_error_class_has_its_own_code() {
    let cases: Vec<(CliError, u8)> = vec![
        (CliError::Usage("x".into()), exit::USAGE),
        (CliError::Input("x".into()), exit::INVALID_INPUT),
        (NetError::NoRoute("x".into()).into(), exit::NO_ROUTE),
        (NetError::ConnectTimeout("x".into()).into(), exit::UNREACHABLE),
        (NetError::Auth("x".into()).into(), exit::AUTH),
        (NetError::Aead.into(), exit::INTEGRITY),
        (NetError::Replay.into(), exit::INTEGRITY),
        (NetError::Confirmation.into(), exit::INTEGRITY),
        (NetError::Remote { server: "s".into(), kind: "k".into(), message: "m".into() }.into(), exit::PROTOCOL),
        (NetError::Bind { addr: "a".into(), source: std::io::Error::other("x") }.into(), exit::BIND),
        (NetError::Router("x".into()).into(), exit::ROUTER),
        (CliError::Internal("x".into()), exit::INTERNAL),
    ];
    for (e, want) in cases {
        assert_eq!(e.exit_code(), want, "{e}");
    }
    let codes = [exit::OK, exit::INTERNAL, exit::USAGE, exit::INVALID_INPUT, exit::NO_ROUTE, exit::UNREACHABLE, exit::AUTH, exit::INTEGRITY, exit::PROTOCOL, exit::BIND, exit::ROUTER];
    let mut sorted = codes.to_vec();
    sorted.dedup();
    assert_eq!(sorted.len(), codes.len());
}

#[test]
fn tensor_file_examples() {
    let t = TensorFile::parse_text("# logits\nshape: 2 3\n1 2 3\n4, 5, 6.5\n").unwrap();
    assert_eq!(t.shape, vec![2, 3]);
    assert_eq!(t.data, TensorData::Real(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]));
    assert_eq!(TensorFile::parse_text("1 2 3").unwrap().shape, vec![3]);
    assert!(TensorFile::parse_text("shape: 2 2\n1 2 3").is_err());
    assert!(TensorFile::parse_text("1 x").is_err());

    let bytes = t.to_bytes();
    assert_eq!(&bytes[..4], b"PITN");
    assert_eq!(bytes.len(), 8 + 2 * 8 + 6 * 8);
    assert!(TensorFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(TensorFile::from_bytes(&extra).is_err());
    let mut bad_kind = bytes.clone();
    bad_kind[5] = 9;
    assert!(TensorFile::from_bytes(&bad_kind).is_err());
}

proptest! {
    #[test]
    fn tensor_files_roundtrip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>(), words in any::<bool>()) {
        let n: usize = shape.iter().product();
        let raw: Vec<u64> = (0..n as u64).map(|i| seed.wrapping_mul(i + 1).rotate_left(17)).collect();
        let t = if words {
            TensorFile { shape: shape.clone(), data: TensorData::Word(raw) }
        } else {
            TensorFile::reals(shape.clone(), raw.iter().map(|&w| (w as i64 >> 20) as f64 / 4096.0).collect())
        };
        prop_assert_eq!(&TensorFile::from_bytes(&t.to_bytes()).unwrap(), &t);
        if !words && !shape.is_empty() {
            prop_assert_eq!(&TensorFile::parse_text(&t.to_text()).unwrap(), &t);
        }
    }
}
