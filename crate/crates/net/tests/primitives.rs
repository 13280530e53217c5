use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use ed25519_dalek::SigningKey;
use privinfer_core::ring::{FixedTensor, RingConfig};
use privinfer_core::transport::{Tag, Transport};
use privinfer_net::channel::{accept, connect};
use privinfer_net::compose::{compose_response, ChatComposer, TemplateComposer};
use privinfer_net::identity::Identity;
use privinfer_net::registry::{ServerEntry, ServerRegistry, ServerRole};
use privinfer_net::router::{route_intent, ChatRouter, KeywordRouter};
use privinfer_net::session::{decapsulate, encapsulate, ReplayGuard, ENCAPSULATION_LEN};
use privinfer_net::NetError;

fn pair(allowed: Option<Vec<[u8; 32]>>, expect: Option<[u8; 32]>) -> (Result<privinfer_net::channel::Connection, NetError>, Result<privinfer_net::channel::Connection, NetError>) {
    let server = Identity::generate();
    let client = Identity::generate();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let expected = expect.unwrap_or(server.public());
    thread::scope(|s| {
        let h = s.spawn(|| {
            let (stream, _) = listener.accept().unwrap();
            accept(stream, &server, allowed.as_deref(), Duration::from_secs(5))
        });
        let c = connect(&addr, &client, &expected, Duration::from_secs(5));
        (c, h.join().unwrap())
    })
}

#[test]
fn handshake_takes_two_frames_and_keys_match() {
    let (c, s) = pair(None, None);
    let (mut c, mut s) = (c.unwrap(), s.unwrap());
    assert_eq!(c.session(), s.session());
    let st = c.chan.stats();
    assert_eq!(st.scopes[0].frames_sent + st.scopes[0].frames_received, 2);
    assert_eq!(c.wire.written(), st.total_sent());
    c.chan.send(Tag::Control, b"ping").unwrap();
    assert_eq!(s.chan.recv(Tag::Control).unwrap(), b"ping");
    s.chan.send(Tag::Control, b"pong").unwrap();
    assert_eq!(c.chan.recv(Tag::Control).unwrap(), b"pong");
}

#[test]
fn wrong_peer_key_fails_authentication() {
    let (c, _) = pair(None, Some(Identity::generate().public()));
    assert!(matches!(c, Err(NetError::Auth(_))));
    let (c, s) = pair(Some(vec![Identity::generate().public()]), None);
    assert!(matches!(c, Err(NetError::Auth(_))));
    assert!(matches!(s, Err(NetError::Auth(_))));
}

#[test]
fn dead_port_times_out_within_bound() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let start = Instant::now();
    let r = connect(&format!("127.0.0.1:{port}"), &Identity::generate(), &[0; 32], Duration::from_millis(300));
    assert!(matches!(r, Err(NetError::ConnectTimeout(_))));
    assert!(start.elapsed() < Duration::from_secs(2));
}

#[test]
fn session_key_roundtrip_and_confirmation() {
    let cloud = Identity::generate();
    let (mut user_key, enc) = encapsulate(&cloud.public());
    assert_eq!(enc.len(), ENCAPSULATION_LEN);
    let mut cloud_key = decapsulate(&cloud, &enc).unwrap();
    assert_eq!(user_key.id, cloud_key.id);
    user_key.check_confirmation(&cloud_key.confirmation()).unwrap();

    let sealed = user_key.seal(b"x1", b"share bytes");
    assert_eq!(cloud_key.open(b"x1", &sealed).unwrap(), b"share bytes");
    // Replaying the same message is refused by the counter.
    assert!(matches!(cloud_key.open(b"x1", &sealed), Err(NetError::Replay)));
    let back = cloud_key.seal(b"res1", b"result");
    assert!(matches!(user_key.open(b"x1", &back), Err(NetError::Aead)));
    let back2 = cloud_key.seal(b"res1", b"result");
    let mut flipped = back2.clone();
    flipped[12] ^= 1;
    let mut user2 = user_key;
    // Counter 0 was consumed by the failed label check above, which did not advance.
    assert_eq!(user2.open(b"res1", &back).unwrap(), b"result");
    assert!(matches!(user2.open(b"res1", &flipped), Err(NetError::Aead)));
    assert_eq!(user2.open(b"res1", &back2).unwrap(), b"result");
}

#[test]
fn tampered_encapsulation_never_confirms() {
    let cloud = Identity::generate();
    let (user_key, enc) = encapsulate(&cloud.public());
    for i in 0..enc.len() {
        let mut t = enc.clone();
        t[i] ^= 0x80;
        match decapsulate(&cloud, &t) {
            Err(NetError::Aead) => {}
            Ok(k) => assert!(user_key.check_confirmation(&k.confirmation()).is_err(), "byte {i}"),
            Err(e) => panic!("byte {i}: {e}"),
        }
    }
    assert!(decapsulate(&Identity::generate(), &enc).is_err());
}

#[test]
fn replayed_encapsulation_rejected() {
    let cloud = Identity::generate();
    let guard = ReplayGuard::default();
    let (_, enc) = encapsulate(&cloud.public());
    guard.check(&enc).unwrap();
    assert!(matches!(guard.check(&enc), Err(NetError::Replay)));
    let (_, other) = encapsulate(&cloud.public());
    guard.check(&other).unwrap();
}

fn entry(id: &str, role: ServerRole, tags: &[&str]) -> ServerEntry {
    ServerEntry {
        id: id.into(),
        role,
        endpoint: "127.0.0.1:1".into(),
        capabilities: tags.iter().map(|t| t.to_string()).collect(),
        public_key: Identity::generate().public_hex(),
        input_shape: None,
        labels: vec![],
    }
}

fn registry() -> ServerRegistry {
    ServerRegistry {
        servers: vec![
            entry("digits", ServerRole::Model, &["digit-classifier"]),
            entry("xray-a", ServerRole::Model, &["cnn-chest-xray"]),
            entry("xray-b", ServerRole::Model, &["cnn-chest-xray"]),
            entry("cloud", ServerRole::Cloud, &["secure-compute"]),
        ],
    }
}

#[test]
fn keyword_routing() {
    let reg = registry();
    let router = KeywordRouter::default();
    let plan = route_intent("Could you help identify any issues in my chest scan?", &reg, &router).unwrap();
    assert_eq!(plan.task, "cnn-chest-xray");
    assert_eq!(plan.model_server.id, "xray-a");
    assert_eq!(plan.cloud.id, "cloud");
    assert_eq!(route_intent("Could you help identify any issues in my chest scan?", &reg, &router).unwrap(), plan);
    assert_eq!(route_intent("read this handwritten digit", &reg, &router).unwrap().model_server.id, "digits");
    assert!(matches!(route_intent("what's the weather", &reg, &router), Err(NetError::NoRoute(_))));
    assert!(matches!(route_intent("   ", &reg, &router), Err(NetError::EmptyQuery)));
    assert!(matches!(route_intent("chest scan", &ServerRegistry::default(), &router), Err(NetError::NoRoute(_))));
    // A query matching two capabilities goes to the one listed first.
    assert_eq!(route_intent("a digit on a chest x-ray", &reg, &router).unwrap().task, "digit-classifier");
}

/// Answers every HTTP request with a fixed chat completion.
fn fake_chat(content: &'static str) -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    thread::spawn(move || {
        for mut s in l.incoming().flatten() {
            let mut buf = [0u8; 8192];
            let mut req = Vec::new();
            loop {
                let n = s.read(&mut buf).unwrap_or(0);
                req.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&req);
                if n == 0 {
                    break;
                }
                if let Some(h) = text.find("\r\n\r\n") {
                    let len = text[..h]
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if req.len() >= h + 4 + len {
                        break;
                    }
                }
            }
            let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            let resp = format!("HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
            let _ = s.write_all(resp.as_bytes());
        }
    });
    format!("http://{addr}/v1")
}

fn chat(endpoint: String) -> ChatRouter {
    ChatRouter { endpoint, model: "local".into(), api_key: None, timeout: Duration::from_secs(5) }
}

#[test]
fn chat_router_answers_are_validated() {
    let reg = registry();
    let plan = route_intent("anything", &reg, &chat(fake_chat("cnn-chest-xray"))).unwrap();
    assert_eq!(plan.model_server.id, "xray-a");
    let r = route_intent("anything", &reg, &chat(fake_chat("brain-mri")));
    assert!(matches!(r, Err(NetError::NoRoute(_))));
    let dead = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1", l.local_addr().unwrap())
    };
    assert!(matches!(route_intent("chest", &reg, &chat(dead)), Err(NetError::Router(_))));
}

#[test]
fn registry_signature_and_validation() {
    let reg = registry();
    let sk = SigningKey::from_bytes(&[7; 32]);
    let text = reg.to_json(Some(&sk));
    assert_eq!(ServerRegistry::from_json(&text, Some(&sk.verifying_key())).unwrap(), reg);
    let other = SigningKey::from_bytes(&[8; 32]);
    assert!(ServerRegistry::from_json(&text, Some(&other.verifying_key())).is_err());
    let tampered = text.replace("xray-a", "xray-z");
    assert!(ServerRegistry::from_json(&tampered, Some(&sk.verifying_key())).is_err());
    assert!(ServerRegistry::from_json(&tampered, None).is_ok());
    assert!(ServerRegistry::from_json(&reg.to_json(None), Some(&sk.verifying_key())).is_err());

    let mut dup = reg.clone();
    dup.servers.push(dup.servers[0].clone());
    assert!(dup.validate().is_err());
    let mut untagged = reg;
    untagged.servers[0].capabilities.clear();
    assert!(untagged.validate().is_err());
}

fn logits(vals: &[f64]) -> FixedTensor {
    FixedTensor::from_reals(vec![vals.len()], vals, RingConfig::default()).unwrap()
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn template_response() {
    let l = labels(&["Atelectasis", "Cardiomegaly", "Effusion"]);
    let c = compose_response("chest scan?", &logits(&[0.1, 2.0, -1.0]), &l, &TemplateComposer::default()).unwrap();
    assert!(c.text.starts_with("The most likely finding is Cardiomegaly"), "{}", c.text);
    assert_eq!(c.ranked[0][0].0, "Cardiomegaly");
    assert_eq!(c.warning, None);

    let tie = compose_response("?", &logits(&[0.5, 0.5, 0.5]), &l, &TemplateComposer { top_k: 3 }).unwrap();
    assert!(tie.text.contains("Atelectasis, Cardiomegaly, Effusion are tied"), "{}", tie.text);

    assert!(matches!(
        compose_response("?", &logits(&[0.5, 0.5]), &l, &TemplateComposer::default()),
        Err(NetError::Labels { labels: 3, logits: 2 })
    ));
}

#[test]
fn chat_composer_falls_back_with_warning() {
    let l = labels(&["a", "b"]);
    let dead = {
        let s = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1", s.local_addr().unwrap())
    };
    let composer = ChatComposer { endpoint: dead, model: "m".into(), api_key: None, timeout: Duration::from_secs(2), template: TemplateComposer::default() };
    let c = compose_response("?", &logits(&[1.0, 0.0]), &l, &composer).unwrap();
    assert!(c.warning.is_some());
    assert!(c.text.contains("most likely finding is a"));

    let live = ChatComposer { endpoint: fake_chat("It looks like a."), ..composer };
    let c = compose_response("?", &logits(&[1.0, 0.0]), &l, &live).unwrap();
    assert_eq!(c.text, "It looks like a.");
    assert_eq!(c.warning, None);
}
