//! One function per role.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use ed25519_dalek::SigningKey;
use privinfer_core::model::fixtures::{self, random_input};
use privinfer_core::model::{load_model, save_model, validate_graph, ModelSpec};
use privinfer_core::report::{self, emit_table, BenchReport, BenchRow, SCHEMA_ID};
use privinfer_core::ring::{FixedTensor, RingConfig};
use privinfer_core::runtime::run_local;
use privinfer_core::transport::CommStats;
use privinfer_net::channel::listen;
use privinfer_net::compose::{compose_response, ChatComposer, Composer, TemplateComposer};
use privinfer_net::identity::{load_public, parse_key, Identity, PublicKeyBytes};
use privinfer_net::registry::{parse_verifying_key, ServerRegistry};
use privinfer_net::router::{route_intent, ChatRouter, KeywordRouter, Router};
use privinfer_net::server::{serve, CloudServer, ModelServer, ServerConfig, ServerStats, Service};
use privinfer_net::user::{dispatch_and_reconstruct, UserConfig};
use privinfer_net::NetError;
use rand::rngs::OsRng;
use serde::Serialize;
use tracing::info;

use crate::config::{Role, RunConfig};
use crate::tensor_io::{TensorData, TensorFile};
use crate::CliError;

pub fn run(cfg: &RunConfig, shutdown: Arc<AtomicBool>) -> Result<(), CliError> {
    match cfg.require(&cfg.role, "role")? {
        Role::ModelServer => cmd_model_server(cfg, shutdown),
        Role::CloudServer => cmd_cloud_server(cfg, shutdown),
        Role::User => cmd_user(cfg),
        Role::Bench => cmd_bench(cfg),
        Role::Keygen => cmd_keygen(cfg),
        Role::Fixture => cmd_fixture(cfg),
        Role::SignRegistry => cmd_sign_registry(cfg),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))
}

/// Loads a model file and rejects graphs with validation issues.
pub fn load_model_file(path: &Path) -> Result<ModelSpec, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
    let m = load_model(&bytes)?;
    let report = validate_graph(&m);
    if !report.is_empty() {
        let issues: Vec<String> = report.issues.iter().map(|i| i.message.clone()).collect();
        return Err(CliError::Input(format!("{}: {}", path.display(), issues.join("; "))));
    }
    Ok(m)
}

/// A model file if the path exists, otherwise a built-in fixture name.
fn resolve_model(spec: &str, seed: u64) -> Result<ModelSpec, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        return load_model_file(path);
    }
    fixtures::by_name(spec, seed).ok_or_else(|| CliError::Input(format!("{spec}: neither a model file nor a built-in model")))
}

/// A public key given inline as 64 hex digits or as a key file.
pub fn read_public(spec: &str) -> Result<PublicKeyBytes, CliError> {
    if spec.len() == 64 && spec.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Ok(parse_key(spec)?);
    }
    Ok(load_public(Path::new(spec))?)
}

fn server_config(cfg: &RunConfig) -> Result<ServerConfig, CliError> {
    let identity = Identity::load(cfg.require(&cfg.key, "key")?)?;
    let mut sc = ServerConfig::new(identity, cfg.session_options()?);
    sc.timeout = cfg.timeout();
    sc.session_timeout = cfg.session_timeout();
    Ok(sc)
}

/// Serves until `shutdown` is set, then prints the lifetime statistics.
fn daemon(cfg: &RunConfig, service: Arc<dyn Service>, public_hex: &str, shutdown: Arc<AtomicBool>) -> Result<(), CliError> {
    let listener = listen(&cfg.listen_addr())?;
    let addr: SocketAddr = listener.local_addr().map_err(NetError::Io)?;
    {
        let mut out = std::io::stdout().lock();
        // Supervisors and tests read the bound address from this line.
        let _ = writeln!(out, "listening {addr}");
        let _ = writeln!(out, "public-key {public_hex}");
        let _ = out.flush();
    }
    let stats: ServerStats = serve(listener, service, shutdown)?;
    let json = serde_json::to_string(&stats).map_err(|e| CliError::Internal(e.to_string()))?;
    info!(%json, "shutting down");
    println!("stats {json}");
    if let Some(path) = &cfg.stats {
        write_file(path, json)?;
    }
    Ok(())
}

pub fn cmd_model_server(cfg: &RunConfig, shutdown: Arc<AtomicBool>) -> Result<(), CliError> {
    let model = load_model_file(cfg.require(&cfg.model, "model")?)?;
    let cloud = cfg.require(&cfg.peer, "peer")?.clone();
    let cloud_key = read_public(cfg.require(&cfg.peer_key, "peer-key")?)?;
    let sc = server_config(cfg)?;
    let public = sc.identity.public_hex();
    info!(model = %model.name, %cloud, "model server starting");
    daemon(cfg, Arc::new(ModelServer::new(sc, model, cloud, cloud_key)), &public, shutdown)
}

pub fn cmd_cloud_server(cfg: &RunConfig, shutdown: Arc<AtomicBool>) -> Result<(), CliError> {
    let sc = server_config(cfg)?;
    let allowed = if cfg.allow_keys.is_empty() {
        None
    } else {
        Some(cfg.allow_keys.iter().map(|k| read_public(k)).collect::<Result<Vec<_>, _>>()?)
    };
    let public = sc.identity.public_hex();
    daemon(cfg, Arc::new(CloudServer::new(sc, allowed)), &public, shutdown)
}

/// Turns the user's tensor into ring words of the expected per-sample shape,
/// adding a batch dimension of one when the file holds a single sample.
pub fn prepare_input(t: &TensorFile, expected: Option<&[usize]>, ring: RingConfig) -> Result<FixedTensor, CliError> {
    let mut shape = t.shape.clone();
    if let Some(exp) = expected {
        if shape.as_slice() == exp {
            shape.insert(0, 1);
        } else if !(shape.len() == exp.len() + 1 && &shape[1..] == exp && shape[0] > 0) {
            return Err(NetError::InputShape { got: t.shape.clone(), expected: exp.to_vec() }.into());
        }
    }
    let x = match &t.data {
        TensorData::Real(v) => FixedTensor::from_reals(shape, v, ring),
        TensorData::Word(v) => FixedTensor::new(shape, v.clone(), ring),
    };
    x.map_err(|e| CliError::Input(e.to_string()))
}

#[derive(Serialize)]
struct UserReport<'a> {
    task: &'a str,
    model_server: &'a str,
    cloud: &'a str,
    response: &'a str,
    warning: Option<&'a str>,
    model_stats: &'a CommStats,
    cloud_stats: &'a CommStats,
}

fn summary(who: &str, s: &CommStats) -> String {
    format!(
        "{who}: {:.3} MB sent, {:.3} MB received, {} rounds, {:.3} s",
        s.total_sent() as f64 / report::MB,
        s.total_received() as f64 / report::MB,
        s.total_rounds(),
        s.elapsed().as_secs_f64()
    )
}

pub fn cmd_user(cfg: &RunConfig) -> Result<(), CliError> {
    let query = cfg.require(&cfg.query, "query")?;
    let input_path = cfg.require(&cfg.input, "input")?;
    let out = cfg.require(&cfg.out, "out")?;
    let trusted = match &cfg.registry_key {
        Some(k) => {
            let text = if Path::new(k).exists() { read_text(Path::new(k))? } else { k.clone() };
            Some(parse_verifying_key(text.lines().next().unwrap_or(""))?)
        }
        None => None,
    };
    let reg = ServerRegistry::load(cfg.require(&cfg.registry, "registry")?, trusted.as_ref())?;
    let tensor = TensorFile::read(input_path)?;

    let keyword = KeywordRouter::default();
    let chat;
    let router: &dyn Router = match &cfg.chat_endpoint {
        Some(endpoint) => {
            chat = ChatRouter {
                endpoint: endpoint.clone(),
                model: cfg.chat_model.clone().unwrap_or_else(|| "default".into()),
                api_key: std::env::var("PRIVINFER_CHAT_API_KEY").ok(),
                timeout: cfg.timeout(),
            };
            &chat
        }
        None => &keyword,
    };
    let plan = route_intent(query, &reg, router)?;
    info!(task = %plan.task, server = %plan.model_server.id, "routed");
    // Shape problems are caught here, before either server is contacted.
    let x = prepare_input(&tensor, plan.model_server.input_shape.as_deref(), RingConfig::default())?;

    let ucfg = UserConfig { timeout: cfg.timeout(), session_timeout: cfg.session_timeout(), seed: cfg.seed };
    let outcome = dispatch_and_reconstruct(&x, &plan, &ucfg)?;
    TensorFile::reals(outcome.output.shape().to_vec(), outcome.output.to_reals()).write(out)?;

    let classes = *outcome.output.shape().last().unwrap_or(&0);
    let labels = if plan.model_server.labels.is_empty() {
        (0..classes).map(|i| format!("class {i}")).collect()
    } else {
        plan.model_server.labels.clone()
    };
    let template = TemplateComposer { top_k: cfg.top_k.unwrap_or(3) };
    let composer: Box<dyn Composer> = match &cfg.chat_endpoint {
        Some(endpoint) => Box::new(ChatComposer {
            endpoint: endpoint.clone(),
            model: cfg.chat_model.clone().unwrap_or_else(|| "default".into()),
            api_key: std::env::var("PRIVINFER_CHAT_API_KEY").ok(),
            timeout: cfg.timeout(),
            template,
        }),
        None => Box::new(template),
    };
    let composed = compose_response(query, &outcome.output, &labels, composer.as_ref())?;
    if let Some(w) = &composed.warning {
        eprintln!("warning: {w}");
    }
    println!("route: {} -> {} (cloud {})", plan.task, plan.model_server.id, plan.cloud.id);
    println!("{}", composed.text);
    println!("{}", summary("model server", &outcome.model_stats));
    println!("{}", summary("cloud server", &outcome.cloud_stats));
    println!("logits: {}", out.display());
    if let Some(path) = &cfg.response {
        write_file(path, format!("{}\n", composed.text))?;
    }
    if let Some(path) = &cfg.stats {
        let r = UserReport {
            task: &plan.task,
            model_server: &plan.model_server.id,
            cloud: &plan.cloud.id,
            response: &composed.text,
            warning: composed.warning.as_deref(),
            model_stats: &outcome.model_stats,
            cloud_stats: &outcome.cloud_stats,
        };
        write_file(path, serde_json::to_string_pretty(&r).map_err(|e| CliError::Internal(e.to_string()))?)?;
    }
    Ok(())
}

/// Runs each model in-process over an instrumented channel and reports the
/// per-sample runtime and communication.
pub fn bench_rows(cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    let names: Vec<String> = cfg
        .models
        .clone()
        .unwrap_or_else(|| vec!["mlp".into(), "lenet5".into()])
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let opts = cfg.session_options()?;
    let batch = cfg.batch.unwrap_or(1);
    if batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }
    let seed = cfg.seed.unwrap_or(0);
    let mut rows = Vec::new();
    for name in &names {
        let m = resolve_model(name, seed)?;
        let x = random_input(&m, batch, seed);
        let start = Instant::now();
        let run = run_local(&m, &x, &opts)?;
        let secs = start.elapsed().as_secs_f64();
        info!(model = %m.name, secs, "bench run done");
        rows.push(BenchRow::new(&m.name, batch, secs, &run.owner.stats, &run.cloud.stats));
    }
    Ok(rows)
}

pub fn bench_report(rows: Vec<BenchRow>) -> Result<serde_json::Value, CliError> {
    let value = serde_json::to_value(BenchReport { schema: SCHEMA_ID.into(), rows })
        .map_err(|e| CliError::Internal(e.to_string()))?;
    report::validate(&value).map_err(|e| CliError::Internal(format!("bench report fails its schema: {e}")))?;
    Ok(value)
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let rows = bench_rows(cfg)?;
    print!("{}", emit_table(&rows));
    let value = bench_report(rows)?;
    if let Some(path) = &cfg.json {
        write_file(path, serde_json::to_string_pretty(&value).map_err(|e| CliError::Internal(e.to_string()))?)?;
    }
    Ok(())
}

pub fn cmd_keygen(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require(&cfg.out, "out")?;
    if cfg.signing {
        let sk = SigningKey::generate(&mut OsRng);
        let public = hex::encode(sk.verifying_key().to_bytes());
        write_file(out, format!("{}\n{public}\n", hex::encode(sk.to_bytes())))?;
        println!("{public}");
    } else {
        let id = Identity::generate();
        id.save(out)?;
        println!("{}", id.public_hex());
    }
    Ok(())
}

pub fn cmd_fixture(cfg: &RunConfig) -> Result<(), CliError> {
    let name = cfg.require(&cfg.fixture, "fixture")?;
    let seed = cfg.seed.unwrap_or(0);
    let m = fixtures::by_name(name, seed).ok_or_else(|| CliError::Input(format!("unknown fixture {name}")))?;
    let out = cfg.out.as_ref().or(cfg.model.as_ref()).ok_or_else(|| CliError::Usage("--out is required for fixture".into()))?;
    write_file(out, save_model(&m)?)?;
    if let Some(path) = &cfg.sample {
        let x = random_input(&m, cfg.batch.unwrap_or(1), seed);
        TensorFile::reals(x.shape().to_vec(), x.to_reals()).write(path)?;
    }
    let shape: Vec<String> = m.input_shape.iter().map(|d| d.to_string()).collect();
    println!("{} input {}", m.name, shape.join("x"));
    Ok(())
}

pub fn cmd_sign_registry(cfg: &RunConfig) -> Result<(), CliError> {
    let reg = ServerRegistry::load(cfg.require(&cfg.registry, "registry")?, None)?;
    let text = read_text(cfg.require(&cfg.signing_key, "signing-key")?)?;
    let sk = SigningKey::from_bytes(&parse_key(text.lines().next().unwrap_or(""))?);
    write_file(cfg.require(&cfg.out, "out")?, reg.to_json(Some(&sk)))?;
    println!("{}", hex::encode(sk.verifying_key().to_bytes()));
    Ok(())
}
