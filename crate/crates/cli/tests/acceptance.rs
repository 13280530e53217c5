//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. Pass a word on the command line to run only the criteria whose
//! name contains it.

use std::io::{BufRead, BufReader, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use privinfer_cli::commands::{bench_report, bench_rows};
use privinfer_cli::config::RunConfig;
use privinfer_cli::tensor_io::{TensorData, TensorFile};
use privinfer_core::gadgets::{divide_public, positive, secure_mul, TruncMode};
use privinfer_core::he::{ConvGeometry, HeContext, HeParams, PackingPlan, Plaintext};
use privinfer_core::model::fixtures::{self, random_input};
use privinfer_core::model::{batchnorm_layer, plaintext_infer, ModelSpec};
use privinfer_core::ot::OtKind;
use privinfer_core::report::emit_table;
use privinfer_core::ring::{FixedTensor, RingConfig};
use privinfer_core::runtime::{run_local, run_local_shares, split_input, SessionOptions};
use privinfer_core::sharing::share;
use privinfer_core::testkit::{join, party_pair, run_pair, split};
use privinfer_net::channel::listen;
use privinfer_net::identity::Identity;
use privinfer_net::registry::{ServerEntry, ServerRegistry, ServerRole};
use privinfer_net::relay::{BitFlip, Leg, Relay};
use privinfer_net::router::{route_intent, KeywordRouter, RoutePlan};
use privinfer_net::server::{serve, CloudServer, Fault, ModelServer, ServerConfig, ServerStats, Service};
use privinfer_net::user::{dispatch_and_reconstruct, UserConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn signed(v: u64, l: u32) -> i64 {
    ((v << (64 - l)) as i64) >> (64 - l)
}

fn opts(ot: OtKind, seed: u64) -> SessionOptions {
    SessionOptions { ot, trunc: TruncMode::Faithful, seed: Some(seed), ..Default::default() }
}

// ---------------------------------------------------------------------------
// Oracle equivalence

fn oracle_equivalence() -> Verdict {
    let mut parts = Vec::new();
    for (m, sessions) in [(fixtures::mlp(1), 10u64), (fixtures::lenet5(1), 10u64)] {
        ensure(m.ring == RingConfig::new(41, 12).unwrap(), || format!("{} is not on l=41, phi=12", m.name))?;
        let (mut inputs, mut exact) = (0, 0);
        for s in 0..sessions {
            // Ten sessions of ten samples each, alternating OT backends.
            let ot = if s % 2 == 0 { OtKind::Real } else { OtKind::Dealer };
            let x = random_input(&m, 10, 1000 + s);
            let secure = run_local(&m, &x, &opts(ot, s)).map_err(|e| e.to_string())?.output;
            let plain = plaintext_infer(&m, &x).map_err(|e| e.to_string())?;
            let per = secure.len() / 10;
            for i in 0..10 {
                inputs += 1;
                exact += (secure.data()[i * per..(i + 1) * per] == plain.data()[i * per..(i + 1) * per]) as usize;
            }
        }
        ensure(exact == inputs, || format!("{}: {exact}/{inputs} inputs bit-exact", m.name))?;
        parts.push(format!("{} {exact}/{inputs}", m.name));
    }
    Ok(format!("{} inputs bit-exact vs plaintext_infer (tolerance 0)", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// Exhaustive gadgets

fn exhaustive_gadgets() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(21);

    let r16 = RingConfig::new(16, 4).unwrap();
    let (mut p0, mut p1) = party_pair(r16, OtKind::Dealer, 1);
    let all16: Vec<u64> = (0..1u64 << 16).collect();
    let mut pos_bad = 0usize;
    for _ in 0..8 {
        let (x0, x1) = split(r16, &all16, &mut rng);
        let (d0, d1) = run_pair(&mut p0, &mut p1, |p| positive(p, &x0).unwrap(), |p| positive(p, &x1).unwrap());
        for (v, (a, b)) in all16.iter().zip(d0.bits.iter().zip(&d1.bits)) {
            pos_bad += ((a ^ b) != (signed(*v, 16) >= 0) as u8) as usize;
        }
    }
    ensure(pos_bad == 0, || format!("positive: {pos_bad} mismatches"))?;

    let r12 = RingConfig::new(12, 4).unwrap();
    let (mut p0, mut p1) = party_pair(r12, OtKind::Dealer, 2);
    let all12: Vec<u64> = (0..1u64 << 12).collect();
    let mut div_bad = 0usize;
    for d in [2u64, 3, 4, 9] {
        let (x0, x1) = split(r12, &all12, &mut rng);
        let (q0, q1) =
            run_pair(&mut p0, &mut p1, |p| divide_public(p, &x0, d).unwrap(), |p| divide_public(p, &x1, d).unwrap());
        let q = join(r12, &q0, &q1);
        div_bad += all12.iter().zip(&q).filter(|(v, q)| signed(**q, 12) != signed(**v, 12).div_euclid(d as i64)).count();
    }
    ensure(div_bad == 0, || format!("divide_public: {div_bad} mismatches"))?;

    let r8 = RingConfig::new(8, 2).unwrap();
    let (mut p0, mut p1) = party_pair(r8, OtKind::Dealer, 3);
    let xs: Vec<u64> = (0..1u64 << 16).map(|i| i >> 8).collect();
    let ys: Vec<u64> = (0..1u64 << 16).map(|i| i & 255).collect();
    let (x0, x1) = split(r8, &xs, &mut rng);
    let (y0, y1) = split(r8, &ys, &mut rng);
    let (z0, z1) = run_pair(&mut p0, &mut p1, |p| secure_mul(p, &x0, &y0).unwrap(), |p| secure_mul(p, &x1, &y1).unwrap());
    let z = join(r8, &z0, &z1);
    let mul_bad = (0..xs.len()).filter(|&i| z[i] != (xs[i] * ys[i]) & 255).count();
    ensure(mul_bad == 0, || format!("secure_mul: {mul_bad} mismatches"))?;

    Ok("positive 2^16 x 8 sharings, divide_public 2^12 x {2,3,4,9}, secure_mul 2^8 x 2^8: 0 mismatches (dealer)".into())
}

// ---------------------------------------------------------------------------
// HE

/// Schoolbook product in `Z_t[X]/(X^N + 1)`.
fn negacyclic(a: &[u64], b: &[u64], mask: u64) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        if a[i] == 0 {
            continue;
        }
        for j in 0..n {
            let p = a[i].wrapping_mul(b[j]);
            let k = i + j;
            if k < n {
                out[k] = out[k].wrapping_add(p);
            } else {
                out[k - n] = out[k - n].wrapping_sub(p);
            }
        }
    }
    out.into_iter().map(|v| v & mask).collect()
}

fn random_poly(rng: &mut ChaCha20Rng, n: usize, mask: u64) -> Vec<u64> {
    (0..n).map(|_| rng.gen::<u64>() & mask).collect()
}

fn he_suite() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let big = HeContext::new(HeParams::default_secure()).map_err(|e| e.to_string())?;
    let (n, mask) = (big.degree(), big.plain_modulus() - 1);
    let (pk, sk) = big.keygen(&mut rng);
    for i in 0..1000 {
        let pt = Plaintext::new(random_poly(&mut rng, n, mask));
        let ct = big.encrypt(&pk, &pt, &mut rng).map_err(|e| e.to_string())?;
        ensure(big.decrypt(&sk, &ct).map_err(|e| e.to_string())? == pt, || format!("roundtrip {i} differs"))?;
    }

    // N = 8: every ternary polynomial in {0, 1, -1} against every monomial and
    // two dense multipliers.
    let toy = HeContext::new(HeParams::toy()).map_err(|e| e.to_string())?;
    let tmask = toy.plain_modulus() - 1;
    let (tpk, tsk) = toy.keygen(&mut rng);
    let mut multipliers: Vec<Vec<u64>> = (0..8).map(|j| (0..8).map(|i| (i == j) as u64).collect()).collect();
    multipliers.push(random_poly(&mut rng, 8, tmask));
    multipliers.push(vec![tmask; 8]);
    let mut small_cases = 0;
    for code in 0..3usize.pow(8) {
        let a: Vec<u64> = (0..8).map(|i| [0, 1, tmask][(code / 3usize.pow(i)) % 3]).collect();
        let ca = toy.encrypt(&tpk, &Plaintext::new(a.clone()), &mut rng).map_err(|e| e.to_string())?;
        for b in &multipliers {
            let prod = toy.eval_plain_mul(&ca, &Plaintext::new(b.clone())).map_err(|e| e.to_string())?;
            let got = toy.decrypt(&tsk, &prod).map_err(|e| e.to_string())?.coeffs;
            ensure(got == negacyclic(&a, b, tmask), || format!("N=8 product {a:?} * {b:?}"))?;
            let cb = toy.encrypt(&tpk, &Plaintext::new(b.clone()), &mut rng).map_err(|e| e.to_string())?;
            let sum = toy.decrypt(&tsk, &toy.eval_add(&ca, &cb).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let want: Vec<u64> = a.iter().zip(b).map(|(x, y)| (x + y) & tmask).collect();
            ensure(sum.coeffs == want, || format!("N=8 sum {a:?} + {b:?}"))?;
            small_cases += 1;
        }
    }

    for i in 0..200 {
        let a = random_poly(&mut rng, n, mask);
        let b = random_poly(&mut rng, n, mask);
        let ca = big.encrypt(&pk, &Plaintext::new(a.clone()), &mut rng).map_err(|e| e.to_string())?;
        let cb = big.encrypt(&pk, &Plaintext::new(b.clone()), &mut rng).map_err(|e| e.to_string())?;
        let prod = big.decrypt(&sk, &big.eval_plain_mul(&ca, &Plaintext::new(b.clone())).map_err(|e| e.to_string())?);
        ensure(prod.map_err(|e| e.to_string())?.coeffs == negacyclic(&a, &b, mask), || format!("N=4096 product {i}"))?;
        let sum = big.decrypt(&sk, &big.eval_add(&ca, &cb).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let want: Vec<u64> = a.iter().zip(&b).map(|(x, y)| (x + y) & mask).collect();
        ensure(sum.coeffs == want, || format!("N=4096 sum {i}"))?;
    }
    Ok(format!("1000/1000 roundtrips exact at N={n}; {small_cases} exhaustive N=8 cases and 200 random N={n} cases match the schoolbook oracle"))
}

// ---------------------------------------------------------------------------
// Packing

fn conv_oracle(g: &ConvGeometry, x: &[u64], k: &[u64], mask: u64) -> Vec<u64> {
    let (oh, ow) = g.out_dims();
    let mut out = vec![0u64; g.out_ch * oh * ow];
    for m in 0..g.out_ch {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0u64;
                for c in 0..g.in_ch {
                    for a in 0..g.kh {
                        for b in 0..g.kw {
                            let xv = x[(c * g.height + i * g.stride + a) * g.width + j * g.stride + b];
                            acc = acc.wrapping_add(xv.wrapping_mul(k[((m * g.in_ch + c) * g.kh + a) * g.kw + b]));
                        }
                    }
                }
                out[(m * oh + i) * ow + j] = acc & mask;
            }
        }
    }
    out
}

fn packing_matrix() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let ctx = HeContext::new(HeParams::default_secure()).map_err(|e| e.to_string())?;
    let mask = ctx.plain_modulus() - 1;
    let (pk, sk) = ctx.keygen(&mut rng);
    let mut geoms = Vec::new();
    for rows in [1, 2, 5, 16] {
        for cols in [1, 3, 8, 16] {
            geoms.push(ConvGeometry::matvec(rows, cols));
        }
    }
    for in_ch in [1, 2, 3] {
        for (height, width) in [(3, 3), (5, 5), (4, 7), (8, 8)] {
            for out_ch in [1, 2, 4] {
                for k in [1, 2, 3] {
                    for stride in [1, 2] {
                        geoms.push(ConvGeometry { in_ch, height, width, out_ch, kh: k, kw: k, stride });
                    }
                }
            }
        }
    }
    for g in &geoms {
        let plan = PackingPlan::new(*g, ctx.degree()).map_err(|e| e.to_string())?;
        let x = random_poly(&mut rng, g.in_ch * g.height * g.width, mask);
        let k = random_poly(&mut rng, g.out_ch * g.in_ch * g.kh * g.kw, mask);
        let inputs = plan.pack_input(&x).map_err(|e| e.to_string())?;
        let weights = plan.pack_weights(&k).map_err(|e| e.to_string())?;
        let cts = inputs.iter().map(|p| ctx.encrypt(&pk, p, &mut rng)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
        let mut products = Vec::with_capacity(plan.output_cts());
        for t in 0..plan.tiles.len() {
            for mg in 0..plan.out_groups() {
                let mut acc = None;
                for cg in 0..plan.in_groups() {
                    let ct = &cts[t * plan.in_groups() + cg];
                    let term = ctx.eval_plain_mul(ct, &weights[mg * plan.in_groups() + cg]).map_err(|e| e.to_string())?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => ctx.eval_add(&a, &term).map_err(|e| e.to_string())?,
                    });
                }
                products.push(ctx.decrypt(&sk, &acc.expect("at least one group")).map_err(|e| e.to_string())?);
            }
        }
        let got = plan.unpack_result(&products).map_err(|e| e.to_string())?;
        ensure(got == conv_oracle(g, &x, &k, mask), || format!("pack/eval/unpack differs for {g:?}"))?;
    }
    Ok(format!("{} geometries (16 matvec up to 16x16, conv up to 3x8x8) exact through HE", geoms.len()))
}

// ---------------------------------------------------------------------------
// BatchNorm

fn batchnorm_consistency() -> Verdict {
    let ring = RingConfig::default();
    let tol = 2f64.powi(-(ring.frac_bits as i32) + 1);
    let mut rng = ChaCha20Rng::seed_from_u64(51);
    let mut worst = 0f64;
    let mut elements = 0;
    for cfg in 0..100 {
        let channels = rng.gen_range(1..=4);
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let gamma: Vec<f64> = (0..channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sigma: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.25..3.0)).collect();
        let layer = batchnorm_layer(ring, &gamma, &beta, &mu, &sigma).map_err(|e| e.to_string())?;
        let m = ModelSpec { name: "bn".into(), input_shape: vec![channels, h, w], ring, layers: vec![layer] };
        let reals: Vec<f64> = (0..channels * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = FixedTensor::from_reals(vec![channels, h, w], &reals, ring).map_err(|e| e.to_string())?;
        let out = run_local(&m, &x, &opts(OtKind::Dealer, cfg)).map_err(|e| e.to_string())?.output;
        for (i, &y) in out.data().iter().enumerate() {
            let c = i / (h * w);
            let xv = ring.decode(x.data()[i]);
            let direct = (xv - mu[c]) / sigma[c] * gamma[c] + beta[c];
            let err = (ring.decode(y) - direct).abs();
            worst = worst.max(err);
            elements += 1;
            ensure(err <= tol, || format!("config {cfg} element {i}: error {err:e} exceeds {tol:e}"))?;
        }
    }
    Ok(format!("100 configurations, {elements} elements, max error {worst:.3e} <= 2^-11"))
}

// ---------------------------------------------------------------------------
// Sharing uniformity

/// Upper `alpha = 0.01` quantile of chi-square with `df` degrees of freedom
/// (Wilson-Hilferty).
fn chi2_critical_001(df: f64) -> f64 {
    let z = 2.326_347_874;
    let c = 2.0 / (9.0 * df);
    df * (1.0 - c + z * c.sqrt()).powi(3)
}

fn chi2(samples: &[u64], bins: usize, shift: u32) -> f64 {
    let mut counts = vec![0f64; bins];
    for &s in samples {
        counts[(s >> shift) as usize] += 1.0;
    }
    let e = samples.len() as f64 / bins as f64;
    counts.iter().map(|o| (o - e) * (o - e) / e).sum()
}

fn sharing_uniformity() -> Verdict {
    let ring = RingConfig::new(16, 4).unwrap();
    let n = 100_000;
    // A fixed secret is the hardest case: any bias would show up in the marginal.
    let x = FixedTensor::new(vec![n], vec![0x1234; n], ring).map_err(|e| e.to_string())?;
    let shared = share(&x, &mut ChaCha20Rng::seed_from_u64(61));
    let bins = 256;
    let crit = chi2_critical_001((bins - 1) as f64);
    let s0 = chi2(shared.share0.values().data(), bins, 8);
    let s1 = chi2(shared.share1.values().data(), bins, 8);
    let detail = format!("chi2 share0 {s0:.1}, share1 {s1:.1} vs critical {crit:.1} (255 df, alpha 0.01, 10^5 samples, 16-bit ring)");
    ensure(s0 < crit && s1 < crit, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Accounting

fn accounting() -> Verdict {
    let m = fixtures::lenet5(1);
    let x = random_input(&m, 1, 1);
    let run = run_local(&m, &x, &opts(OtKind::Real, 3)).map_err(|e| e.to_string())?;
    let (o, c) = (&run.owner.stats, &run.cloud.stats);
    let pairs = [
        ("owner sent", run.owner_wire.written(), o.total_sent()),
        ("owner received", run.owner_wire.read(), o.total_received()),
        ("cloud sent", run.cloud_wire.written(), c.total_sent()),
        ("cloud received", run.cloud_wire.read(), c.total_received()),
    ];
    for (what, wire, stats) in pairs {
        ensure(wire == stats, || format!("{what}: socket {wire} B vs CommStats {stats} B"))?;
    }
    let cfg = RunConfig { models: Some(vec!["mlp".into(), "lenet5".into()]), seed: Some(1), ..Default::default() };
    let rows = bench_rows(&cfg).map_err(|e| e.to_string())?;
    println!("{}", emit_table(&rows).trim_end());
    let lenet = rows.iter().find(|r| r.model == "lenet5").ok_or("no lenet5 row")?;
    let ratio = lenet.comm_ratio.ok_or("no reference for lenet5")?;
    bench_report(rows.clone()).map_err(|e| e.to_string())?;
    Ok(format!(
        "LeNet-5 socket bytes equal CommStats ({} B total); bench report validates; LeNet-5 {:.3} MB vs 1.028 MB reference, ratio {ratio:.2} (reported only)",
        o.total_sent() + c.total_sent(),
        lenet.comm_mb
    ))
}

// ---------------------------------------------------------------------------
// End-to-end

const BIN: &str = env!("CARGO_BIN_EXE_privinfer");

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).env("PRIVINFER_LOG", "warn").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("privinfer {args:?}: {} {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Proc {
    child: Child,
    addr: String,
    rest: JoinHandle<String>,
}

/// Starts a daemon and reads its bound address from stdout.
fn spawn_daemon(args: &[&str]) -> Result<Proc, String> {
    let mut child = Command::new(BIN)
        .args(args)
        .env("PRIVINFER_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| e.to_string())?;
    let addr = line.strip_prefix("listening ").ok_or_else(|| format!("unexpected first line {line:?}"))?.trim().to_string();
    let rest = thread::spawn(move || {
        let mut s = String::new();
        let _ = reader.read_to_string(&mut s);
        s
    });
    Ok(Proc { child, addr, rest })
}

impl Proc {
    fn terminate(mut self) -> Result<String, String> {
        Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status().map_err(|e| e.to_string())?;
        let status = self.child.wait().map_err(|e| e.to_string())?;
        let out = self.rest.join().unwrap_or_default();
        ensure(status.success(), || format!("daemon exited with {status}"))?;
        Ok(out)
    }
}

fn three_processes(dir: &Path) -> Result<String, String> {
    let p = |f: &str| dir.join(f).display().to_string();
    let cloud_pub = cli(&["--role", "keygen", "--out", &p("cloud.key")])?.trim().to_string();
    let model_pub = cli(&["--role", "keygen", "--out", &p("model.key")])?.trim().to_string();
    cli(&["--role", "fixture", "--fixture", "lenet5", "--seed", "3", "--out", &p("lenet.pim"), "--sample", &p("x.pitn")])?;
    let common = ["--ot", "dealer", "--trunc", "faithful", "--seed", "7", "--listen", "127.0.0.1:0"];
    let mut args = vec!["--role", "cloud-server", "--key", &p("cloud.key")].into_iter().map(String::from).collect::<Vec<_>>();
    args.extend(["--allow-key".into(), model_pub.clone()]);
    args.extend(common.iter().map(|s| s.to_string()));
    let cloud = spawn_daemon(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut args: Vec<String> = ["--role", "model-server", "--key", &p("model.key"), "--model", &p("lenet.pim")]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.extend(["--peer".into(), cloud.addr.clone(), "--peer-key".into(), p("cloud.key")]);
    args.extend(common.iter().map(|s| s.to_string()));
    let model = spawn_daemon(&args.iter().map(String::as_str).collect::<Vec<_>>())?;

    let registry = ServerRegistry {
        servers: vec![
            ServerEntry {
                id: "xray".into(),
                role: ServerRole::Model,
                endpoint: model.addr.clone(),
                capabilities: vec!["cnn-chest-xray".into()],
                public_key: model_pub,
                input_shape: Some(vec![1, 28, 28]),
                labels: (0..10).map(|i| format!("finding {i}")).collect(),
            },
            ServerEntry {
                id: "cloud".into(),
                role: ServerRole::Cloud,
                endpoint: cloud.addr.clone(),
                capabilities: vec!["secure-compute".into()],
                public_key: cloud_pub,
                input_shape: None,
                labels: vec![],
            },
        ],
    };
    std::fs::write(dir.join("registry.json"), registry.to_json(None)).map_err(|e| e.to_string())?;
    let user = cli(&[
        "--role", "user", "--registry", &p("registry.json"), "--query", "Could you help identify any issues in my chest scan?",
        "--input", &p("x.pitn"), "--out", &p("logits.pitn"), "--seed", "11", "--timeout", "20",
    ]);
    let cloud_out = cloud.terminate();
    let model_out = model.terminate();
    let user = user?;
    ensure(user.contains("route: cnn-chest-xray -> xray"), || format!("unexpected user output {user}"))?;
    for out in [cloud_out?, model_out?] {
        ensure(out.contains("\"sessions_ok\":1"), || format!("daemon stats: {out}"))?;
    }

    let m = fixtures::lenet5(3);
    let x = random_input(&m, 1, 3);
    let (s0, s1) = split_input(&x, &mut ChaCha20Rng::seed_from_u64(11));
    let local = run_local_shares(&m, &s0, &s1, &opts(OtKind::Dealer, 7)).map_err(|e| e.to_string())?.output;
    let logits = TensorFile::read(&dir.join("logits.pitn")).map_err(|e| e.to_string())?;
    let TensorData::Real(values) = logits.data else { return Err("logits are not reals".into()) };
    let words = FixedTensor::from_reals(logits.shape, &values, m.ring).map_err(|e| e.to_string())?;
    ensure(words == local, || "three-process logits differ from the in-process run".into())?;
    ensure(local == plaintext_infer(&m, &x).map_err(|e| e.to_string())?, || "in-process run differs from plaintext".into())?;
    Ok("three processes reproduce the in-process result bit-exactly".into())
}

struct Daemon {
    addr: String,
    key: [u8; 32],
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<ServerStats>>,
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn daemon(service: Arc<dyn Service>, key: [u8; 32]) -> Daemon {
    let listener = listen("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let s = Arc::clone(&stop);
    let handle = thread::spawn(move || serve(listener, service, s).unwrap());
    Daemon { addr, key, stop, handle: Some(handle) }
}

struct Cluster {
    plan: RoutePlan,
    _cloud: Daemon,
    _model: Daemon,
}

fn cluster(m: &ModelSpec, fault: Fault, flip: Option<BitFlip>) -> (Cluster, Option<Arc<Relay>>) {
    let (cid, mid) = (Identity::generate(), Identity::generate());
    let (ck, mk) = (cid.public(), mid.public());
    let mut cs = CloudServer::new(ServerConfig::new(cid, opts(OtKind::Dealer, 5)), Some(vec![mk]));
    cs.fault = fault;
    let cloud = daemon(Arc::new(cs), ck);
    let relay = flip.map(|f| Arc::new(Relay::start(&cloud.addr, Some(f)).unwrap()));
    let target = relay.as_ref().map(|r| r.addr.clone()).unwrap_or(cloud.addr.clone());
    let model = daemon(Arc::new(ModelServer::new(ServerConfig::new(mid, opts(OtKind::Dealer, 5)), m.clone(), target, ck)), mk);
    let entry = |id: &str, role, ep: &str, tag: &str, key: [u8; 32]| ServerEntry {
        id: id.into(),
        role,
        endpoint: ep.into(),
        capabilities: vec![tag.into()],
        public_key: hex::encode(key),
        input_shape: None,
        labels: vec![],
    };
    let reg = ServerRegistry {
        servers: vec![
            entry("xray", ServerRole::Model, &model.addr, "cnn-chest-xray", model.key),
            entry("cloud", ServerRole::Cloud, &cloud.addr, "secure-compute", cloud.key),
        ],
    };
    let plan = route_intent("issues in my chest scan", &reg, &KeywordRouter::default()).unwrap();
    (Cluster { plan, _cloud: cloud, _model: model }, relay)
}

fn fault_injection() -> Result<String, String> {
    let m = fixtures::identity(6);
    let user = |seed| UserConfig { seed: Some(seed), timeout: Duration::from_secs(10), ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(71);

    // Traffic volume of a clean session on the server link, to aim the flips.
    let (clean, relay) = cluster(&m, Fault::None, Some(BitFlip { leg: Leg::Upstream, offset: u64::MAX, mask: 1 }));
    let x = random_input(&m, 1, 1);
    let out = dispatch_and_reconstruct(&x, &clean.plan, &user(1)).map_err(|e| e.to_string())?;
    ensure(out.output == x, || "clean run through the relay is wrong".into())?;
    let relay = relay.unwrap();
    let (up, down) = (relay.upstream().len() as u64, relay.downstream().len() as u64);
    drop(clean);

    let (mut aborted, mut trials) = (0, 0);
    for trial in 0..25u64 {
        let (c, _) = cluster(&m, Fault::CorruptResult, None);
        let x = random_input(&m, 1, trial);
        trials += 1;
        let r = dispatch_and_reconstruct(&x, &c.plan, &user(trial));
        aborted += matches!(r, Err(privinfer_net::NetError::Aead)) as usize;
    }
    for trial in 0..25u64 {
        let leg = if trial % 2 == 0 { Leg::Upstream } else { Leg::Downstream };
        let offset = rng.gen_range(0..if leg == Leg::Upstream { up } else { down });
        let flip = BitFlip { leg, offset, mask: 1 << rng.gen_range(0..8) };
        let (c, relay) = cluster(&m, Fault::None, Some(flip));
        let x = random_input(&m, 1, 100 + trial);
        let r = dispatch_and_reconstruct(&x, &c.plan, &user(100 + trial));
        let relay = relay.unwrap();
        ensure(relay.fired(), || format!("flip {flip:?} never landed"))?;
        trials += 1;
        aborted += r.is_err() as usize;
        drop(c);
    }
    ensure(aborted == trials, || format!("{aborted}/{trials} faults aborted"))?;
    Ok(format!("{aborted}/{trials} fault injections aborted (25 sealed-result tampers, 25 frame bit flips), none produced a result"))
}

fn end_to_end() -> Verdict {
    let dir = std::env::temp_dir().join(format!("privinfer-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let e2e = three_processes(&dir);
    let _ = std::fs::remove_dir_all(&dir);
    let faults = fault_injection();
    Ok(format!("{}; {}", e2e?, faults?))
}

// ---------------------------------------------------------------------------

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("oracle-equivalence", oracle_equivalence),
        ("exhaustive-gadgets", exhaustive_gadgets),
        ("he-suite", he_suite),
        ("packing-correctness", packing_matrix),
        ("batchnorm-consistency", batchnorm_consistency),
        ("sharing-uniformity", sharing_uniformity),
        ("accounting-consistency", accounting),
        ("end-to-end-orchestration", end_to_end),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|w| name.contains(w.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
