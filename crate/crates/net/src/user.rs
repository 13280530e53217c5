//! The user agent: shares the input, hands the shares to the two servers and
//! reconstructs the result.

use std::time::Duration;

use privinfer_core::ring::FixedTensor;
use privinfer_core::runtime::split_input;
use privinfer_core::sharing::{reconstruct_pair, ArithShare, PartyId};
use privinfer_core::transport::CommStats;
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::channel::{connect, Connection};
use crate::control::{decode_hex, recv_reply, send_json, Reply, Request};
use crate::identity::Identity;
use crate::router::RoutePlan;
use crate::session::{encapsulate, SessionKey};
use crate::NetError;

#[derive(Debug, Clone)]
pub struct UserConfig {
    /// Connect and handshake bound.
    pub timeout: Duration,
    /// Longest wait for an inference result.
    pub session_timeout: Duration,
    /// Seeds the input split; `None` uses OS entropy.
    pub seed: Option<u64>,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(30), session_timeout: Duration::from_secs(600), seed: None }
    }
}

#[derive(Debug, Clone)]
pub struct UserOutcome {
    pub output: FixedTensor,
    pub model_stats: CommStats,
    pub cloud_stats: CommStats,
}

fn set_wait(conn: &Connection, timeout: Duration) -> Result<(), NetError> {
    conn.chan.get_ref().get_ref().set_read_timeout(Some(timeout))?;
    Ok(())
}

/// Runs the key exchange with the cloud on an open connection.
pub fn establish_session(conn: &mut Connection, cloud_id: &str) -> Result<SessionKey, NetError> {
    let (key, enc) = encapsulate(&conn.peer);
    send_json(&mut conn.chan, &Request::Establish { encapsulation: hex::encode(enc) })?;
    match recv_reply(&mut conn.chan, cloud_id) {
        Ok(Reply::Confirm { mac }) => {
            key.check_confirmation(&decode_hex("mac", &mac)?)?;
            Ok(key)
        }
        Ok(_) => Err(NetError::Protocol("expected confirm".into())),
        Err(NetError::Remote { kind, .. }) if kind == "replay" => Err(NetError::Replay),
        Err(NetError::Remote { kind, .. }) if kind == "aead" => Err(NetError::Confirmation),
        Err(e) => Err(e),
    }
}

fn result_share(reply: Reply) -> Result<(String, CommStats), NetError> {
    match reply {
        Reply::Result { share, stats } => Ok((share, stats)),
        _ => Err(NetError::Protocol("expected result".into())),
    }
}

/// Full flow for one query: `x_0` goes to the model server in the clear and
/// `x_1` to the cloud under the session key; `res_1` comes back under the
/// session key and is added to `res_0`.
pub fn dispatch_and_reconstruct(x: &FixedTensor, plan: &RoutePlan, cfg: &UserConfig) -> Result<UserOutcome, NetError> {
    let (s0, s1) = match cfg.seed {
        Some(s) => split_input(x, &mut ChaCha20Rng::seed_from_u64(s)),
        None => split_input(x, &mut OsRng),
    };
    dispatch_shares(&s0, &s1, plan, cfg)
}

pub fn dispatch_shares(s0: &ArithShare, s1: &ArithShare, plan: &RoutePlan, cfg: &UserConfig) -> Result<UserOutcome, NetError> {
    // The user needs no long-term identity; each query uses a throwaway key.
    let me = Identity::generate();
    let cloud_key = plan.cloud.key()?;
    let mut cloud = connect(&plan.cloud.endpoint, &me, &cloud_key, cfg.timeout)?;
    let mut key = establish_session(&mut cloud, &plan.cloud.id)?;
    let session = hex::encode(key.id);
    let sealed = key.seal(b"x1", &s1.to_bytes());
    send_json(
        &mut cloud.chan,
        &Request::Infer { session: session.clone(), task: plan.task.clone(), share: hex::encode(sealed), cloud_key: None },
    )?;
    if recv_reply(&mut cloud.chan, &plan.cloud.id)? != Reply::Accepted {
        return Err(NetError::Protocol("expected accepted".into()));
    }

    let mut model = connect(&plan.model_server.endpoint, &me, &plan.model_server.key()?, cfg.timeout)?;
    send_json(
        &mut model.chan,
        &Request::Infer {
            session,
            task: plan.task.clone(),
            share: hex::encode(s0.to_bytes()),
            cloud_key: Some(plan.cloud.public_key.clone()),
        },
    )?;
    set_wait(&model, cfg.session_timeout)?;
    set_wait(&cloud, cfg.session_timeout)?;
    let (res0, model_stats) = result_share(recv_reply(&mut model.chan, &plan.model_server.id)?)?;
    let (res1, cloud_stats) = result_share(recv_reply(&mut cloud.chan, &plan.cloud.id)?)?;
    let res0 = ArithShare::from_bytes(&decode_hex("share", &res0)?)?;
    let res1 = ArithShare::from_bytes(&key.open(b"res1", &decode_hex("share", &res1)?)?)?;
    if res0.party() != PartyId::Zero || res1.party() != PartyId::One {
        return Err(NetError::Protocol("result shares carry the wrong party labels".into()));
    }
    let output = reconstruct_pair(&res0, &res1)?;
    Ok(UserOutcome { output, model_stats, cloud_stats })
}
