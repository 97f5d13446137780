//! Federation runtime: the round-based server and the client loop, speaking
//! only through [`Connection`].

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use fedtherm_core::federation::{
    aggregate, aggregation_weights, client_step, partial_merge, FedConfig, ModelPayload, ModelUpdate, RoundLog,
    RoundRecord,
};
use fedtherm_core::model::evaluate;
use fedtherm_core::transfer::{relevance, MmdConfig};
use fedtherm_core::wire::Message;
use fedtherm_core::{Dataset, Matrix, MlpModel};
use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::transport::{Connection, TransportError};

/// Server-side inputs besides the config and the connections.
#[derive(Debug, Clone, Copy)]
pub struct ServerOptions<'a> {
    /// Reference sample sent to every client at registration for relevance scoring.
    pub reference: Option<&'a Matrix>,
    /// Held-out set the global model is scored on when `eval_each_round` is set.
    pub eval_set: Option<&'a Dataset>,
    pub handshake_timeout: Duration,
}

impl Default for ServerOptions<'_> {
    fn default() -> Self {
        Self { reference: None, eval_set: None, handshake_timeout: Duration::from_secs(30) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerOutcome {
    pub model: MlpModel,
    pub log: RoundLog,
    /// Registered client ids, sorted.
    pub clients: Vec<String>,
}

struct Session<C> {
    id: String,
    conn: C,
}

enum Collected {
    Update(ModelUpdate),
    Excluded(String),
}

/// Runs `cfg.rounds` federated rounds starting from `initial`.
///
/// Each connection must open with a `Hello`. Clients that miss a round
/// (timeouts after every retry, a client error, a malformed update) are
/// excluded from that round only. Rounds where nobody answered are logged as
/// skipped; if no client ever answered the run fails.
pub fn server_run<C: Connection>(
    cfg: &FedConfig,
    initial: &MlpModel,
    connections: Vec<C>,
    opts: &ServerOptions<'_>,
) -> Result<ServerOutcome> {
    cfg.validate()?;
    if cfg.trainable_mask.len() != initial.len() {
        return Err(Error::config(
            "fed.trainable_mask",
            format!("{} entries for a {}-layer global model", cfg.trainable_mask.len(), initial.len()),
        ));
    }
    let mut sessions = handshake(connections, opts)?;
    sessions.sort_by(|a, b| a.id.cmp(&b.id));
    let clients: Vec<String> = sessions.iter().map(|s| s.id.clone()).collect();
    info!("federation: {} clients registered: {clients:?}", clients.len());

    let mut global = initial.clone();
    let mut log = RoundLog::default();
    let mut anyone_answered = false;
    for round in 0..cfg.rounds {
        let start = Instant::now();
        let payload = ModelPayload::from_model(&global, &cfg.trainable_mask, 0, 1.0)?;
        let msg = Message::GlobalModel { round, payload };
        let simulated_before: Vec<Duration> = sessions.iter().map(|s| s.conn.simulated_time()).collect();
        let collected: Vec<Collected> = std::thread::scope(|scope| {
            let handles: Vec<_> = sessions
                .iter_mut()
                .map(|s| {
                    let msg = &msg;
                    let global = &global;
                    scope.spawn(move || collect(s, msg, round, cfg, global))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client handler panicked")).collect()
        });
        let simulated = sessions
            .iter()
            .zip(&simulated_before)
            .map(|(s, before)| s.conn.simulated_time().saturating_sub(*before))
            .max()
            .unwrap_or_default();

        let mut updates = Vec::new();
        let mut excluded = Vec::new();
        for (session, outcome) in sessions.iter().zip(collected) {
            match outcome {
                Collected::Update(u) => updates.push(u),
                Collected::Excluded(reason) => {
                    warn!("round {round}: excluding `{}`: {reason}", session.id);
                    excluded.push(session.id.clone());
                }
            }
        }
        let participating: Vec<String> = updates.iter().map(|u| u.client_id.clone()).collect();
        let mut record = RoundRecord {
            round,
            participating,
            excluded,
            skipped: updates.is_empty(),
            aggregate_loss: None,
            eval: None,
            duration_ms: 0.0,
        };
        if !updates.is_empty() {
            anyone_answered = true;
            let aggregated = aggregate(&updates, cfg.aggregation)?;
            global = partial_merge(&global, &aggregated, &cfg.trainable_mask)?;
            let weights = aggregation_weights(&updates, cfg.aggregation)?;
            record.aggregate_loss = Some(updates.iter().zip(&weights).map(|(u, w)| w * u.local_loss).sum());
            if cfg.eval_each_round {
                if let Some(eval_set) = opts.eval_set {
                    record.eval = Some(evaluate(&global, eval_set)?);
                }
            }
        } else {
            warn!("round {round}: every client excluded, skipping aggregation");
        }
        record.duration_ms = (start.elapsed() + simulated).as_secs_f64() * 1e3;
        debug!("round {round}: {} participating, loss {:?}", record.participating.len(), record.aggregate_loss);
        log.push(record)?;
    }

    let final_payload = ModelPayload::from_model(&global, &cfg.trainable_mask, 0, 1.0)?;
    for s in &mut sessions {
        if let Err(e) = s.conn.send(&Message::Shutdown { payload: Some(final_payload.clone()) }) {
            warn!("shutdown to `{}` failed: {e}", s.id);
        }
    }
    if !anyone_answered {
        return Err(Error::FederationFailed);
    }
    Ok(ServerOutcome { model: global, log, clients })
}

fn handshake<C: Connection>(connections: Vec<C>, opts: &ServerOptions<'_>) -> Result<Vec<Session<C>>> {
    if connections.is_empty() {
        return Err(Error::config("clients", "at least one client connection is required"));
    }
    let mut seen = BTreeSet::new();
    let mut sessions = Vec::new();
    for mut conn in connections {
        let id = match conn.recv(opts.handshake_timeout) {
            Ok(Message::Hello { client_id, .. }) if !client_id.is_empty() => client_id,
            Ok(other) => {
                warn!("dropping connection that opened with {} instead of Hello", other.name());
                continue;
            }
            Err(e) => {
                warn!("dropping connection during registration: {e}");
                continue;
            }
        };
        if !seen.insert(id.clone()) {
            return Err(Error::Client { client: id, message: "duplicate client id".into() });
        }
        conn.send(&Message::Hello { client_id: String::new(), reference: opts.reference.cloned() })?;
        sessions.push(Session { id, conn });
    }
    if sessions.is_empty() {
        return Err(Error::FederationFailed);
    }
    Ok(sessions)
}

/// Sends the round's global model to one client and waits for its update,
/// retrying up to the retry budget.
fn collect<C: Connection>(
    session: &mut Session<C>,
    msg: &Message,
    round: u32,
    cfg: &FedConfig,
    global: &MlpModel,
) -> Collected {
    let timeout = Duration::from_millis(cfg.client_timeout_ms);
    for attempt in 0..=cfg.retry_budget {
        if attempt > 0 {
            debug!("round {round}: retry {attempt} for `{}`", session.id);
        }
        if let Err(e) = session.conn.send(msg) {
            return Collected::Excluded(format!("send failed: {e}"));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match session.conn.recv(left.max(Duration::from_millis(1))) {
                Ok(Message::UpdateSubmit { round: r, local_loss, payload }) if r == round => {
                    return match check_payload(&payload, global, &cfg.trainable_mask) {
                        Ok(()) => Collected::Update(ModelUpdate {
                            client_id: session.id.clone(),
                            round,
                            payload,
                            local_loss,
                        }),
                        Err(e) => Collected::Excluded(format!("bad update: {e}")),
                    };
                }
                Ok(Message::ClientError { round: r, message }) if r == round => {
                    return Collected::Excluded(format!("client error: {message}"));
                }
                Ok(other) => debug!("round {round}: discarding stale {} from `{}`", other.name(), session.id),
                Err(TransportError::Timeout(_)) => break,
                Err(e) => return Collected::Excluded(e.to_string()),
            }
        }
    }
    Collected::Excluded(format!("no update after {} attempts", cfg.retry_budget + 1))
}

fn check_payload(payload: &ModelPayload, global: &MlpModel, mask: &[bool]) -> fedtherm_core::Result<()> {
    if payload.n_k == 0 {
        return Err(fedtherm_core::Error::Aggregation("n_k = 0".into()));
    }
    partial_merge(global, payload, mask).map(|_| ())
}

/// Everything a client brings to the federation.
#[derive(Debug, Clone)]
pub struct FlClient {
    pub id: String,
    /// The client's model after the transfer-learning stage.
    pub model: MlpModel,
    /// Model inputs and normalized targets of the local training set.
    pub x: Matrix,
    pub y: Matrix,
    /// Normalized raw features scored against the server's reference sample.
    pub relevance_sample: Matrix,
    pub cfg: FedConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    /// Local model with the final global layers installed.
    pub model: MlpModel,
    pub relevance: f64,
    /// Distinct rounds this client trained.
    pub rounds_trained: u32,
}

/// Runs one client until the server shuts the federation down.
pub fn client_run<C: Connection>(conn: &mut C, client: FlClient, idle_timeout: Duration) -> Result<ClientOutcome> {
    let FlClient { id, mut model, x, y, relevance_sample, cfg } = client;
    conn.send(&Message::Hello { client_id: id.clone(), reference: None })?;
    let reference = loop {
        match conn.recv(idle_timeout)? {
            Message::Hello { reference, .. } => break reference,
            other => debug!("`{id}`: ignoring {} before registration", other.name()),
        }
    };
    let score = match &reference {
        Some(r) => relevance(&relevance_sample, r, &MmdConfig::MedianHeuristic)?,
        None => 1.0,
    };
    debug!("`{id}`: relevance {score:.4}");

    // The server resends a round's model after a lost message; answer
    // repeats from this cache instead of training twice.
    let mut last: Option<(u32, Message)> = None;
    let mut rounds_trained = 0;
    loop {
        match conn.recv(idle_timeout)? {
            Message::GlobalModel { round, payload } => {
                if let Some((r, reply)) = &last {
                    if *r == round {
                        conn.send(reply)?;
                        continue;
                    }
                }
                let reply = match client_step(&model, &x, &y, &cfg, &payload, &id, round, score) {
                    Ok((trained, update)) => {
                        model = trained;
                        rounds_trained += 1;
                        Message::UpdateSubmit { round, local_loss: update.local_loss, payload: update.payload }
                    }
                    Err(e) => {
                        warn!("`{id}`: round {round} failed: {e}");
                        Message::ClientError { round, message: e.to_string() }
                    }
                };
                conn.send(&reply)?;
                last = Some((round, reply));
            }
            Message::Shutdown { payload } => {
                if let Some(p) = payload {
                    p.install_into(&mut model)?;
                }
                return Ok(ClientOutcome { model, relevance: score, rounds_trained });
            }
            other => debug!("`{id}`: ignoring {}", other.name()),
        }
    }
}
