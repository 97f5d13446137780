//! Seeded federations for the runtime tests and the acceptance run.
#![allow(dead_code)]

use std::sync::{Arc, Mutex};
use std::time::Duration;

use fedtherm::bench::Stage;
use fedtherm::config::{federated_train, SuiteConfig};
use fedtherm::federation::{client_run, server_run, ClientOutcome, FlClient, ServerOptions, ServerOutcome};
use fedtherm::transport::{
    memory_pair, Connection, FaultyLink, LinkModel, MemoryConnection, TcpConnection, TcpServer, TransportError,
};
use fedtherm_core::federation::{AggregationMode, FedConfig};
use fedtherm_core::transfer::{Adapted, TlMethod};
use fedtherm_core::wire::Message;
use fedtherm_core::Matrix;

/// A fast suite: fewer samples and epochs than the default, same shape.
pub fn small_suite() -> SuiteConfig {
    let mut suite = SuiteConfig::paper_mini();
    let p = &mut suite.pipeline;
    p.source_samples = 600;
    p.target_samples = 300;
    p.base.epochs = 4;
    p.transfer.fine_tune.epochs = 4;
    p.centralized.epochs = 4;
    p.refit.epochs = 3;
    p.reference_rows = 100;
    for s in &mut suite.scenarios {
        s.seeds = vec![11, 12];
        s.fed.rounds = s.fed.rounds.min(3);
        s.fed.local_epochs = 1;
        if let Some(shift) = &mut s.experiments.load_shift {
            shift.window = (150, 240);
        }
    }
    suite
}

pub struct Fixture {
    pub stage: Stage,
    pub adapted: Vec<Adapted>,
    pub reference: Matrix,
}

pub fn fixture(seed: u64) -> Fixture {
    fixture_for(&small_suite(), "fl-local-10", seed)
}

/// Stage and fine-tuned client models for one scenario of `suite`.
pub fn fixture_for(suite: &SuiteConfig, scenario: &str, seed: u64) -> Fixture {
    let spec = suite.scenario(scenario).unwrap();
    let stage = Stage::prepare(spec, &suite.pipeline, seed).unwrap();
    let (adapted, _) = stage.adapted(TlMethod::FineTune, &suite.pipeline, seed).unwrap();
    let adapted = adapted.as_ref().clone();
    let reference = stage.clients[0].train.subsample(suite.pipeline.reference_rows, 1).features().clone();
    Fixture { stage, adapted, reference }
}

impl Fixture {
    pub fn fed_config(&self, rounds: u32) -> FedConfig {
        FedConfig {
            rounds,
            local_epochs: 1,
            aggregation: AggregationMode::RelevanceWeighted,
            trainable_mask: self.adapted[0].fl_mask.clone(),
            retry_budget: 3,
            client_timeout_ms: 20_000,
            eval_each_round: false,
            train: federated_train(),
        }
    }

    pub fn clients(&self, cfg: &FedConfig) -> Vec<FlClient> {
        self.stage
            .clients
            .iter()
            .zip(&self.adapted)
            .enumerate()
            .map(|(i, (c, a))| {
                let mut cfg = cfg.clone();
                cfg.train.seed = 100 + i as u64;
                FlClient {
                    id: c.name.clone(),
                    model: a.model.clone(),
                    x: c.train.features().clone(),
                    y: c.train.target_matrix(),
                    relevance_sample: c.train.subsample(self.reference.rows(), 2).features().clone(),
                    cfg,
                }
            })
            .collect()
    }
}

pub const IDLE: Duration = Duration::from_secs(600);

/// Runs the federation over in-process pairs; `wrap` builds the server end
/// of client `i`.
pub fn run_in_memory_with(
    fx: &Fixture,
    cfg: &FedConfig,
    wrap: impl Fn(usize, MemoryConnection) -> Box<dyn Connection>,
) -> (ServerOutcome, Vec<ClientOutcome>) {
    let clients = fx.clients(cfg);
    let mut server_ends = Vec::new();
    let mut client_ends = Vec::new();
    for i in 0..clients.len() {
        let (s, c) = memory_pair();
        server_ends.push(wrap(i, s));
        client_ends.push(c);
    }
    let opts = ServerOptions { reference: Some(&fx.reference), ..ServerOptions::default() };
    std::thread::scope(|scope| {
        let handles: Vec<_> = client_ends
            .into_iter()
            .zip(clients)
            .map(|(mut conn, client)| scope.spawn(move || client_run(&mut conn, client, IDLE)))
            .collect();
        let server = server_run(cfg, &fx.adapted[0].model, server_ends, &opts).unwrap();
        let clients = handles.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
        (server, clients)
    })
}

/// `links[i]`, when set, wraps the server end of client `i`.
pub fn run_in_memory(
    fx: &Fixture,
    cfg: &FedConfig,
    links: &[Option<LinkModel>],
) -> (ServerOutcome, Vec<ClientOutcome>) {
    run_in_memory_with(fx, cfg, |i, s| match links.get(i).cloned().flatten() {
        Some(link) => Box::new(FaultyLink::new(s, link).unwrap()),
        None => Box::new(s),
    })
}

/// The same federation over loopback TCP.
pub fn run_over_tcp(fx: &Fixture, cfg: &FedConfig) -> (ServerOutcome, Vec<ClientOutcome>) {
    let clients = fx.clients(cfg);
    let listener = TcpServer::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let opts = ServerOptions { reference: Some(&fx.reference), ..ServerOptions::default() };
    std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .into_iter()
            .map(|client| {
                let addr = addr.clone();
                scope.spawn(move || {
                    let mut conn = TcpConnection::connect_retrying(&addr, Duration::from_secs(10)).unwrap();
                    client_run(&mut conn, client, IDLE)
                })
            })
            .collect();
        let conns: Vec<TcpConnection> =
            (0..handles.len()).map(|_| listener.accept(Duration::from_secs(10)).unwrap()).collect();
        let server = server_run(cfg, &fx.adapted[0].model, conns, &opts).unwrap();
        let clients = handles.into_iter().map(|h| h.join().unwrap().unwrap()).collect();
        (server, clients)
    })
}

/// Keeps a copy of every message passing through the server end.
pub struct Recorder<C> {
    pub inner: C,
    pub log: Arc<Mutex<Vec<Message>>>,
}

impl<C: Connection> Connection for Recorder<C> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.log.lock().unwrap().push(msg.clone());
        self.inner.send(msg)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        let msg = self.inner.recv(timeout)?;
        self.log.lock().unwrap().push(msg.clone());
        Ok(msg)
    }

    fn simulated_time(&self) -> Duration {
        self.inner.simulated_time()
    }
}

/// Layer indices carried by any model payload in `messages`.
pub fn payload_layers(messages: &[Message]) -> Vec<Vec<usize>> {
    messages
        .iter()
        .filter_map(|msg| match msg {
            Message::GlobalModel { payload, .. } | Message::UpdateSubmit { payload, .. } => Some(payload),
            Message::Shutdown { payload } => payload.as_ref(),
            _ => None,
        })
        .map(|p| p.indices())
        .collect()
}
