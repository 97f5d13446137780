//! Seeded scenario runs: data generation, base model, transfer learning and
//! the topology-specific training, scored per client.

mod experiments;
mod report;

pub use experiments::{
    forgetting_experiment, head_mask, histogram, load_shift_outcome, median, ForgettingOutcome, LoadShiftOutcome,
    BOUNDARY_ROWS,
};
pub use report::{
    emit_report, BenchReport, CellReport, CellTiming, ClientMetrics, ClientSeries, Format, ForgettingReport,
    TimingReport, HISTOGRAM_BINS, HISTOGRAM_DIR, REPORT_CSV, REPORT_JSON, SERIES_DIR, SUMMARY_CSV, TIMING_JSON,
};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use fedtherm_core::federation::RoundLog;
use fedtherm_core::model::{evaluate_predictions, train, Metrics, TrainConfig};
use fedtherm_core::rng::{derive_seed, tag};
use fedtherm_core::thermal::{generate, load_shift, normalize_apply, normalize_fit, split_indices};
use fedtherm_core::transfer::{adapt, Adapted, TlMethod};
use fedtherm_core::{Dataset, MlpModel};
use log::info;

use crate::config::{PipelineConfig, ScenarioSpec, SuiteConfig, Topology};
use crate::error::Result;
use crate::federation::{client_run, server_run, FlClient, ServerOptions};
use crate::transport::{memory_pair, Connection, FaultyLink};

/// One client's data for a seed, normalized with the source statistics.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub name: String,
    /// The full normalized series in time order.
    pub full: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub train: Dataset,
    pub test: Dataset,
}

impl ClientData {
    fn is_test(&self) -> Vec<bool> {
        let mut flags = vec![false; self.full.len()];
        for &r in &self.test_rows {
            flags[r] = true;
        }
        flags
    }
}

/// Everything a seed shares across scenarios with the same client list.
#[derive(Debug)]
pub struct Stage {
    pub clients: Vec<ClientData>,
    pub base: MlpModel,
    pub base_seconds: f64,
    adapted: Mutex<HashMap<TlMethod, (Arc<Vec<Adapted>>, f64)>>,
}

impl Stage {
    pub fn prepare(spec: &ScenarioSpec, pipeline: &PipelineConfig, seed: u64) -> Result<Self> {
        let start = Instant::now();
        let mut raws = Vec::with_capacity(spec.clients.len());
        for (i, p) in spec.clients.iter().enumerate() {
            let profile = p.reseeded(seed);
            let n = if i == 0 { pipeline.source_samples } else { pipeline.target_samples };
            let mut raw = generate(&profile, n)?;
            if let Some(shift) = spec.experiments.load_shift.as_ref().filter(|s| s.client == i) {
                raw = load_shift(&raw, &profile, shift.factor, shift.window.0..shift.window.1)?;
            }
            raws.push(raw);
        }
        let stats = normalize_fit(&raws[0])?;
        let mut clients = Vec::with_capacity(raws.len());
        for (i, (raw, profile)) in raws.iter().zip(&spec.clients).enumerate() {
            let full = normalize_apply(raw, &stats)?;
            let (train_rows, test_rows) =
                split_indices(full.len(), pipeline.train_fraction, derive_seed(seed, tag("split") ^ i as u64))?;
            clients.push(ClientData {
                name: profile.name.clone(),
                train: full.select(&train_rows),
                test: full.select(&test_rows),
                full,
                train_rows,
                test_rows,
            });
        }
        let init = MlpModel::thermal_default(derive_seed(seed, tag("base-init")));
        let base_cfg = TrainConfig { seed: derive_seed(seed, tag("base-train")), ..pipeline.base.clone() };
        let (base, _) = train(&init, &clients[0].train, &base_cfg)?;
        Ok(Self { clients, base, base_seconds: start.elapsed().as_secs_f64(), adapted: Mutex::new(HashMap::new()) })
    }

    /// Per-client TL results for `method`, computed once per stage.
    pub fn adapted(&self, method: TlMethod, pipeline: &PipelineConfig, seed: u64) -> Result<(Arc<Vec<Adapted>>, f64)> {
        if let Some(hit) = self.adapted.lock().expect("stage lock").get(&method) {
            return Ok(hit.clone());
        }
        let start = Instant::now();
        let source = &self.clients[0].train;
        let models = self
            .clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                adapt(method, &self.base, source, &c.train, &pipeline.transfer, derive_seed(seed, tag("adapt") ^ i as u64))
            })
            .collect::<fedtherm_core::Result<Vec<_>>>()?;
        let entry = (Arc::new(models), start.elapsed().as_secs_f64());
        self.adapted.lock().expect("stage lock").insert(method, entry.clone());
        Ok(entry)
    }
}

/// Result of one (scenario, seed) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub report: CellReport,
    pub timing: CellTiming,
    pub series: Vec<ClientSeries>,
}

struct Scored {
    clients: Vec<ClientMetrics>,
    pooled: Metrics,
    series: Vec<ClientSeries>,
}

/// Scores one prediction function per client on the test split and keeps
/// the full series for the figure files.
fn score(
    scenario: &str,
    seed: u64,
    stage: &Stage,
    spec: &ScenarioSpec,
    mut predict: impl FnMut(usize, &Dataset) -> Result<Vec<f64>>,
) -> Result<Scored> {
    let mut clients = Vec::new();
    let mut series = Vec::new();
    let mut all_pred = Vec::new();
    let mut all_true = Vec::new();
    for (i, c) in stage.clients.iter().enumerate() {
        let predicted = c.full.denormalize_targets(&predict(i, &c.full)?);
        let measured = c.full.denormalize_targets(c.full.targets());
        let pred_test: Vec<f64> = c.test_rows.iter().map(|&r| predicted[r]).collect();
        let true_test: Vec<f64> = c.test_rows.iter().map(|&r| measured[r]).collect();
        let m = evaluate_predictions(&pred_test, &true_test)?;
        clients.push(ClientMetrics { client: c.name.clone(), mse: m.mse, r2: m.r2 });
        all_pred.extend(pred_test);
        all_true.extend(true_test);
        let shifted = spec.experiments.load_shift.as_ref().filter(|s| s.client == i).map(|s| s.window);
        series.push(ClientSeries {
            scenario: scenario.into(),
            seed,
            client: c.name.clone(),
            sample_interval: c.full.sample_interval(),
            measured,
            predicted,
            is_test: c.is_test(),
            shifted,
        });
    }
    Ok(Scored { clients, pooled: evaluate_predictions(&all_pred, &all_true)?, series })
}

fn adapted_predict(models: &[Adapted]) -> impl FnMut(usize, &Dataset) -> Result<Vec<f64>> + '_ {
    move |i, data| Ok(models[i].predict(data.features())?)
}

struct Federated {
    models: Vec<Adapted>,
    log: RoundLog,
    global: Option<Metrics>,
    relevance: BTreeMap<String, f64>,
}

fn run_federation(
    spec: &ScenarioSpec,
    pipeline: &PipelineConfig,
    stage: &Stage,
    adapted: &[Adapted],
    seed: u64,
) -> Result<Federated> {
    let mut fed = spec.fed.clone();
    if fed.trainable_mask.is_empty() {
        fed.trainable_mask = adapted[0].fl_mask.clone();
    }
    let initial = adapted[0].model.clone();
    let reference =
        stage.clients[0].train.subsample(pipeline.reference_rows, derive_seed(seed, tag("reference"))).features().clone();
    let test_parts: Vec<&Dataset> = stage.clients.iter().map(|c| &c.test).collect();
    let pooled_test = Dataset::concat(&test_parts)?;
    // The global model only reads raw features when no input map is involved.
    let eval_set = adapted[0].tca.is_none().then_some(&pooled_test);

    let mut server_ends: Vec<Box<dyn Connection>> = Vec::new();
    let mut client_ends = Vec::new();
    for i in 0..stage.clients.len() {
        let (server_end, client_end) = memory_pair();
        match (&spec.link, spec.topology) {
            (Some(link), Topology::FlCloud) => {
                let mut link = link.clone();
                link.seed = derive_seed(derive_seed(link.seed, seed), i as u64);
                server_ends.push(Box::new(FaultyLink::new(server_end, link)?));
            }
            _ => server_ends.push(Box::new(server_end)),
        }
        client_ends.push(client_end);
    }
    let idle = Duration::from_millis(pipeline.client_idle_timeout_ms);
    let fl_seed = derive_seed(seed, tag("fl-local-train"));
    let opts = ServerOptions { reference: Some(&reference), eval_set, ..ServerOptions::default() };

    let mut fl_clients = Vec::with_capacity(stage.clients.len());
    for (i, (c, a)) in stage.clients.iter().zip(adapted).enumerate() {
        let mut cfg = fed.clone();
        cfg.train.seed = derive_seed(fl_seed, i as u64);
        let sample_seed = derive_seed(seed, tag("relevance") ^ i as u64);
        fl_clients.push(FlClient {
            id: c.name.clone(),
            model: a.model.clone(),
            x: a.inputs(c.train.features())?,
            y: c.train.target_matrix(),
            relevance_sample: c.train.subsample(pipeline.reference_rows, sample_seed).features().clone(),
            cfg,
        });
    }

    let (server, clients) = std::thread::scope(|scope| {
        let handles: Vec<_> = client_ends
            .into_iter()
            .zip(fl_clients)
            .map(|(mut conn, client)| scope.spawn(move || client_run(&mut conn, client, idle)))
            .collect();
        let server = server_run(&fed, &initial, server_ends, &opts);
        let clients: Vec<_> = handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
        (server, clients)
    });
    let server = server?;
    let mut models = Vec::new();
    let mut relevance = BTreeMap::new();
    for (i, outcome) in clients.into_iter().enumerate() {
        let outcome = outcome?;
        relevance.insert(stage.clients[i].name.clone(), outcome.relevance);
        models.push(adapted[i].with_model(outcome.model));
    }
    Ok(Federated { models, global: server.log.last_eval().copied(), log: server.log, relevance })
}

/// Runs one scenario for one seed, reusing `stage` if given.
pub fn run_cell(spec: &ScenarioSpec, pipeline: &PipelineConfig, seed: u64, stage: Option<Arc<Stage>>) -> Result<CellOutcome> {
    let stage = match stage {
        Some(s) => s,
        None => Arc::new(Stage::prepare(spec, pipeline, seed)?),
    };
    let start = Instant::now();
    let mut training_seconds = stage.base_seconds;
    let mut report = CellReport::failed(&spec.name, spec.topology, spec.tl_method, seed, String::new());
    report.error = None;
    let mut federation_ms = None;
    let scored = match spec.topology {
        Topology::Centralized => {
            let parts: Vec<&Dataset> = stage.clients.iter().map(|c| &c.train).collect();
            let pooled = Dataset::concat(&parts)?;
            let mut init = stage.base.clone();
            init.set_frozen(false);
            let cfg = TrainConfig { seed: derive_seed(seed, tag("centralized")), ..pipeline.centralized.clone() };
            let (model, _) = train(&init, &pooled, &cfg)?;
            training_seconds += start.elapsed().as_secs_f64();
            score(&spec.name, seed, &stage, spec, |_, d| Ok(model.forward(d.features())?.into_data()))?
        }
        Topology::Isolated => {
            let (models, tl_seconds) = stage.adapted(spec.tl_method, pipeline, seed)?;
            training_seconds += tl_seconds;
            let scored = score(&spec.name, seed, &stage, spec, adapted_predict(&models))?;
            if let Some(shift) = &spec.experiments.load_shift {
                let s = &scored.series[shift.client];
                report.load_shift = Some(load_shift_outcome(
                    &s.client,
                    shift.factor,
                    shift.window,
                    &s.measured,
                    &s.predicted,
                    &stage.clients[shift.client].test_rows,
                )?);
            }
            scored
        }
        Topology::FlLocal | Topology::FlCloud => {
            let (adapted, tl_seconds) = stage.adapted(spec.tl_method, pipeline, seed)?;
            training_seconds += tl_seconds;
            let fl_start = Instant::now();
            let fed = run_federation(spec, pipeline, &stage, &adapted, seed)?;
            training_seconds += fl_start.elapsed().as_secs_f64();
            federation_ms = Some(fed.log.total_duration_ms());
            report.rounds_completed = Some(fed.log.completed_rounds());
            report.exclusion_counts = fed.log.exclusion_counts();
            report.global_model = fed.global;
            report.relevance = fed.relevance;
            report.round_log = Some(fed.log.without_timing());
            if spec.experiments.forgetting_refit {
                let mut clients = BTreeMap::new();
                for (i, model) in fed.models.iter().enumerate() {
                    let c = &stage.clients[i];
                    let refit = TrainConfig { seed: derive_seed(seed, tag("refit") ^ i as u64), ..pipeline.refit.clone() };
                    let (outcome, _) = forgetting_experiment(model, Some(&c.train), &c.test, &refit)?;
                    clients.insert(c.name.clone(), outcome);
                }
                let mean = clients.values().map(|o| o.improvement_pct).sum::<f64>() / clients.len() as f64;
                report.forgetting = Some(ForgettingReport { clients, mean_improvement_pct: mean });
            }
            score(&spec.name, seed, &stage, spec, adapted_predict(&fed.models))?
        }
    };
    report.mean_mse = Some(scored.clients.iter().map(|c| c.mse).sum::<f64>() / scored.clients.len() as f64);
    report.clients = scored.clients;
    report.pooled = Some(scored.pooled);
    info!("{} seed {seed}: mean MSE {:.4}", spec.name, report.mean_mse.unwrap_or(f64::NAN));
    let timing = CellTiming { scenario: spec.name.clone(), seed, training_seconds, federation_ms };
    Ok(CellOutcome { report, timing, series: scored.series })
}

/// Options for a suite run.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Cells run concurrently.
    pub parallel: usize,
    /// Keep figure series for the first seed of each scenario.
    pub keep_series: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: 1, keep_series: true }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub report: BenchReport,
    pub timing: TimingReport,
    pub series: Vec<ClientSeries>,
}

/// Runs every (scenario, seed) cell of the suite. A failing cell is recorded
/// in the report and does not stop the others.
pub fn run_suite(suite: &SuiteConfig, opts: RunOptions) -> Result<SuiteOutcome> {
    suite.validate()?;
    let cells: Vec<(&ScenarioSpec, u64)> =
        suite.scenarios.iter().flat_map(|s| s.seeds.iter().map(move |&seed| (s, seed))).collect();
    let stages: Mutex<HashMap<(String, u64), Arc<Stage>>> = Mutex::new(HashMap::new());
    let results: Mutex<Vec<Option<std::result::Result<CellOutcome, String>>>> =
        Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);

    let worker = || loop {
        let idx = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(spec, seed)) = cells.get(idx) else { break };
        let key = (stage_key(spec), seed);
        let outcome = (|| -> Result<CellOutcome> {
            let cached = stages.lock().expect("stage cache").get(&key).cloned();
            let stage = match cached {
                Some(s) => s,
                None => {
                    let s = Arc::new(Stage::prepare(spec, &suite.pipeline, seed)?);
                    stages.lock().expect("stage cache").entry(key.clone()).or_insert(s).clone()
                }
            };
            run_cell(spec, &suite.pipeline, seed, Some(stage))
        })()
        .map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::error!("{} seed {seed} failed: {e}", spec.name);
        }
        results.lock().expect("results")[idx] = Some(outcome);
    };
    let threads = opts.parallel.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 1..threads {
            scope.spawn(worker);
        }
        worker();
    });

    let mut out = SuiteOutcome { report: BenchReport { suite: suite.name.clone(), cells: Vec::new() }, ..Default::default() };
    for ((spec, seed), result) in cells.iter().zip(results.into_inner().expect("results")) {
        match result.expect("every cell ran") {
            Ok(cell) => {
                if opts.keep_series && spec.seeds.first() == Some(seed) {
                    out.series.extend(cell.series);
                }
                out.report.cells.push(cell.report);
                out.timing.cells.push(cell.timing);
            }
            Err(e) => {
                out.report.cells.push(CellReport::failed(&spec.name, spec.topology, spec.tl_method, *seed, e));
                out.timing.cells.push(CellTiming {
                    scenario: spec.name.clone(),
                    seed: *seed,
                    training_seconds: 0.0,
                    federation_ms: None,
                });
            }
        }
    }
    Ok(out)
}

/// Scenarios with the same clients and data perturbation share a stage.
fn stage_key(spec: &ScenarioSpec) -> String {
    serde_json::to_string(&(&spec.clients, &spec.experiments.load_shift)).expect("profiles serialize")
}
