use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use fedtherm::bench::{emit_report, run_suite, BenchReport, Format, RunOptions, TimingReport, TIMING_JSON};
use fedtherm::config::{ScenarioSpec, SuiteConfig};
use fedtherm::federation::{client_run, server_run, FlClient, ServerOptions};
use fedtherm::io::{create_dir, read_dataset, read_json, write_dataset, write_json};
use fedtherm::transport::{TcpConnection, TcpServer};
use fedtherm::{Error, Result};
use fedtherm_core::federation::FedConfig;
use fedtherm_core::model::{evaluate, train, TrainConfig};
use fedtherm_core::rng::{derive_seed, tag};
use fedtherm_core::thermal::{generate, normalize_apply, normalize_fit, NormStats};
use fedtherm_core::transfer::{adapt, Adapted, TlMethod};
use fedtherm_core::wire::{deserialize_model, serialize_model};
use fedtherm_core::MlpModel;
use log::info;

#[derive(Parser)]
#[command(name = "fedtherm", version, about = "Federated transfer learning for converter thermal models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Suite configuration (JSON). Defaults to the built-in paper-mini suite.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for single runs; for `bench` it replaces every scenario's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write one raw CSV per client of a scenario, plus the profiles used.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Train the base model on a source CSV; writes base.ftl and norm.json.
    TrainBase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
    },
    /// Adapt a base model to one target CSV; writes adapted.json.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        norm: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "fine_tune")]
        method: String,
    },
    /// Run the federation server over TCP.
    FedServe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Number of clients to wait for before round 0.
        #[arg(long)]
        clients: usize,
        /// Initial global model (an adapted.json written by `transfer`).
        #[arg(long)]
        model: PathBuf,
        /// Federation settings (JSON FedConfig); defaults to 10 rounds of 5 local epochs.
        #[arg(long)]
        fed: Option<PathBuf>,
        /// Source CSV whose rows serve as the relevance reference sample.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        norm: Option<PathBuf>,
    },
    /// Run one federation client over TCP.
    FedClient {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        connect: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        norm: PathBuf,
        #[arg(long)]
        fed: Option<PathBuf>,
    },
    /// Run benchmark scenarios and write reports.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "json,csv", value_delimiter = ',')]
        format: Vec<Format>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Re-emit a report.json in other formats and print a summary.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value = "json,csv", value_delimiter = ',')]
        format: Vec<Format>,
    },
}

fn load_suite(path: Option<&Path>) -> Result<SuiteConfig> {
    match path {
        Some(p) => SuiteConfig::load(p),
        None => Ok(SuiteConfig::paper_mini()),
    }
}

fn pick_scenario<'a>(suite: &'a SuiteConfig, name: Option<&str>) -> Result<&'a ScenarioSpec> {
    match name {
        Some(n) => suite.scenario(n).ok_or_else(|| Error::config("scenario", format!("unknown scenario `{n}`"))),
        None => Ok(&suite.scenarios[0]),
    }
}

fn load_model(path: &Path) -> Result<MlpModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(deserialize_model(&bytes).map_err(fedtherm_core::Error::from)?)
}

fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    let bytes = serialize_model(model).map_err(fedtherm_core::Error::from)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_fed(path: Option<&Path>) -> Result<FedConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(FedConfig {
            rounds: 10,
            local_epochs: 5,
            aggregation: Default::default(),
            trainable_mask: Vec::new(),
            retry_budget: 3,
            client_timeout_ms: 5000,
            eval_each_round: false,
            train: fedtherm::config::federated_train(),
        }),
    }
}

fn parse_method(s: &str) -> Result<TlMethod> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| Error::config("method", format!("unknown TL method `{s}` (fine_tune, tca, dda, none)")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common, scenario } => {
            let suite = load_suite(common.config.as_deref())?;
            let spec = pick_scenario(&suite, scenario.as_deref())?;
            create_dir(&common.out)?;
            let mut profiles = Vec::new();
            for (i, p) in spec.clients.iter().enumerate() {
                let profile = p.reseeded(common.seed());
                let n = if i == 0 { suite.pipeline.source_samples } else { suite.pipeline.target_samples };
                let data = generate(&profile, n)?;
                let path = common.out.join(format!("{}.csv", profile.name));
                write_dataset(&path, &data)?;
                info!("wrote {} rows to {}", data.len(), path.display());
                profiles.push(profile);
            }
            write_json(&common.out.join("profiles.json"), &profiles)
        }
        Command::TrainBase { common, source } => {
            let suite = load_suite(common.config.as_deref())?;
            let raw = read_dataset(&source, 60.0)?;
            let stats = normalize_fit(&raw)?;
            let data = normalize_apply(&raw, &stats)?;
            let (train_set, test_set) = data.split(suite.pipeline.train_fraction, derive_seed(common.seed(), tag("split")))?;
            let cfg = TrainConfig { seed: derive_seed(common.seed(), tag("base-train")), ..suite.pipeline.base.clone() };
            let init = MlpModel::thermal_default(derive_seed(common.seed(), tag("base-init")));
            let (base, _) = train(&init, &train_set, &cfg)?;
            let m = evaluate(&base, &test_set)?;
            println!("base model: held-out MSE {:.4} K^2, R2 {:?}", m.mse, m.r2);
            create_dir(&common.out)?;
            save_model(&common.out.join("base.ftl"), &base)?;
            write_json(&common.out.join("norm.json"), &stats)
        }
        Command::Transfer { common, base, norm, source, target, method } => {
            let suite = load_suite(common.config.as_deref())?;
            let method = parse_method(&method)?;
            let base = load_model(&base)?;
            let stats: NormStats = read_json(&norm)?;
            let source = normalize_apply(&read_dataset(&source, 60.0)?, &stats)?;
            let target = normalize_apply(&read_dataset(&target, 60.0)?, &stats)?;
            let frac = suite.pipeline.train_fraction;
            let (src_train, _) = source.split(frac, derive_seed(common.seed(), tag("split")))?;
            let (tgt_train, tgt_test) = target.split(frac, derive_seed(common.seed(), tag("split") ^ 1))?;
            let adapted = adapt(method, &base, &src_train, &tgt_train, &suite.pipeline.transfer, common.seed())?;
            let before = evaluate(&base, &tgt_test)?;
            let after = adapted.evaluate(&tgt_test)?;
            println!("target held-out MSE: base {:.4} K^2, adapted {:.4} K^2", before.mse, after.mse);
            create_dir(&common.out)?;
            write_json(&common.out.join("adapted.json"), &adapted)
        }
        Command::FedServe { common, listen, clients, model, fed, reference, norm } => {
            let adapted: Adapted = read_json(&model)?;
            let mut fed = load_fed(fed.as_deref())?;
            if fed.trainable_mask.is_empty() {
                fed.trainable_mask = adapted.fl_mask.clone();
            }
            let reference = match (reference, norm) {
                (Some(r), Some(n)) => {
                    let stats: NormStats = read_json(&n)?;
                    let data = normalize_apply(&read_dataset(&r, 60.0)?, &stats)?;
                    Some(data.subsample(500, derive_seed(common.seed(), tag("reference"))).features().clone())
                }
                (Some(_), None) => return Err(Error::config("norm", "--reference needs --norm")),
                _ => None,
            };
            let server = TcpServer::bind(&listen)?;
            info!("listening on {}", server.local_addr()?);
            let mut conns = Vec::new();
            while conns.len() < clients {
                conns.push(server.accept(Duration::from_secs(3600))?);
            }
            let opts = ServerOptions { reference: reference.as_ref(), ..ServerOptions::default() };
            let outcome = server_run(&fed, &adapted.model, conns, &opts)?;
            create_dir(&common.out)?;
            save_model(&common.out.join("global.ftl"), &outcome.model)?;
            write_json(&common.out.join("round_log.json"), &outcome.log)?;
            println!(
                "{} rounds completed, exclusions {:?}",
                outcome.log.completed_rounds(),
                outcome.log.exclusion_counts()
            );
            Ok(())
        }
        Command::FedClient { common, connect, id, model, data, norm, fed } => {
            let adapted: Adapted = read_json(&model)?;
            let mut fed = load_fed(fed.as_deref())?;
            fed.train.seed = derive_seed(common.seed(), tag(&id));
            let stats: NormStats = read_json(&norm)?;
            let local = normalize_apply(&read_dataset(&data, 60.0)?, &stats)?;
            let client = FlClient {
                id: id.clone(),
                model: adapted.model.clone(),
                x: adapted.inputs(local.features())?,
                y: local.target_matrix(),
                relevance_sample: local.subsample(500, derive_seed(common.seed(), tag("relevance"))).features().clone(),
                cfg: fed,
            };
            let mut conn = TcpConnection::connect_retrying(&connect, Duration::from_secs(30))?;
            let outcome = client_run(&mut conn, client, Duration::from_secs(3600))?;
            println!("client {id}: trained {} rounds, relevance {:.4}", outcome.rounds_trained, outcome.relevance);
            create_dir(&common.out)?;
            write_json(&common.out.join(format!("{id}.adapted.json")), &adapted.with_model(outcome.model))
        }
        Command::Bench { common, scenario, format, parallel } => {
            let mut suite = load_suite(common.config.as_deref())?;
            if let Some(name) = scenario {
                suite.retain_scenario(&name)?;
            }
            if let Some(seed) = common.seed {
                suite.override_seeds(&[seed]);
            }
            let outcome = run_suite(&suite, RunOptions { parallel, keep_series: true })?;
            let written = emit_report(&outcome.report, Some(&outcome.timing), &outcome.series, &format, &common.out)?;
            print_summary(&outcome.report, Some(&outcome.timing));
            info!("wrote {} files under {}", written.len(), common.out.display());
            let failed = outcome.report.failures().count();
            if failed > 0 {
                return Err(Error::Client { client: "bench".into(), message: format!("{failed} cell(s) failed") });
            }
            Ok(())
        }
        Command::Report { input, out, format } => {
            let report = BenchReport::load(&input)?;
            let timing_path = input.with_file_name(TIMING_JSON);
            let timing: Option<TimingReport> = timing_path.exists().then(|| read_json(&timing_path)).transpose()?;
            emit_report(&report, timing.as_ref(), &[], &format, &out)?;
            print_summary(&report, timing.as_ref());
            Ok(())
        }
    }
}

fn print_summary(report: &BenchReport, timing: Option<&TimingReport>) {
    println!("{:<24} {:>12} {:>14} {:>14}", "scenario", "median MSE", "forgetting %", "FL time ms");
    for name in report.scenario_names() {
        let fmt = |v: Option<f64>, prec: usize| v.map(|v| format!("{v:.prec$}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<24} {:>12} {:>14} {:>14}",
            name,
            fmt(report.median_mse(&name), 4),
            fmt(report.median_forgetting_pct(&name), 2),
            fmt(timing.and_then(|t| t.median_federation_ms(&name)), 0),
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
