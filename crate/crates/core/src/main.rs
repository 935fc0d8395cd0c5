use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use kconflict::conflict::FewShotBank;
use kconflict::dataset::{read_records_path, stats, ExternalSource};
use kconflict::eval::GroupKey;
use kconflict::llm::GatewayMode;
use kconflict::pipeline::{self, ConfigErrors, RunConfig, StageErrors};
use kconflict::review::{serve, Criteria, ReviewItem, ReviewStore};

#[derive(Parser)]
#[command(name = "kconflict", version, about = "Knowledge-conflict benchmark synthesis and evaluation")]
struct Cli {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Gateway mode: live, replay or record.
    #[arg(long, global = true)]
    gateway: Option<GatewayMode>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and filter the graph, caching it in the output directory.
    Ingest,
    /// Sample seeds and extract bounded subgraphs.
    Extract,
    /// Perturb subgraphs into conflict specifications.
    Generate,
    /// Render original and conflicting contexts.
    Verbalize,
    /// Check coverage, locate gold sentences and write records.
    Verify,
    /// Ingest through verify in one go.
    Synthesize,
    /// Score the configured models on identification and localization.
    Evaluate {
        /// Records to evaluate instead of the output directory's.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Aggregate scores into tables.
    Report {
        /// Grouping keys, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "overall,conflict_type")]
        group_by: Vec<GroupKey>,
    },
    /// Split seed facts by whether a model already knows them.
    Probe {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Rate context naturalness and realism with a judge model.
    Quality {
        #[arg(long)]
        model: String,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Convert an external conflict dataset into records.
    Adapt {
        #[arg(long)]
        source: ExternalSource,
        #[arg(long)]
        input: PathBuf,
        /// TOML field mapping; the source's default otherwise.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Summary statistics of a record file.
    Stats {
        records: PathBuf,
    },
    /// Serve the review API over a review store.
    ReviewServe {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Console bundle served next to the API.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Record files to enqueue as instances before serving.
        #[arg(long)]
        enqueue: Vec<PathBuf>,
        /// Few-shot bank files to enqueue as demonstrations.
        #[arg(long)]
        enqueue_demos: Vec<PathBuf>,
        /// Checklist file replacing the built-in criteria.
        #[arg(long)]
        criteria: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(m) = cli.gateway {
        cfg.gateway.mode = m;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = o.clone();
    }
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(ConfigErrors(errs).into());
    }
    std::fs::create_dir_all(&cfg.paths.out_dir).with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
    Ok(cfg)
}

fn review_serve(
    data_dir: &Path,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
    enqueue: &[PathBuf],
    demos: &[PathBuf],
    criteria: Option<&Path>,
) -> Result<Value> {
    let criteria = match criteria {
        Some(p) => Criteria::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => Criteria::default(),
    };
    let store = ReviewStore::open(data_dir, criteria)?;
    let mut added = 0;
    for p in enqueue {
        added += store.enqueue(read_records_path(p)?.iter().map(ReviewItem::instance).collect())?;
    }
    for p in demos {
        let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let bank = FewShotBank::read_jsonl(std::io::BufReader::new(file)).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
        added += store.enqueue(bank.demos.iter().map(ReviewItem::demonstration).collect())?;
    }
    log::info!("enqueued {added} new item(s)");
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(Arc::new(store), addr, static_dir))?;
    Ok(json!({"stage": "review-serve", "enqueued": added}))
}

fn run(cli: &Cli) -> Result<Value> {
    if let Command::Stats { records } = &cli.command {
        return Ok(serde_json::to_value(stats(&read_records_path(records)?))?);
    }
    if let Command::ReviewServe { data_dir, addr, static_dir, enqueue, enqueue_demos, criteria } = &cli.command {
        return review_serve(data_dir, *addr, static_dir.clone(), enqueue, enqueue_demos, criteria.as_deref());
    }
    let cfg = load_config(cli)?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("sizing the worker pool")?;
    }
    Ok(match &cli.command {
        Command::Ingest => pipeline::ingest(&cfg)?,
        Command::Extract => pipeline::extract(&cfg)?,
        Command::Generate => pipeline::generate(&cfg)?,
        Command::Verbalize => pipeline::verbalize(&cfg)?,
        Command::Verify => pipeline::verify(&cfg)?,
        Command::Synthesize => Value::Array(pipeline::synthesize(&cfg)?),
        Command::Evaluate { records } => pipeline::evaluate(&cfg, records.as_deref())?,
        Command::Report { group_by } => {
            let (summary, table) = pipeline::report(&cfg, group_by)?;
            eprint!("{table}");
            summary
        }
        Command::Probe { records } => pipeline::probe(&cfg, records.as_deref())?,
        Command::Quality { model, records } => pipeline::quality(&cfg, model, records.as_deref())?,
        Command::Adapt { source, input, mapping } => pipeline::adapt(&cfg, *source, input, mapping.as_deref())?,
        Command::Stats { .. } | Command::ReviewServe { .. } => unreachable!("handled above"),
    })
}

fn error_summary(e: &anyhow::Error) -> (Value, u8) {
    if let Some(c) = e.downcast_ref::<ConfigErrors>() {
        return (json!({"status": "error", "kind": "config", "errors": c.0}), 2);
    }
    if let Some(s) = e.downcast_ref::<StageErrors>() {
        return (json!({"status": "error", "kind": "items", "summary": s.summary, "errors": s.errors}), 1);
    }
    (json!({"status": "error", "kind": "fatal", "errors": [format!("{e:#}")]}), 1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&json!({"status": "ok", "summary": summary})).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (summary, code) = error_summary(&e);
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            ExitCode::from(code)
        }
    }
}
