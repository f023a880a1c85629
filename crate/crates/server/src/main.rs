use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lectern_core::ingest::DEFAULT_MAX_SPAN;
use lectern_core::qa::answer_question;
use lectern_core::{QueryContext, RetrievalConfig};
use lectern_server::adapters::{Adapters, ConnectionLog};
use lectern_server::commands::{bench, cli_embedder, ingest, open_store, serve, synthetic_store, BenchOptions};
use lectern_server::config::ServiceConfig;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "lectern", version, about = "Local interactive-lecture question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct RetrievalArgs {
    /// Penalty per minute of distance from the pause time.
    #[arg(long)]
    lambda: Option<f64>,
    /// Semantic candidates before rescoring.
    #[arg(long = "top-K")]
    candidates: Option<usize>,
    /// Evidence segments after rescoring.
    #[arg(long = "top-k")]
    evidence: Option<usize>,
}

impl RetrievalArgs {
    fn resolve(self, base: RetrievalConfig) -> Result<RetrievalConfig> {
        let cfg = RetrievalConfig {
            lambda: self.lambda.unwrap_or(base.lambda),
            candidates: self.candidates.unwrap_or(base.candidates),
            evidence: self.evidence.unwrap_or(base.evidence),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse an SRT file and add the lecture to a store.
    Ingest {
        #[arg(long)]
        srt: PathBuf,
        #[arg(long)]
        lecture_id: String,
        /// Longest merged segment, in seconds.
        #[arg(long, default_value_t = DEFAULT_MAX_SPAN)]
        max_span: f64,
        /// Store directory (created or updated).
        #[arg(long)]
        out: PathBuf,
        /// Built-in embedder for a new store: "stub" or "stub-bow".
        #[arg(long, default_value = "stub-bow")]
        embedder: String,
        #[arg(long, default_value_t = 384)]
        dim: usize,
    },
    /// Ask one question against a store with the built-in adapters.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        lecture_id: String,
        #[arg(long)]
        question: String,
        /// Lecture position in seconds.
        #[arg(long, default_value_t = 0.0)]
        pause_time: f64,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Print the full answer as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<std::net::IpAddr>,
        /// TOML configuration (adapters, defaults, session TTL).
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// Directory of UI assets served at `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Time the pipeline per stage.
    Bench {
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        store: Option<PathBuf>,
        /// Build an in-memory store of this many segments instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// Dimension of the synthetic store's stub embedder.
        #[arg(long, default_value_t = 384)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Retrieval and LLM only; skip the stub voice and avatar stages.
        #[arg(long)]
        text_only: bool,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Ingest {
            srt,
            lecture_id,
            max_span,
            out,
            embedder,
            dim,
        } => {
            let embedder = match lectern_core::store::load_store(&out) {
                Ok(existing) => cli_embedder(&existing.metadata().embedder_name, existing.metadata().dimension)?,
                Err(_) => cli_embedder(&embedder, dim)?,
            };
            let summary = ingest(&srt, &lecture_id, max_span, &out, embedder.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Query {
            store,
            lecture_id,
            question,
            pause_time,
            retrieval,
            json,
        } => {
            let store = open_store(&store)?;
            let adapters = Adapters::stubs(store.metadata())?;
            let cfg = retrieval.resolve(RetrievalConfig::default())?;
            let ctx = QueryContext::new(question, pause_time).in_lecture(lecture_id);
            let answer = answer_question(&store, adapters.embedder.as_ref(), adapters.llm.as_ref(), &ctx, &cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&answer)?);
            } else {
                println!("{}\n", answer.text);
                for s in &answer.evidence {
                    println!(
                        "  {} [{:.1}-{:.1}] semantic {:.4} adjusted {:.4}",
                        s.segment.segment_id, s.segment.start, s.segment.end, s.semantic_score, s.adjusted_score
                    );
                }
            }
        }
        Command::Serve {
            store,
            port,
            bind,
            adapters,
            static_dir,
        } => {
            let mut config = match &adapters {
                Some(path) => ServiceConfig::load(path)?,
                None => ServiceConfig::default(),
            };
            config.port = port.unwrap_or(config.port);
            config.bind = bind.unwrap_or(config.bind);
            config.static_dir = static_dir.or(config.static_dir);
            config.validate()?;
            tokio::runtime::Runtime::new()
                .context("starting runtime")?
                .block_on(serve(&store, config))?;
        }
        Command::Bench {
            store,
            synthetic,
            queries,
            dim,
            seed,
            text_only,
            retrieval,
            json,
        } => {
            let (store, embedder) = match (store, synthetic) {
                (Some(dir), _) => {
                    let store = open_store(&dir)?;
                    let adapters = Adapters::from_config(&Default::default(), store.metadata(), ConnectionLog::default())?;
                    (store, adapters.embedder)
                }
                (None, Some(n)) => {
                    let embedder = cli_embedder("stub", dim)?;
                    (synthetic_store(n, embedder.as_ref(), seed)?, embedder)
                }
                (None, None) => unreachable!("clap requires one of --store/--synthetic"),
            };
            let opts = BenchOptions {
                queries,
                seed,
                full_pipeline: !text_only,
                retrieval: retrieval.resolve(RetrievalConfig::default())?,
            };
            let report = bench(&store, embedder.as_ref(), &opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render());
            }
        }
    }
    Ok(())
}
