use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use replytopic::pipeline::{Pipeline, PipelineConfig, Stage, StageOutcome};
use replytopic::service::{serve, ServeOptions};
use replytopic::synth::{generate, Profile};
use replytopic::topic_model::{InferenceConfig, SERVING_INFERENCE};
use replytopic::Error;

#[derive(Parser)]
#[command(name = "replytopic", version, about = "Topic models for assisted email replies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its oracle record.
    Synth {
        #[arg(long, value_parser = ["coupled", "chain", "two_vocab"])]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON object overriding the profile's default parameters.
        #[arg(long)]
        params: Option<String>,
    },
    /// Filter, split and build the vocabulary.
    Ingest(PipelineArgs),
    /// Train the four topic models for every topic count.
    TrainLda(PipelineArgs),
    /// Write silver topic annotations for both splits.
    Annotate(PipelineArgs),
    /// Train the whole-reply and next-sentence predictors.
    TrainPredictors(PipelineArgs),
    /// Evaluate predictors and baselines.
    Evaluate(PipelineArgs),
    /// Unconditional and conditional perplexity of agent replies.
    Perplexity(PipelineArgs),
    /// Top words and phrases per topic, plus example emails.
    DescribeTopics(PipelineArgs),
    /// Run every stage in order, skipping up-to-date ones.
    RunAll(PipelineArgs),
    /// Serve trained artifacts over HTTP.
    Serve {
        /// Pipeline output directory.
        #[arg(long)]
        models_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Fold-in schedule as `burn_in,samples`.
        #[arg(long, value_parser = parse_sweeps)]
        serve_sweeps: Option<InferenceConfig>,
        /// Allowed browser origin; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// JSON config; its fields override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated topic counts.
    #[arg(long, value_delimiter = ',')]
    topics: Option<Vec<usize>>,
    #[arg(long)]
    primary_topics: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gibbs sweeps for LDA training.
    #[arg(long)]
    sweeps: Option<usize>,
}

fn parse_sweeps(s: &str) -> Result<InferenceConfig, String> {
    let (b, n) = s.split_once(',').ok_or("expected `burn_in,samples`")?;
    let burn_in = b.trim().parse().map_err(|e| format!("burn_in: {e}"))?;
    let samples: usize = n.trim().parse().map_err(|e| format!("samples: {e}"))?;
    if samples == 0 {
        return Err("samples must be at least 1".into());
    }
    Ok(InferenceConfig { burn_in, samples })
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn read_json_file(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn build_config(args: &PipelineArgs) -> Result<PipelineConfig, Error> {
    let mut config = PipelineConfig::default();
    if let Some(c) = &args.corpus {
        config.corpus = c.clone();
    }
    if let Some(o) = &args.out {
        config.output_dir = o.clone();
    }
    if let Some(t) = &args.topics {
        config.topics = t.clone();
        if args.primary_topics.is_none() && !t.contains(&config.primary_topics) {
            config.primary_topics = *t.iter().max().unwrap_or(&config.primary_topics);
        }
    }
    if let Some(p) = args.primary_topics {
        config.primary_topics = p;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(s) = args.sweeps {
        config.lda.sweeps = s;
    }
    let Some(path) = &args.config else {
        return Ok(config);
    };
    let mut value = serde_json::to_value(&config)?;
    merge(&mut value, read_json_file(path)?);
    Ok(serde_json::from_value(value)?)
}

fn synth(profile: &str, seed: u64, out: &Path, params: Option<&str>) -> Result<(), Error> {
    let mut profile = Profile::from_name(profile)?;
    if let Some(params) = params {
        let mut value = serde_json::to_value(&profile)?;
        let patch: Value = serde_json::from_str(params)
            .map_err(|e| Error::InvalidArgument(format!("--params is not valid JSON: {e}")))?;
        merge(&mut value, patch);
        profile = serde_json::from_value(value)
            .map_err(|e| Error::InvalidArgument(format!("invalid {} parameters: {e}", profile.name())))?;
    }
    let corpus = generate(&profile, seed)?;
    corpus.write(out)?;
    println!("wrote {} pairs to {}", corpus.pairs.len(), out.display());
    Ok(())
}

fn report(pipeline: &Pipeline, stage: Stage, outcome: StageOutcome) -> Result<(), Error> {
    match outcome {
        StageOutcome::UpToDate => println!("{stage}: up to date"),
        StageOutcome::Ran => println!("{stage}: done"),
    }
    let dir = &pipeline.config().output_dir;
    let show = |rel: &str| -> Result<(), Error> {
        let path = dir.join(rel);
        if path.exists() {
            print!("{}", std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
        }
        Ok(())
    };
    match stage {
        Stage::Ingest => show("ingest/stats.txt"),
        Stage::Evaluate => show("eval/report.txt"),
        Stage::Perplexity => show("perplexity/perplexity.csv"),
        _ => Ok(()),
    }
}

fn run_pipeline(args: &PipelineArgs, stage: Option<Stage>) -> Result<(), Error> {
    let pipeline = Pipeline::new(build_config(args)?)?;
    match stage {
        Some(stage) => {
            let outcome = pipeline.run(stage)?;
            report(&pipeline, stage, outcome)
        }
        None => {
            for stage in Stage::ALL {
                let outcome = pipeline.run(stage)?;
                report(&pipeline, stage, outcome)?;
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let stage_args = |args: &PipelineArgs, stage| run_pipeline(args, Some(stage));
    match cli.command {
        Command::Synth {
            profile,
            seed,
            out,
            params,
        } => synth(&profile, seed, &out, params.as_deref()),
        Command::Ingest(a) => stage_args(&a, Stage::Ingest),
        Command::TrainLda(a) => stage_args(&a, Stage::TrainLda),
        Command::Annotate(a) => stage_args(&a, Stage::Annotate),
        Command::TrainPredictors(a) => stage_args(&a, Stage::TrainPredictors),
        Command::Evaluate(a) => stage_args(&a, Stage::Evaluate),
        Command::Perplexity(a) => stage_args(&a, Stage::Perplexity),
        Command::DescribeTopics(a) => stage_args(&a, Stage::DescribeTopics),
        Command::RunAll(a) => run_pipeline(&a, None),
        Command::Serve {
            models_dir,
            port,
            host,
            serve_sweeps,
            cors_origin,
        } => {
            let ip = host
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("bad host `{host}`: {e}")))?;
            let options = ServeOptions {
                inference: serve_sweeps.unwrap_or(SERVING_INFERENCE),
                cors_origin,
                ..ServeOptions::default()
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime.block_on(serve(&models_dir, SocketAddr::new(ip, port), options))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::MissingArtifact(_) => 3,
                Error::InvalidArgument(_) => 2,
                _ => 1,
            })
        }
    }
}
