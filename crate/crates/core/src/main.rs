use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use infopattern::corpus::{self, StanceLabel};
use infopattern::pipeline::{EmbedderKind, Pipeline, PipelineConfig, Stage, SummarizerKind};
use infopattern::propagation::NormalizationMode;
use infopattern::remote::HttpTransport;
use infopattern::service::{self, ServiceConfig};
use infopattern::stance_lm::{self, BaseTrainConfig, EpsilonMap, SwitchTrainConfig, SwitchedLM};

#[derive(Parser, Debug)]
#[command(name = "infopattern", version, about = "Claim propagation patterns and stance-steered generation")]
struct Cli {
    /// JSON config file; keys mirror the long flags, which take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for clustering, training and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate the input corpus.
    Ingest(PipelineArgs),
    /// Embed messages and choose k by silhouette.
    Cluster(PipelineArgs),
    /// Pick representatives and summarize each claim.
    Summarize(PipelineArgs),
    /// Count transitions and export the pattern graph.
    Graph(PipelineArgs),
    /// Run every pipeline stage, skipping those already up to date.
    Run(PipelineArgs),
    /// Train a base LM and its stance switch.
    StanceTrain(StanceTrainArgs),
    /// Score the stance of a text.
    StanceScore(StanceScoreArgs),
    /// Sample text from a switched model.
    Generate(GenerateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Default)]
struct PipelineArgs {
    /// JSON-lines corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// hash or remote.
    #[arg(long, value_parser = parse_embedder)]
    embedder: Option<EmbedderKind>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    embed_url: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Cluster each theme separately.
    #[arg(long)]
    per_theme: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Representatives per claim.
    #[arg(long)]
    representatives: Option<usize>,
    /// offline or remote.
    #[arg(long, value_parser = parse_summarizer)]
    summarizer: Option<SummarizerKind>,
    #[arg(long)]
    summarize_url: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// global or row.
    #[arg(long)]
    mode: Option<NormalizationMode>,
    #[arg(long)]
    self_loops: bool,
}

fn parse_embedder(s: &str) -> Result<EmbedderKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown embedder \"{s}\" (expected hash or remote)"))
}

fn parse_summarizer(s: &str) -> Result<SummarizerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown summarizer \"{s}\" (expected offline or remote)"))
}

#[derive(Args, Debug)]
struct StanceTrainArgs {
    /// JSON-lines corpus with stance labels.
    #[arg(long)]
    input: PathBuf,
    /// Unlabeled JSON-lines corpus for the base LM; defaults to --input.
    #[arg(long)]
    base_input: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    model_out: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 2)]
    min_count: usize,
    #[arg(long, default_value_t = 200)]
    switch_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    switch_lr: f64,
}

#[derive(Args, Debug)]
struct StanceScoreArgs {
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    /// Text to score; read from stdin when absent.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "stance")]
    epsilon: Option<f64>,
    /// Use the ε of a stance label instead of --epsilon.
    #[arg(long)]
    stance: Option<StanceLabel>,
    #[arg(long, default_value_t = 40)]
    length: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// bundle.json from the graph stage.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let Cli {
        config, seed, command, ..
    } = cli;
    match command {
        Command::Ingest(a) => run_stage(Some(Stage::Ingest), a, config.as_deref(), seed),
        Command::Cluster(a) => run_stage(Some(Stage::Cluster), a, config.as_deref(), seed),
        Command::Summarize(a) => run_stage(Some(Stage::Summarize), a, config.as_deref(), seed),
        Command::Graph(a) => run_stage(Some(Stage::Graph), a, config.as_deref(), seed),
        Command::Run(a) => run_stage(None, a, config.as_deref(), seed),
        Command::StanceTrain(a) => stance_train(a, seed),
        Command::StanceScore(a) => stance_score(a),
        Command::Generate(a) => generate(a, seed),
        Command::Serve(a) => serve(a, config.as_deref()),
    }
}

fn pipeline_config(args: PipelineArgs, config: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut c = match config {
        Some(path) => PipelineConfig::from_json_file(path).map_err(|e| Failure::usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$( if let Some(v) = args.$field { c.$field = v; } )*};
    }
    set!(input, out_dir, embedder, dim, batch_size, k_min, max_iter, tol, representatives, summarizer, threshold, mode);
    if args.k_max.is_some() {
        c.k_max = args.k_max;
    }
    if args.embed_url.is_some() {
        c.embed_url = args.embed_url;
    }
    if args.summarize_url.is_some() {
        c.summarize_url = args.summarize_url;
    }
    c.per_theme |= args.per_theme;
    c.self_loops |= args.self_loops;
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(c)
}

fn run_stage(stage: Option<Stage>, args: PipelineArgs, config: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let config = pipeline_config(args, config, seed)?;
    let pipeline = Pipeline::new(config).with_transport(Arc::new(HttpTransport));
    let fail = |e: infopattern::pipeline::PipelineError| Failure {
        code: e.exit_code() as u8,
        message: e.to_string(),
    };
    let stages = match stage {
        Some(s) => vec![(s, pipeline.run_stage(s).map_err(fail)?)],
        None => pipeline.run().map_err(fail)?.stages.into_iter().map(|r| (r.stage, r.status)).collect(),
    };
    for (s, status) in stages {
        println!("{s}: {}", status.as_str());
    }
    Ok(())
}

fn stance_train(a: StanceTrainArgs, seed: Option<u64>) -> Result<(), Failure> {
    let data_err = |e: &dyn std::fmt::Display| Failure::data(e.to_string());
    let labeled_corpus = corpus::load_messages(&a.input).map_err(|e| data_err(&e))?;
    let labeled: Vec<(String, StanceLabel)> = labeled_corpus
        .messages()
        .iter()
        .filter_map(|m| m.stance.map(|s| (m.text.clone(), s)))
        .collect();
    let base_texts: Vec<String> = match &a.base_input {
        Some(p) => corpus::load_messages(p)
            .map_err(|e| data_err(&e))?
            .messages()
            .iter()
            .map(|m| m.text.clone())
            .collect(),
        None => labeled_corpus.messages().iter().map(|m| m.text.clone()).collect(),
    };
    let seed = seed.unwrap_or(0);
    let base_cfg = BaseTrainConfig {
        dim: a.dim,
        window: a.window,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        min_count: a.min_count,
        seed,
    };
    let (base, base_report) = stance_lm::train_base_lm(&base_texts, base_cfg).map_err(|e| data_err(&e))?;
    let switch_cfg = SwitchTrainConfig {
        epochs: a.switch_epochs,
        lr: a.switch_lr,
        seed,
    };
    let (model, switch_report) =
        stance_lm::train_switch(base, &labeled, EpsilonMap::default(), switch_cfg).map_err(|e| data_err(&e))?;
    for w in base_report.warnings.iter().chain(&switch_report.warnings) {
        log::warn!("{w}");
    }
    model.save(&a.model_out).map_err(|e| data_err(&e))?;
    let summary = serde_json::json!({
        "model": a.model_out,
        "vocab_size": model.base().vocab().len(),
        "labeled_examples": labeled.len(),
        "base_loss": base_report.loss_history.last(),
        "switch_loss": switch_report.loss_history.last(),
        "warnings": base_report.warnings.iter().chain(&switch_report.warnings).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn load_model(path: &Path) -> Result<SwitchedLM, Failure> {
    SwitchedLM::load(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn stance_score(a: StanceScoreArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let text = match a.text {
        Some(t) => t,
        None => std::io::read_to_string(std::io::stdin()).map_err(|e| Failure::data(e.to_string()))?,
    };
    let score = model.stance_score(&text).map_err(|e| Failure::data(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&score).unwrap());
    Ok(())
}

fn generate(a: GenerateArgs, seed: Option<u64>) -> Result<(), Failure> {
    if a.length == 0 {
        return Err(Failure::usage("--length must be at least 1"));
    }
    if !(a.temperature.is_finite() && a.temperature >= 0.0) {
        return Err(Failure::usage("--temperature must be finite and nonnegative"));
    }
    let model = load_model(&a.model)?;
    let epsilon = match (a.epsilon, a.stance) {
        (Some(e), _) if !e.is_finite() => return Err(Failure::usage("--epsilon must be finite")),
        (Some(e), _) => e,
        (None, Some(label)) => model.epsilon_map().get(label),
        (None, None) => 0.0,
    };
    let seed = seed.unwrap_or_else(rand::random);
    let text = model.generate(&a.prompt, epsilon, a.length, seed, a.temperature);
    println!("{}", serde_json::json!({ "text": text, "seed": seed, "epsilon": epsilon }));
    Ok(())
}

fn serve(a: ServeArgs, config: Option<&Path>) -> Result<(), Failure> {
    let mut c = match config {
        Some(path) => ServiceConfig::from_json_file(path).map_err(|e| Failure::usage(e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if let Some(h) = a.host {
        c.host = h;
    }
    if let Some(p) = a.port {
        c.port = p;
    }
    if let Some(m) = a.model {
        c.model_path = m;
    }
    if let Some(g) = a.graph {
        c.graph_path = g;
    }
    if a.static_dir.is_some() {
        c.static_dir = a.static_dir;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::data(e.to_string()))?;
    runtime
        .block_on(service::serve(c))
        .map_err(|e| Failure::data(e.to_string()))
}
