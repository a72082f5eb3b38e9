use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;

use matchpick::corpus::{load_dataset_dir, Corpus, DATASETS_DIR};
use matchpick::eval::{self, sparsity_tsv, LooOptions, LooSetup, Method};
use matchpick::features::load_zoo;
use matchpick::graph::{build_graph, MatchingGraph};
use matchpick::perf::PerfTable;
use matchpick::pipeline::{train_predictor, Mode, PipelineConfig, Predictor};
use matchpick::stats::{accumulate_stats, load_rows, load_stats, save_stats};
use matchpick::synth::{generate_benchmark, SynthConfig};
use matchpick::{fsutil, Error, ErrorClass, Result};

#[derive(Parser)]
#[command(
    name = "matchpick",
    version,
    about = "Pick the pretrained model to fine-tune for a new dataset"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark directory.
    Synth(SynthArgs),
    /// Build the matching graph and write it as JSON.
    Graph(GraphArgs),
    /// Fit the schema, embeddings and rank predictor on a benchmark.
    Train(TrainArgs),
    /// Rank the zoo for a query dataset.
    Predict(PredictArgs),
    /// Leave-one-out evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Accumulate a stats container from a raw embedding matrix.
    Stats(StatsArgs),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// One leave-one-out run.
    Loo(EvalArgs),
    /// Leave-one-out OSR under random removal of performance edges.
    Sparsity(SparsityArgs),
    /// Leave-one-out runs with masked input segments.
    Ablation(EvalArgs),
}

#[derive(Args, Clone, Default)]
struct InputArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark directory (models/, datasets/, perf.csv, initial.csv).
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Directory of model card JSON files (overrides <bench>/models).
    #[arg(long)]
    zoo: Option<PathBuf>,
    /// Directory of dataset stats containers (overrides <bench>/datasets).
    #[arg(long)]
    datasets: Option<PathBuf>,
    /// Performance CSV (overrides <bench>/perf.csv).
    #[arg(long)]
    perf: Option<PathBuf>,
    /// Pre-fine-tuning scores CSV (overrides <bench>/initial.csv).
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Top-level seed; every stage seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    datasets: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    /// Probe embedding dimension.
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output graph JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Segments the predictor sees: both, features_only or graph_only.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory for graph.json, ranker.json and schema.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Graph written by `train` or `graph`.
    #[arg(long)]
    graph: PathBuf,
    /// Predictor written by `train`.
    #[arg(long)]
    ranker: PathBuf,
    /// Stats container of the query dataset.
    #[arg(long)]
    query: PathBuf,
    /// Vertex name for the query (default: the query directory name).
    #[arg(long)]
    query_id: Option<String>,
    /// Stats of the graph's datasets (default: the directory recorded at
    /// training time).
    #[arg(long)]
    datasets: Option<PathBuf>,
    /// Accepted for uniformity; prediction reuses the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    /// match_and_choose, overall, initial or direct.
    #[arg(long)]
    method: Option<String>,
    /// both, features_only or graph_only (ablation runs all three when
    /// omitted).
    #[arg(long)]
    mode: Option<String>,
    /// Fraction of training performance edges dropped per fold.
    #[arg(long)]
    sparsity: Option<f64>,
    /// Output directory for the report files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SparsityArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated drop fractions.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Comma-separated seeds (default: the top-level seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory holding rows.f32 and rows_meta.json.
    #[arg(long)]
    rows: PathBuf,
    /// Output stats container directory.
    #[arg(long)]
    out: PathBuf,
    /// Skip the covariance shrinkage step.
    #[arg(long)]
    no_shrinkage: bool,
    /// Accepted for uniformity; accumulation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    bench: Option<PathBuf>,
    zoo: Option<PathBuf>,
    datasets: Option<PathBuf>,
    perf: Option<PathBuf>,
    initial: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    pipeline: PipelineConfig,
    method: Option<String>,
    mode: Option<String>,
    sparsity: Option<f64>,
    fractions: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    synth: Option<SynthConfig>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => fsutil::read_json(p),
        None => Ok(RunConfig::default()),
    }
}

fn require_path(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p.ok_or_else(|| Error::Config(format!("missing {what} path")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} path {} does not exist", p.display())));
    }
    Ok(p)
}

fn require_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    flag.or(cfg.seed)
        .ok_or_else(|| Error::Config("a seed is required (--seed or config)".into()))
}

/// Resolved input locations.
struct Inputs {
    zoo: PathBuf,
    datasets: PathBuf,
    perf: PathBuf,
    initial: Option<PathBuf>,
}

fn resolve_inputs(args: &InputArgs, cfg: &RunConfig) -> Result<Inputs> {
    let bench = args.bench.clone().or_else(|| cfg.bench.clone());
    let under = |name: &str| bench.as_ref().map(|b| b.join(name));
    let zoo = args.zoo.clone().or_else(|| cfg.zoo.clone()).or_else(|| under("models"));
    let datasets = args
        .datasets
        .clone()
        .or_else(|| cfg.datasets.clone())
        .or_else(|| under(DATASETS_DIR));
    let perf = args
        .perf
        .clone()
        .or_else(|| cfg.perf.clone())
        .or_else(|| under("perf.csv"));
    let initial = match args.initial.clone().or_else(|| cfg.initial.clone()) {
        Some(p) => Some(require_path(Some(p), "initial scores")?),
        None => under("initial.csv").filter(|p| p.exists()),
    };
    Ok(Inputs {
        zoo: require_path(zoo, "zoo")?,
        datasets: require_path(datasets, "datasets")?,
        perf: require_path(perf, "performance table")?,
        initial,
    })
}

fn load_corpus(inputs: &Inputs) -> Result<Corpus> {
    let cards = load_zoo(&inputs.zoo)?;
    let stats = load_dataset_dir(&inputs.datasets)?;
    let perf = PerfTable::load(&inputs.perf, inputs.initial.as_deref())?;
    Corpus::new(cards, stats, perf)
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let mut sc = cfg.synth.clone().unwrap_or_default();
    if let Some(v) = args.models {
        sc.n_models = v;
    }
    if let Some(v) = args.datasets {
        sc.n_datasets = v;
    }
    if let Some(v) = args.clusters {
        sc.n_clusters = v;
    }
    if let Some(v) = args.emb_dim {
        sc.emb_dim = v;
    }
    if let Some(v) = args.spread {
        sc.cluster_spread = v;
    }
    if let Some(v) = args.noise {
        sc.noise_sigma = v;
    }
    sc.seed = require_seed(args.seed, &cfg)?;
    let bench = generate_benchmark(&sc)?;
    bench.corpus.save(&args.out)?;
    fsutil::write_json(&args.out.join("synth_config.json"), &sc)?;
    info!("wrote benchmark to {}", args.out.display());
    Ok(())
}

fn graph(args: GraphArgs) -> Result<()> {
    let cfg = load_config(args.input.config.as_deref())?;
    let corpus = load_corpus(&resolve_inputs(&args.input, &cfg)?)?;
    let g = build_graph(&corpus.perf, &corpus.stats, &corpus.model_ids())?;
    g.save(&args.out)
}

fn parse_mode(flag: Option<&str>, cfg: &RunConfig) -> Result<Mode> {
    flag.or(cfg.mode.as_deref()).map_or(Ok(Mode::Both), Mode::parse)
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(args.input.config.as_deref())?;
    let seed = require_seed(args.input.seed, &cfg)?;
    let mode = parse_mode(args.mode.as_deref(), &cfg)?;
    let inputs = resolve_inputs(&args.input, &cfg)?;
    let corpus = load_corpus(&inputs)?;
    let g = build_graph(&corpus.perf, &corpus.stats, &corpus.model_ids())?;
    let predictor = train_predictor(&g, &corpus, &cfg.pipeline, seed, mode, &inputs.datasets)?;
    g.save(&args.out.join("graph.json"))?;
    predictor.models.schema.save(&args.out.join("schema.json"))?;
    predictor.save(&args.out.join("ranker.json"))
}

fn predict(args: PredictArgs) -> Result<()> {
    let g = MatchingGraph::load(&require_path(Some(args.graph), "graph")?)?;
    let predictor = Predictor::load(&require_path(Some(args.ranker), "ranker")?)?;
    let query_dir = require_path(Some(args.query), "query")?;
    let query = load_stats(&query_dir)?;
    let existing: BTreeMap<_, _> = match args.datasets {
        Some(d) => load_dataset_dir(&require_path(Some(d), "datasets")?)?,
        None => predictor.load_existing()?,
    };
    let query_id = match args.query_id {
        Some(id) => id,
        None => query_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Config("cannot name the query; pass --query-id".into()))?,
    };
    let ranked = predictor.predict(&g, &query_id, &query, &existing)?;
    let mut out = String::from("rank,model_id,expected_rank\n");
    for (i, r) in ranked.iter().enumerate() {
        let _ = writeln!(out, "{},{},{:.6}", i + 1, r.model_id, r.expected_rank);
    }
    print!("{out}");
    Ok(())
}

struct EvalContext {
    corpus: Corpus,
    opts: LooOptions,
    out: PathBuf,
    mode_given: bool,
    cfg: RunConfig,
}

fn eval_context(args: &EvalArgs) -> Result<EvalContext> {
    let cfg = load_config(args.input.config.as_deref())?;
    let seed = require_seed(args.input.seed, &cfg)?;
    let method = args
        .method
        .as_deref()
        .or(cfg.method.as_deref())
        .map_or(Ok(Method::MatchAndChoose), Method::parse)?;
    let mode_flag = args.mode.as_deref().or(cfg.mode.as_deref());
    let mode = mode_flag.map_or(Ok(Mode::Both), Mode::parse)?;
    let corpus = load_corpus(&resolve_inputs(&args.input, &cfg)?)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let opts = LooOptions {
        method,
        mode,
        sparsity: args.sparsity.or(cfg.sparsity).unwrap_or(0.0),
        seed,
        pipeline: cfg.pipeline.clone(),
    };
    Ok(EvalContext {
        corpus,
        opts,
        out,
        mode_given: mode_flag.is_some(),
        cfg,
    })
}

fn eval_loo(args: EvalArgs) -> Result<()> {
    let ctx = eval_context(&args)?;
    let setup = LooSetup::new(&ctx.corpus)?;
    let report = eval::run_loo(&setup, &ctx.opts)?;
    report.save(&ctx.out, &format!("loo_{}", ctx.opts.method.as_str()))
}

fn eval_ablation(args: EvalArgs) -> Result<()> {
    let ctx = eval_context(&args)?;
    let setup = LooSetup::new(&ctx.corpus)?;
    let modes = if ctx.mode_given {
        vec![ctx.opts.mode]
    } else {
        vec![Mode::Both, Mode::FeaturesOnly, Mode::GraphOnly]
    };
    for mode in modes {
        let report = eval::run_ablation(&setup, &ctx.opts, mode)?;
        report.save(&ctx.out, &format!("ablation_{}", mode.as_str()))?;
    }
    Ok(())
}

fn eval_sparsity(args: SparsityArgs) -> Result<()> {
    let ctx = eval_context(&args.eval)?;
    let fractions = args
        .fractions
        .or_else(|| ctx.cfg.fractions.clone())
        .unwrap_or_else(|| vec![0.0, 0.2, 0.4, 0.6]);
    let seeds = args
        .seeds
        .or_else(|| ctx.cfg.seeds.clone())
        .unwrap_or_else(|| vec![ctx.opts.seed]);
    let setup = LooSetup::new(&ctx.corpus)?;
    let points = eval::run_sparsity(&setup, &ctx.opts, &fractions, &seeds)?;
    fsutil::write_json(&ctx.out.join("sparsity.json"), &points)?;
    fsutil::write_atomic(&ctx.out.join("sparsity.tsv"), sparsity_tsv(&points).as_bytes())
}

fn stats(args: StatsArgs) -> Result<()> {
    let (rows, meta) = load_rows(&require_path(Some(args.rows), "rows")?)?;
    let s = accumulate_stats(&rows, !args.no_shrinkage, &meta.probe_id)?;
    save_stats(&s, &args.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Graph(a) => graph(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(EvalCommand::Loo(a)) => eval_loo(a),
        Command::Eval(EvalCommand::Sparsity(a)) => eval_sparsity(a),
        Command::Eval(EvalCommand::Ablation(a)) => eval_ablation(a),
        Command::Stats(a) => stats(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                eprintln!("error_code=usage {}", e.to_string().trim_end());
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error_code={} {e}", e.code());
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
