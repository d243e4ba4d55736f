//! Command-line front end. Every subcommand exposes one library operation
//! family; `report` runs the whole configured pipeline. Exit codes: 0 on
//! success, 1 when a stage fails, 2 for usage errors (clap's default).

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use scorekit::agreement::reliability_table_pairs;
use scorekit::allocation::{
    design_allocation, verify_allocation, AllocationDesign, PinnedConstraint,
};
use scorekit::classifier::{evaluate, train_softmax, write_predictions_csv, TrainConfig};
use scorekit::clustering::{
    build_strata, default_k, rerun_consistency, run_clustering, write_clusters_csv, Algorithm,
    ClusterConfig, Distance, Stratum,
};
use scorekit::corpus::{
    Corpus, ItemId, Label, LabelSource, Partition, RaterKey, SplitAssignment, SplitProportions,
};
use scorekit::pipeline::{self, report, PipelineConfig};
use scorekit::representations::wtmf::{wtmf_train, WtmfConfig};
use scorekit::representations::{load_vectors, tfidf_vectorize, TfidfConfig, VectorSet};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "scorekit",
    version,
    about = "Scoring-reliability toolkit for short-answer tasks"
)]
struct Cli {
    /// Pipeline config (TOML, or JSON for .json paths) supplying defaults
    /// for omitted flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Stage seed, overriding the config and the derived default.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (file or directory, depending on the subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus, optionally apply the earnest filter, and summarize it.
    Ingest(IngestArgs),
    /// Design a rater-to-student allocation and verify its invariants.
    Allocate(AllocateArgs),
    /// Pairwise QWK and group Fleiss' kappa over scored items.
    Agreement(AgreementArgs),
    /// Agreement-aware four-way dataset split.
    Split(SplitArgs),
    /// TF-IDF vectors for every response.
    Vectorize(VectorizeArgs),
    /// Dense response vectors via weighted matrix factorization.
    Wtmf(WtmfArgs),
    /// Train the softmax scorer and evaluate it on the test partition.
    Train(TrainArgs),
    /// Cluster responses within each (task, class) stratum.
    Cluster(ClusterArgs),
    /// Clustering stability across reruns with different seeds.
    Consistency(ConsistencyArgs),
    /// Run every configured stage and write the dual-format report.
    Report,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Drop responses with fewer tokens than this.
    #[arg(long)]
    min_tokens: Option<usize>,
}

#[derive(Args)]
struct AllocateArgs {
    /// Core raters in presentation order, comma separated.
    #[arg(long, value_delimiter = ',')]
    raters: Vec<String>,
    /// Pool file, one student id per line.
    #[arg(long)]
    students_file: Option<PathBuf>,
    /// Take the pool from this corpus instead of --students-file.
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    pair_size: Option<usize>,
    #[arg(long)]
    consensus_size: Option<usize>,
    /// Rater whose assignment must cover students from --pinned-file.
    #[arg(long)]
    pinned_rater: Option<String>,
    /// Required student ids, one per line.
    #[arg(long)]
    pinned_file: Option<PathBuf>,
    #[arg(long)]
    min_overlap: Option<usize>,
}

#[derive(Args)]
struct AgreementArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Comma-separated pair tokens, e.g. A:C,A:D (id@epoch for earlier epochs).
    #[arg(long, value_delimiter = ',')]
    pairs: Vec<String>,
    /// Rater group for Fleiss' kappa, e.g. A,C,D; repeatable.
    #[arg(long = "triple", value_name = "RATERS")]
    triples: Vec<String>,
    /// Emit JSON instead of markdown tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Four comma-separated fractions: train,dev,test,reserve.
    #[arg(long)]
    ratios: Option<String>,
}

#[derive(Args)]
struct VectorizeArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Keep tokens appearing in at least this many documents.
    #[arg(long)]
    min_df: Option<usize>,
}

#[derive(Args)]
struct WtmfArgs {
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    w_missing: Option<f64>,
    #[arg(long)]
    sweeps: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Partition CSV from `split`.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Gold labels from this rater (default: consensus over all raters).
    #[arg(long)]
    rater: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_penalty: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Also write per-item test predictions to this CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Stratum labels from this rater (default: consensus).
    #[arg(long)]
    rater: Option<String>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// With --scores, strata follow (task, class); otherwise one per task.
    #[arg(long)]
    responses: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    rater: Option<String>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Comma-separated clustering seeds, at least two.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Kmeans,
    Kmedoids,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(arg: AlgorithmArg) -> Self {
        match arg {
            AlgorithmArg::Kmeans => Algorithm::KMeans,
            AlgorithmArg::Kmedoids => Algorithm::KMedoids,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Euclidean,
    Cosine,
}

impl From<DistanceArg> for Distance {
    fn from(arg: DistanceArg) -> Self {
        match arg {
            DistanceArg::Euclidean => Distance::Euclidean,
            DistanceArg::Cosine => Distance::Cosine,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| format!("missing --{flag} (and no config to supply it)").into())
}

fn read_id_lines(path: &PathBuf) -> CliResult<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(String::from)
        .collect())
}

/// Load responses (+ scores when given), falling back to config paths.
fn load_corpus(
    responses: Option<PathBuf>,
    scores: Option<PathBuf>,
    config: &Option<PipelineConfig>,
) -> CliResult<Corpus> {
    let responses = required(
        responses.or_else(|| config.as_ref().map(|c| c.paths.responses.clone())),
        "responses",
    )?;
    let mut corpus = Corpus::load_responses(&responses)?;
    let scores = scores.or_else(|| config.as_ref().and_then(|c| c.paths.scores.clone()));
    if let Some(scores) = scores {
        corpus = corpus.load_scores(&scores)?;
    }
    Ok(corpus)
}

fn master_seed(config: &Option<PipelineConfig>) -> u64 {
    config.as_ref().map_or(0, |c| c.master_seed)
}

fn label_source(rater: &Option<String>, fallback: Option<&LabelSource>) -> LabelSource {
    match rater {
        Some(token) => LabelSource::Rater(RaterKey::parse(token)),
        None => fallback.cloned().unwrap_or_default(),
    }
}

/// Labeled strata when a scored corpus is available, otherwise one stratum
/// per task over whatever the vector set covers. Members without vectors are
/// dropped; empty strata are skipped.
fn strata_for(
    vectors: &VectorSet,
    corpus: Option<&Corpus>,
    labels: &LabelSource,
) -> (Vec<Stratum>, bool) {
    let mut strata = Vec::new();
    match corpus {
        Some(corpus) => {
            for stratum in build_strata(corpus, labels).strata {
                let members: Vec<ItemId> = stratum
                    .members
                    .iter()
                    .filter(|m| vectors.get(m).is_some())
                    .cloned()
                    .collect();
                if !members.is_empty() {
                    strata.push(Stratum::new(stratum.task_id, stratum.class, members));
                }
            }
            (strata, true)
        }
        None => {
            let mut by_task: BTreeMap<String, Vec<ItemId>> = BTreeMap::new();
            for (item, _) in vectors.iter() {
                by_task
                    .entry(item.task_id.clone())
                    .or_default()
                    .push(item.clone());
            }
            for (task, members) in by_task {
                // Class 0 is a placeholder; without labels only the grouping
                // by task is meaningful.
                strata.push(Stratum::new(task, Label::new(0).unwrap(), members));
            }
            (strata, false)
        }
    }
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json output")
    );
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(path) => Some(pipeline::load_config(path)?),
        None => None,
    };

    match cli.command {
        Command::Ingest(args) => ingest(args, &config, cli.out),
        Command::Allocate(args) => allocate(args, &config, cli.seed, cli.out),
        Command::Agreement(args) => agreement(args, &config),
        Command::Split(args) => split(args, &config, cli.seed, cli.out),
        Command::Vectorize(args) => vectorize(args, &config, cli.out),
        Command::Wtmf(args) => wtmf(args, &config, cli.seed, cli.out),
        Command::Train(args) => train(args, &config, cli.seed, cli.out),
        Command::Cluster(args) => cluster(args, &config, cli.seed, cli.out),
        Command::Consistency(args) => consistency(args, &config, cli.out),
        Command::Report => {
            let mut config = config.ok_or("the report subcommand needs --config <file>")?;
            if let Some(out) = cli.out {
                config.paths.output_dir = out;
            }
            pipeline::run(&config)?;
            println!(
                "report written to {}",
                config.paths.output_dir.join("report.md").display()
            );
            Ok(())
        }
    }
}

fn ingest(
    args: IngestArgs,
    config: &Option<PipelineConfig>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let mut corpus = load_corpus(args.responses, args.scores, config)?;
    let min_tokens = args.min_tokens.or_else(|| {
        config
            .as_ref()
            .and_then(|c| c.filter.as_ref())
            .map(|f| f.min_tokens)
    });
    let mut filter = None;
    if let Some(min_tokens) = min_tokens {
        let (kept, report) = corpus.earnest_filter(min_tokens);
        corpus = kept;
        filter = Some(report);
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        corpus.write_responses_path(dir.join("responses.jsonl"))?;
        corpus.write_scores_path(dir.join("scores.csv"))?;
    }
    print_json(&json!({
        "responses": corpus.response_count(),
        "scores": corpus.score_count(),
        "tasks": corpus.tasks().len(),
        "students": corpus.students().len(),
        "raters": corpus.raters().iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        "filter": filter,
    }));
    Ok(())
}

fn allocate(
    args: AllocateArgs,
    config: &Option<PipelineConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let section = config.as_ref().and_then(|c| c.allocation.as_ref());
    let raters = if args.raters.is_empty() {
        required(section.map(|s| s.raters.clone()), "raters")?
    } else {
        args.raters
    };
    let pool = if let Some(path) = &args.students_file {
        read_id_lines(path)?
    } else {
        let corpus = load_corpus(args.responses, None, config)?;
        corpus.students().into_iter().collect()
    };
    let pinned = match (&args.pinned_rater, &args.pinned_file) {
        (Some(rater_id), Some(path)) => Some(PinnedConstraint {
            rater_id: rater_id.clone(),
            required: read_id_lines(path)?.into_iter().collect(),
            min_overlap: args.min_overlap.unwrap_or(0),
        }),
        (None, None) => section
            .and_then(|s| s.pinned.as_ref())
            .map(|p| PinnedConstraint {
                rater_id: p.rater_id.clone(),
                required: p.required.iter().cloned().collect(),
                min_overlap: p.min_overlap,
            }),
        _ => return Err("--pinned-rater and --pinned-file go together".into()),
    };
    let design = AllocationDesign {
        raters,
        pool,
        pair_size: required(args.pair_size.or(section.map(|s| s.pair_size)), "pair-size")?,
        consensus_size: required(
            args.consensus_size.or(section.map(|s| s.consensus_size)),
            "consensus-size",
        )?,
        pinned,
    };
    let seed = seed
        .or(section.and_then(|s| s.seed))
        .unwrap_or_else(|| pipeline::derive_seed(master_seed(config), "allocate", ""));
    let allocation = design_allocation(&design, seed)?;
    let verification = verify_allocation(&allocation, &design);
    if let Some(path) = out {
        let file = File::create(&path)?;
        allocation.write_csv(file)?;
    }
    print_json(&json!({
        "seed": seed,
        "pool": design.pool.len(),
        "multi_rated": allocation.multi_rated().len(),
        "singly_assigned": allocation.singly_assigned_counts(),
        "verification": verification,
    }));
    if !verification.pass {
        return Err("allocation verification failed".into());
    }
    Ok(())
}

fn agreement(args: AgreementArgs, config: &Option<PipelineConfig>) -> CliResult<()> {
    let corpus = load_corpus(args.responses, args.scores, config)?;
    let section = config.as_ref().and_then(|c| c.agreement.as_ref());
    let pair_tokens = if args.pairs.is_empty() {
        section.map(|s| s.pairs.clone()).unwrap_or_default()
    } else {
        args.pairs
    };
    let mut pairs = Vec::new();
    for token in &pair_tokens {
        let (a, b) = token
            .split_once(':')
            .ok_or_else(|| format!("pair {token:?} is not of the form A:B"))?;
        pairs.push((RaterKey::parse(a), RaterKey::parse(b)));
    }
    let groups: Vec<Vec<RaterKey>> = if args.triples.is_empty() {
        section
            .map(|s| {
                s.groups
                    .iter()
                    .map(|g| g.iter().map(|t| RaterKey::parse(t)).collect())
                    .collect()
            })
            .unwrap_or_default()
    } else {
        args.triples
            .iter()
            .map(|t| t.split(',').map(RaterKey::parse).collect())
            .collect()
    };
    if pairs.is_empty() && groups.is_empty() {
        return Err("nothing to compare: give --pairs and/or --triple".into());
    }

    let table = reliability_table_pairs(&corpus, &pairs, &groups, scorekit::corpus::LABEL_SCALE);
    let narrative = report::narrative(&pairs, &table);
    if args.json {
        print_json(&json!({ "table": table, "narrative": narrative }));
    } else {
        let section = report::ReliabilitySection { table, narrative };
        print!("{}", report::reliability_markdown(&section));
    }
    Ok(())
}

fn split(
    args: SplitArgs,
    config: &Option<PipelineConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let corpus = load_corpus(args.responses, args.scores, config)?;
    let section = config.as_ref().and_then(|c| c.split.as_ref());
    let proportions = match &args.ratios {
        Some(text) => {
            let parts: Vec<f64> = text
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()?;
            let four: [f64; 4] = parts
                .try_into()
                .map_err(|_| "expected exactly four ratios: train,dev,test,reserve")?;
            SplitProportions(four)
        }
        None => section.map_or_else(SplitProportions::default, |s| {
            SplitProportions(s.proportions)
        }),
    };
    let seed = seed
        .or(section.and_then(|s| s.seed))
        .unwrap_or_else(|| pipeline::derive_seed(master_seed(config), "split", ""));
    let ranks = pipeline::agreement_ranks(&corpus);
    let assignment = corpus.split_dataset(&proportions, &ranks, seed)?;
    if let Some(path) = out {
        assignment.write_csv_path(&path)?;
    }
    let counts = assignment.counts();
    print_json(&json!({
        "seed": seed,
        "train": counts[Partition::Train as usize],
        "dev": counts[Partition::Dev as usize],
        "test": counts[Partition::Test as usize],
        "reserve": counts[Partition::Reserve as usize],
    }));
    Ok(())
}

fn docs_of(corpus: &Corpus) -> BTreeMap<ItemId, String> {
    corpus
        .responses()
        .map(|(item, text)| (item.clone(), text.to_string()))
        .collect()
}

fn vectorize(
    args: VectorizeArgs,
    config: &Option<PipelineConfig>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let corpus = load_corpus(args.responses, None, config)?;
    let repr = config.as_ref().and_then(|c| c.representation.as_ref());
    let min_df = args
        .min_df
        .or(repr.map(|r| r.min_df))
        .unwrap_or_else(|| TfidfConfig::default().min_df);
    let result = tfidf_vectorize(&docs_of(&corpus), None, &TfidfConfig { min_df })?;
    let out = required(out, "out")?;
    result.vectors.save(&out)?;
    print_json(&json!({
        "dim": result.vectors.dim(),
        "items": result.vectors.len(),
        "vocabulary": result.vocabulary.len(),
        "empty_docs": result.empty_docs.len(),
        "written": out.display().to_string(),
    }));
    Ok(())
}

fn wtmf(
    args: WtmfArgs,
    config: &Option<PipelineConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let corpus = load_corpus(args.responses, None, config)?;
    let repr = config.as_ref().and_then(|c| c.representation.as_ref());
    let defaults = WtmfConfig::default();
    let wtmf_config = WtmfConfig {
        dim: args.dim.or(repr.map(|r| r.dim)).unwrap_or(defaults.dim),
        lambda: args
            .lambda
            .or(repr.map(|r| r.lambda))
            .unwrap_or(defaults.lambda),
        w_missing: args
            .w_missing
            .or(repr.map(|r| r.w_missing))
            .unwrap_or(defaults.w_missing),
        sweeps: args
            .sweeps
            .or(repr.map(|r| r.sweeps))
            .unwrap_or(defaults.sweeps),
    };
    let min_df = args
        .min_df
        .or(repr.map(|r| r.min_df))
        .unwrap_or_else(|| TfidfConfig::default().min_df);
    let seed = seed
        .or(repr.and_then(|r| r.seed))
        .unwrap_or_else(|| pipeline::derive_seed(master_seed(config), "wtmf", ""));
    let model = wtmf_train(
        &docs_of(&corpus),
        &TfidfConfig { min_df },
        &wtmf_config,
        seed,
    )?;
    let vectors = model.vectors();
    let out = required(out, "out")?;
    vectors.save(&out)?;
    print_json(&json!({
        "seed": seed,
        "dim": vectors.dim(),
        "items": vectors.len(),
        "vocabulary": model.vocabulary.len(),
        "objective_initial": model.objective_trace.first(),
        "objective_final": model.objective_trace.last(),
        "written": out.display().to_string(),
    }));
    Ok(())
}

fn train(
    args: TrainArgs,
    config: &Option<PipelineConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let vectors_path = required(args.vectors, "vectors")?;
    let vectors = load_vectors(&vectors_path, None)?;
    let corpus = load_corpus(args.responses, args.scores, config)?;
    let split_path = required(args.split, "split")?;
    let split = SplitAssignment::read_csv_path(&split_path)?;

    let section = config.as_ref().and_then(|c| c.classifier.as_ref());
    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        learning_rate: args
            .learning_rate
            .or(section.map(|s| s.learning_rate))
            .unwrap_or(defaults.learning_rate),
        l2_penalty: args
            .l2_penalty
            .or(section.map(|s| s.l2_penalty))
            .unwrap_or(defaults.l2_penalty),
        max_epochs: args
            .max_epochs
            .or(section.map(|s| s.max_epochs))
            .unwrap_or(defaults.max_epochs),
        tolerance: args
            .tolerance
            .or(section.map(|s| s.tolerance))
            .unwrap_or(defaults.tolerance),
        seed: seed
            .or(section.and_then(|s| s.seed))
            .unwrap_or_else(|| pipeline::derive_seed(master_seed(config), "train", "")),
    };
    let gold = label_source(&args.rater, section.map(|s| &s.labels)).resolve(&corpus);
    let usable = split.filtered(|item| vectors.get(item).is_some() && gold.contains_key(item));
    let outcome = train_softmax(&vectors, &gold, &usable, &train_config)?;

    let test_items = usable.items_in(Partition::Test);
    let mut test_json = serde_json::Value::Null;
    if !test_items.is_empty() {
        let evaluation = evaluate(&outcome.model, &vectors, &gold, &test_items)?;
        test_json = json!({ "n_items": evaluation.n_items, "accuracy": evaluation.accuracy });
        if let Some(path) = &args.predictions {
            let mut predictions = BTreeMap::new();
            for item in &test_items {
                let x = vectors.get(item).expect("usable items have vectors");
                predictions.insert((*item).clone(), outcome.model.predict_one(x)?);
            }
            let file = File::create(path)?;
            write_predictions_csv(&predictions, file)?;
        }
    }
    if let Some(path) = &out {
        outcome.model.save(path)?;
    }
    print_json(&json!({
        "seed": train_config.seed,
        "train_items": usable.counts()[Partition::Train as usize],
        "dev_items": usable.counts()[Partition::Dev as usize],
        "epochs_run": outcome.model.epochs_run,
        "final_loss": outcome.model.final_loss,
        "dev_accuracy": outcome.dev_accuracy.last(),
        "test": test_json,
    }));
    Ok(())
}

/// Shared flag resolution for cluster/consistency.
struct ClusterSetup {
    vectors: VectorSet,
    strata: Vec<Stratum>,
    labeled: bool,
    config: ClusterConfig,
    k_flag: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn cluster_setup(
    vectors_path: Option<PathBuf>,
    responses: Option<PathBuf>,
    scores: Option<PathBuf>,
    rater: &Option<String>,
    algorithm: Option<AlgorithmArg>,
    k: Option<usize>,
    distance: Option<DistanceArg>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    config: &Option<PipelineConfig>,
) -> CliResult<ClusterSetup> {
    let vectors_path = required(
        vectors_path.or_else(|| config.as_ref().and_then(|c| c.paths.vectors.clone())),
        "vectors",
    )?;
    let vectors = load_vectors(&vectors_path, None)?;
    let section = config.as_ref().and_then(|c| c.clustering.as_ref());

    // A corpus is optional here: without one, strata fall back to per-task.
    let have_corpus_inputs = responses.is_some()
        || scores.is_some()
        || config.as_ref().is_some_and(|c| c.paths.scores.is_some());
    let corpus = if have_corpus_inputs {
        Some(load_corpus(responses, scores, config)?)
    } else {
        None
    };
    let labels = label_source(rater, section.map(|s| &s.labels));
    let (strata, labeled) = strata_for(&vectors, corpus.as_ref(), &labels);
    if strata.is_empty() {
        return Err("no non-empty strata to cluster".into());
    }

    let defaults = ClusterConfig::default();
    let cluster_config = ClusterConfig {
        algorithm: algorithm
            .map(Algorithm::from)
            .or(section.map(|s| s.algorithm))
            .unwrap_or(defaults.algorithm),
        k: None,
        distance: distance
            .map(Distance::from)
            .or(section.map(|s| s.distance))
            .unwrap_or(defaults.distance),
        max_iter: max_iter
            .or(section.map(|s| s.max_iter))
            .unwrap_or(defaults.max_iter),
        tol: tol.or(section.map(|s| s.tol)).unwrap_or(defaults.tol),
    };
    Ok(ClusterSetup {
        vectors,
        strata,
        labeled,
        config: cluster_config,
        k_flag: k.or(section.and_then(|s| s.k)),
    })
}

fn stratum_name(stratum: &Stratum, labeled: bool) -> String {
    if labeled {
        format!("{}/{}", stratum.task_id, stratum.class)
    } else {
        stratum.task_id.clone()
    }
}

fn cluster(
    args: ClusterArgs,
    config: &Option<PipelineConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let setup = cluster_setup(
        args.vectors,
        args.responses,
        args.scores,
        &args.rater,
        args.algorithm,
        args.k,
        args.distance,
        args.max_iter,
        args.tol,
        config,
    )?;
    let master = master_seed(config);
    let section_seed = config
        .as_ref()
        .and_then(|c| c.clustering.as_ref())
        .and_then(|s| s.seed);

    let mut clusterings = Vec::new();
    let mut rows = Vec::new();
    for stratum in &setup.strata {
        let name = stratum_name(stratum, setup.labeled);
        let k = setup
            .k_flag
            .map(|k| k.min(stratum.len()))
            .unwrap_or_else(|| default_k(stratum.len()));
        let run_seed = seed
            .or(section_seed)
            .unwrap_or_else(|| pipeline::derive_seed(master, "cluster", &name));
        let cluster_config = ClusterConfig {
            k: Some(k),
            ..setup.config
        };
        let clustering = run_clustering(&setup.vectors, stratum, &cluster_config, run_seed)?;
        rows.push(json!({
            "stratum": name,
            "n": stratum.len(),
            "k": k,
            "seed": run_seed,
            "iterations": clustering.iterations,
            "objective": clustering.final_objective(),
        }));
        clusterings.push(clustering);
    }
    if let Some(path) = out {
        let file = File::create(&path)?;
        write_clusters_csv(&clusterings, file)?;
    }
    print_json(&json!({ "strata": rows }));
    Ok(())
}

fn consistency(
    args: ConsistencyArgs,
    config: &Option<PipelineConfig>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let seeds = if args.seeds.is_empty() {
        config
            .as_ref()
            .and_then(|c| c.clustering.as_ref())
            .map(|s| s.consistency_seeds.clone())
            .unwrap_or_default()
    } else {
        args.seeds
    };
    if seeds.len() < 2 {
        return Err("rerun consistency needs --seeds with at least two entries".into());
    }
    let setup = cluster_setup(
        args.vectors,
        args.responses,
        args.scores,
        &args.rater,
        args.algorithm,
        args.k,
        args.distance,
        args.max_iter,
        args.tol,
        config,
    )?;

    let mut rows = Vec::new();
    let mut means = Vec::new();
    for stratum in &setup.strata {
        let k = setup
            .k_flag
            .map(|k| k.min(stratum.len()))
            .unwrap_or_else(|| default_k(stratum.len()));
        let cluster_config = ClusterConfig {
            k: Some(k),
            ..setup.config
        };
        let result = rerun_consistency(&setup.vectors, stratum, &cluster_config, &seeds, None)?;
        means.push(result.mean);
        rows.push(json!({
            "stratum": stratum_name(stratum, setup.labeled),
            "n": stratum.len(),
            "k": k,
            "seeds": result.seeds,
            "mean": result.mean,
            "pairwise": result.pairwise,
        }));
    }
    let overall = means.iter().sum::<f64>() / means.len() as f64;
    let output = json!({ "strata": rows, "mean": overall });
    if let Some(path) = out {
        fs::write(&path, serde_json::to_string_pretty(&output)? + "\n")?;
    }
    print_json(&output);
    Ok(())
}
