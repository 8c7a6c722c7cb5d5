//! Pipeline entry point: ingest, analyze, graph export, training, evaluation,
//! prediction and self-checks as subcommands.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use nextpoi::checkpoint::Checkpoint;
use nextpoi::error::Error;
use nextpoi::evaluator;
use nextpoi::graph::{build_poi_graph, EdgeWeighting, PoiGraph};
use nextpoi::ingest::{Dataset, IngestConfig, SplitTag};
use nextpoi::model::{
    build_instances, forward, Instance, LossVariant, Mode, ModelConfig,
};
use nextpoi::trainer::{self, TrainConfig, TrainOptions};

const CONFIG_ENV: &str = "NEXTPOI_CONFIG";

#[derive(Parser)]
#[command(name = "nextpoi", version, about = "Next point-of-interest recommendation pipeline")]
struct Cli {
    /// TOML config file; flags override file values. Defaults to $NEXTPOI_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a check-in TSV into a dataset container (regions, trajectories, splits).
    Ingest(IngestArgs),
    /// Emit the behavioral analysis tables for an ingested dataset.
    Analyze(AnalyzeArgs),
    /// Export the POI transition graph as an edge list.
    Graph(GraphArgs),
    /// Train the model and write checkpoint + epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Rank the next POIs for one user's latest trajectory.
    Predict(PredictArgs),
    /// Run gradient checks and structural invariants.
    Selftest(SelftestArgs),
    /// Generate a synthetic check-in TSV.
    Synth(SynthArgs),
}

/// Optional values loaded from the TOML config file. Everything here can be
/// overridden on the command line.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    ingest: IngestSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    graph: GraphSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestSection {
    k_regions: Option<usize>,
    max_len: Option<usize>,
    seed: Option<u64>,
    utc_offset_minutes: Option<i32>,
    dist_buckets: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    embedding_size: Option<usize>,
    layers: Option<usize>,
    heads: Option<usize>,
    blocks: Option<usize>,
    gcn_dropout: Option<f64>,
    sa_dropout: Option<f64>,
    loss_variant: Option<String>,
    residual: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    lr: Option<f64>,
    lambda: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphSection {
    edge_weighting: Option<String>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, Error> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) => PathBuf::from(p),
            None => return Ok(FileConfig::default()),
        },
    };
    let text = fs::read_to_string(&path)?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", path.display(), e)))
}

#[derive(Args)]
struct IngestArgs {
    /// Check-in TSV (user, poi, category, lat, lon, timestamp).
    #[arg(long)]
    input: PathBuf,
    /// Output dataset JSON.
    #[arg(long)]
    out: PathBuf,
    /// Number of k-means regions.
    #[arg(long)]
    k_regions: Option<usize>,
    /// Maximum trajectory length (longer days keep the first max-len check-ins).
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Minutes added to timestamps before assigning calendar days.
    #[arg(long)]
    utc_offset_minutes: Option<i32>,
    /// Number of log-spaced distance embedding buckets.
    #[arg(long)]
    dist_buckets: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for the per-table CSVs and the combined JSON report.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output edge-list TSV.
    #[arg(long)]
    out: PathBuf,
    /// count | binary
    #[arg(long)]
    edge_weighting: Option<String>,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Embedding dimension d.
    #[arg(long)]
    embedding_size: Option<usize>,
    /// Number of GCN layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads per block.
    #[arg(long)]
    heads: Option<usize>,
    /// Self-attention blocks per channel.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    gcn_dropout: Option<f64>,
    /// Dropout on self-attention block outputs.
    #[arg(long)]
    sa_dropout: Option<f64>,
    /// summed_bce | categorical
    #[arg(long)]
    loss_variant: Option<String>,
    /// Add residual connections around attention blocks.
    #[arg(long)]
    residual: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory (checkpoint.bin, train_log.csv, resolved_config.json).
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    lr: Option<f64>,
    /// L2 regularization coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// count | binary
    #[arg(long)]
    edge_weighting: Option<String>,
    /// Continue from an existing checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Results JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate every prefix position instead of only the final one.
    #[arg(long)]
    all_positions: bool,
    /// Seed label recorded in the result rows.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// User id as it appears in the source TSV.
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    pois_per_region: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    checkins_per_day: Option<usize>,
    #[arg(long)]
    cross_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Fully resolved settings for a training run; stored next to the outputs and
/// inside checkpoints so eval/predict reconstruct the exact model.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunSettings {
    model: ModelConfig,
    train: TrainConfig,
    edge_weighting: EdgeWeighting,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; help/version are not errors.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let file_cfg = match load_file_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e);
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd, &file_cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Checkpoint { .. } => 2,
        Error::NonFinite { .. } | Error::ShapeMismatch { .. } => 3,
    }
}

fn run(cmd: Cmd, file_cfg: &FileConfig) -> Result<(), Error> {
    match cmd {
        Cmd::Ingest(a) => cmd_ingest(a, file_cfg),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Graph(a) => cmd_graph(a, file_cfg),
        Cmd::Train(a) => cmd_train(a, file_cfg),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Selftest(a) => cmd_selftest(a),
        Cmd::Synth(a) => cmd_synth(a),
    }
}

fn parse_edge_weighting(
    flag: Option<&str>,
    file: Option<&str>,
) -> Result<EdgeWeighting, Error> {
    match flag.or(file) {
        Some(s) => s.parse(),
        None => Ok(EdgeWeighting::Count),
    }
}

fn cmd_ingest(a: IngestArgs, fc: &FileConfig) -> Result<(), Error> {
    let defaults = IngestConfig::default();
    let config = IngestConfig {
        k_regions: a.k_regions.or(fc.ingest.k_regions).unwrap_or(defaults.k_regions),
        max_len: a.max_len.or(fc.ingest.max_len).unwrap_or(defaults.max_len),
        seed: a.seed.or(fc.ingest.seed).unwrap_or(defaults.seed),
        utc_offset_minutes: a
            .utc_offset_minutes
            .or(fc.ingest.utc_offset_minutes)
            .unwrap_or(defaults.utc_offset_minutes),
        num_dist_buckets: a
            .dist_buckets
            .or(fc.ingest.dist_buckets)
            .unwrap_or(defaults.num_dist_buckets),
        ..defaults
    };
    let ds = nextpoi::ingest::ingest_file(&a.input, &config)?;
    ds.save(&a.out)?;
    write_json(&sibling(&a.out, "config.json"), &config)?;
    let count = |tag| ds.split(tag).count();
    println!(
        "ingested {} users, {} POIs, {} categories, {} regions",
        ds.vocab.users.len(),
        ds.num_pois(),
        ds.num_categories(),
        ds.num_regions()
    );
    println!(
        "trajectories: {} train / {} validation / {} test ({} malformed lines of {})",
        count(SplitTag::Train),
        count(SplitTag::Validation),
        count(SplitTag::Test),
        ds.malformed_lines,
        ds.parsed_lines
    );
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Error> {
    let ds = Dataset::load(&a.dataset)?;
    let report = nextpoi::analysis::analyze(&ds);
    report.write_csv_dir(&a.out_dir)?;
    let f = fs::File::create(a.out_dir.join("report.json"))?;
    report.write_json(f)?;
    println!("wrote {} tables to {}", report.tables.len(), a.out_dir.display());
    Ok(())
}

fn cmd_graph(a: GraphArgs, fc: &FileConfig) -> Result<(), Error> {
    let ds = Dataset::load(&a.dataset)?;
    let weighting =
        parse_edge_weighting(a.edge_weighting.as_deref(), fc.graph.edge_weighting.as_deref())?;
    let graph = build_graph(&ds, weighting)?;
    let f = fs::File::create(&a.out)?;
    graph.export_edges(f)?;
    println!(
        "graph: {} POIs, {} directed edges, propagation nnz {}",
        graph.num_pois,
        graph.adjacency.nnz(),
        graph.propagation.nnz()
    );
    Ok(())
}

fn build_graph(ds: &Dataset, weighting: EdgeWeighting) -> Result<PoiGraph, Error> {
    build_poi_graph(ds.split(SplitTag::Train), ds.num_pois(), weighting)
}

fn resolve_settings(a: &TrainArgs, fc: &FileConfig, ds: &Dataset) -> Result<RunSettings, Error> {
    let m = &a.model;
    let loss_variant: LossVariant = match m
        .loss_variant
        .as_deref()
        .or(fc.model.loss_variant.as_deref())
    {
        Some(s) => s.parse()?,
        None => LossVariant::SummedBce,
    };
    let model = ModelConfig {
        embedding_dim: m.embedding_size.or(fc.model.embedding_size).unwrap_or(180),
        gcn_layers: m.layers.or(fc.model.layers).unwrap_or(1),
        attn_blocks: m.blocks.or(fc.model.blocks).unwrap_or(1),
        attn_heads: m.heads.or(fc.model.heads).unwrap_or(1),
        gcn_dropout: m.gcn_dropout.or(fc.model.gcn_dropout).unwrap_or(0.5),
        attn_dropout: m.sa_dropout.or(fc.model.sa_dropout).unwrap_or(0.5),
        max_len: ds.config.max_len,
        num_pois: ds.num_pois(),
        num_regions: ds.num_regions(),
        num_categories: ds.num_categories(),
        num_dist_buckets: ds.config.num_dist_buckets,
        loss_variant,
        residual: m.residual || fc.model.residual.unwrap_or(false),
    };
    let d = TrainConfig::default();
    let train = TrainConfig {
        lr: a.lr.or(fc.train.lr).unwrap_or(d.lr),
        lambda: a.lambda.or(fc.train.lambda).unwrap_or(d.lambda),
        batch_size: a.batch_size.or(fc.train.batch_size).unwrap_or(d.batch_size),
        max_epochs: a.max_epochs.or(fc.train.max_epochs).unwrap_or(d.max_epochs),
        patience: a.patience.or(fc.train.patience).unwrap_or(d.patience),
        seed: a.seed.or(fc.train.seed).unwrap_or(d.seed),
    };
    let edge_weighting =
        parse_edge_weighting(a.edge_weighting.as_deref(), fc.graph.edge_weighting.as_deref())?;
    Ok(RunSettings {
        model,
        train,
        edge_weighting,
    })
}

fn cmd_train(a: TrainArgs, fc: &FileConfig) -> Result<(), Error> {
    let ds = Dataset::load(&a.dataset)?;
    let settings = resolve_settings(&a, fc, &ds)?;
    settings.model.validate()?;
    fs::create_dir_all(&a.out_dir)?;
    write_json(&a.out_dir.join("resolved_config.json"), &settings)?;

    let graph = build_graph(&ds, settings.edge_weighting)?;
    let checkpoint_path = a.out_dir.join("checkpoint.bin");
    let log_path = a.out_dir.join("train_log.csv");

    let resume = if a.resume {
        Some(Checkpoint::load(&checkpoint_path)?)
    } else {
        None
    };
    let mut log: Box<dyn Write> = if a.resume {
        Box::new(fs::OpenOptions::new().append(true).create(true).open(&log_path)?)
    } else {
        Box::new(fs::File::create(&log_path)?)
    };

    let outcome = trainer::train(
        &ds.trajectories,
        &ds.dist_bucket_edges,
        &graph,
        &settings.model,
        &settings.train,
        TrainOptions {
            log: Some(&mut log),
            checkpoint_path: Some(&checkpoint_path),
            resume,
            config_json: serde_json::to_string(&settings)?,
        },
    )?;
    println!(
        "trained {} epochs; best validation NDCG@10 {:.4} at epoch {}{}",
        outcome.history.last().map(|s| s.epoch).unwrap_or(0),
        outcome.best_ndcg,
        outcome.best_epoch,
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

fn test_instances(ds: &Dataset, all_positions: bool) -> Vec<Instance> {
    ds.split(SplitTag::Test)
        .flat_map(|t| build_instances(t, &ds.dist_bucket_edges, all_positions))
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let ds = Dataset::load(&a.dataset)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let settings: RunSettings = serde_json::from_str(&ck.config_json)?;
    let graph = build_graph(&ds, settings.edge_weighting)?;
    let instances = test_instances(&ds, a.all_positions);
    if instances.is_empty() {
        return Err(Error::data("no test instances to evaluate"));
    }
    let seed = a.seed.unwrap_or(settings.train.seed);
    let model_summary = evaluator::evaluate(
        &ck.best_params,
        &graph,
        &instances,
        &settings.model,
        &[5, 10],
        seed,
        settings.train.batch_size,
    )?;
    let train: Vec<_> = ds.split(SplitTag::Train).collect();
    let pop = evaluator::mostpop_scores(train.into_iter(), ds.num_pois());
    let mostpop_summary = evaluator::evaluate_mostpop(&pop, &instances, &[5, 10]);

    let results = serde_json::json!({
        "model": model_summary.rows,
        "mostpop": mostpop_summary.rows,
        "all_positions": a.all_positions,
        "instances": instances.len(),
    });
    let f = fs::File::create(&a.out)?;
    serde_json::to_writer_pretty(f, &results)?;
    write_json(&sibling(&a.out, "config.json"), &settings)?;

    for (name, summary) in [("model", &model_summary), ("mostpop", &mostpop_summary)] {
        for metric in ["hr@5", "hr@10", "ndcg@5", "ndcg@10"] {
            if let Some(v) = summary.get(metric, "entire", "poi") {
                println!("{:7} {:8} poi  {:.4}", name, metric, v);
            }
        }
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), Error> {
    let ds = Dataset::load(&a.dataset)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let settings: RunSettings = serde_json::from_str(&ck.config_json)?;
    let graph = build_graph(&ds, settings.edge_weighting)?;

    let user = ds
        .vocab
        .users
        .lookup(&a.user)
        .ok_or_else(|| Error::data(format!("unknown user '{}'", a.user)))?;
    let latest = ds
        .trajectories
        .iter()
        .filter(|t| t.user == user)
        .max_by_key(|t| t.day)
        .ok_or_else(|| Error::data(format!("user '{}' has no trajectories", a.user)))?;

    // Use the whole latest trajectory as the observed prefix; the "target"
    // fields are placeholders and do not influence the scores.
    let prefix_len = latest.len();
    let instance = Instance {
        user,
        poi: latest.pois.clone(),
        region: latest.regions.clone(),
        category: latest.categories.clone(),
        hour: latest.hours.clone(),
        dist_loc_bucket: latest
            .poi_dist_km
            .iter()
            .map(|&d| ds.dist_bucket(d))
            .collect(),
        dist_reg_bucket: latest
            .region_dist_km
            .iter()
            .map(|&d| ds.dist_bucket(d))
            .collect(),
        prefix_len,
        group: nextpoi::model::group_of_prefix(&latest.regions),
        target_poi: 0,
        target_region: 0,
        target_category: 0,
    };
    let mut tape = nextpoi::Tape::new();
    let (_, out) = forward(
        &mut tape,
        &ck.best_params,
        &graph,
        &[instance],
        &settings.model,
        &mut Mode::Eval,
    )?;
    let probs = tape.value(out.poi_probs).row(0).to_vec();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&x, &y| probs[y].partial_cmp(&probs[x]).unwrap().then(x.cmp(&y)));
    let top: Vec<serde_json::Value> = order
        .iter()
        .take(a.top_n)
        .enumerate()
        .map(|(rank, &poi)| {
            serde_json::json!({
                "rank": rank + 1,
                "poi": ds.vocab.pois.name(poi),
                "score": probs[poi],
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "user": a.user,
        "day": latest.day,
        "prefix": latest.pois.iter().map(|&p| ds.vocab.pois.name(p)).collect::<Vec<_>>(),
        "top": top,
    }))?);
    Ok(())
}

fn cmd_selftest(a: SelftestArgs) -> Result<(), Error> {
    let mut failed = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {} ({})", if ok { "PASS" } else { "FAIL" }, name, detail);
        if !ok {
            failed += 1;
        }
    };

    for report in nextpoi::gradcheck::check_all_ops(a.seed)? {
        check(
            &format!("gradcheck {}", report.name),
            report.passed(),
            format!("max rel err {:.2e}", report.max_err),
        );
    }

    // Structural invariants on a small synthetic corpus.
    let synth_cfg = nextpoi::synth::SynthConfig {
        users: 12,
        regions: 4,
        pois_per_region: 4,
        categories: 3,
        days: 8,
        checkins_per_day: 4,
        cross_prob: 0.3,
        seed: a.seed,
    };
    let mut tsv = Vec::new();
    nextpoi::synth::write_tsv(&synth_cfg, &mut tsv)?;
    let ingest_cfg = IngestConfig {
        k_regions: 4,
        seed: a.seed,
        ..IngestConfig::default()
    };
    let ds = nextpoi::ingest::ingest(std::io::Cursor::new(tsv), &ingest_cfg)?;
    let graph = build_graph(&ds, EdgeWeighting::Count)?;

    let max_row_err = (0..graph.num_pois)
        .map(|r| (graph.propagation.row(r).1.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    check(
        "propagation row-stochastic",
        max_row_err < 1e-9,
        format!("max row-sum error {:.2e}", max_row_err),
    );

    let dense = graph.propagation_dense();
    let sparse_err = {
        let h = nextpoi::Tensor::from_rows(
            &(0..graph.num_pois)
                .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0).collect())
                .collect::<Vec<_>>(),
        );
        let dense_out = dense.matmul(&h).unwrap();
        let sparse_out = graph.propagation.matmul_dense(&h);
        let mut err = 0.0f64;
        for (x, y) in dense_out.data().iter().zip(sparse_out.data()) {
            err = err.max((x - y).abs());
        }
        err
    };
    check(
        "sparse propagation matches dense",
        sparse_err < 1e-12,
        format!("max abs diff {:.2e}", sparse_err),
    );

    // Model invariants: softmax heads sum to 1, padding is inert.
    let mcfg = ModelConfig {
        embedding_dim: 8,
        gcn_layers: 1,
        attn_blocks: 1,
        attn_heads: 1,
        gcn_dropout: 0.0,
        attn_dropout: 0.0,
        max_len: ds.config.max_len,
        num_pois: ds.num_pois(),
        num_regions: ds.num_regions(),
        num_categories: ds.num_categories(),
        num_dist_buckets: ds.config.num_dist_buckets,
        loss_variant: LossVariant::SummedBce,
        residual: false,
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(a.seed);
    let params = nextpoi::model::init_params(&mcfg, &mut rng)?;
    let instances = test_instances(&ds, false);
    let mut tape = nextpoi::Tape::new();
    let (_, out) = forward(&mut tape, &params, &graph, &instances, &mcfg, &mut Mode::Eval)?;
    let mut softmax_err = 0.0f64;
    for probs in [out.poi_probs, out.region_probs, out.category_probs] {
        let t = tape.value(probs);
        for r in 0..t.rows() {
            softmax_err = softmax_err.max((t.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    check(
        "softmax heads sum to one",
        softmax_err < 1e-9,
        format!("max row-sum error {:.2e}", softmax_err),
    );

    let padded: Vec<Instance> = instances.iter().map(|i| i.clone().with_padding(2)).collect();
    let mut tape2 = nextpoi::Tape::new();
    let (_, out2) = forward(&mut tape2, &params, &graph, &padded, &mcfg, &mut Mode::Eval)?;
    let mut pad_err = 0.0f64;
    for (x, y) in tape
        .value(out.poi_probs)
        .data()
        .iter()
        .zip(tape2.value(out2.poi_probs).data())
    {
        pad_err = pad_err.max((x - y).abs());
    }
    check(
        "padding leaves outputs unchanged",
        pad_err <= 1e-9,
        format!("max abs diff {:.2e}", pad_err),
    );

    if failed > 0 {
        return Err(Error::non_finite(format!("{} selftest check(s) failed", failed)));
    }
    println!("all checks passed");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let d = nextpoi::synth::SynthConfig::default();
    let cfg = nextpoi::synth::SynthConfig {
        users: a.users.unwrap_or(d.users),
        regions: a.regions.unwrap_or(d.regions),
        pois_per_region: a.pois_per_region.unwrap_or(d.pois_per_region),
        categories: a.categories.unwrap_or(d.categories),
        days: a.days.unwrap_or(d.days),
        checkins_per_day: a.checkins_per_day.unwrap_or(d.checkins_per_day),
        cross_prob: a.cross_prob.unwrap_or(d.cross_prob),
        seed: a.seed.unwrap_or(d.seed),
    };
    let f = fs::File::create(&a.out)?;
    nextpoi::synth::write_tsv(&cfg, f)?;
    write_json(&sibling(&a.out, "config.json"), &cfg)?;
    println!(
        "wrote {} check-ins to {}",
        cfg.users * cfg.days * cfg.checkins_per_day,
        a.out.display()
    );
    Ok(())
}

/// `path` with an extra extension appended (e.g. `out.json` -> `out.json.config.json`).
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let f = fs::File::create(path)?;
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}
