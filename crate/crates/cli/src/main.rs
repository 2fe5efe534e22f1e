//! `dropprof`: train small transformers, run Monte Carlo dropout sweeps and
//! report robustness statistics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dropprof::io::write_atomic;
use dropprof::mc_eval::{
    mc_run, run_level_accuracy, summarize, verify, PredictionMatrix, DEFAULT_PASSES,
};
use dropprof::model::{Checkpoint, DropoutConfig, Family, Pooling};
use dropprof::report::{audit, ReportBundle};
use dropprof::stats::{within_model_comparisons, SummaryRecord, DEFAULT_ALPHA};
use dropprof::sweep::{
    encode_for, prepare_split, report_from_dir, run_sweep, train_model, CorpusSource, ModelSpec,
    Seeds, SweepManifest, DEFAULT_MAX_SEQ_LEN, DEFAULT_SEED, DEFAULT_TRAIN_FRACTION, MANIFEST_FILE,
};
use dropprof::tasks::{
    domain_count, ingest, label_counts, write_samples, Domain, Vocabulary, INGEST_FORMAT_VERSION,
};
use dropprof::trainer::{evaluate_plain, TrainConfig};

#[derive(Parser)]
#[command(
    name = "dropprof",
    version,
    about = "Monte Carlo dropout robustness profiling for small transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) a models × dropout-configs sweep.
    Sweep(SweepArgs),
    /// Generate or ingest a corpus and write the stratified split.
    GenerateData(DataArgs),
    /// Build and train one model on a split.
    Train(TrainArgs),
    /// Run MC dropout evaluation and write a prediction matrix.
    McEval(McEvalArgs),
    /// Summaries and corrected deterministic-vs-dropout tests over matrices.
    Stats(StatsArgs),
    /// Re-render tables and figures of a sweep and audit them.
    Report(ReportArgs),
    /// Replay a stored prediction matrix and check it bit for bit.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Manifest file; built from the flags below when absent.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output root; the sweep goes in <out>/<sweep id>.
    #[arg(long, env = "DROPPROF_OUT", default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "desk")]
    sweep_id: String,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// `desk` (2 models), `roster` (19 models) or comma-separated
    /// `id:family[:layers:heads:d_model:d_ffn]`.
    #[arg(long, default_value = "desk")]
    models: String,
    /// Comma-separated preset names or `name=attention/ffn`.
    #[arg(
        long,
        default_value = "deterministic,baseline,high_attention,high_ffn,high_both"
    )]
    configs: String,
    /// Bonferroni family size; defaults to the number of tests run.
    #[arg(long)]
    family_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Peak learning rate.
    #[arg(long, default_value_t = TrainConfig::DESK_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Continue an existing sweep directory, skipping evaluated cells.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct CorpusArgs {
    /// Ingestion-format corpus instead of the synthetic generator.
    #[arg(long)]
    ingest: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    memory: usize,
    #[arg(long, default_value_t = 500)]
    reasoning: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    fraction: f64,
}

impl CorpusArgs {
    fn source(&self) -> CorpusSource {
        match &self.ingest {
            Some(path) => CorpusSource::Ingest { path: path.clone() },
            None => CorpusSource::Synthetic {
                memory: self.memory,
                reasoning: self.reasoning,
            },
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory for train.jsonl and test.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.jsonl and test.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the history goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "encoder")]
    family: Family,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 96)]
    d_model: usize,
    #[arg(long, default_value_t = 192)]
    d_ffn: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SEQ_LEN)]
    max_seq_len: usize,
    /// Weight init std; 1/sqrt(d_model) when absent.
    #[arg(long)]
    init_std: Option<f64>,
    /// cls, mean or last_token; the family default when absent.
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long, default_value_t = TrainConfig::DESK_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 0.10)]
    warmup_fraction: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    train_batch: usize,
    #[arg(long, default_value_t = 32)]
    eval_batch: usize,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    /// Dropout preset active during training.
    #[arg(long, default_value = "baseline")]
    train_dropout: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct McEvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ingestion-format test file.
    #[arg(long)]
    test: PathBuf,
    /// Preset name or `name=attention/ffn`.
    #[arg(long, default_value = "baseline")]
    config: String,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
    /// Base seed; pass m uses stream m.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Prediction matrices; the model id is the file-name part before `__`.
    #[arg(required = true)]
    matrices: Vec<PathBuf>,
    /// Bonferroni family size; defaults to the number of tests run.
    #[arg(long)]
    family_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Write comparison records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep directory (holding manifest.jsonl).
    #[arg(long)]
    sweep: PathBuf,
    /// Override the timestamp stamped into the tables.
    #[arg(long)]
    timestamp: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::GenerateData(a) => generate_data(a),
        Command::Train(a) => train(a),
        Command::McEval(a) => mc_eval(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn parse_config(spec: &str) -> Result<DropoutConfig> {
    if let Some((name, rates)) = spec.split_once('=') {
        let (a, f) = rates
            .split_once('/')
            .with_context(|| format!("dropout config `{spec}` should look like name=0.3/0.1"))?;
        return Ok(DropoutConfig::new(
            name,
            a.trim().parse()?,
            f.trim().parse()?,
        )?);
    }
    DropoutConfig::by_name(spec.trim()).with_context(|| format!("unknown dropout preset `{spec}`"))
}

fn parse_models(spec: &str, seed: u64) -> Result<Vec<ModelSpec>> {
    match spec {
        "desk" => return Ok(SweepManifest::desk("x", "", seed)?.models),
        "roster" => return Ok(SweepManifest::roster_grid("x", "", seed)?.models),
        _ => {}
    }
    spec.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let family: Family = parts
                .get(1)
                .with_context(|| format!("model `{item}` needs id:family"))?
                .parse()?;
            let mut m = ModelSpec::desk(parts[0], family);
            match parts.len() {
                2 => {}
                6 => {
                    let n = |i: usize| -> Result<usize> {
                        parts[i]
                            .parse()
                            .with_context(|| format!("bad number `{}` in `{item}`", parts[i]))
                    };
                    (m.layers, m.heads, m.d_model, m.d_ffn) = (n(2)?, n(3)?, n(4)?, n(5)?);
                    m.init_std = Some(1.0 / (m.d_model as f64).sqrt());
                }
                _ => bail!(
                    "model `{item}` should be id:family or id:family:layers:heads:d_model:d_ffn"
                ),
            }
            Ok(m)
        })
        .collect()
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let manifest = match &a.manifest {
        Some(path) => {
            SweepManifest::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => {
            let configs = a
                .configs
                .split(',')
                .map(parse_config)
                .collect::<Result<Vec<_>>>()?;
            let mut m = SweepManifest::new(
                &a.sweep_id,
                &now(),
                parse_models(&a.models, a.seed)?,
                configs,
                a.passes,
                Seeds::all(a.seed),
            )?;
            m.corpus = a.corpus.source();
            m.train_fraction = a.corpus.fraction;
            m.train.learning_rate = a.lr;
            m.train.epochs = a.epochs;
            m.family_size = a.family_size;
            m.alpha = a.alpha;
            m.validate()?;
            m
        }
    };
    eprintln!(
        "sweep {}: {} cells",
        manifest.sweep_id,
        manifest.cell_count()
    );
    let outcome = run_sweep(manifest, &a.out, a.resume, &mut |line| eprintln!("{line}"))?;
    println!(
        "{}: {} evaluated, {} skipped, {} failed, {} trained",
        outcome.dir.display(),
        outcome.evaluated,
        outcome.skipped,
        outcome.failed.len(),
        outcome.trained.len()
    );
    for (model, config, err) in &outcome.failed {
        eprintln!("failed {model}/{config}: {err}");
    }
    Ok(if outcome.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn generate_data(a: DataArgs) -> Result<ExitCode> {
    let split = prepare_split(&a.corpus.source(), a.corpus.fraction, a.seed)?;
    let all: Vec<_> = split.train.iter().chain(&split.test).cloned().collect();
    write_atomic(
        &a.out.join("train.jsonl"),
        write_samples(&split.train)?.as_bytes(),
    )?;
    write_atomic(
        &a.out.join("test.jsonl"),
        write_samples(&split.test)?.as_bytes(),
    )?;
    for d in Domain::ALL {
        let (pos, neg) = label_counts(&all, d);
        println!(
            "{d}: {} train / {} test ({pos} true, {neg} false)",
            domain_count(&split.train, d),
            domain_count(&split.test, d)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn load_samples(path: &Path) -> Result<Vec<dropprof::tasks::Sample>> {
    Ok(ingest(path, INGEST_FORMAT_VERSION)
        .with_context(|| format!("reading {}", path.display()))?
        .samples)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let train_samples = load_samples(&a.data.join("train.jsonl"))?;
    let test_samples = load_samples(&a.data.join("test.jsonl"))?;
    let pooling = a
        .pooling
        .as_deref()
        .map(|p| match p {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            "last_token" => Ok(Pooling::LastToken),
            other => Err(anyhow::anyhow!("unknown pooling `{other}`")),
        })
        .transpose()?;
    let spec = ModelSpec {
        id: "model".into(),
        family: a.family,
        layers: a.layers,
        heads: a.heads,
        d_model: a.d_model,
        d_ffn: a.d_ffn,
        max_seq_len: a.max_seq_len,
        init_std: Some(a.init_std.unwrap_or(1.0 / (a.d_model as f64).sqrt())),
        pooling,
        init_seed: None,
    };
    let config = TrainConfig {
        learning_rate: a.lr,
        warmup_fraction: a.warmup_fraction,
        epochs: a.epochs,
        train_batch: a.train_batch,
        eval_batch: a.eval_batch,
        clip_norm: a.clip_norm,
        weight_decay: a.weight_decay,
        train_dropout: parse_config(&a.train_dropout)?,
        seed: a.seed,
    };
    let vocab = Vocabulary::build(&train_samples)?;
    let train_set = vocab.encode(&train_samples, a.max_seq_len)?;
    let (ckpt, history) = train_model(&spec, &vocab, &train_set, &config, a.seed)?;
    ckpt.save(&a.out)?;
    history.save(a.out.with_extension("history.jsonl"))?;
    for e in &history.epochs {
        println!(
            "epoch {}: loss {:.4} accuracy {:.3}",
            e.epoch, e.loss, e.accuracy
        );
    }
    let test_set = encode_for(&ckpt, &test_samples)?;
    println!(
        "train accuracy {:.3}, test accuracy {:.3}, digest {}",
        evaluate_plain(&ckpt, &train_set)?,
        evaluate_plain(&ckpt, &test_set)?,
        ckpt.digest()?
    );
    Ok(ExitCode::SUCCESS)
}

fn mc_eval(a: McEvalArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let test = encode_for(&ckpt, &load_samples(&a.test)?)?;
    let config = parse_config(&a.config)?;
    let pm = mc_run(&ckpt, &test, &config, a.passes, a.seed)?;
    pm.save(&a.out)?;
    println!("{}", serde_json::to_string(&summarize(&pm))?);
    Ok(ExitCode::SUCCESS)
}

fn model_id(path: &Path, pm: &PredictionMatrix) -> String {
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    match stem.split_once("__") {
        Some((id, _)) => id.to_owned(),
        None => pm.checkpoint_digest.chars().take(12).collect(),
    }
}

fn stats(a: StatsArgs) -> Result<ExitCode> {
    let mut by_model: BTreeMap<String, Vec<(DropoutConfig, Vec<f64>)>> = BTreeMap::new();
    let mut lines = Vec::new();
    for path in &a.matrices {
        let (pm, warnings) =
            PredictionMatrix::load(path).with_context(|| format!("reading {}", path.display()))?;
        for w in warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        let id = model_id(path, &pm);
        let record = SummaryRecord {
            model_id: id.clone(),
            family: None,
            config: pm.dropout.clone(),
            summary: summarize(&pm),
        };
        lines.push(serde_json::to_string(&record)?);
        by_model
            .entry(id)
            .or_default()
            .push((pm.dropout.clone(), run_level_accuracy(&pm).overall));
    }
    let testable: Vec<_> = by_model
        .into_iter()
        .filter(|(_, runs)| runs.iter().any(|(c, _)| c.name == "deterministic") && runs.len() >= 2)
        .collect();
    let tests: usize = testable.iter().map(|(_, r)| r.len() - 1).sum();
    let family = a.family_size.unwrap_or(tests.max(1));
    for (id, runs) in &testable {
        for c in within_model_comparisons(id, runs, family, a.alpha)? {
            lines.push(serde_json::to_string(&c)?);
        }
    }
    let text = lines.join("\n") + "\n";
    match &a.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let mut manifest = SweepManifest::load(a.sweep.join(MANIFEST_FILE))?;
    if let Some(t) = a.timestamp {
        manifest.created_at = t;
    }
    let Some(bundle) = report_from_dir(&manifest, &a.sweep)? else {
        bail!("no evaluated cells in {}", a.sweep.display());
    };
    let docs = bundle.render()?;
    let findings = audit(&bundle, &docs);
    for d in &docs {
        println!("{}", a.sweep.join(&d.path).display());
    }
    for f in &findings {
        eprintln!("audit: {}: {}", f.path, f.detail);
    }
    // The written bundle must reload to the same report.
    if ReportBundle::load(&a.sweep)? != bundle {
        bail!("bundle did not round-trip");
    }
    Ok(if findings.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn verify_cmd(a: VerifyArgs) -> Result<ExitCode> {
    let (pm, warnings) = PredictionMatrix::load(&a.matrix)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let test = encode_for(&ckpt, &load_samples(&a.test)?)?;
    let mismatches = verify(&pm, &ckpt, &test)?;
    if mismatches.is_empty() {
        println!(
            "ok: {} passes × {} samples reproduce bit for bit",
            pm.passes(),
            pm.n_samples()
        );
        return Ok(ExitCode::SUCCESS);
    }
    for m in &mismatches {
        println!("mismatch: {m}");
    }
    println!("{} mismatching cells", mismatches.len());
    Ok(ExitCode::FAILURE)
}
