//! Command implementations behind the CLI.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mtam_core::baselines::{PersonalPop, TopPop};
use mtam_core::data::{filter_and_index, split_sequences, Behavior, DatasetSplit, TrainingExample};
use mtam_core::gradcheck::{run_suites, Scope, SuiteRow, TOLERANCE};
use mtam_core::metrics::{MetricReport, Scorer};
use mtam_core::model::{hop_residual_gap, recommend_topk, ModelConfig, ModelParams};
use mtam_core::rng::SeedStreams;
use mtam_core::synthetic::TemporalTask;
use mtam_core::tape::OpKind;
use mtam_core::train::{train, Optimizer, TrainConfig, TrainReport};

use crate::artifact::{read_split, write_split, DatasetManifest, StatsRecord};
use crate::checkpoint::{self, Checkpoint};
use crate::cli::{
    Baseline, Cli, Command, EvalArgs, GradcheckArgs, ModelArgs, OptimArgs, PreprocessArgs,
    RecommendArgs, SplitName, SweepArgs, SynthArgs, TrainArgs,
};
use crate::config::{parse_variant, ModelConfigRecord, TrainConfigRecord};
use crate::error::{CliError, Result};
use crate::eval::{default_threads, evaluate, ModelScorer};
use crate::ingest::{read_events, write_events, IngestOptions};
use crate::report::{format_metrics, format_trace, render_metrics, write_echo, write_text};

/// `path` with `.suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn threads(n: usize) -> usize {
    if n == 0 {
        default_threads()
    } else {
        n
    }
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelConfigRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfigRecord>,
}

fn echo<A: Serialize>(
    path: &Path,
    command: &str,
    args: &A,
    model: Option<&ModelConfig>,
    train: Option<&TrainConfig>,
) -> Result<()> {
    write_echo(
        path,
        &Echo {
            command,
            args,
            model: model.map(Into::into),
            train: train.map(Into::into),
        },
    )
}

#[derive(Clone, Debug)]
pub struct PreprocessOutcome {
    pub manifest: DatasetManifest,
    pub rows: usize,
    pub malformed: usize,
}

pub fn preprocess(a: &PreprocessArgs) -> Result<PreprocessOutcome> {
    let ingested = read_events(
        &a.input,
        IngestOptions {
            max_malformed_fraction: a.max_malformed,
        },
    )?;
    let mut log = ingested.log;
    if let Some(f) = a.sample_users {
        log = log.sample_users(f, &mut SeedStreams::new(a.seed).stream("sample"))?;
    }
    let data = filter_and_index(&log, a.min_user_len, a.min_item_count)?;
    if data.vocab.users.is_empty() {
        return Err(CliError::Data(
            "no user survives the length and item-count filters".into(),
        ));
    }
    let mut split = split_sequences(data)?;
    if a.holdout_validation {
        split.hold_out_validation();
    }
    let manifest = write_split(&a.output, &split)?;
    echo(
        &a.output.join("preprocess.json"),
        "preprocess",
        a,
        None,
        None,
    )?;
    Ok(PreprocessOutcome {
        manifest,
        rows: ingested.rows,
        malformed: ingested.malformed.len(),
    })
}

/// Table with the columns `#user #item #cat avg.behaviors density`.
pub fn render_stats(s: &StatsRecord) -> String {
    format!(
        "{:>8} {:>8} {:>6} {:>14} {:>10}\n{:>8} {:>8} {:>6} {:>14.2} {:>10.6}\n",
        "#user",
        "#item",
        "#cat",
        "avg.behaviors",
        "density",
        s.users,
        s.items,
        s.categories,
        s.avg_behaviors,
        s.density
    )
}

pub fn model_config(m: &ModelArgs, split: &DatasetSplit) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        d: m.d,
        n_items: split.n_items(),
        n_categories: split.n_categories(),
        max_len: m.max_len,
        capacity: m.capacity,
        hops: m.hops,
        variant: parse_variant(&m.variant)?,
        time_divisor: m.time_divisor,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(o: &OptimArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        lr0: o.lr,
        decay: o.decay,
        decay_every: o.decay_every,
        l2: o.l2,
        dropout: o.dropout,
        batch_size: o.batch_size,
        epochs: o.epochs,
        min_rel_improvement: o.min_rel_improvement,
        seed: o.seed,
        optimizer: if o.adam {
            Optimizer::adam()
        } else {
            Optimizer::Sgd
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Initializes from `train.seed` and trains.
pub fn fit(
    split: &DatasetSplit,
    model: ModelConfig,
    cfg: &TrainConfig,
    log_every: usize,
) -> Result<(ModelParams, TrainReport)> {
    let mut params = ModelParams::init(model, cfg.seed)?;
    let report = train(&mut params, split, cfg, |row| {
        if log_every > 0 && row.iteration % log_every == 0 {
            eprintln!(
                "epoch {} iter {} lr {:.3e} loss {:.6} |g| {:.3e}",
                row.epoch, row.iteration, row.lr, row.loss, row.grad_norm
            );
        }
    })?;
    Ok((params, report))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// SHA-256 of the checkpoint file.
    pub digest: String,
    pub report: TrainReport,
}

fn checkpoint_for(params: ModelParams, cfg: &TrainConfig, split: &DatasetSplit) -> Checkpoint {
    Checkpoint {
        params,
        train: Some(cfg.into()),
        items: split.data.vocab.items.clone(),
        categories: split.data.vocab.categories.clone(),
    }
}

pub fn run_train(a: &TrainArgs) -> Result<TrainOutcome> {
    let split = read_split(&a.data)?;
    let model = model_config(&a.model, &split)?;
    let cfg = train_config(&a.optim)?;
    echo(
        &sidecar(&a.out, "config.json"),
        "train",
        a,
        Some(&model),
        Some(&cfg),
    )?;
    let (params, report) = fit(&split, model, &cfg, a.log_every)?;
    let digest = checkpoint::save(&a.out, &checkpoint_for(params, &cfg, &split))?;
    write_text(&sidecar(&a.out, "trace.tsv"), &format_trace(&report.trace))?;
    Ok(TrainOutcome { digest, report })
}

fn examples(split: &DatasetSplit, which: SplitName) -> Result<Vec<TrainingExample<'_>>> {
    let ex: Vec<_> = match which {
        SplitName::Test => split.test_examples().collect(),
        SplitName::Valid => split.valid_examples().collect(),
    };
    if ex.is_empty() {
        return Err(CliError::Data(format!(
            "the {} split is empty",
            match which {
                SplitName::Test => "test",
                SplitName::Valid => "validation",
            }
        )));
    }
    Ok(ex)
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub source: String,
    pub report: MetricReport,
}

pub fn run_eval(a: &EvalArgs) -> Result<EvalOutcome> {
    let split = read_split(&a.data)?;
    let ex = examples(&split, a.split)?;
    let n = threads(a.threads);
    let (source, report) = match (&a.ckpt, a.baseline) {
        (Some(path), _) => {
            let ckpt = checkpoint::load(path)?;
            ckpt.check_vocab(&split.data.vocab.items, &split.data.vocab.categories)?;
            let scorer = ModelScorer {
                params: &ckpt.params,
            };
            let source = format!("model/{}", ckpt.params.config.variant);
            (source, evaluate(&scorer, &ex, &a.k, n)?)
        }
        (None, Some(b)) => {
            let scorer: Box<dyn Scorer + Sync> = match b {
                Baseline::TopPop => Box::new(TopPop::fit(&split)?),
                Baseline::PPop => Box::new(PersonalPop::fit(&split)?),
            };
            let source = match b {
                Baseline::TopPop => "top-pop",
                Baseline::PPop => "p-pop",
            };
            (source.to_string(), evaluate(scorer.as_ref(), &ex, &a.k, n)?)
        }
        (None, None) => return Err(CliError::Usage("eval needs --ckpt or --baseline".into())),
    };
    if let Some(out) = &a.out {
        write_text(out, &format_metrics(&report, &source))?;
        echo(&sidecar(out, "config.json"), "eval", a, None, None)?;
    }
    Ok(EvalOutcome { source, report })
}

/// Parses `item,category,timestamp` lines against the checkpoint's
/// vocabularies. Blank lines, `#` comments and a header line are skipped.
pub fn parse_history(text: &str, ckpt: &Checkpoint) -> Result<Vec<Behavior>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("history: {e}")))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.len() != 3 {
            return Err(CliError::Data(format!(
                "history line {line}: expected item,category,timestamp"
            )));
        }
        if out.is_empty() && record[2].eq_ignore_ascii_case("timestamp") {
            continue;
        }
        let item = ckpt.items.get(&record[0]).ok_or_else(|| {
            CliError::Data(format!(
                "history line {line}: unknown item id {:?}",
                &record[0]
            ))
        })?;
        let category = ckpt.categories.get(&record[1]).ok_or_else(|| {
            CliError::Data(format!(
                "history line {line}: unknown category id {:?}",
                &record[1]
            ))
        })?;
        let timestamp: f64 = record[2]
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| {
                CliError::Data(format!(
                    "history line {line}: bad timestamp {:?}",
                    &record[2]
                ))
            })?;
        out.push(Behavior {
            item,
            category,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(CliError::Data("history is empty".into()));
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

/// Top-K `(external item id, score)` pairs.
pub fn run_recommend(a: &RecommendArgs) -> Result<Vec<(String, f64)>> {
    let ckpt = checkpoint::load(&a.ckpt)?;
    let text = std::fs::read_to_string(&a.history).map_err(CliError::io(&a.history))?;
    let history = parse_history(&text, &ckpt)?;
    let r = recommend_topk(&ckpt.params, &history, a.time, a.k)?;
    Ok(r.items
        .iter()
        .zip(&r.scores)
        .map(|(&i, &s)| {
            let id = ckpt.items.external(i).expect("ranked ids are real items");
            (id.to_string(), s)
        })
        .collect())
}

pub fn run_gradcheck(a: &GradcheckArgs) -> Result<Vec<SuiteRow>> {
    let scope = Scope::from_name(&a.scope).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown scope {:?}; expected all, rnn, attention, memory or model",
            a.scope
        ))
    })?;
    let fault = match &a.inject_fault {
        Some(name) => Some(
            OpKind::from_name(name)
                .ok_or_else(|| CliError::Usage(format!("unknown op {name:?}")))?,
        ),
        None => None,
    };
    Ok(run_suites(scope, fault)?)
}

pub fn render_gradcheck(rows: &[SuiteRow]) -> String {
    let mut out = format!(
        "{:<24} {:<24} {:>12}  status\n",
        "suite", "parameter", "max rel err"
    );
    for r in rows {
        writeln!(
            out,
            "{:<24} {:<24} {:>12.3e}  {}",
            r.suite,
            r.report.name,
            r.report.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        )
        .unwrap();
    }
    out
}

pub fn run_synth(a: &SynthArgs) -> Result<usize> {
    let task = TemporalTask {
        users: a.users,
        min_len: a.min_len,
        max_len: a.max_len,
        fillers: a.fillers,
        threshold: a.threshold,
        ..TemporalTask::default()
    };
    let log = task.generate(&mut SeedStreams::new(a.seed).stream("synthetic"))?;
    write_events(&a.out, &log)?;
    echo(&sidecar(&a.out, "config.json"), "synth", a, None, None)?;
    Ok(log.len())
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub hops: usize,
    pub report: MetricReport,
    /// Largest `|output(k−1) + hop_k − output(k)|` seen on the sample.
    pub residual_gap: f64,
    pub digest: String,
}

pub fn run_sweep(a: &SweepArgs) -> Result<Vec<SweepRow>> {
    let split = read_split(&a.data)?;
    let cfg = train_config(&a.optim)?;
    let ex = examples(&split, SplitName::Test)?;
    let mut rows = Vec::new();
    for &hops in &a.hop_list {
        let model = model_config(
            &ModelArgs {
                hops,
                ..a.model.clone()
            },
            &split,
        )?;
        let (params, _) = fit(&split, model, &cfg, 0)?;
        let mut residual_gap: f64 = 0.0;
        for e in ex.iter().take(a.residual_sample) {
            residual_gap = residual_gap.max(hop_residual_gap(&params, e.prefix, e.label_time)?);
        }
        let report = evaluate(
            &ModelScorer { params: &params },
            &ex,
            &a.k,
            threads(a.threads),
        )?;
        let stem = a.out.join(format!("hops-{hops}"));
        let digest = checkpoint::save(
            &sidecar(&stem, "ckpt"),
            &checkpoint_for(params, &cfg, &split),
        )?;
        write_text(
            &sidecar(&stem, "metrics"),
            &format_metrics(&report, &format!("sweep/hops-{hops}")),
        )?;
        rows.push(SweepRow {
            hops,
            report,
            residual_gap,
            digest,
        });
    }
    write_text(&a.out.join("sweep.tsv"), &render_sweep(&rows))?;
    echo(
        &a.out.join("sweep.config.json"),
        "sweep-hops",
        a,
        None,
        Some(&cfg),
    )?;
    Ok(rows)
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("hops");
    if let Some(first) = rows.first() {
        for c in &first.report.cutoffs {
            write!(out, "\thr@{k}\tndcg@{k}", k = c.k).unwrap();
        }
    }
    out.push_str("\tresidual_gap\n");
    for r in rows {
        write!(out, "{}", r.hops).unwrap();
        for c in &r.report.cutoffs {
            write!(out, "\t{}\t{}", c.hr, c.ndcg).unwrap();
        }
        writeln!(out, "\t{}", r.residual_gap).unwrap();
    }
    out
}

/// Runs one parsed command, writing human-readable results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let w = |e: std::io::Error| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match &cli.command {
        Command::Preprocess(a) => {
            let o = preprocess(a)?;
            if o.malformed > 0 {
                eprintln!("skipped {} malformed of {} rows", o.malformed, o.rows);
            }
            write!(out, "{}", render_stats(&o.manifest.stats)).map_err(w)?;
            writeln!(
                out,
                "train pairs {}, test pairs {}, validation pairs {}",
                o.manifest.train_pairs, o.manifest.test_pairs, o.manifest.valid_pairs
            )
            .map_err(w)?;
        }
        Command::Train(a) => {
            let o = run_train(a)?;
            let last = o.report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            writeln!(
                out,
                "{} iterations over {} epochs{}, final epoch loss {last:.6}",
                o.report.trace.len(),
                o.report.epoch_losses.len(),
                if o.report.stopped_early {
                    " (early stop)"
                } else {
                    ""
                }
            )
            .map_err(w)?;
            writeln!(out, "checkpoint sha256 {}", o.digest).map_err(w)?;
        }
        Command::Eval(a) => {
            let o = run_eval(a)?;
            writeln!(out, "{}", o.source).map_err(w)?;
            write!(out, "{}", render_metrics(&o.report)).map_err(w)?;
        }
        Command::Recommend(a) => {
            for (rank, (item, score)) in run_recommend(a)?.iter().enumerate() {
                writeln!(out, "{}\t{item}\t{score}", rank + 1).map_err(w)?;
            }
        }
        Command::Gradcheck(a) => {
            let rows = run_gradcheck(a)?;
            write!(out, "{}", render_gradcheck(&rows)).map_err(w)?;
            let failed: Vec<String> = rows
                .iter()
                .filter(|r| !r.passed())
                .map(|r| {
                    format!(
                        "{}:{} ({:.3e})",
                        r.suite, r.report.name, r.report.max_rel_error
                    )
                })
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Numeric(format!(
                    "{} tensors exceed relative error {TOLERANCE:e}: {}",
                    failed.len(),
                    failed.join(", ")
                )));
            }
            writeln!(out, "all {} tensors within {TOLERANCE:e}", rows.len()).map_err(w)?;
        }
        Command::Synth(a) => {
            let n = run_synth(a)?;
            writeln!(out, "wrote {n} events to {}", a.out.display()).map_err(w)?;
        }
        Command::SweepHops(a) => {
            let rows = run_sweep(a)?;
            write!(out, "{}", render_sweep(&rows)).map_err(w)?;
        }
    }
    Ok(())
}
