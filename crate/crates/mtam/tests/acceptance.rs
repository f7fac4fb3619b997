//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if any failed. Positional arguments select criteria
//! by substring.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use rand::Rng;

use mtam::artifact::sha256_hex;
use mtam::ingest::{parse_events, IngestOptions};
use mtam::report::parse_metrics;
use mtam_core::attention::{
    dot_attention, time_attention, time_scores, AttentionGate, AttentionGateParams, TimedSequence,
};
use mtam_core::data::{filter_and_index, split_sequences, Behavior, DatasetSplit};
use mtam_core::embeddings::EmbeddedSequence;
use mtam_core::gradcheck::{run_suites, Scope, TOLERANCE};
use mtam_core::memory::{read_multi_hop, read_once, write_memory, HopParams};
use mtam_core::metrics::{ndcg, rank_of, MetricReport};
use mtam_core::model::{user_vector, ModelConfig, ModelParams, Variant};
use mtam_core::recurrent::{
    encode_states, gru_step, GruParams, RnnGate, RnnState, TemporalGateParams,
};
use mtam_core::rng::{SeedStreams, StreamRng};
use mtam_core::{ParamStore, Tape};

type Check = fn(&Path) -> Result<String, String>;

const SEEDS: u64 = 100;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("gradient-suite", gradient_suite),
        ("reduction-equivalences", reductions),
        ("time-shift-invariance", time_shift),
        ("normalization-and-masking", normalization_and_masking),
        ("metric-oracle", metric_oracle),
        ("preprocessing-fidelity", preprocessing),
        ("synthetic-temporal-task", synthetic_task),
        ("movielens-ordering", movielens),
        ("hop-sweep", hop_sweep),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let dir = scratch.path().join(name);
        fs::create_dir_all(&dir).expect("criterion directory");
        let start = Instant::now();
        let outcome = check(&dir);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mtam(args: &[&str]) -> Result<Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mtam"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot launch mtam: {e}"))?;
    Ok(out)
}

/// Runs the binary and insists on exit status 0.
fn mtam_ok(args: &[&str]) -> Result<String, String> {
    let out = mtam(args)?;
    if !out.status.success() {
        return Err(format!(
            "`mtam {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn metrics_at(path: &Path, k: usize) -> Result<(f64, f64), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let r = parse_metrics(&text).map_err(|e| e.to_string())?;
    let c = r
        .at(k)
        .ok_or_else(|| format!("{} lacks @{k}", path.display()))?;
    Ok((c.hr, c.ndcg))
}

fn gradient_suite(_: &Path) -> Result<String, String> {
    let rows = run_suites(Scope::All, None).map_err(|e| e.to_string())?;
    let worst = rows
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .ok_or("no gradient rows")?;
    ensure(worst.report.max_rel_error < TOLERANCE, || {
        format!(
            "{}/{} relative error {:.3e}",
            worst.suite, worst.report.name, worst.report.max_rel_error
        )
    })?;
    let start = Instant::now();
    mtam_ok(&["gradcheck", "--scope", "all"])?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("gradcheck took {secs:.1}s"))?;
    Ok(format!(
        "{} tensors, worst {:.2e} ({}/{}), cli {secs:.1}s",
        rows.len(),
        worst.report.max_rel_error,
        worst.suite,
        worst.report.name
    ))
}

fn uniform(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Non-decreasing integer timestamps.
fn integer_times(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let mut t = rng.gen_range(0u32..1_000_000) as f64;
    (0..n)
        .map(|_| {
            t += rng.gen_range(0u32..200_000) as f64;
            t
        })
        .collect()
}

fn random_prefix(rng: &mut StreamRng, n_items: u32, n_cats: u32) -> Vec<Behavior> {
    let n = rng.gen_range(1..12);
    integer_times(rng, n)
        .into_iter()
        .map(|timestamp| Behavior {
            item: rng.gen_range(1..n_items),
            category: rng.gen_range(1..n_cats),
            timestamp,
        })
        .collect()
}

fn model(variant: Variant, hops: usize, seed: u64) -> Result<ModelParams, String> {
    let mut cfg = ModelConfig::new(20, 4);
    cfg.d = 8;
    cfg.max_len = 10;
    cfg.capacity = 6;
    cfg.hops = hops;
    cfg.variant = variant;
    cfg.time_divisor = 60.0;
    ModelParams::init(cfg, seed).map_err(|e| e.to_string())
}

fn reductions(_: &Path) -> Result<String, String> {
    let d = 6;
    for seed in 0..SEEDS {
        let mut rng = SeedStreams::new(seed).stream("acceptance");
        let mut store = ParamStore::new();
        let gru = GruParams::init(&mut store, &mut rng, d);
        let gate = TemporalGateParams::init(&mut store, &mut rng, d);
        store.get_mut(gate.b_g).values_mut().fill(1e3);

        let mut tape = Tape::new(&store);
        let n = rng.gen_range(1..10);
        let xv = tape
            .constant(n, d, uniform(&mut rng, n * d))
            .map_err(|e| e.to_string())?;
        let seq = EmbeddedSequence {
            vectors: xv,
            times: integer_times(&mut rng, n),
        };
        let mut state = RnnState::zero(&mut tape, d, seq.times[0]).map_err(|e| e.to_string())?;
        let mut plain = Vec::new();
        for i in 0..n {
            let x = tape.row(xv, i).map_err(|e| e.to_string())?;
            state = gru_step(&mut tape, &gru, x, state).map_err(|e| e.to_string())?;
            plain.push(state.h);
        }
        for gate in [RnnGate::Fixed(1.0), RnnGate::Temporal(&gate)] {
            let states =
                encode_states(&mut tape, &gru, gate, &seq, 60.0).map_err(|e| e.to_string())?;
            for (a, b) in states.iter().zip(&plain) {
                ensure(tape.value(*a) == tape.value(*b), || {
                    format!("(a) seed {seed}: forced-open T-GRU differs from GRU")
                })?;
            }
        }

        let (lq, lk) = (1, rng.gen_range(1..8));
        let mut store = ParamStore::new();
        let att = AttentionGateParams::init(&mut store, &mut rng, "att", lq, lk, d);
        store.get_mut(att.b_g).values_mut().fill(1e3);
        let mut tape = Tape::new(&store);
        let q = tape
            .constant(lq, d, uniform(&mut rng, lq * d))
            .map_err(|e| e.to_string())?;
        let k = tape
            .constant(lk, d, uniform(&mut rng, lk * d))
            .map_err(|e| e.to_string())?;
        let v = tape
            .constant(lk, d, uniform(&mut rng, lk * d))
            .map_err(|e| e.to_string())?;
        let qs = TimedSequence::new(q, integer_times(&mut rng, lq));
        let ks = TimedSequence::new(k, integer_times(&mut rng, lk));
        let plain = dot_attention(&mut tape, q, k, v, &ks.mask).map_err(|e| e.to_string())?;
        for gate in [AttentionGate::Fixed(1.0), AttentionGate::Temporal(&att)] {
            let out =
                time_attention(&mut tape, gate, &qs, &ks, v, 60.0).map_err(|e| e.to_string())?;
            ensure(tape.value(out) == tape.value(plain), || {
                format!("(b) seed {seed}: forced-open attention differs from dot-product attention")
            })?;
        }

        let prefix = random_prefix(&mut rng, 20, 4);
        let t = prefix.last().unwrap().timestamp + rng.gen_range(0u32..100_000) as f64;
        let zero_hop =
            user_vector(&model(Variant::Mtam, 0, seed)?, &prefix, t).map_err(|e| e.to_string())?;
        let tgru =
            user_vector(&model(Variant::Tgru, 0, seed)?, &prefix, t).map_err(|e| e.to_string())?;
        ensure(zero_hop == tgru, || {
            format!("(c) seed {seed}: zero-hop model differs from T-GRU")
        })?;
    }
    Ok(format!("(a) (b) (c) bitwise on {SEEDS} seeds"))
}

fn time_shift(_: &Path) -> Result<String, String> {
    for seed in 0..SEEDS {
        let mut rng = SeedStreams::new(seed).stream("acceptance");
        let prefix = random_prefix(&mut rng, 20, 4);
        let t = prefix.last().unwrap().timestamp + rng.gen_range(0u32..100_000) as f64;
        let shift = rng.gen_range(0u32..2_000_000_000) as f64;
        let moved: Vec<Behavior> = prefix
            .iter()
            .map(|b| Behavior {
                timestamp: b.timestamp + shift,
                ..*b
            })
            .collect();
        for v in Variant::ALL {
            let params = model(v, 2, seed)?;
            let a = user_vector(&params, &prefix, t).map_err(|e| e.to_string())?;
            let b = user_vector(&params, &moved, t + shift).map_err(|e| e.to_string())?;
            let diff = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            ensure(diff == 0.0, || {
                format!("seed {seed}, {v}: max abs diff {diff:e}")
            })?;
        }
    }
    Ok(format!(
        "max abs diff 0 for all {} variants on {SEEDS} seeds",
        Variant::ALL.len()
    ))
}

fn normalization_and_masking(_: &Path) -> Result<String, String> {
    let d = 5;
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = SeedStreams::new(seed).stream("acceptance");
        let (lq, lk) = (rng.gen_range(1..4), rng.gen_range(2..9));
        let mut store = ParamStore::new();
        let att = AttentionGateParams::init(&mut store, &mut rng, "att", lq, lk, d);
        let mut tape = Tape::new(&store);
        let q = tape
            .constant(lq, d, uniform(&mut rng, lq * d))
            .map_err(|e| e.to_string())?;
        let k = tape
            .constant(lk, d, uniform(&mut rng, lk * d))
            .map_err(|e| e.to_string())?;
        let mut mask: Vec<bool> = (0..lk).map(|_| rng.gen_bool(0.6)).collect();
        mask[0] = true;
        let qs = TimedSequence::new(q, integer_times(&mut rng, lq));
        let ks = TimedSequence {
            vectors: k,
            times: integer_times(&mut rng, lk),
            mask: mask.clone(),
        };
        let s = time_scores(&mut tape, AttentionGate::Temporal(&att), &qs, &ks, 60.0)
            .map_err(|e| e.to_string())?;
        for row in tape.value(s).chunks(lk) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            ensure(row.iter().zip(&mask).all(|(v, m)| *m || *v == 0.0), || {
                format!("seed {seed}: masked key received weight")
            })?;
        }

        let cap = rng.gen_range(3..8);
        let live = rng.gen_range(1..cap);
        let hops = 2;
        let mut store = ParamStore::new();
        let hp = HopParams::init(&mut store, &mut rng, d, hops, cap, true);
        let mut tape = Tape::new(&store);
        let h = tape
            .constant(live, d, uniform(&mut rng, live * d))
            .map_err(|e| e.to_string())?;
        let mem = write_memory(&mut tape, h, &integer_times(&mut rng, live), cap)
            .map_err(|e| e.to_string())?;
        let c = tape
            .constant(1, d, uniform(&mut rng, d))
            .map_err(|e| e.to_string())?;
        let t = 5e6;
        let mut poisoned = mem.clone();
        let kept = tape
            .gather_rows(mem.slots, &(0..live).collect::<Vec<_>>())
            .map_err(|e| e.to_string())?;
        let junk = tape
            .constant(
                cap - live,
                d,
                (0..(cap - live) * d)
                    .map(|_| rng.gen_range(-50.0..50.0))
                    .collect(),
            )
            .map_err(|e| e.to_string())?;
        poisoned.slots = tape.stack_rows(&[kept, junk]).map_err(|e| e.to_string())?;
        for slot in live..cap {
            poisoned.times[slot] = rng.gen_range(0u32..4_000_000) as f64;
        }
        let a = read_once(&mut tape, &hp, 0, c, t, &mem, 60.0).map_err(|e| e.to_string())?;
        let b = read_once(&mut tape, &hp, 0, c, t, &poisoned, 60.0).map_err(|e| e.to_string())?;
        let ma =
            read_multi_hop(&mut tape, &hp, c, t, &mem, hops, 60.0).map_err(|e| e.to_string())?;
        let mb = read_multi_hop(&mut tape, &hp, c, t, &poisoned, hops, 60.0)
            .map_err(|e| e.to_string())?;
        ensure(
            tape.value(a) == tape.value(b) && tape.value(ma.output) == tape.value(mb.output),
            || format!("seed {seed}: perturbing masked slots changed the read"),
        )?;
    }
    ensure(worst <= 1e-12, || format!("row sum off by {worst:e}"))?;
    Ok(format!(
        "worst |row sum - 1| = {worst:.1e}, masked slots inert on {SEEDS} seeds"
    ))
}

/// Position of `label` after sorting by descending score, ties by id.
fn brute_rank(scores: &[f64], label: usize) -> usize {
    let mut order: Vec<usize> = (1..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.iter().position(|&j| j == label).unwrap() + 1
}

fn metric_oracle(_: &Path) -> Result<String, String> {
    let ks = [1, 5, 10, 20];
    let mut rng = SeedStreams::new(7).stream("acceptance");
    for fixture in 0..1000 {
        let n_items = rng.gen_range(2..60);
        let users = rng.gen_range(1..10);
        let mut ranks = Vec::new();
        let mut oracle = Vec::new();
        for _ in 0..users {
            let mut scores: Vec<f64> = (0..n_items)
                .map(|_| rng.gen_range(-4..4) as f64 * 0.25)
                .collect();
            scores[0] = f64::NEG_INFINITY;
            let label = rng.gen_range(1..n_items);
            ranks.push(rank_of(&scores, label).map_err(|e| e.to_string())?);
            oracle.push(brute_rank(&scores, label));
        }
        ensure(ranks == oracle, || {
            format!("fixture {fixture}: ranks {ranks:?} vs {oracle:?}")
        })?;
        let report = MetricReport::from_ranks(&ranks, &ks).map_err(|e| e.to_string())?;
        for k in ks {
            let n = oracle.len() as f64;
            let hr = oracle.iter().filter(|&&r| r <= k).count() as f64 / n;
            let nd = oracle
                .iter()
                .map(|&r| {
                    if r <= k {
                        1.0 / ((r + 1) as f64).log2()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / n;
            let got = report.at(k).unwrap();
            ensure(got.hr == hr && got.ndcg == nd, || {
                format!(
                    "fixture {fixture} @{k}: ({}, {}) vs ({hr}, {nd})",
                    got.hr, got.ndcg
                )
            })?;
        }
    }
    ensure(ndcg(3, 10) == 0.5, || {
        format!("ndcg(3, 10) = {}", ndcg(3, 10))
    })?;
    Ok("1000 fixtures exact, ndcg@10 of rank 3 = 0.5".into())
}

type Pair = (String, Vec<String>, String);

fn pairs(split: &DatasetSplit, refs: &[mtam_core::data::ExampleRef]) -> Vec<Pair> {
    let v = &split.data.vocab;
    let mut out: Vec<Pair> = refs
        .iter()
        .map(|r| {
            let ex = split.resolve(*r);
            (
                v.users.external(ex.user).unwrap().to_string(),
                ex.prefix
                    .iter()
                    .map(|b| v.items.external(b.item).unwrap().to_string())
                    .collect(),
                v.items.external(ex.label_item).unwrap().to_string(),
            )
        })
        .collect();
    out.sort();
    out
}

fn pair(user: &str, prefix: &str, label: &str) -> Pair {
    (
        user.to_string(),
        prefix.split_whitespace().map(String::from).collect(),
        label.to_string(),
    )
}

fn preprocessing(_: &Path) -> Result<String, String> {
    // Twenty events, rows shuffled; each user's sequence is at t = 1..5.
    let fixture = "user,item,category,timestamp
u3,a,x,4
u1,b,x,5
u4,d,y,1
u2,c,y,3
u1,a,x,1
u3,d,y,2
u2,a,x,1
u4,c,y,4
u1,c,y,4
u2,b,x,5
u3,b,x,1
u4,e,y,5
u1,b,x,2
u3,c,y,3
u2,b,x,2
u4,d,y,3
u1,a,x,3
u2,a,x,4
u3,b,x,5
u4,e,y,2
";
    let log = parse_events(fixture, IngestOptions::default())
        .map_err(|e| e.to_string())?
        .log;
    ensure(log.len() == 20, || format!("{} events parsed", log.len()))?;

    let literal = filter_and_index(&log, 10, 30);
    ensure(literal.is_err(), || {
        "literal thresholds kept users of a 20-event log".into()
    })?;

    let split = split_sequences(filter_and_index(&log, 4, 3).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut want_train = vec![
        pair("u1", "a", "b"),
        pair("u1", "a b", "a"),
        pair("u1", "a b a", "c"),
        pair("u2", "a", "b"),
        pair("u2", "a b", "c"),
        pair("u2", "a b c", "a"),
        pair("u3", "b", "c"),
        pair("u3", "b c", "a"),
    ];
    let mut want_test = vec![
        pair("u1", "a b a c", "b"),
        pair("u2", "a b c a", "b"),
        pair("u3", "b c a", "b"),
    ];
    want_train.sort();
    want_test.sort();
    let got_train = pairs(&split, &split.train);
    let got_test = pairs(&split, &split.test);
    ensure(got_train == want_train, || {
        format!("train pairs {got_train:?}")
    })?;
    ensure(got_test == want_test, || format!("test pairs {got_test:?}"))?;

    // Literal thresholds on a log large enough to survive them: 30 regular
    // users, one that drops below 10 after its rare item goes, one too short.
    let mut csv = String::from("user,item,category,timestamp\n");
    for u in 0..30 {
        for t in 0..10 {
            csv.push_str(&format!(
                "r{u},{},x,{t}\n",
                if (u + t) % 2 == 0 { "p" } else { "q" }
            ));
        }
    }
    for t in 0..10 {
        csv.push_str(&format!(
            "late,{},x,{t}\n",
            if t == 4 { "rare" } else { "p" }
        ));
    }
    for t in 0..9 {
        csv.push_str(&format!("short,q,x,{t}\n"));
    }
    let log = parse_events(&csv, IngestOptions::default())
        .map_err(|e| e.to_string())?
        .log;
    let split = split_sequences(filter_and_index(&log, 10, 30).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let v = &split.data.vocab;
    ensure(
        v.users.len() == 30 && v.users.get("late").is_none() && v.users.get("short").is_none(),
        || format!("{} users survive 10/30", v.users.len()),
    )?;
    ensure(v.items.get("rare").is_none(), || "rare item kept".into())?;
    ensure(split.train.len() == 240 && split.test.len() == 30, || {
        format!(
            "{} train / {} test pairs",
            split.train.len(),
            split.test.len()
        )
    })?;
    let first = pairs(&split, &split.test)
        .into_iter()
        .find(|p| p.0 == "r0")
        .ok_or("r0 has no test pair")?;
    ensure(first == pair("r0", "p q p q p q p q p", "q"), || {
        format!("r0 test pair {first:?}")
    })?;

    Ok(
        "20-event fixture: 8 train / 3 test pairs exact at 4/3 (10/30 leaves no user); \
        10/30 on 319 events: 240 / 30 after two passes"
            .into(),
    )
}

/// Writes the planted temporal-rule dataset and returns its directory.
fn synthetic_dataset(dir: &Path, users: usize, seed: u64) -> Result<PathBuf, String> {
    let csv = dir.join("synthetic.csv");
    let ds = dir.join("synthetic");
    mtam_ok(&[
        "synth",
        "--out",
        p(&csv),
        "--users",
        &users.to_string(),
        "--seed",
        &seed.to_string(),
    ])?;
    mtam_ok(&[
        "preprocess",
        "--input",
        p(&csv),
        "--output",
        p(&ds),
        "--min-user-len",
        "3",
        "--min-item-count",
        "1",
    ])?;
    Ok(ds)
}

/// Options shared by every synthetic training run.
const SYNTH_MODEL: [&str; 8] = [
    "--d",
    "16",
    "--max-len",
    "20",
    "--capacity",
    "20",
    "--time-divisor",
    "60",
];
const SYNTH_OPTIM: [&str; 10] = [
    "--lr",
    "0.3",
    "--batch-size",
    "32",
    "--dropout",
    "0",
    "--min-rel-improvement",
    "0",
    "--seed",
    "0",
];

fn train_and_eval(
    ds: &Path,
    out: &Path,
    variant: &str,
    extra: &[&str],
    k: usize,
) -> Result<(f64, f64), String> {
    let ckpt = out.join(format!("{variant}.ckpt"));
    let metrics = out.join(format!("{variant}.metrics"));
    let mut args = vec![
        "train",
        "--data",
        p(ds),
        "--out",
        p(&ckpt),
        "--variant",
        variant,
    ];
    args.extend_from_slice(extra);
    mtam_ok(&args)?;
    let k = k.to_string();
    mtam_ok(&[
        "eval",
        "--data",
        p(ds),
        "--ckpt",
        p(&ckpt),
        "--k",
        &k,
        "--out",
        p(&metrics),
    ])?;
    metrics_at(&metrics, k.parse().unwrap())
}

fn synthetic_task(dir: &Path) -> Result<String, String> {
    let start = Instant::now();
    let ds = synthetic_dataset(dir, 2000, 0)?;
    let mut common: Vec<&str> = SYNTH_MODEL.to_vec();
    common.extend_from_slice(&SYNTH_OPTIM);
    let mut with_memory = common.clone();
    with_memory.extend_from_slice(&["--hops", "1", "--epochs", "8"]);
    let mut recurrent = common;
    recurrent.extend_from_slice(&["--epochs", "8"]);
    let (full, _) = train_and_eval(&ds, dir, "mtam", &with_memory, 1)?;
    let (gru, _) = train_and_eval(&ds, dir, "gru", &recurrent, 1)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("MTAM HR@1 {full:.4}, GRU HR@1 {gru:.4}, {secs:.0}s");
    ensure(full >= 0.95 && gru <= 0.65 && secs < 600.0, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn movielens(dir: &Path) -> Result<String, String> {
    let csv = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k.csv");
    if !csv.exists() {
        return Err(format!(
            "{} is missing; run scripts/fetch_movielens.sh first",
            csv.display()
        ));
    }
    let start = Instant::now();
    let ds = dir.join("ml");
    let stats = mtam_ok(&["preprocess", "--input", p(&csv), "--output", p(&ds)])?;
    let users = stats
        .lines()
        .nth(1)
        .and_then(|l| l.split_whitespace().next())
        .unwrap_or("?")
        .to_string();
    let common = [
        "--d",
        "16",
        "--time-divisor",
        "86400",
        "--lr",
        "0.1",
        "--batch-size",
        "32",
        "--dropout",
        "0",
        "--min-rel-improvement",
        "0",
        "--seed",
        "0",
    ];
    let mut full_args = common.to_vec();
    full_args.extend_from_slice(&["--hops", "4", "--epochs", "5"]);
    let mut gru_args = common.to_vec();
    gru_args.extend_from_slice(&["--epochs", "5"]);
    let (full, _) = train_and_eval(&ds, dir, "mtam", &full_args, 10)?;
    let (gru, _) = train_and_eval(&ds, dir, "gru", &gru_args, 10)?;
    let pop_file = dir.join("top-pop.metrics");
    mtam_ok(&[
        "eval",
        "--data",
        p(&ds),
        "--baseline",
        "top-pop",
        "--k",
        "10",
        "--out",
        p(&pop_file),
    ])?;
    let (pop, _) = metrics_at(&pop_file, 10)?;
    let secs = start.elapsed().as_secs_f64();
    let detail =
        format!("{users} users: HR@10 MTAM {full:.4}, GRU {gru:.4}, Top-Pop {pop:.4}, {secs:.0}s");
    ensure(full > gru && gru > pop && secs < 1800.0, || detail.clone())?;
    Ok(detail)
}

fn hop_sweep(dir: &Path) -> Result<String, String> {
    let ds = synthetic_dataset(dir, 500, 1)?;
    let out = dir.join("sweep");
    let mut args = vec![
        "sweep-hops",
        "--data",
        p(&ds),
        "--out",
        p(&out),
        "--hop-list",
        "0,1,2,4",
        "--epochs",
        "3",
        "--lr",
        "0.2",
    ];
    args.extend_from_slice(&SYNTH_MODEL);
    args.extend_from_slice(&SYNTH_OPTIM[2..]);
    mtam_ok(&args)?;
    let table = fs::read_to_string(out.join("sweep.tsv")).map_err(|e| e.to_string())?;
    let mut lines = table.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or("empty sweep table")?
        .split('\t')
        .collect();
    let hr1 = header
        .iter()
        .position(|h| *h == "hr@1")
        .ok_or("no hr@1 column")?;
    let mut seen = Vec::new();
    let mut summary = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        let gap: f64 = cols
            .last()
            .and_then(|g| g.parse().ok())
            .ok_or("bad residual column")?;
        ensure(gap == 0.0, || {
            format!("hops {}: residual gap {gap:e}", cols[0])
        })?;
        ensure(
            out.join(format!("hops-{}.metrics", cols[0])).exists(),
            || format!("hops {} wrote no metrics file", cols[0]),
        )?;
        seen.push(cols[0].to_string());
        summary.push(format!("k'={} HR@1 {}", cols[0], cols[hr1]));
    }
    ensure(seen == ["0", "1", "2", "4"], || {
        format!("hop rows {seen:?}")
    })?;
    Ok(format!("{}; residual gap 0", summary.join(", ")))
}

fn determinism(dir: &Path) -> Result<String, String> {
    let ds = synthetic_dataset(dir, 300, 2)?;
    let mut digests = Vec::new();
    let mut reports = Vec::new();
    for run in ["first", "second"] {
        let out = dir.join(run);
        fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        let mut args: Vec<&str> = SYNTH_MODEL.to_vec();
        args.extend_from_slice(&[
            "--epochs",
            "2",
            "--hops",
            "2",
            "--lr",
            "0.05",
            "--dropout",
            "0.3",
        ]);
        train_and_eval(&ds, &out, "mtam", &args, 5)?;
        let bytes = fs::read(out.join("mtam.ckpt")).map_err(|e| e.to_string())?;
        digests.push(sha256_hex(&bytes));
        reports.push(fs::read(out.join("mtam.metrics")).map_err(|e| e.to_string())?);
    }
    ensure(digests[0] == digests[1], || {
        format!("checkpoint digests {} vs {}", digests[0], digests[1])
    })?;
    ensure(reports[0] == reports[1], || "metric reports differ".into())?;
    Ok(format!(
        "checkpoint sha256 {}…, metric reports identical",
        &digests[0][..16]
    ))
}
