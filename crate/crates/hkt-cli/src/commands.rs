use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use hkt_core::analysis::{
    decompose_scores, decomposition_csv, decomposition_jsonl, gram_csv, gram_factorisation,
    info_bounds, info_csv, jsonl, psd_audit, psd_csv, InfoConfig,
};
use hkt_core::data::{
    dataset_checksum, generate_listops, load_dataset, save_dataset_with_meta, Dataset,
    ListOpsSpec, Splits,
};
use hkt_core::gradcore::{Tape, Tensor};
use hkt_core::model::{checkpoint, ForwardOpts, Model, ModelConfig};
use hkt_core::numkit::Prng;
use hkt_core::trainer::{ablation_sweep, epochs_csv, evaluate, sweep_csv, SweepSpec};
use hkt_core::verify::{
    count_ops, epsilon_bound_check, gradient_spot_check, measure_leakage,
    measure_leakage_unchecked, reduction_suite,
};
use hkt_core::{HktError, Result};
use serde_json::json;

use crate::config::{desk_model_config, FullConfig};

const RECORD_FORMAT: &str = "hkt-record-v1";

fn out_dir(flag: Option<PathBuf>, sub: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        let root = std::env::var("HKT_OUT_ROOT").unwrap_or_else(|_| "out".into());
        Path::new(&root).join(sub)
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Args)]
pub struct GenerateDataArgs {
    /// TOML file with a [data] section (defaults used when omitted)
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// overrides the spec's seed
    #[arg(long)]
    seed: Option<u64>,
    /// overwrite existing split files
    #[arg(long)]
    force: bool,
}

pub fn generate_data(args: GenerateDataArgs) -> Result<bool> {
    let mut spec: ListOpsSpec = FullConfig::load(args.spec.as_deref())?.data;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dir = out_dir(args.out, "data");
    std::fs::create_dir_all(&dir)?;
    let paths = ["train.tsv", "val.tsv", "test.tsv"].map(|f| dir.join(f));
    if !args.force {
        if let Some(existing) = paths.iter().find(|p| p.exists()) {
            return Err(HktError::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} exists; pass --force to overwrite", existing.display()),
            )));
        }
    }
    let splits = generate_listops(&spec)?;
    let mut files = Vec::new();
    for (ds, path, name) in [
        (&splits.train, &paths[0], "train"),
        (&splits.val, &paths[1], "val"),
        (&splits.test, &paths[2], "test"),
    ] {
        save_dataset_with_meta(ds, &spec, name, path)?;
        files.push(json!({
            "split": name,
            "path": path.display().to_string(),
            "n": ds.len(),
            "sha256": dataset_checksum(path)?,
        }));
    }
    println!("{}", json!({ "command": "generate-data", "seed": spec.seed, "files": files }));
    Ok(true)
}

// ------------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with [model]/[train] sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// number of hierarchy levels (1 = flat ablation)
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// force every hybrid gate to a constant (ablation)
    #[arg(long)]
    beta: Option<f64>,
    /// uniform output fusion instead of the learned gate (ablation)
    #[arg(long)]
    alpha_uniform: bool,
}

fn load_splits(dir: &Path, cfg: &ModelConfig) -> Result<Splits> {
    let load = |name: &str| -> Result<Dataset> {
        load_dataset(&dir.join(name), cfg.vocab_size, cfg.n_classes)
    };
    Ok(Splits {
        train: load("train.tsv")?,
        val: load("val.tsv")?,
        test: load("test.tsv")?,
    })
}

pub fn train(args: TrainArgs) -> Result<bool> {
    let cfg = FullConfig::load(args.config.as_deref())?;
    let mut model_cfg = cfg.model;
    let mut train_cfg = cfg.train;
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        train_cfg.seed = s;
    }
    if let Some(l) = args.levels {
        model_cfg.n_levels = l;
    }
    if let Some(s) = args.stride {
        model_cfg.stride = s;
    }
    let opts = ForwardOpts {
        beta_override: args.beta,
        alpha_uniform: args.alpha_uniform,
        ..Default::default()
    };
    let splits = load_splits(&args.data, &model_cfg)?;
    if let Some(seq) = splits.train.sequences.first() {
        if seq.len() > model_cfg.max_seq_len {
            model_cfg.max_seq_len = seq.len();
        }
    }
    let outcome = hkt_core::trainer::train(
        &model_cfg,
        &train_cfg,
        &splits.train,
        &splits.val,
        &opts,
    )?;
    let test_acc = evaluate(&outcome.model, &splits.test, &opts)?;

    let dir = out_dir(args.out, "run");
    std::fs::create_dir_all(&dir)?;
    checkpoint::save(&outcome.model, &dir.join("best.ckpt"))?;
    write(&dir.join("metrics.csv"), &epochs_csv(&outcome.record))?;
    let mut record = serde_json::to_value(&outcome.record)
        .map_err(|e| HktError::Config(format!("record serialisation: {e}")))?;
    record["format"] = json!(RECORD_FORMAT);
    record["test_acc"] = json!(test_acc);
    write(
        &dir.join("record.json"),
        &serde_json::to_string_pretty(&record)
            .map_err(|e| HktError::Config(format!("record serialisation: {e}")))?,
    )?;
    println!(
        "{}",
        json!({
            "command": "train",
            "out": dir.display().to_string(),
            "best_val_acc": outcome.record.best_val_acc,
            "best_epoch": outcome.record.best_epoch,
            "test_acc": test_acc,
            "config_hash": outcome.record.config_hash,
        })
    );
    Ok(true)
}

// -------------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

pub fn eval(args: EvalArgs) -> Result<bool> {
    let model = checkpoint::load(&args.checkpoint)?;
    let path = args.data.join(format!("{}.tsv", args.split));
    let ds = load_dataset(&path, model.cfg.vocab_size, model.cfg.n_classes)?;
    let acc = evaluate(&model, &ds, &ForwardOpts::default())?;
    println!(
        "{}",
        json!({ "command": "eval", "split": args.split, "n": ds.len(), "accuracy": acc })
    );
    Ok(true)
}

// ----------------------------------------------------------------- analyze

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// samples used for the information bounds
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    pca_dims: usize,
    /// trailing score-block side used as the regression feature
    #[arg(long, default_value_t = 8)]
    block: usize,
    /// reference flat-model error for the net-gain estimates
    #[arg(long, default_value_t = 0.5)]
    eps0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn analyze(args: AnalyzeArgs) -> Result<bool> {
    let model = checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(
        &args.data.join("val.tsv"),
        model.cfg.vocab_size,
        model.cfg.n_classes,
    )?;
    if ds.is_empty() {
        return Err(HktError::Config("empty validation split".into()));
    }
    let dir = out_dir(args.out, "analysis");
    std::fs::create_dir_all(&dir)?;

    let mut prng = Prng::new(args.seed);
    let t = ds.sequences[0].len();
    let probe = Tensor::randn(vec![t.min(32), model.cfg.d_model], 1.0, &mut prng);
    let decomposition = decompose_scores(&model, &probe)?;
    write(&dir.join("decomposition.csv"), &decomposition_csv(&decomposition))?;
    write(
        &dir.join("decomposition.jsonl"),
        &decomposition_jsonl(&decomposition)?,
    )?;

    let audit = psd_audit(&model)?;
    write(&dir.join("psd.csv"), &psd_csv(&audit))?;
    write(&dir.join("psd.jsonl"), &jsonl(&audit)?)?;

    let n = args.samples.min(ds.len());
    let sub = Dataset {
        sequences: ds.sequences[..n].to_vec(),
        labels: ds.labels[..n].to_vec(),
        vocab_size: ds.vocab_size,
        n_classes: ds.n_classes,
    };
    let icfg = InfoConfig {
        pca_dims: args.pca_dims,
        block: args.block,
        eps0: args.eps0,
        ..Default::default()
    };
    let info = info_bounds(&model, &sub, &icfg)?;
    write(&dir.join("info.csv"), &info_csv(&info))?;
    write(
        &dir.join("info.json"),
        &serde_json::to_string_pretty(&info)
            .map_err(|e| HktError::Config(format!("serialisation: {e}")))?,
    )?;

    let gram = gram_factorisation(&model, &sub.sequences[..n.min(20)])?;
    write(&dir.join("gram.csv"), &gram_csv(&gram))?;

    println!(
        "{}",
        json!({
            "command": "analyze",
            "out": dir.display().to_string(),
            "levels": model.cfg.n_levels,
            "layers": model.cfg.n_layers,
            "target_note": info.target,
        })
    );
    Ok(true)
}

// ------------------------------------------------------------------ verify

#[derive(Args)]
pub struct VerifyArgs {
    /// all | causal | reduction | ops | gradients
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// run the causality suite on a non-causal config (demonstrates refusal)
    #[arg(long)]
    non_causal: bool,
}

struct SuiteResult {
    name: String,
    pass: bool,
    detail: String,
}

pub fn verify(args: VerifyArgs) -> Result<bool> {
    let mut results: Vec<SuiteResult> = Vec::new();
    let all = args.suite == "all";
    let mut matched = all;

    if all || args.suite == "causal" {
        matched = true;
        let mut cfg = desk_model_config();
        cfg.n_layers = 1;
        cfg.causal = !args.non_causal;
        let model = Model::init(cfg.clone(), args.seed)?;
        let report = measure_leakage(&model, 32, 50, args.seed)?;
        results.push(SuiteResult {
            name: "causal_leakage".into(),
            pass: report.max_leakage <= 1e-12,
            detail: format!("max_leakage={:.3e} (threshold 1e-12)", report.max_leakage),
        });
        let mut twin = model.clone();
        twin.cfg.causal = false;
        let control = measure_leakage_unchecked(&twin, 32, 2, args.seed)?;
        results.push(SuiteResult {
            name: "causal_negative_control".into(),
            pass: control.max_leakage > 1e-3,
            detail: format!("non-causal twin leaks {:.3e} (> 1e-3)", control.max_leakage),
        });
        let bound = epsilon_bound_check(&model, 32, 8, args.seed)?;
        results.push(SuiteResult {
            name: "epsilon_bound".into(),
            pass: bound.satisfied,
            detail: format!(
                "measured {:.3e} <= bound {:.3e} (C_phi={:.3})",
                bound.measured_leakage, bound.bound, bound.c_phi
            ),
        });
    }
    if all || args.suite == "reduction" {
        matched = true;
        for check in reduction_suite(args.seed, 10)? {
            results.push(SuiteResult {
                name: format!("reduction_{}", check.name),
                pass: check.pass,
                detail: format!(
                    "max_dev={:.3e} (threshold {:.0e})",
                    check.max_dev, check.threshold
                ),
            });
        }
    }
    if all || args.suite == "ops" {
        matched = true;
        let expected = [(1, 1.0), (2, 1.25), (3, 1.3125), (4, 1.328125)];
        for (levels, want) in expected {
            let mut cfg = desk_model_config();
            cfg.n_levels = levels;
            let count = count_ops(&cfg, 128)?;
            results.push(SuiteResult {
                name: format!("ops_ratio_l{levels}"),
                pass: count.ratio_measured == want,
                detail: format!(
                    "measured {} theory {} (T=128)",
                    count.ratio_measured, count.ratio_theory
                ),
            });
        }
    }
    if all || args.suite == "gradients" {
        matched = true;
        let mut cfg = desk_model_config();
        cfg.d_model = 32;
        cfg.n_heads = 2;
        cfg.n_layers = 1;
        let report = gradient_spot_check(&cfg, 16, 40, args.seed)?;
        results.push(SuiteResult {
            name: "gradient_spot_check".into(),
            pass: report.max_rel_err < 1e-4,
            detail: format!(
                "max_rel_err={:.3e} worst={} ({} coords)",
                report.max_rel_err, report.worst_param, report.coords_checked
            ),
        });
    }
    if !matched {
        return Err(HktError::Config(format!(
            "unknown suite {:?} (expected all|causal|reduction|ops|gradients)",
            args.suite
        )));
    }

    let mut ok = true;
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        ok &= r.pass;
        println!("{status}  {:<42} {}", r.name, r.detail);
        println!(
            "{}",
            json!({ "suite": r.name, "pass": r.pass, "detail": r.detail })
        );
    }
    Ok(ok)
}

// ------------------------------------------------------------------- bench

#[derive(Args)]
pub struct BenchArgs {
    /// comma-separated sequence lengths
    #[arg(long, default_value = "32,64,128")]
    grid: String,
    /// hkt | mha (mha = flat single-level)
    #[arg(long, default_value = "hkt")]
    model: String,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// timed batches (median reported)
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn bench(args: BenchArgs) -> Result<bool> {
    let mut cfg = desk_model_config();
    match args.model.as_str() {
        "hkt" => {}
        "mha" => cfg.n_levels = 1,
        other => {
            return Err(HktError::Config(format!(
                "unknown model {other:?} (expected hkt|mha)"
            )))
        }
    }
    println!("t,model,median_ms_per_batch,score_entries,ratio_measured,ratio_theory,ffn_macs_per_layer");
    for t_str in args.grid.split(',') {
        let t: usize = t_str
            .trim()
            .parse()
            .map_err(|e| HktError::Config(format!("bad grid entry {t_str:?}: {e}")))?;
        cfg.max_seq_len = cfg.max_seq_len.max(t);
        let model = Model::init(cfg.clone(), args.seed)?;
        let mut prng = Prng::new(args.seed ^ t as u64);
        let tokens: Vec<Vec<usize>> = (0..args.batch)
            .map(|_| (0..t).map(|_| prng.next_below(cfg.vocab_size)).collect())
            .collect();
        let run_batch = || -> Result<()> {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            for seq in &tokens {
                bound.logits_from_tokens(seq, &ForwardOpts::default(), None)?;
            }
            Ok(())
        };
        for _ in 0..args.warmup {
            run_batch()?;
        }
        let mut times = Vec::with_capacity(args.batches);
        for _ in 0..args.batches.max(1) {
            let start = Instant::now();
            run_batch()?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        let median = times[times.len() / 2];
        let count = count_ops(&cfg, t)?;
        println!(
            "{t},{},{median:.3},{},{},{},{}",
            args.model,
            count.total_entries,
            count.ratio_measured,
            count.ratio_theory,
            count.ffn_macs_per_layer
        );
    }
    Ok(true)
}

// ------------------------------------------------------------------- sweep

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// comma-separated levels x stride pairs, e.g. 2x2,4x2,2x3
    #[arg(long, default_value = "2x2,4x2,2x3")]
    grid: String,
}

pub fn sweep(args: SweepArgs) -> Result<bool> {
    let cfg = FullConfig::load(args.config.as_deref())?;
    let mut grid = Vec::new();
    for pair in args.grid.split(',').filter(|p| !p.trim().is_empty()) {
        let (l, s) = pair
            .trim()
            .split_once('x')
            .ok_or_else(|| HktError::Config(format!("bad grid entry {pair:?}")))?;
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|e| HktError::Config(format!("bad grid entry {pair:?}: {e}")))
        };
        grid.push((parse(l)?, parse(s)?));
    }
    let splits = load_splits(&args.data, &cfg.model)?;
    let rows = ablation_sweep(&cfg.model, &cfg.train, &splits, &SweepSpec { grid });
    let dir = out_dir(args.out, "sweep");
    write(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    write(&dir.join("sweep.jsonl"), &jsonl(&rows)?)?;
    print!("{}", sweep_csv(&rows));
    Ok(rows.iter().all(|r| r.error.is_none()))
}

// ------------------------------------------------------------------ report

#[derive(Args)]
pub struct ReportArgs {
    /// directory containing run/sweep/analysis artifacts
    #[arg(long)]
    dir: PathBuf,
}

pub fn report(args: ReportArgs) -> Result<bool> {
    let mut sections = Vec::new();
    let mut records = Vec::new();
    for entry in walk(&args.dir)? {
        match entry.file_name().and_then(|n| n.to_str()) {
            Some("record.json") => {
                let text = std::fs::read_to_string(&entry)?;
                let v: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| HktError::Parse { pos: 0, msg: format!("{}: {e}", entry.display()) })?;
                if v["format"] != json!(RECORD_FORMAT) {
                    return Err(HktError::Parse {
                        pos: 0,
                        msg: format!("{}: unsupported record format", entry.display()),
                    });
                }
                records.push((entry.clone(), v));
            }
            Some("sweep.csv") | Some("info.csv") | Some("decomposition.csv")
            | Some("psd.csv") => {
                let text = std::fs::read_to_string(&entry)?;
                sections.push(format!("## {}\n\n```\n{}```\n", entry.display(), text));
            }
            _ => {}
        }
    }
    let mut out = String::from("# Run summary\n\n");
    if !records.is_empty() {
        out.push_str("| run | best val acc | best epoch | test acc | config hash |\n");
        out.push_str("|---|---|---|---|---|\n");
        for (path, v) in &records {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.12} |\n",
                path.parent().unwrap_or(Path::new("")).display(),
                v["best_val_acc"],
                v["best_epoch"],
                v["test_acc"],
                v["config_hash"].as_str().unwrap_or(""),
            ));
        }
        out.push('\n');
    }
    for s in &sections {
        out.push_str(s);
        out.push('\n');
    }
    let path = args.dir.join("report.md");
    write(&path, &out)?;
    println!(
        "{}",
        json!({
            "command": "report",
            "out": path.display().to_string(),
            "runs": records.len(),
            "tables": sections.len(),
        })
    );
    Ok(true)
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
