use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use dwn_core::bits::BitVector;
use dwn_core::datahar::{class_distribution, load_split, write_split, HarDataset, Split, ACTIVITY_NAMES};
use dwn_core::energy::{comparison_table, default_manifest, EnergyModel, ManifestEntry};
use dwn_core::infer::{self, freeze, FrozenModel};
use dwn_core::model::{load_checkpoint, save_checkpoint, DwnModel};
use dwn_core::rtlgen::{default_pipeline_stages, emit_verilog, interpret, lower};
use dwn_core::synth::{har_like, random_windows};
use dwn_core::train::{self as trainer, evaluate, evaluate_predictions, Metrics, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::failure::{Categorize, Failure};
use crate::{BenchArgs, EmitArgs, EnergyArgs, EvalArgs, ExportArgs, PrepareArgs, ReportArgs, TrainArgs};

/// `dir/name` + `suffix`, e.g. `m.dwnc` → `m.dwnc.log.jsonl`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name: OsString = path.file_name().unwrap_or_default().to_owned();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, body).cat_with("io", || format!("writing {}", path.display()))
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    s.parse().map_err(|e| Failure::msg("usage", e))
}

fn load(root: &Path, split: Split) -> Result<HarDataset, Failure> {
    load_split(root, split).cat("data")
}

enum Loaded {
    Checkpoint(DwnModel),
    Frozen(FrozenModel),
}

impl Loaded {
    fn frozen(&self) -> FrozenModel {
        match self {
            Loaded::Checkpoint(m) => freeze(m),
            Loaded::Frozen(f) => f.clone(),
        }
    }
}

/// Dispatches on the file magic.
fn load_model(path: &Path) -> Result<Loaded, Failure> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .cat_with("io", || format!("reading {}", path.display()))?;
    let ctx = || format!("{}", path.display());
    match &magic {
        b"DWNC" => Ok(Loaded::Checkpoint(load_checkpoint(path).cat_with("format", ctx)?)),
        b"DWNM" => Ok(Loaded::Frozen(FrozenModel::load(path).cat_with("format", ctx)?)),
        _ => Err(Failure::msg("format", format!("{}: not a model file (magic {magic:?})", path.display()))),
    }
}

pub fn prepare_data(a: &PrepareArgs) -> Result<(), Failure> {
    if let Some(per_class) = a.synthetic {
        for (split, seed) in [(Split::Train, a.synthetic_seed), (Split::Test, a.synthetic_seed ^ 0x7e57)] {
            let mut ds = har_like(per_class, ACTIVITY_NAMES.len(), seed);
            if split == Split::Test {
                // Keep the two subject pools disjoint.
                ds.samples.iter_mut().for_each(|s| s.subject += 20);
            }
            write_split(&a.data, split, &ds.samples).cat("io")?;
        }
    }
    let mut subjects = Vec::new();
    for split in [Split::Train, Split::Test] {
        let ds = load(&a.data, split)?;
        let dist = class_distribution(&ds).cat("data")?;
        let counts: Vec<String> = dist.iter().map(|(l, n)| format!("{l}:{n}")).collect();
        let subj = ds.subjects();
        println!(
            "{split}: {} windows, {} subjects, labels {{{}}}",
            ds.len(),
            subj.len(),
            counts.join(", ")
        );
        subjects.push(subj);
    }
    let shared: Vec<u32> = subjects[0].intersection(&subjects[1]).copied().collect();
    if !shared.is_empty() {
        return Err(Failure::msg("data", format!("train and test share subjects {shared:?}")));
    }
    println!("train/test subject sets are disjoint");
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).cat_with("io", || format!("reading {}", p.display()))?;
        cfg.apply_text(&text).cat_with("config", || format!("{}", p.display()))?;
    }
    for (k, v) in &a.overrides {
        cfg.set(k, v).cat("config")?;
    }
    cfg.validate().cat("config")?;

    let full = load(&a.data, Split::Train)?;
    let (train_ds, eval_ds) = match a.holdout {
        Some(f) if !(f > 0.0 && f < 1.0) => {
            return Err(Failure::msg("usage", format!("--holdout must be in (0, 1), got {f}")))
        }
        Some(f) => {
            let (t, v) = full.split_holdout(f, cfg.seed);
            (t, Some(v))
        }
        None if a.data.join("test").is_dir() => (full, Some(load(&a.data, Split::Test)?)),
        None => (full, None),
    };

    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    let mut log = BufWriter::new(File::create(&log_path).cat_with("io", || format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    let epochs = cfg.epochs;
    let outcome = trainer::train(&train_ds, &cfg, eval_ds.as_ref(), |r| {
        let eval = r
            .eval
            .as_ref()
            .map_or(String::new(), |m| format!(" eval_acc {:.4} eval_f1 {:.4}", m.accuracy, m.macro_f1));
        eprintln!(
            "epoch {}/{epochs} lr {:.0e} loss {:.4} train_acc {:.4}{eval}",
            r.epoch + 1,
            r.lr,
            r.train_loss,
            r.train_accuracy
        );
        let line = serde_json::to_string(r).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    })
    .cat("train")?;
    if let Some(e) = log_err {
        return Err(Failure::new("io", e));
    }

    save_checkpoint(&outcome.model, &a.out).cat_with("io", || format!("writing {}", a.out.display()))?;
    write_file(&with_suffix(&a.out, ".config.txt"), cfg.to_text())?;
    println!("checkpoint {}", a.out.display());
    if let Some(p) = &a.frozen {
        let f = freeze(&outcome.model);
        f.save(p).cat_with("io", || format!("writing {}", p.display()))?;
        write_file(&with_suffix(p, ".config.txt"), cfg.to_text())?;
        println!("frozen model {} ({} bytes of LUT content)", p.display(), f.model_size_bytes());
    }
    println!("log {}", log_path.display());
    Ok(())
}

fn metrics_for(model: &Loaded, ds: &HarDataset) -> Result<Metrics, Failure> {
    match model {
        Loaded::Checkpoint(m) => evaluate(m, ds).cat("model"),
        Loaded::Frozen(f) => {
            let preds: Vec<usize> = ds
                .samples
                .par_iter()
                .map(|s| f.predict(&s.window).map(|p| p.label))
                .collect::<Result<_, _>>()
                .cat("model")?;
            let truth: Vec<usize> = ds.samples.iter().map(|s| s.class()).collect();
            Ok(evaluate_predictions(&truth, &preds, f.num_classes()))
        }
    }
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let ds = load(&a.data, parse_split(&a.split)?)?;
    let m = metrics_for(&model, &ds)?;
    let grid = m.confusion_text(&ACTIVITY_NAMES);
    let grid_path = a.confusion.clone().unwrap_or_else(|| with_suffix(&a.model, ".confusion.txt"));
    write_file(&grid_path, &grid)?;
    if a.json {
        println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        return Ok(());
    }
    println!("samples {}", m.total());
    println!("accuracy {:.6}", m.accuracy);
    println!("macro_f1 {:.6}", m.macro_f1);
    for (i, f1) in m.per_class_f1().iter().enumerate() {
        let name = ACTIVITY_NAMES.get(i).copied().unwrap_or("?");
        println!("f1 {name} {f1:.4}");
    }
    print!("{grid}");
    println!("confusion {}", grid_path.display());
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<(), Failure> {
    let m = load_checkpoint(&a.checkpoint).cat_with("format", || format!("{}", a.checkpoint.display()))?;
    let f = freeze(&m);
    f.save(&a.out).cat_with("io", || format!("writing {}", a.out.display()))?;
    let bytes = f.model_size_bytes();
    println!(
        "{}: {} LUTs, model size {bytes} bytes ({:.2} KiB)",
        a.out.display(),
        f.total_luts(),
        bytes as f64 / 1024.0
    );
    Ok(())
}

pub fn emit_rtl(a: &EmitArgs) -> Result<(), Failure> {
    let f = load_model(&a.model)?.frozen();
    let stages = a.stages.unwrap_or_else(|| default_pipeline_stages(&f));
    let net = lower(&f, stages).cat("rtl")?;
    let text = emit_verilog(&net, &a.module).cat("rtl")?;
    write_file(&a.out, &text)?;
    let report = format!(
        "module {}\ninputs {}\nclasses {}\npipeline_stages {stages}\n{}\nlines {}\n",
        a.module,
        net.input_width(),
        f.num_classes(),
        net.counts(),
        text.lines().count()
    );
    write_file(&a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.txt")), &report)?;
    print!("{report}");
    if let Some(n) = a.check {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        for i in 0..n {
            let bits = BitVector::from_bools(&(0..f.input_width()).map(|_| rng.random()).collect::<Vec<bool>>());
            let want = f.predict_bits(&bits).cat("model")?;
            let (label, scores) = interpret(&net, &bits).cat("rtl")?;
            let same = label == want.label && scores.iter().zip(&want.popcounts).all(|(&s, &p)| s == p as u64);
            if !same {
                return Err(Failure::msg(
                    "equivalence",
                    format!("input {i}: netlist label {label}, model label {}", want.label),
                ));
            }
        }
        println!("check {n}/{n} inputs agree");
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<(), Failure> {
    let f = load_model(&a.model)?.frozen();
    let enc = f
        .encoding()
        .ok_or_else(|| Failure::msg("model", "model has no input encoding"))?;
    let windows = match &a.data {
        Some(root) => load(root, parse_split(&a.split)?)?.samples.into_iter().map(|s| s.window).collect(),
        None => random_windows(a.random_windows, enc.encoder.num_channels(), enc.timesteps, a.seed),
    };
    let report = infer::bench(&f, &windows, a.repetitions).cat("model")?;
    eprintln!(
        "{:.0} inferences/s, mean {:.1} us, p99 {:.1} us over {} inferences",
        report.samples_per_second,
        report.mean_ns / 1e3,
        report.p99_ns / 1e3,
        report.inferences
    );
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

pub fn estimate_energy(a: &EnergyArgs) -> Result<(), Failure> {
    let model = EnergyModel::default();
    let mj = model.estimate_mj(a.flops);
    if a.json {
        let v = serde_json::json!({
            "flops": a.flops,
            "energy_per_flop_nj": model.energy_per_flop_nj(),
            "energy_mj": mj,
        });
        println!("{v}");
    } else {
        println!("{mj:.1} mJ ({} FLOPs x {:.3} nJ)", a.flops, model.energy_per_flop_nj());
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    let manifest: Vec<ManifestEntry> = match &a.manifest {
        Some(p) => {
            let text = fs::read_to_string(p).cat_with("io", || format!("reading {}", p.display()))?;
            serde_json::from_str(&text).cat_with("config", || format!("{}", p.display()))?
        }
        None => default_manifest(),
    };
    let mut out = comparison_table(&manifest, &EnergyModel::default());
    if !a.models.is_empty() {
        let test = a.data.as_ref().map(|d| load(d, Split::Test)).transpose()?;
        out.push_str(&format!(
            "\n{:<24} {:>6} {:>8} {:>5} {:>10} {:>9} {:>7} {:>7}\n",
            "local model", "layers", "luts", "arity", "size_B", "size_KiB", "acc_%", "f1_%"
        ));
        for p in &a.models {
            let loaded = load_model(p)?;
            let f = loaded.frozen();
            let (acc, f1) = match &test {
                Some(ds) => {
                    let m = metrics_for(&loaded, ds)?;
                    (format!("{:.2}", 100.0 * m.accuracy), format!("{:.2}", 100.0 * m.macro_f1))
                }
                None => ("-".into(), "-".into()),
            };
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            let arity = f.layers().iter().map(|l| l.arity()).max().unwrap_or(0);
            let bytes = f.model_size_bytes();
            out.push_str(&format!(
                "{:<24} {:>6} {:>8} {:>5} {:>10} {:>9.2} {:>7} {:>7}\n",
                name,
                f.layers().len(),
                f.total_luts(),
                arity,
                bytes,
                bytes as f64 / 1024.0,
                acc,
                f1
            ));
        }
    }
    print!("{out}");
    if let Some(p) = &a.out {
        write_file(p, &out)?;
    }
    Ok(())
}
