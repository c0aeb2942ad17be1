use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use selssm::fsio::atomic_write;
use selssm::metrics::{self, ReportFormat};
use selssm::model::checkpoint::{self, RawCheckpoint};
use selssm::model::gradcheck;
use selssm::model::train::argmax;
use selssm::model::{
    count_params, memory_footprint, predict_proba, quantize_int8, EpochRecord, Example, MambaClassifier,
    ModelConfig, Pooling,
};
use selssm::text::{build_vocab, encode, generate, split, tokenize, Corpus, GeneratorSpec, Preset, Vocab};
use selssm::{DType, Scalar};

use crate::config::RunConfig;
use crate::fail::{Failure, EXIT_CONFIG, EXIT_GRADCHECK, EXIT_MISMATCH};
use crate::{EvalArgs, GenCorpusArgs, GradcheckArgs, PoolingArg, PredictArgs, PresetArg, QuantizeArgs, TrainArgs};

type CmdResult = Result<(), Failure>;

pub const CHECKPOINT: &str = "model.ckpt";
pub const VOCAB: &str = "vocab.tsv";
pub const SPLITS: &str = "splits.json";
pub const HISTORY: &str = "history.json";
pub const RUN_CONFIG: &str = "run_config.toml";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    atomic_write(path, bytes.as_ref()).map_err(Failure::from)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data") + "\n"
}

pub fn gen_corpus(a: GenCorpusArgs) -> CmdResult {
    let mut spec = GeneratorSpec::preset(match a.preset {
        PresetArg::Dvt => Preset::Dvt,
        PresetArg::Pe => Preset::Pe,
    });
    spec.seed = a.seed;
    if let Some(n) = a.n {
        spec.n_docs = n;
    }
    if let Some(f) = a.evidence_frac {
        spec.evidence.late_frac = f;
    }
    if let Some(f) = a.tail_frac {
        spec.length.tail_frac = f;
    }
    let corpus = generate(&spec)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    corpus.save(&a.out)?;
    let counts = corpus.class_counts();
    println!("wrote {} documents to {}", corpus.len(), a.out.display());
    for (name, n) in corpus.class_names.iter().zip(counts) {
        println!("  {name}: {n}");
    }
    Ok(())
}

/// Document ids of each split.
#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

#[derive(Debug, Serialize)]
struct HistoryFile<'a> {
    train_size: usize,
    val_size: usize,
    test_size: usize,
    best_epoch: usize,
    stopped_early: bool,
    epochs: &'a [EpochRecord],
}

fn examples(corpus: &Corpus, tokens: &[Vec<String>], idx: &[usize], vocab: &Vocab, max_len: usize) -> Vec<Example> {
    idx.iter()
        .map(|&i| {
            let e = encode(&tokens[i], vocab, max_len);
            Example {
                ids: e.ids,
                mask: e.mask,
                label: corpus.documents[i].label,
            }
        })
        .collect()
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(n) = a.max_seq_len {
        cfg.data.max_seq_len = Some(n);
    }
    if let Some(p) = a.pooling {
        cfg.model.pooling = match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Last => Pooling::Last,
        };
    }
    if let Some(c) = &a.corpus {
        cfg.data.corpus = Some(c.clone());
    }
    cfg.output_dir = cfg.resolve_output_dir(a.out.as_deref());
    cfg.train.validate()?;

    let corpus = match (&cfg.data.corpus, &cfg.data.generator) {
        (Some(path), _) => Corpus::load(path)?,
        (None, Some(spec)) => generate(spec)?,
        (None, None) => {
            return Err(Failure::new(
                EXIT_CONFIG,
                "no corpus: pass --corpus or set data.corpus or data.generator",
            ))
        }
    };
    let seed = cfg.train.seed;
    let sp = split(&corpus.labels(), seed)?;
    let tokens: Vec<Vec<String>> = corpus.documents.iter().map(|d| tokenize(&d.text)).collect();
    let train_tokens: Vec<&[String]> = sp.train.iter().map(|&i| tokens[i].as_slice()).collect();
    let vocab = build_vocab(&train_tokens, cfg.data.min_freq)?;

    if let Some(n) = cfg.data.max_seq_len {
        cfg.model.max_seq_len = n;
    }
    cfg.model.vocab_size = vocab.len();
    cfg.model.n_classes = corpus.n_classes();
    cfg.model.class_names = corpus.class_names.clone();
    cfg.model.validate()?;
    let max_len = cfg.model.max_seq_len;
    let train_ex = examples(&corpus, &tokens, &sp.train, &vocab, max_len);
    let val_ex = examples(&corpus, &tokens, &sp.val, &vocab, max_len);

    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    write(&out.join(RUN_CONFIG), format!("# created_at = {created}\n{}", cfg.to_toml()))?;
    write(&out.join(VOCAB), vocab.to_tsv())?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| corpus.documents[i].id.clone()).collect();
    let split_file = SplitFile {
        seed,
        train: ids(&sp.train),
        val: ids(&sp.val),
        test: ids(&sp.test),
    };
    write(&out.join(SPLITS), json(&split_file))?;
    eprintln!(
        "train {} / val {} / test {}, vocab {}, {} parameters",
        sp.train.len(),
        sp.val.len(),
        sp.test.len(),
        vocab.len(),
        count_params(&cfg.model)
    );

    let quiet = a.quiet;
    let mut progress = |r: &EpochRecord| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy
            );
        }
    };
    let (history, best_epoch, stopped_early) = match cfg.model.dtype {
        DType::F32 => fit::<f32>(&cfg, &train_ex, &val_ex, &out, &mut progress)?,
        DType::F64 => fit::<f64>(&cfg, &train_ex, &val_ex, &out, &mut progress)?,
    };
    let hist = HistoryFile {
        train_size: sp.train.len(),
        val_size: sp.val.len(),
        test_size: sp.test.len(),
        best_epoch,
        stopped_early,
        epochs: &history,
    };
    write(&out.join(HISTORY), json(&hist))?;
    let best = &history[best_epoch.max(1) - 1];
    println!(
        "best epoch {best_epoch}: val_loss {:.4}, val_accuracy {:.4}; wrote {}",
        best.val_loss,
        best.val_accuracy,
        out.display()
    );
    Ok(())
}

fn fit<T: Scalar>(
    cfg: &RunConfig,
    train_ex: &[Example],
    val_ex: &[Example],
    out: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(Vec<EpochRecord>, usize, bool), Failure> {
    let model = MambaClassifier::<T>::init(&cfg.model, cfg.train.seed)?;
    let outcome = selssm::model::train(model, train_ex, val_ex, &cfg.train, Some(progress))?;
    checkpoint::save_checkpoint(&outcome.model, &out.join(CHECKPOINT))?;
    Ok((outcome.history, outcome.best_epoch, outcome.stopped_early))
}

fn model_dir(model: &Path) -> PathBuf {
    model
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf()
}

/// Checkpoint and the vocabulary stored beside it, checked for agreement.
fn load_artifacts(model: &Path) -> Result<(RawCheckpoint, Vocab), Failure> {
    let raw = checkpoint::read_checkpoint(model).map_err(Failure::artifact)?;
    let vocab = Vocab::load(&model_dir(model).join(VOCAB)).map_err(Failure::artifact)?;
    if vocab.len() != raw.config.vocab_size {
        return Err(Failure::new(
            EXIT_MISMATCH,
            format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                raw.config.vocab_size
            ),
        ));
    }
    Ok((raw, vocab))
}

/// Class probabilities in the checkpoint's own precision.
fn probabilities(raw: RawCheckpoint, examples: &[Example]) -> Result<Vec<Vec<f64>>, Failure> {
    Ok(match raw.config.dtype {
        DType::F32 => predict_proba(&raw.into_model::<f32>().map_err(Failure::artifact)?, examples)?,
        DType::F64 => predict_proba(&raw.into_model::<f64>().map_err(Failure::artifact)?, examples)?,
    })
}

fn split_indices(model: &Path, corpus: &Corpus, name: &str) -> Result<Vec<usize>, Failure> {
    if name == "all" {
        return Ok((0..corpus.len()).collect());
    }
    let path = model_dir(model).join(SPLITS);
    let text = fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
    let file: SplitFile = serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_MISMATCH, format!("{}: {e}", path.display())))?;
    let ids = match name {
        "train" => file.train,
        "val" => file.val,
        _ => file.test,
    };
    let index: HashMap<&str, usize> = corpus
        .documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    ids.iter()
        .map(|id| {
            index.get(id.as_str()).copied().ok_or_else(|| {
                Failure::new(EXIT_MISMATCH, format!("split document {id} is not in the corpus"))
            })
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let (raw, vocab) = load_artifacts(&a.model)?;
    let corpus = Corpus::load(&a.corpus)?;
    let cfg = raw.config.clone();
    if corpus.n_classes() != cfg.n_classes {
        return Err(Failure::new(
            EXIT_MISMATCH,
            format!("corpus has {} classes, model {}", corpus.n_classes(), cfg.n_classes),
        ));
    }
    let idx = split_indices(&a.model, &corpus, &a.split)?;
    if idx.is_empty() {
        return Err(Failure::new(EXIT_CONFIG, format!("split {} is empty", a.split)));
    }
    let tokens: Vec<Vec<String>> = idx.iter().map(|&i| tokenize(&corpus.documents[i].text)).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| corpus.documents[i].label).collect();
    let k = cfg.n_classes;
    let probs = if a.oracle_predictions {
        labels
            .iter()
            .map(|&l| (0..k).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        let ex: Vec<Example> = tokens
            .iter()
            .zip(&labels)
            .map(|(t, &label)| {
                let e = encode(t, &vocab, cfg.max_seq_len);
                Example {
                    ids: e.ids,
                    mask: e.mask,
                    label,
                }
            })
            .collect();
        probabilities(raw, &ex)?
    };
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let cm = metrics::confusion(&labels, &preds, k)?;
    let report = metrics::metrics_from_confusion(&cm)?;
    let names: Vec<String> = (0..k).map(|c| cfg.class_name(c)).collect();

    let out = a.out.clone().unwrap_or_else(|| model_dir(&a.model));
    fs::create_dir_all(&out).map_err(|e| Failure::io(&out, e))?;
    write(&out.join("metrics.json"), metrics::emit_report(&report, ReportFormat::Json, &names))?;
    let table = metrics::emit_report(&report, ReportFormat::Table, &names);
    write(&out.join("metrics.txt"), &table)?;
    print!("{}", String::from_utf8_lossy(&table));
    println!();
    for (c, name) in names.iter().enumerate() {
        match metrics::roc_ovr(&probs, &labels, c) {
            Ok(curve) => {
                write(&out.join(format!("roc_class{c}.csv")), metrics::emit_roc(&curve))?;
                write(&out.join(format!("roc_class{c}.svg")), metrics::emit_roc_svg(&curve))?;
                println!("AUC {name}: {}", metrics::sig4(curve.auc));
            }
            Err(e) => eprintln!("skipping ROC for {name}: {e}"),
        }
    }
    println!("{} documents from the {} split", idx.len(), a.split);
    Ok(())
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let texts: Vec<String> = match (&a.input.text, &a.input.file) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => fs::read_to_string(p)
            .map_err(|e| Failure::io(p, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
        (None, None) => Vec::new(),
    };
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    if tokens.is_empty() || tokens.iter().any(Vec::is_empty) {
        return Err(Failure::new(EXIT_CONFIG, "empty input"));
    }
    let (raw, vocab) = load_artifacts(&a.model)?;
    let cfg = raw.config.clone();
    let ex: Vec<Example> = tokens
        .iter()
        .map(|t| {
            let e = encode(t, &vocab, cfg.max_seq_len);
            Example {
                ids: e.ids,
                mask: e.mask,
                label: 0,
            }
        })
        .collect();
    for p in probabilities(raw, &ex)? {
        let shown: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
        println!("{}\t{}", cfg.class_name(argmax(&p)), shown.join(" "));
    }
    Ok(())
}

fn mb(x: f64) -> String {
    format!("{x:.4} MB")
}

pub fn quantize(a: QuantizeArgs) -> CmdResult {
    let raw = checkpoint::read_checkpoint(&a.model).map_err(Failure::artifact)?;
    if raw.is_quantized() {
        return Err(Failure::new(EXIT_MISMATCH, "checkpoint is already quantized"));
    }
    let m: MambaClassifier<f32> = raw.into_model().map_err(Failure::artifact)?;
    let mut q = quantize_int8(&m);
    q.config.dtype = DType::F32;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    checkpoint::save_quantized(&q, &a.out)?;
    let (src, dst) = (model_dir(&a.model), model_dir(&a.out));
    if fs::canonicalize(&src).ok() != fs::canonicalize(&dst).ok() {
        for name in [VOCAB, SPLITS] {
            if src.join(name).exists() {
                fs::copy(src.join(name), dst.join(name)).map_err(|e| Failure::io(&dst.join(name), e))?;
            }
        }
    }

    let f = q.footprint();
    println!("weight tensors: {} f32 -> {} int8", mb(f.weights_f32_mb()), mb(f.weights_int8_mb()));
    println!("weight-tensor reduction: {:.1}%", 100.0 * f.weight_reduction());
    println!(
        "whole model: {} -> {} ({:.1}%); f32 vectors are {:.2}% of parameters",
        mb(f.total_f32_mb()),
        mb(f.total_quantized_mb()),
        100.0 * f.total_reduction(),
        100.0 * f.f32_fraction()
    );
    println!("headline reduction: {:.1}%", 100.0 * f.headline_reduction());
    if let Some(n) = a.reference_params {
        let (full, small) = (memory_footprint(n, 4), memory_footprint(n, 1));
        println!(
            "reference {n} parameters: {full:.1} MB → {small:.1} MB ({:.1}%)",
            100.0 * (1.0 - small / full)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub const GRADCHECK_MAX_WIDTH: usize = 32;

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let mut cfg: ModelConfig = match &a.config {
        Some(p) => RunConfig::load(p)?.model,
        None => gradcheck::toy_config(),
    };
    if cfg.d_model > GRADCHECK_MAX_WIDTH {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!(
                "d_model {} is too large for a finite-difference check (limit {GRADCHECK_MAX_WIDTH})",
                cfg.d_model
            ),
        ));
    }
    if a.seq_len == 0 {
        return Err(Failure::new(EXIT_CONFIG, "seq-len must be ≥ 1"));
    }
    cfg.n_layers = 1;
    cfg.dtype = DType::F64;
    cfg.max_seq_len = cfg.max_seq_len.max(a.seq_len);
    cfg.validate()?;

    let corrupt = a.corrupt_backward;
    let checks = gradcheck::gradcheck(&cfg, a.seq_len, a.seed, |i, g| {
        if corrupt && i == 1 {
            g.scale_assign(1.5);
        }
    })?;

    println!("{:<24}{:>8}{:>14}  result", "tensor", "numel", "rel_error");
    let mut failed = 0;
    for c in &checks {
        let ok = c.passed(a.tolerance);
        failed += usize::from(!ok);
        println!(
            "{:<24}{:>8}{:>14.3e}  {}",
            c.name,
            c.numel,
            c.rel_error,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(Failure::new(
            EXIT_GRADCHECK,
            format!("{failed} of {} tensors exceed relative error {}", checks.len(), a.tolerance),
        ));
    }
    println!("all {} tensors within {}", checks.len(), a.tolerance);
    Ok(())
}
