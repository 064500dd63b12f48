use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fuzzy_attn::analysis::{self, ExplanationReport, IbsSummary};
use fuzzy_attn::checkpoint::{history_jsonl, sha256_hex, Checkpoint, HistoryDigest};
use fuzzy_attn::encoder::{replacement_grid, AttentionKind};
use fuzzy_attn::metrics::{classification_metrics, EvalResult};
use fuzzy_attn::model::{ModelConfig, PairClassifier};
use fuzzy_attn::synth::{build_dataset, orient, probe_accuracy, GenConfig, ImageType, Relationship, TrialSet};
use fuzzy_attn::train::{train_with, OptimConfig, Split, TrainReport};

use crate::config::{parse_values, resolve_model, resolve_optim, resolve_seed, OutputMeta, RunFile};
use crate::{output_path, usage, AblateArgs, CliResult, EvalArgs, ExplainArgs, Grid, SplitName, SynthArgs, TrainArgs};

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_dataset(path: &Path) -> CliResult<TrialSet> {
    Ok(TrialSet::read(path)?)
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg: GenConfig = match &args.gen_config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)
            .or_else(|e| usage(format!("invalid generator config {}: {e}", p.display())))?,
        None => GenConfig::default(),
    };
    let set = build_dataset(args.seed, args.dyads, args.per_condition, &cfg)?;
    let out = output_path(&args.output);
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    set.write(&out)?;
    let [neg, pos] = set.label_counts();
    println!("wrote {}", out.display());
    println!("trials: {} ({} dyads, {} samples x {} features)", set.len(), args.dyads, set.n_samples(), set.layout.n_features());
    println!("labels: {pos} positive / {neg} negative");
    match probe_accuracy(&set) {
        Ok(acc) => println!("probe accuracy: {acc:.4}"),
        Err(_) => println!("probe accuracy: n/a (fewer than 4 trials)"),
    }
    Ok(())
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub meta: OutputMeta,
    pub data: String,
    pub data_sha256: String,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub best_epoch: usize,
    pub split: Split,
}

/// Trains one model and writes `checkpoint/`, `history.jsonl` and `run.json`
/// into `out`.
pub fn train_and_save(
    set: &TrialSet,
    data_path: &Path,
    model_cfg: ModelConfig,
    optim: &OptimConfig,
    out: &Path,
    quiet: bool,
) -> CliResult<(PairClassifier, TrainReport)> {
    let mut model = PairClassifier::new(model_cfg, optim.seed)?;
    let report = train_with(&mut model, set, optim, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  lr {:.3e}  loss {:.4}  val_loss {:.4}  val_acc {:.4}  val_pr_auc {}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.val_loss,
                r.val.accuracy,
                r.val.pr_auc.map_or("undefined".into(), |v| format!("{v:.4}"))
            );
        }
    })?;
    fs::create_dir_all(out)?;
    let digest = HistoryDigest::new(&report.history, report.best_epoch)?;
    Checkpoint::from_model(&model, optim.seed, Some(optim), Some(digest))?.save(&out.join("checkpoint"))?;
    fs::write(out.join("history.jsonl"), history_jsonl(&report.history)?)?;
    let manifest = RunManifest {
        meta: OutputMeta::new(optim.seed, &model.config)?,
        data: data_path.display().to_string(),
        data_sha256: sha256_hex(&fs::read(data_path)?),
        model: model.config.clone(),
        optim: optim.clone(),
        best_epoch: report.best_epoch,
        split: report.split.clone(),
    };
    write_json(&out.join("run.json"), &manifest)?;
    Ok((model, report))
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let file = RunFile::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &file);
    let set = read_dataset(&args.data)?;
    let model_cfg = resolve_model(&args.model, &file, &set)?;
    let optim = resolve_optim(&args.optim, &file, seed)?;
    let out = output_path(&args.out);
    let (_, report) = train_and_save(&set, &args.data, model_cfg, &optim, &out, args.quiet)?;
    let best = &report.history[report.best_epoch];
    println!("wrote {}", out.display());
    println!("best epoch {} of {}", report.best_epoch, report.history.len());
    print_metrics(&best.val);
    Ok(())
}

fn print_metrics(r: &EvalResult) {
    for (name, v) in r.named() {
        if v.is_nan() {
            println!("{name:>9}: undefined");
        } else {
            println!("{name:>9}: {v:.4}");
        }
    }
}

/// One line of the per-sample export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub index: usize,
    pub dyad: u32,
    pub trial: u32,
    pub label: u8,
    pub score: f64,
    pub predicted: u8,
    pub correct: bool,
    pub image_type: ImageType,
    pub relationship: Relationship,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: OutputMeta,
    pub split: String,
    pub n_samples: usize,
    pub metrics: EvalResult,
}

pub fn predict_all(model: &PairClassifier, set: &TrialSet, indices: &[usize]) -> CliResult<Vec<SamplePrediction>> {
    let structure = model.config.encoder.structure;
    indices
        .iter()
        .map(|&i| {
            let t = &set.trials[i];
            let (d1, d2) = orient(t, structure)?;
            let p = model.predict(&d1, &d2)?;
            let score = p.positive_probability();
            let predicted = u8::from(score > 0.5);
            Ok(SamplePrediction {
                index: i,
                dyad: t.meta.dyad,
                trial: t.meta.trial,
                label: t.label,
                score,
                predicted,
                correct: predicted == t.label,
                image_type: t.meta.image_type,
                relationship: t.meta.relationship,
            })
        })
        .collect()
}

pub fn metrics_of(preds: &[SamplePrediction]) -> CliResult<EvalResult> {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
    Ok(classification_metrics(&scores, &labels, 0.5)?)
}

fn load_model(dir: &Path, set: &TrialSet) -> CliResult<(Checkpoint, PairClassifier)> {
    let ckpt = Checkpoint::load(dir)?;
    let model = ckpt.to_model()?;
    let enc = &model.config.encoder;
    let (tokens, features) =
        fuzzy_attn::synth::token_geometry(set.layout.n_features(), set.n_samples(), enc.structure);
    if features != enc.token_features || tokens > enc.max_tokens {
        return usage(format!(
            "checkpoint expects tokens of {} features (at most {}), dataset gives {tokens} x {features}",
            enc.token_features, enc.max_tokens
        ));
    }
    Ok((ckpt, model))
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let set = read_dataset(&args.data)?;
    let (ckpt, model) = load_model(&args.checkpoint, &set)?;
    let indices: Vec<usize> = match (args.split, &args.run) {
        (SplitName::All, _) => (0..set.len()).collect(),
        (_, None) => return usage("--split other than 'all' needs --run"),
        (split, Some(run)) => {
            let m: RunManifest = serde_json::from_slice(&fs::read(run)?)?;
            let idx = match split {
                SplitName::Train => m.split.train,
                SplitName::Val => m.split.val,
                _ => m.split.test,
            };
            if idx.iter().any(|&i| i >= set.len()) {
                return usage("split indices exceed the dataset size");
            }
            idx
        }
    };
    if indices.is_empty() {
        return usage("selected split is empty");
    }
    let preds = predict_all(&model, &set, &indices)?;
    let report = EvalReport {
        meta: OutputMeta::new(ckpt.manifest.seed, &model.config)?,
        split: format!("{:?}", args.split).to_lowercase(),
        n_samples: preds.len(),
        metrics: metrics_of(&preds)?,
    };
    let out = output_path(&args.out);
    write_json(&out.join("eval.json"), &report)?;
    let mut f = fs::File::create(out.join("predictions.jsonl"))?;
    for p in &preds {
        writeln!(f, "{}", serde_json::to_string(p)?)?;
    }
    println!("wrote {}", out.display());
    print_metrics(&report.metrics);
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExplainOutput {
    pub meta: OutputMeta,
    #[serde(flatten)]
    pub report: ExplanationReport,
}

pub fn explain(args: &ExplainArgs) -> CliResult<()> {
    let set = read_dataset(&args.data)?;
    let (ckpt, model) = load_model(&args.checkpoint, &set)?;
    if let Some(&bad) = args.sample.iter().find(|&&i| i >= set.len()) {
        return usage(format!("sample {bad} out of range for {} trials", set.len()));
    }
    let layer = match args.layer {
        Some(l) => l,
        None => match analysis::default_layer(&model) {
            Some(l) => l,
            None => return usage("model has no fuzzy attention layer to explain"),
        },
    };
    if layer >= model.encoder.blocks.len() {
        return usage(format!("layer {layer} out of range for depth {}", model.encoder.blocks.len()));
    }
    let samples = args
        .sample
        .iter()
        .map(|&i| analysis::explain_sample(&set.trials[i], &model, &set.layout, layer, args.top_k))
        .collect::<fuzzy_attn::Result<Vec<_>>>()?;
    let firing = analysis::trial_firing(&set, &model, layer)?;
    let rule_map = analysis::rule_map_from_firing(
        &firing,
        &set.labels(),
        layer,
        model.config.encoder.structure,
        &set.layout,
    )?;
    let prototypes = analysis::center_prototypes(&model, layer)?;
    let input_prototypes = match model.encoder.blocks[0].attention {
        fuzzy_attn::encoder::AttentionSublayer::Fuzzy(_) => {
            let first = if layer == 0 { firing } else { analysis::trial_firing(&set, &model, 0)? };
            let tokens = analysis::peak_tokens(&first);
            Some(analysis::input_prototypes(&model, &set.layout, &tokens)?)
        }
        fuzzy_attn::encoder::AttentionSublayer::Dot(_) => None,
    };
    let ibs = analysis::ibs_group_test(&set, &model)?;
    let output = ExplainOutput {
        meta: OutputMeta::new(ckpt.manifest.seed, &model.config)?,
        report: ExplanationReport {
            layer,
            structure: model.config.encoder.structure,
            samples,
            rule_map,
            prototypes,
            input_prototypes,
            ibs: IbsSummary::from(&ibs),
        },
    };
    let out = output_path(&args.output);
    write_json(&out, &output)?;
    println!("wrote {}", out.display());
    if let Some((r, s)) = output.report.rule_map.argmax_abs_t() {
        println!(
            "largest |t|: rule {r}, token {} (t = {:.3})",
            output.report.rule_map.token_labels[s], output.report.rule_map.t[r][s]
        );
    }
    println!(
        "synchrony (label 1 - label 0): pearson t = {:.3}, p = {:.3e}",
        ibs.pearson.t, ibs.pearson.p
    );
    Ok(())
}

/// One ablation cell, evaluated on its run's held-out test split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub grid: String,
    pub cell: usize,
    pub attention: String,
    pub depth: usize,
    pub rules: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

fn kinds_label(kinds: &[AttentionKind]) -> String {
    kinds.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn ablate(args: &AblateArgs) -> CliResult<()> {
    let file = RunFile::load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &file);
    let set = read_dataset(&args.data)?;
    let base = resolve_model(&args.model, &file, &set)?;
    let optim = resolve_optim(&args.optim, &file, seed)?;

    let cells: Vec<ModelConfig> = match args.grid {
        Grid::Replace => {
            if args.values.is_some() {
                return usage("the replace grid takes --depth, not --values");
            }
            replacement_grid(base.encoder.depth)
                .into_iter()
                .map(|kinds| {
                    let mut c = base.clone();
                    c.encoder.attention_kinds = kinds;
                    c
                })
                .collect()
        }
        Grid::Rules => parse_values(args.values.as_deref().unwrap_or("2,5,10,20,40"))?
            .into_iter()
            .map(|r| {
                let mut c = base.clone();
                c.encoder.rules = r;
                c
            })
            .collect(),
        Grid::Depth => {
            let kind = base.encoder.attention_kinds[0];
            parse_values(args.values.as_deref().unwrap_or("1,2,3"))?
                .into_iter()
                .map(|d| {
                    let mut c = base.clone();
                    c.encoder.depth = d;
                    c.encoder.attention_kinds = vec![kind; d];
                    c
                })
                .collect()
        }
    };
    if cells.is_empty() {
        return usage("empty grid");
    }
    let grid = format!("{:?}", args.grid).to_lowercase();
    let out = output_path(&args.out);
    fs::create_dir_all(&out)?;
    let mut rows = Vec::with_capacity(cells.len());
    for (i, cfg) in cells.into_iter().enumerate() {
        cfg.encoder.validate()?;
        let cell_dir: PathBuf = out.join(format!("cell-{i:02}"));
        let (model, report) = train_and_save(&set, &args.data, cfg, &optim, &cell_dir, true)?;
        let held_out = if report.split.test.is_empty() { &report.split.val } else { &report.split.test };
        let m = metrics_of(&predict_all(&model, &set, held_out)?)?;
        let enc = &model.config.encoder;
        let row = AblationRow {
            grid: grid.clone(),
            cell: i,
            attention: kinds_label(&enc.attention_kinds),
            depth: enc.depth,
            rules: enc.rules,
            seed,
            best_epoch: report.best_epoch,
            accuracy: m.accuracy,
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            roc_auc: m.roc_auc,
            pr_auc: m.pr_auc,
        };
        if !args.quiet {
            eprintln!(
                "cell {i}: {} depth {} rules {} -> accuracy {:.4}",
                row.attention, row.depth, row.rules, row.accuracy
            );
        }
        rows.push(row);
    }
    let csv_path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    println!("wrote {} ({} rows)", csv_path.display(), rows.len());
    Ok(())
}
