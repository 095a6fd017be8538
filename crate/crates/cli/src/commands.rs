use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use radkg::encoders::{load_features, synth_dataset, FeatureTable};
use radkg::eval::{classify, evaluate, predict, write_predictions};
use radkg::gradcheck::{check_gradients, GradCheckConfig};
use radkg::kg::{
    add_cooccurrence, build_radkg, cooccurrence_matrix, split, AnnotationTable, KnowledgeGraph, RelationKind,
};
use radkg::scoring::{init_model, EmbeddingModel, ModelDims, ScorerKind};
use radkg::training::{load_checkpoint, save_checkpoint, train, Checkpoint, LinkData, ValidationSet};
use radkg::Error;

use crate::config::{Fold, RunConfig};
use crate::Failure;

/// Checkpoint metadata key holding the tab-separated finding names.
pub const FINDINGS_KEY: &str = "findings";

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn comment_block(cfg: &RunConfig) -> String {
    cfg.echo().iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
}

/// The configured fold of the annotation file, or all of it.
fn select_fold(cfg: &RunConfig, table: AnnotationTable, default: Fold) -> Result<AnnotationTable, Failure> {
    let ratios = cfg.ratios()?;
    match cfg.fold.unwrap_or(default).index() {
        None => Ok(table),
        Some(k) => {
            let [train, val, test] = split(&table, ratios, cfg.split_seed)?;
            Ok([train, val, test].into_iter().nth(k).expect("three folds"))
        }
    }
}

fn graph_for(cfg: &RunConfig, table: &AnnotationTable) -> Result<KnowledgeGraph, Failure> {
    let kg = build_radkg(table, cfg.policy);
    if !cfg.cooccurrence {
        return Ok(kg);
    }
    let matrix = cooccurrence_matrix(table, cfg.policy);
    Ok(add_cooccurrence(&kg, &matrix, cfg.cooccurrence_threshold)?)
}

pub fn build_kg(cfg: &RunConfig) -> Result<String, Failure> {
    let annotations = cfg.require(&cfg.annotations, "annotations")?;
    let output = cfg.require(&cfg.output, "output")?;
    let table = select_fold(cfg, AnnotationTable::read_csv(annotations)?, Fold::All)?;
    let kg = graph_for(cfg, &table)?;

    let mut bytes = comment_block(cfg).into_bytes();
    kg.write_to(&mut bytes).map_err(|e| io_err(output, e))?;
    write_file(output, &bytes)?;

    let counts = kg.count_by_relation();
    let mut summary = format!("images\t{}\nfindings\t{}\n", kg.num_images(), kg.num_findings());
    for r in RelationKind::ALL {
        summary.push_str(&format!("{r}\t{}\n", counts.get(&r).copied().unwrap_or(0)));
    }
    summary.push_str(&format!("total\t{}\n", kg.len()));
    Ok(summary)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String, Failure> {
    let features_path = cfg.require(&cfg.features, "features")?;
    let annotations = cfg.require(&cfg.annotations, "annotations")?;
    let checkpoint = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let ratios = cfg.ratios()?;
    let train_config = cfg.train_config();
    train_config.validate()?;

    let table = AnnotationTable::read_csv(annotations)?;
    let features = load_features(features_path)?;
    let [train_fold, val_fold, _] = split(&table, ratios, cfg.split_seed)?;
    if train_fold.num_images() == 0 {
        return Err(Failure::Data("train fold is empty".into()));
    }
    let kg = graph_for(cfg, &train_fold)?;
    let data = LinkData::new(&kg, &features, train_fold.ids())?;

    let channels = if cfg.scorer == ScorerKind::ConvE {
        cfg.channels
    } else {
        0
    };
    let dims = ModelDims::new(
        features.dim(),
        cfg.embed_dim,
        table.num_findings(),
        channels,
        cfg.relations(),
    );
    let model = init_model(dims, cfg.scorer, cfg.seed)?;
    let val = (val_fold.num_images() > 0).then_some(ValidationSet {
        features: &features,
        truth: &val_fold,
        policy: cfg.policy,
    });
    let outcome = train(model, &data, val.as_ref(), &train_config)?;

    let mut ck = Checkpoint::new(outcome.best.clone());
    for (k, v) in cfg.echo() {
        ck.metadata.insert(k, v);
    }
    ck.metadata.insert(FINDINGS_KEY.into(), table.findings().join("\t"));
    ck.metadata.insert("best_epoch".into(), outcome.best_epoch.to_string());
    let best_val = outcome
        .best_val_macro_auc
        .map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
    ck.metadata.insert("best_val_macro_auc".into(), best_val.clone());
    save_checkpoint(&ck, checkpoint)?;

    let history = cfg
        .history
        .clone()
        .unwrap_or_else(|| with_suffix(checkpoint, ".history.tsv"));
    write_file(
        &history,
        format!("{}{}", comment_block(cfg), outcome.history_tsv()).as_bytes(),
    )?;

    Ok(format!(
        "epochs\t{}\nbest_epoch\t{}\nbest_val_macro_auc\t{best_val}\n",
        outcome.history.len(),
        outcome.best_epoch
    ))
}

fn load_model(cfg: &RunConfig) -> Result<(Checkpoint, FeatureTable), Failure> {
    let checkpoint = load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let features = load_features(cfg.require(&cfg.features, "features")?)?;
    let expected = checkpoint.model.dims().feature_dim;
    if features.dim() != expected {
        return Err(Failure::Data(format!(
            "feature dimension mismatch: checkpoint expects {expected}, feature file has {}",
            features.dim()
        )));
    }
    Ok((checkpoint, features))
}

fn finding_names(checkpoint: &Checkpoint) -> Vec<String> {
    let n = checkpoint.model.dims().findings;
    match checkpoint.metadata.get(FINDINGS_KEY) {
        Some(v) if v.split('\t').count() == n => v.split('\t').map(String::from).collect(),
        _ => (0..n).map(|j| format!("F{j:02}")).collect(),
    }
}

fn check_findings(model: &EmbeddingModel, table: &AnnotationTable) -> Result<(), Failure> {
    if model.dims().findings != table.num_findings() {
        return Err(Failure::Data(format!(
            "finding count mismatch: checkpoint has {}, annotation file has {}",
            model.dims().findings,
            table.num_findings()
        )));
    }
    Ok(())
}

/// Writes the evaluation report and fails with [`Failure::Undefined`] when
/// no finding has a defined AUC.
pub fn eval_cmd(cfg: &RunConfig) -> Result<String, Failure> {
    let (checkpoint, features) = load_model(cfg)?;
    let annotations = cfg.require(&cfg.annotations, "annotations")?;
    let table = select_fold(cfg, AnnotationTable::read_csv(annotations)?, Fold::Test)?;
    check_findings(&checkpoint.model, &table)?;
    let subset = cfg
        .eval_findings
        .iter()
        .map(|name| {
            table
                .findings()
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Failure::Usage(format!("unknown finding `{name}` in eval_findings")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let subset = (!subset.is_empty()).then_some(subset.as_slice());

    let report = evaluate(&checkpoint.model, &features, &table, cfg.policy, subset, cfg.threshold)?;
    let text = report.render(&cfg.echo());
    match &cfg.output {
        Some(path) => write_file(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    if !report.is_defined() {
        return Err(Failure::Undefined(format!(
            "macro AUC undefined over {} images (no finding has both classes)",
            report.images
        )));
    }
    let macro_auc = report.macro_auc.expect("defined");
    Ok(if cfg.output.is_some() {
        format!("macro_auc\t{macro_auc:.6}\n")
    } else {
        String::new()
    })
}

pub fn predict_cmd(cfg: &RunConfig) -> Result<String, Failure> {
    let (checkpoint, features) = load_model(cfg)?;
    let output = cfg.require(&cfg.output, "output")?;
    let ids: Vec<String> = match &cfg.annotations {
        Some(path) => {
            let table = select_fold(cfg, AnnotationTable::read_csv(path)?, Fold::All)?;
            check_findings(&checkpoint.model, &table)?;
            table.ids().to_vec()
        }
        None => features.ids().to_vec(),
    };
    let rows = features.align(&ids)?;
    let mut predictions = Vec::with_capacity(ids.len());
    for (id, r) in ids.iter().zip(rows) {
        let mut row = predict(&checkpoint.model, id, features.code(r))?;
        if let Some(tau) = cfg.threshold {
            row.labels = Some(classify(&row, tau)?);
        }
        predictions.push(row);
    }
    let mut csv = Vec::new();
    write_predictions(&mut csv, &finding_names(&checkpoint), &predictions).map_err(|e| io_err(output, e))?;
    write_file(output, &csv)?;
    write_file(&with_suffix(output, ".config.txt"), cfg.echo_text().as_bytes())?;
    Ok(format!("rows\t{}\n", predictions.len()))
}

pub fn synth_cmd(cfg: &RunConfig) -> Result<String, Failure> {
    let features_path = cfg.require(&cfg.features, "features")?;
    let annotations = cfg.require(&cfg.annotations, "annotations")?;
    let (features, table) = synth_dataset(&cfg.synthetic_spec())?;
    features.write_csv(features_path)?;
    table.write_csv(annotations)?;
    write_file(&with_suffix(features_path, ".config.txt"), cfg.echo_text().as_bytes())?;
    Ok(format!(
        "images\t{}\nfindings\t{}\nfeature_dim\t{}\n",
        table.num_images(),
        table.num_findings(),
        features.dim()
    ))
}

pub fn gradcheck_cmd(cfg: &RunConfig, corrupt: bool) -> Result<String, Failure> {
    if cfg.gradcheck_seeds == 0 {
        return Err(Failure::Usage("gradcheck_seeds must be at least 1".into()));
    }
    let mut out = String::new();
    let mut worst = 0.0f64;
    let mut failed = 0u64;
    for seed in cfg.seed..cfg.seed + cfg.gradcheck_seeds {
        let mut gc = GradCheckConfig::new(cfg.scorer, cfg.gradcheck_dim, cfg.embed_dim, cfg.channels, seed);
        gc.tolerance = cfg.gradcheck_tolerance;
        gc.corrupt = corrupt;
        let report = check_gradients(&gc)?;
        let status = if report.passed() { "PASS" } else { "FAIL" };
        failed += u64::from(!report.passed());
        worst = worst.max(report.max_rel_error());
        out.push_str(&format!(
            "seed {seed}\t{status}\tmax_rel_error {:.3e}",
            report.max_rel_error()
        ));
        for b in &report.blocks {
            out.push_str(&format!("\t{}:{}/{}", b.name, b.checked, b.checked + b.skipped));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "max_rel_error\t{worst:.3e}\ntolerance\t{:e}\n",
        cfg.gradcheck_tolerance
    ));
    if failed > 0 {
        print!("{out}");
        return Err(Failure::Numerical(format!(
            "{failed} of {} gradient checks exceeded tolerance",
            cfg.gradcheck_seeds
        )));
    }
    Ok(out)
}

pub fn flush_stdout() {
    let _ = std::io::stdout().flush();
}
