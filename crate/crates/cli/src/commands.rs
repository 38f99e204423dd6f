use std::fs;
use std::path::{Path, PathBuf};

use longi_core::config::ExperimentConfig;
use longi_core::dataset::{
    build_pairs, load_manifest, load_samples, precompute_flows, subject_split, synth_cohort, PairIndex, PairRecord,
    ScanRecord, SubjectSplit, PAIR_INDEX_FILE,
};
use longi_core::trainer::{self, selfcheck, Checkpoint, Model};
use longi_core::{Error, Result, Scalar};
use serde_json::json;

use crate::{EvalArgs, FlowArgs, GradcheckArgs, PredictArgs, SplitChoice, SynthArgs, TrainArgs};

fn write_json(path: &Path, value: &serde_json::Value) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(path.to_path_buf())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn index_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(PAIR_INDEX_FILE)
    } else {
        p.to_path_buf()
    }
}

fn scans(pairs: &[PairRecord]) -> Vec<ScanRecord> {
    pairs.iter().map(|p| p.current.clone()).collect()
}

/// Pairs of the chosen side, plus the split when one was needed.
fn select(
    pairs: Vec<PairRecord>,
    train_fraction: f64,
    seed: u64,
    choice: SplitChoice,
) -> Result<(Vec<PairRecord>, Option<SubjectSplit>)> {
    if choice == SplitChoice::All {
        return Ok((pairs, None));
    }
    let split = subject_split(&scans(&pairs), train_fraction, seed)?;
    let chosen = pairs
        .into_iter()
        .filter(|p| match choice {
            SplitChoice::Train => split.is_train(&p.current.subject_id),
            _ => split.is_test(&p.current.subject_id),
        })
        .collect();
    Ok((chosen, Some(split)))
}

pub fn synth(a: SynthArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = ExperimentConfig::load_or_default(a.config.config.as_deref())?;
    if let Some(n) = a.subjects {
        cfg.synth.subjects = n;
    }
    if let Some(s) = a.size {
        cfg.phantom.size = s;
    }
    if let Some(t) = a.timepoints {
        cfg.phantom.timepoints = t;
    }
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    cfg.phantom.validate()?;
    if cfg.synth.subjects < 2 {
        return Err(Error::InvalidArgument("at least two subjects are needed for two classes".into()));
    }
    let records = synth_cohort(&a.out, cfg.synth.subjects, &cfg.phantom, cfg.synth.seed)?;
    let mut written = vec![a.out.join("manifest.csv")];
    written.push(cfg.echo_to(&a.out)?);
    log::info!("{} volumes written", records.len());
    Ok(written)
}

pub fn flow(a: FlowArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = ExperimentConfig::load_or_default(a.config.config.as_deref())?;
    if let Some(m) = a.method {
        cfg.flow.method = m;
    }
    if let Some(g) = a.target_gap {
        cfg.pairing.target_gap = g;
    }
    cfg.pairing.validate()?;
    let records = load_manifest(&a.manifest)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: manifest has no rows", a.manifest.display())));
    }
    let pairs = build_pairs(&records, &cfg.pairing)?;
    let index = precompute_flows(&pairs, &cfg.pairing, &cfg.flow, &a.out)?;
    let mut written: Vec<PathBuf> = index.pairs.iter().filter_map(|p| p.flow_path.clone()).collect();
    written.push(a.out.join(PAIR_INDEX_FILE));
    written.push(cfg.echo_to(&a.out)?);
    Ok(written)
}

pub fn train(a: TrainArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = ExperimentConfig::load_or_default(a.config.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.embedding.mode = m;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let index = PairIndex::load(&index_path(&a.pairs))?;
    // The flows on disk decide the effective flow settings.
    cfg.pairing = index.pairing;
    cfg.flow = index.flow.clone();
    cfg.validate()?;

    let (chosen, split) = select(index.pairs, cfg.eval.train_fraction, cfg.train.seed, a.split)?;
    let samples = load_samples::<f32>(&chosen)?;
    let mut model = Model::<f32>::new(cfg.model(), cfg.train.seed)?;

    create_dir(&a.out)?;
    let mut written = vec![cfg.echo_to(&a.out)?];
    if let Some(split) = &split {
        written.push(write_json(&a.out.join("split.json"), &serde_json::to_value(split).expect("split serializes"))?);
    }
    let history = trainer::train(&cfg.train, &mut model, &samples, Some(&a.out.join("checkpoints")))?;
    let loss_path = a.out.join("loss.csv");
    history.write_csv(&loss_path)?;
    written.push(loss_path);
    written.extend(history.checkpoints);
    let final_path = a.out.join("checkpoint.json");
    Checkpoint::capture(&model, &cfg.train, cfg.train.epochs).save(&final_path)?;
    written.push(final_path);
    Ok(written)
}

/// Restored model plus the pairs it should see.
fn prepare(checkpoint: &Path, config: Option<&Path>, pairs: &Path) -> Result<(Checkpoint, ExperimentConfig, PairIndex)> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ExperimentConfig::load_or_default(config)?;
    cfg.embedding = ck.model.embedding.clone();
    cfg.querying = ck.model.querying.clone();
    cfg.train = ck.train.clone();
    let index = PairIndex::load(&index_path(pairs))?;
    cfg.pairing = index.pairing;
    cfg.flow = index.flow.clone();
    Ok((ck, cfg, index))
}

fn eval_with<T: Scalar>(ck: &Checkpoint, pairs: &[PairRecord], a: &EvalArgs, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let model: Model<T> = ck.restore()?;
    let samples = load_samples::<T>(pairs)?;
    let report = trainer::evaluate(&model, &samples, cfg.eval.aggregation)?;
    let path = a.out.join("eval_report.json");
    report.save(&path)?;
    Ok(path)
}

pub fn eval(a: EvalArgs) -> Result<Vec<PathBuf>> {
    let (ck, mut cfg, index) = prepare(&a.checkpoint, a.config.config.as_deref(), &a.pairs)?;
    if let Some(agg) = a.aggregate {
        cfg.eval.aggregation = agg;
    }
    let (chosen, _) = select(index.pairs, cfg.eval.train_fraction, ck.train.seed, a.split)?;
    if chosen.is_empty() {
        return Err(Error::Data("the selected split holds no pairs".into()));
    }
    create_dir(&a.out)?;
    let report = match ck.scalar.as_str() {
        "f64" => eval_with::<f64>(&ck, &chosen, &a, &cfg)?,
        _ => eval_with::<f32>(&ck, &chosen, &a, &cfg)?,
    };
    Ok(vec![report, cfg.echo_to(&a.out)?])
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn predict_with<T: Scalar>(ck: &Checkpoint, pairs: &[PairRecord], a: &PredictArgs) -> Result<Vec<PathBuf>> {
    let model: Model<T> = ck.restore()?;
    let samples = load_samples::<T>(pairs)?;
    let scores = trainer::score_samples(&model, &samples)?;
    let rows: Vec<serde_json::Value> = samples
        .iter()
        .zip(&scores)
        .map(|(s, &score)| {
            json!({
                "id": s.id,
                "subject_id": s.subject_id,
                "label": s.label,
                "score": score,
                "predicted": u8::from(score >= trainer::THRESHOLD),
            })
        })
        .collect();
    let mut written = vec![write_json(&a.out.join("predictions.json"), &json!(rows))?];
    if a.attention {
        let dir = a.out.join("attention");
        create_dir(&dir)?;
        for s in &samples {
            let path = dir.join(format!("{}.json", file_stem(&s.id)));
            trainer::export_attention(&model, s, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn predict(a: PredictArgs) -> Result<Vec<PathBuf>> {
    let (ck, cfg, index) = prepare(&a.checkpoint, a.config.config.as_deref(), &a.pairs)?;
    let chosen: Vec<PairRecord> = if a.ids.is_empty() {
        index.pairs
    } else {
        for id in &a.ids {
            if !index.pairs.iter().any(|p| &p.id() == id) {
                return Err(Error::Data(format!("no pair with id {id}")));
            }
        }
        index.pairs.into_iter().filter(|p| a.ids.contains(&p.id())).collect()
    };
    create_dir(&a.out)?;
    let mut written = match ck.scalar.as_str() {
        "f64" => predict_with::<f64>(&ck, &chosen, &a)?,
        _ => predict_with::<f32>(&ck, &chosen, &a)?,
    };
    written.push(cfg.echo_to(&a.out)?);
    Ok(written)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<Vec<PathBuf>> {
    let cases = selfcheck::gradient_suite(a.seed)?;
    for c in &cases {
        println!(
            "{:<6} {:<50} max_rel_error={:.3e} checked={} kinks={}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.checked,
            c.kinks
        );
    }
    let mut written = Vec::new();
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let value = json!({ "tolerance": selfcheck::TOLERANCE, "cases": cases });
        written.push(write_json(&dir.join("gradcheck.json"), &value)?);
    }
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::GradCheck(format!("{} case(s) above tolerance: {}", failed.len(), failed.join(", "))));
    }
    Ok(written)
}
