use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{derive_seed, Sample};
use crate::error::{Error, ErrorKind, Result};
use crate::numerics::{adam_step, AdamState, Graph, Tensor};
use crate::scalar::Scalar;
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::model::Model;
use crate::trainer::TrainConfig;

const SHUFFLE_STREAM: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Mean per-sample loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainHistory {
    /// `epoch,mean_loss` rows, epochs counted from 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["epoch", "mean_loss"]).map_err(|e| csv_error(path, e))?;
        for (i, l) in self.epoch_losses.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{l:e}")]).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.into(), msg: e.to_string() }
}

/// Loss and gradient of every parameter for one sample.
pub fn sample_gradients<T: Scalar>(model: &Model<T>, sample: &Sample<T>) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let (loss, _) = model.loss(&mut g, &p, sample)?;
    let grads = g.backward(loss)?;
    let value = g.value(loss).item().to_f64_lossless();
    Ok((value, p.vars().iter().map(|&v| grads.wrt(&g, v)).collect()))
}

fn norms_summary<T: Scalar>(model: &Model<T>) -> String {
    let mut s = String::new();
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        let n: f64 = t.data().iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>().sqrt();
        let _ = write!(s, " {name}={n:.3e}");
    }
    s
}

fn with_diagnostics<T: Scalar>(e: Error, model: &Model<T>, epoch: usize, ids: &[&str]) -> Error {
    if e.kind() != ErrorKind::Numerical {
        return e;
    }
    Error::NonFinite(format!(
        "{e}; epoch {epoch}, batch [{}]; parameter norms:{}",
        ids.join(", "),
        norms_summary(model)
    ))
}

fn check_training_set<T>(samples: &[Sample<T>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let pos = samples.iter().filter(|s| s.label == 1).count();
    if pos == 0 || pos == samples.len() {
        log::warn!("training pairs cover a single class ({pos} of {} positive)", samples.len());
    }
    Ok(())
}

/// Mini-batch Adam on BCE.
///
/// Batch order comes from the seed alone. Per-sample gradients may be
/// computed in parallel but are always summed in batch order, so results do
/// not depend on the thread count. Checkpoints go to `checkpoint_dir` every
/// `save_every` epochs and after the last one.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    model: &mut Model<T>,
    samples: &[Sample<T>],
    checkpoint_dir: Option<&Path>,
) -> Result<TrainHistory> {
    config.validate()?;
    check_training_set(samples)?;
    let mut state = AdamState::new(&model.params, config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainHistory { epoch_losses: Vec::with_capacity(config.epochs), checkpoints: Vec::new() };
    let mut losses = vec![0.0; samples.len()];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let ids: Vec<&str> = batch.iter().map(|&i| samples[i].id.as_str()).collect();
            let results: Vec<Result<(f64, Vec<Tensor<T>>)>> =
                batch.par_iter().map(|&i| sample_gradients(model, &samples[i])).collect();
            let mut total: Option<Vec<Tensor<T>>> = None;
            for (&i, r) in batch.iter().zip(results) {
                let (loss, grads) = r.map_err(|e| with_diagnostics(e, model, epoch, &ids))?;
                losses[i] = loss;
                total = Some(match total {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += *y);
                        }
                        acc
                    }
                });
            }
            let inv = T::of(1.0 / batch.len() as f64);
            let mean: Vec<Tensor<T>> = total.expect("non-empty batch").iter().map(|t| t.scale(inv)).collect();
            adam_step(&mut model.params, &mean, &mut state).map_err(|e| with_diagnostics(e, model, epoch, &ids))?;
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch} mean loss; parameter norms:{}", norms_summary(model))));
        }
        log::info!("epoch {epoch}/{}: mean loss {mean_loss:.6}", config.epochs);
        history.epoch_losses.push(mean_loss);

        if let Some(dir) = checkpoint_dir {
            if epoch % config.save_every == 0 || epoch == config.epochs {
                let path = dir.join(format!("checkpoint_epoch{epoch:04}.json"));
                Checkpoint::capture(model, config, epoch).save(&path)?;
                history.checkpoints.push(path);
            }
        }
    }
    Ok(history)
}
