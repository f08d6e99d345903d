use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::condition::{ImageBank, TrainingSet};
use super::{build_classifier, load_pretrained, ClassifyConfig};
use crate::convert::rgb_to_tensor;
use crate::data::{traditional_augment, SplitManifest, Subset};
use crate::error::{Error, Result};
use crate::imaging::{resize_rgb_bilinear, RgbImage};
use crate::label::ClassLabel;
use crate::loss::softmax_cross_entropy;
use crate::nn::{apply_buffer_updates, Adam, Graph, Network, Tensor};
use crate::rng;

const N_CLASSES: usize = 2;
const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: ClassLabel,
    pub predicted: ClassLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// One (architecture, condition) cell of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub arch: String,
    pub condition: String,
    pub train_size: usize,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    /// Percent correct on the test split with the best-epoch parameters.
    pub test_accuracy: f64,
    pub predictions: Vec<Prediction>,
    pub log: Vec<ClassifyEpochLog>,
}

/// Percent of predictions matching their label; 0 for an empty slice.
pub fn accuracy(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    100.0 * preds.iter().filter(|p| p.label == p.predicted).count() as f64 / preds.len() as f64
}

fn prepare(img: &RgbImage, size: usize) -> Tensor {
    if img.dims() == (size, size) {
        rgb_to_tensor(img)
    } else {
        rgb_to_tensor(&resize_rgb_bilinear(img, size, size))
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) },
        )
        .0
}

/// Predicted class per input, evaluated in inference mode.
pub fn predict(net: &dyn Network, inputs: &[Tensor]) -> Result<Vec<ClassLabel>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let logits = net.infer(Tensor::stack(chunk)?);
        let k = logits.shape()[1];
        for row in logits.data().chunks(k) {
            out.push(ClassLabel::from_index(argmax(row)).ok_or_else(|| Error::Shape(format!("{k}-way logits")))?);
        }
    }
    Ok(out)
}

fn eval_subset(
    split: &SplitManifest,
    subset: Subset,
    bank: &ImageBank,
    size: usize,
) -> Result<(Vec<String>, Vec<ClassLabel>, Vec<Tensor>)> {
    let ids = split.ids(subset).to_vec();
    let mut labels = Vec::with_capacity(ids.len());
    let mut inputs = Vec::with_capacity(ids.len());
    for id in &ids {
        labels.push(
            split
                .label(id)
                .ok_or_else(|| Error::Contract(format!("no label for `{id}`")))?,
        );
        inputs.push(prepare(bank.get(id)?, size));
    }
    Ok((ids, labels, inputs))
}

fn predictions(net: &dyn Network, ids: &[String], labels: &[ClassLabel], inputs: &[Tensor]) -> Result<Vec<Prediction>> {
    Ok(predict(net, inputs)?
        .into_iter()
        .zip(ids.iter().zip(labels))
        .map(|(predicted, (id, label))| Prediction {
            id: id.clone(),
            label: *label,
            predicted,
        })
        .collect())
}

/// Trains `arch` on `set`, keeps the parameters of the epoch with the best
/// validation accuracy (earliest on ties) and scores them on the test split.
///
/// Initialisation, batch order and transform draws depend only on
/// `cfg.seed`, the epoch and the item's position, so conditions differ
/// only in what they put in the training set.
pub fn train_cell(
    arch: &str,
    set: &TrainingSet,
    split: &SplitManifest,
    bank: &ImageBank,
    cfg: &ClassifyConfig,
) -> Result<CellResult> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Degenerate(format!(
            "condition `{}` has no training items",
            set.condition
        )));
    }
    let mut net = build_classifier(arch, N_CLASSES, cfg)?;
    if let Some(p) = &cfg.pretrained {
        let skipped = load_pretrained(&mut net, p)?;
        log::info!(
            "{arch}: pretrained weights loaded, {} entries left at init",
            skipped.len()
        );
    }
    let size = cfg.input_size;
    let train: Vec<(&RgbImage, usize, bool)> = set
        .items
        .iter()
        .map(|it| Ok((bank.get(&it.id)?, it.label.index(), it.transform)))
        .collect::<Result<_>>()?;
    let val = eval_subset(split, Subset::Val, bank, size)?;
    let test = eval_subset(split, Subset::Test, bank, size)?;

    let mut opt = Adam::new(cfg.adam, net.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0, net.params().clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derive(cfg.seed, "classify-shuffle", epoch as u64));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, y, transform) = train[i];
                let x = if transform {
                    let mut r = rng::derive(cfg.seed, "classify-augment", ((epoch as u64) << 32) | i as u64);
                    prepare(&traditional_augment(img, &mut r, &cfg.augment), size)
                } else {
                    prepare(img, size)
                };
                xs.push(x);
                ys.push(y);
            }
            let batch = Tensor::stack(&xs)?;
            let (loss, grads, updates) = {
                let mut g = Graph::train().with_rng(rng::derive(
                    cfg.seed,
                    "classify-dropout",
                    ((epoch as u64) << 32) | b as u64,
                ));
                let p = g.bind(net.params());
                let x = g.input(batch);
                let y = net.forward(&mut g, &p, x);
                let logits = g.value(y);
                let k = logits.shape()[1];
                let (loss, dl) = softmax_cross_entropy(logits.data(), k, &ys)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: "classifier",
                        epoch,
                        batch: b,
                    });
                }
                let seed = Tensor::from_vec(&[ys.len(), k], dl)?;
                let mut grads = g.backward(&[(y, seed)]);
                let pg = grads.take_params(&p);
                (loss, pg, g.take_buffer_updates())
            };
            apply_buffer_updates(net.params_mut(), updates);
            opt.step(net.params_mut(), &grads);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_acc = accuracy(&predictions(&net, &val.0, &val.1, &val.2)?);
        if val_acc > best.0 {
            best = (val_acc, epoch, net.params().clone());
        }
        log.push(ClassifyEpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: val_acc,
        });
        log::debug!(
            "{arch}/{}: epoch {epoch} loss {:.4} val {val_acc:.2}",
            set.condition,
            loss_sum / seen as f64
        );
    }
    let (val_accuracy, best_epoch, params) = best;
    net.params_mut().copy_from(&params)?;
    let preds = predictions(&net, &test.0, &test.1, &test.2)?;
    let result = CellResult {
        arch: arch.to_string(),
        condition: set.condition.name.clone(),
        train_size: set.len(),
        best_epoch,
        val_accuracy,
        test_accuracy: accuracy(&preds),
        predictions: preds,
        log,
    };
    log::info!(
        "{arch}/{}: best epoch {best_epoch}, val {val_accuracy:.2}%, test {:.2}%",
        result.condition,
        result.test_accuracy
    );
    Ok(result)
}

/// One table row: every condition trained with the same config and seed.
pub fn train_and_eval(
    arch: &str,
    sets: &[TrainingSet],
    split: &SplitManifest,
    bank: &ImageBank,
    cfg: &ClassifyConfig,
) -> Result<Vec<CellResult>> {
    sets.iter().map(|s| train_cell(arch, s, split, bank, cfg)).collect()
}
