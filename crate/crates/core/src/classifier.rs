//! Residual MLP classifier: loss, local SGD training and accuracy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, LabeledDataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{
    backward, forward, predict, sgd_step, Activation, LayerSpec, ModelSpec, ParameterVector,
};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub spec: ModelSpec,
    pub alpha: f64,
    pub local_epochs: usize,
    pub batch: usize,
    pub classes: usize,
}

impl ClassifierConfig {
    pub fn new(spec: ModelSpec, alpha: f64, local_epochs: usize, batch: usize) -> Result<Self> {
        let cfg = ClassifierConfig {
            spec,
            alpha,
            local_epochs,
            batch,
            classes: NUM_CLASSES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.spec.output_width() != self.classes {
            return Err(Error::structural(format!(
                "classifier emits {} logits for {} classes",
                self.spec.output_width(),
                self.classes
            )));
        }
        if !self.spec.layers.iter().any(|l| l.residual) {
            return Err(Error::structural(
                "classifier needs at least one residual layer",
            ));
        }
        if self.local_epochs == 0 || self.batch == 0 {
            return Err(Error::parameter(
                "local_epochs and batch must be at least 1",
            ));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::parameter("alpha must be non-negative"));
        }
        Ok(())
    }
}

/// Four hidden relu layers of `width` units, the middle two residual.
pub fn residual_mlp(input: usize, width: usize, classes: usize) -> Result<ModelSpec> {
    ModelSpec::new(vec![
        LayerSpec::dense(input, width, Activation::Relu),
        LayerSpec::residual(width, Activation::Relu),
        LayerSpec::residual(width, Activation::Relu),
        LayerSpec::dense(width, width, Activation::Relu),
        LayerSpec::dense(width, classes, Activation::Identity),
    ])
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::structural(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::parameter("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::parameter(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    let m = logits.rows() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        let g = grad.row_mut(r);
        g[label] -= 1.0;
        for v in g.iter_mut() {
            *v /= m;
        }
    }
    Ok((loss / m, grad))
}

/// One SGD step on a labeled mini-batch; returns the new parameters and the
/// pre-step loss.
pub fn sgd_on_batch(
    params: &ParameterVector,
    spec: &ModelSpec,
    inputs: &Matrix,
    labels: &[usize],
    alpha: f64,
) -> Result<(ParameterVector, f64)> {
    let (loss, grad) = batch_gradient(params, spec, inputs, labels)?;
    Ok((sgd_step(params, &grad, alpha)?, loss))
}

/// Mean loss and parameter gradient on a labeled batch.
pub fn batch_gradient(
    params: &ParameterVector,
    spec: &ModelSpec,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<(f64, ParameterVector)> {
    let trace = forward(spec, params, inputs)?;
    let (loss, dlogits) = softmax_cross_entropy(&trace.output, labels)?;
    let grads = backward(spec, params, &trace, &dlogits)?;
    Ok((loss, grads.params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainOutput {
    pub params: ParameterVector,
    /// Mean of the per-step mini-batch losses.
    pub mean_loss: f64,
    pub steps: usize,
}

/// `local_epochs` passes of shuffled mini-batch SGD over the shard.
pub fn local_train<R: Rng + ?Sized>(
    params: &ParameterVector,
    shard: &ClientShard,
    cfg: &ClassifierConfig,
    rng: &mut R,
) -> Result<LocalTrainOutput> {
    train_epochs(params, &shard.dataset, cfg, cfg.local_epochs, rng).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("client {}: {msg}", shard.client_id)),
        other => other,
    })
}

/// Mini-batch SGD for `epochs` passes over `data`.
pub fn train_epochs<R: Rng + ?Sized>(
    params: &ParameterVector,
    data: &LabeledDataset,
    cfg: &ClassifierConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<LocalTrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::data("empty training set"));
    }
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch) {
            let inputs = data.samples().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let (next, loss) = sgd_on_batch(&params, &cfg.spec, &inputs, &labels, cfg.alpha)?;
            params = next;
            loss_sum += loss;
            steps += 1;
        }
    }
    Ok(LocalTrainOutput {
        params,
        mean_loss: if steps == 0 {
            0.0
        } else {
            loss_sum / steps as f64
        },
        steps,
    })
}

/// Arg-max class per row; ties go to the lowest class id.
pub fn predict_classes(
    params: &ParameterVector,
    spec: &ModelSpec,
    inputs: &Matrix,
) -> Result<Vec<usize>> {
    let logits = predict(spec, params, inputs)?;
    Ok((0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect())
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn evaluate_accuracy(
    params: &ParameterVector,
    spec: &ModelSpec,
    test: &LabeledDataset,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::data("empty test set"));
    }
    let preds = predict_classes(params, spec, test.samples())?;
    let correct = preds
        .iter()
        .zip(test.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean cross-entropy over a whole dataset.
pub fn evaluate_loss(
    params: &ParameterVector,
    spec: &ModelSpec,
    data: &LabeledDataset,
) -> Result<f64> {
    let logits = predict(spec, params, data.samples())?;
    softmax_cross_entropy(&logits, data.labels()).map(|(l, _)| l)
}
