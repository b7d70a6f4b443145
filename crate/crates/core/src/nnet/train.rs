//! Mini-batch training loops for the segmentation and classification nets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{sigmoid, ReluMode};
use super::loss::{binary_cross_entropy, dice_coefficient, dice_loss_grad};
use super::network::{Network, Topology};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dice_smooth: f64,
    pub optimizer: Optimizer,
}

pub const DEFAULT_EPOCHS: usize = 60;

impl TrainConfig {
    pub fn unet_default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            dice_smooth: 1.0,
            optimizer: Optimizer::adam(),
        }
    }

    pub fn classifier_default() -> Self {
        Self {
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            ..Self::unet_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::InvalidParameter("dice smoothing must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: network input and target (mask for the U-net, a
/// one-element 0/1 tensor for the classifier).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_dice: Option<f64>,
    /// `1 - mean_dice`, the same quantity as a distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_minus_dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub first_loss: f64,
    pub last_loss: f64,
    pub best_loss: f64,
    /// Fraction of epoch-to-epoch steps where the mean loss did not rise.
    pub non_increasing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub task: String,
    pub epochs: Vec<EpochStats>,
    pub trend: Trend,
}

impl TrainReport {
    fn new(task: &str, epochs: Vec<EpochStats>) -> Self {
        let losses: Vec<f64> = epochs.iter().map(|e| e.mean_loss).collect();
        let steps = losses.len().saturating_sub(1);
        let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
        let trend = Trend {
            first_loss: losses.first().copied().unwrap_or(f64::NAN),
            last_loss: losses.last().copied().unwrap_or(f64::NAN),
            best_loss: losses.iter().copied().fold(f64::INFINITY, f64::min),
            non_increasing_fraction: if steps == 0 { 1.0 } else { non_increasing as f64 / steps as f64 },
        };
        Self {
            task: task.to_string(),
            epochs,
            trend,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    moments: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl OptimizerState {
    fn new(net: &Network, cfg: &TrainConfig) -> Self {
        let moments = match cfg.optimizer {
            Optimizer::Sgd => Vec::new(),
            Optimizer::Adam { .. } => net
                .layers()
                .iter()
                .map(|l| l.params.iter().map(|p| (vec![0.0; p.len()], vec![0.0; p.len()])).collect())
                .collect(),
        };
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            step: 0,
            moments,
        }
    }

    /// Applies the accumulated gradients, scaled by `grad_scale`.
    fn apply(&mut self, net: &mut Network, grad_scale: f64) {
        self.step += 1;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            let layer = &mut *layer;
            for (pi, (param, grad)) in layer.params.iter_mut().zip(&layer.grads).enumerate() {
                match self.kind {
                    Optimizer::Sgd => {
                        for (w, g) in param.data_mut().iter_mut().zip(grad.data()) {
                            *w -= self.lr * g * grad_scale;
                        }
                    }
                    Optimizer::Adam { beta1, beta2, eps } => {
                        let (m, v) = &mut self.moments[li][pi];
                        let c1 = 1.0 - beta1.powi(self.step);
                        let c2 = 1.0 - beta2.powi(self.step);
                        for (((w, g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                            let g = g * grad_scale;
                            *mi = beta1 * *mi + (1.0 - beta1) * g;
                            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                            *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

fn check_dataset(net: &Network, data: &[Sample], expected: Topology) -> Result<()> {
    if net.topology() != expected {
        return Err(Error::TopologyMismatch {
            expected: expected.name().into(),
            actual: net.topology().name().into(),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    for s in data {
        if s.input.shape() != net.input_shape() {
            return Err(Error::shape(format!("{:?}", net.input_shape()), format!("{:?}", s.input.shape())));
        }
        if s.target.shape() != net.output_shape() {
            return Err(Error::shape(format!("{:?}", net.output_shape()), format!("{:?}", s.target.shape())));
        }
    }
    Ok(())
}

fn nan_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

/// Trains a U-net on (input, mask) pairs with the negative soft Dice loss,
/// computed per sample and averaged over the batch.
pub fn train(net: &mut Network, data: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(net, data, cfg, |_| {})
}

pub fn train_with(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(net, data, Topology::Unet)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(net, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            net.zero_grads();
            for &idx in chunk {
                let sample = &data[idx];
                let pred = net.forward_train(&sample.input).map_err(|e| nan_context(e, epoch, batch))?;
                let (loss, grad) = dice_loss_grad(&pred, &sample.target, cfg.dice_smooth)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss;
                dice_sum += -loss;
                net.backward(&grad).map_err(|e| nan_context(e, epoch, batch))?;
            }
            opt.apply(net, 1.0 / chunk.len() as f64);
        }
        net.clear_trace();
        let n = data.len() as f64;
        let mean_dice = dice_sum / n;
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / n,
            mean_dice: Some(mean_dice),
            one_minus_dice: Some(1.0 - mean_dice),
            accuracy: None,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainReport::new("unet", history))
}

/// Trains a classifier with binary cross-entropy; the gradient enters at the
/// pre-sigmoid score as `p - y`.
pub fn train_classifier(net: &mut Network, data: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    train_classifier_with(net, data, cfg, |_| {})
}

pub fn train_classifier_with(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(net, data, Topology::Classifier)?;
    if data.iter().any(|s| !matches!(s.target.data(), [0.0] | [1.0])) {
        return Err(Error::InvalidParameter("classifier labels must be 0 or 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(net, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let logit = net.logit_node();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            net.zero_grads();
            let mut sink: Vec<Vec<Tensor>> = net.layers().iter().map(|l| l.grads.clone()).collect();
            for &idx in chunk {
                let sample = &data[idx];
                let trace = net.trace(&sample.input).map_err(|e| nan_context(e, epoch, batch))?;
                let z = trace.outputs[logit].data()[0];
                let p = sigmoid(z);
                let y = sample.target.data()[0];
                let loss = binary_cross_entropy(p, y);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss;
                hits += usize::from((p >= 0.5) == (y == 1.0));
                let upstream = Tensor::from_vec(&[1], vec![p - y])?;
                net.backprop(&trace, logit, &upstream, ReluMode::Standard, Some(&mut sink))?;
            }
            for (layer, grads) in net.layers_mut().iter_mut().zip(sink) {
                layer.grads = grads;
            }
            opt.apply(net, 1.0 / chunk.len() as f64);
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / n,
            mean_dice: None,
            one_minus_dice: None,
            accuracy: Some(hits as f64 / n),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainReport::new("classifier", history))
}

/// Mean soft Dice (smoothing `smooth`) of the network's predictions.
pub fn evaluate_dice(net: &Network, data: &[Sample], smooth: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        total += dice_coefficient(&net.forward(&s.input)?, &s.target, smooth)?;
    }
    Ok(total / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 8x8 inputs with a bright square and its mask as the target.
    fn squares(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let (r0, c0) = (i % 4, (i / 4) % 4);
                let mut input = vec![0.1; 64];
                let mut target = vec![0.0; 64];
                for r in r0..r0 + 4 {
                    for c in c0..c0 + 4 {
                        input[r * 8 + c] = 1.0;
                        target[r * 8 + c] = 1.0;
                    }
                }
                Sample {
                    input: Tensor::from_vec(&[1, 8, 8], input).unwrap(),
                    target: Tensor::from_vec(&[1, 8, 8], target).unwrap(),
                }
            })
            .collect()
    }

    fn short(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 4, ..TrainConfig::unet_default() }
    }

    #[test]
    fn validate_rejects_bad_settings() {
        assert!(TrainConfig::unet_default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..short(1) }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..short(1) }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..short(1) }.validate().is_err());
        assert!(TrainConfig { dice_smooth: 0.0, ..short(1) }.validate().is_err());
    }

    #[test]
    fn trend_summarizes_losses() {
        let stats = |loss| EpochStats { epoch: 0, mean_loss: loss, mean_dice: None, one_minus_dice: None, accuracy: None };
        let r = TrainReport::new("unet", vec![stats(-0.2), stats(-0.5), stats(-0.4), stats(-0.7)]);
        assert_eq!(r.trend.first_loss, -0.2);
        assert_eq!(r.trend.last_loss, -0.7);
        assert_eq!(r.trend.best_loss, -0.7);
        assert!((r.trend.non_increasing_fraction - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unet_learns_squares_deterministically() {
        let data = squares(16);
        let mut a = Network::toy_unet(8, 3).unwrap();
        let before = evaluate_dice(&a, &data, 1.0).unwrap();
        let report = train(&mut a, &data, &short(40)).unwrap();
        let after = evaluate_dice(&a, &data, 1.0).unwrap();
        assert_eq!(report.epochs.len(), 40);
        assert!(after > before + 0.2, "dice {before} -> {after}");
        assert!(report.trend.last_loss < report.trend.first_loss);

        let mut b = Network::toy_unet(8, 3).unwrap();
        assert_eq!(train(&mut b, &data, &short(40)).unwrap(), report);
        assert_eq!(a.forward(&data[0].input).unwrap(), b.forward(&data[0].input).unwrap());
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let data = squares(4);
        let mut clf = Network::toy_classifier(8, 0).unwrap();
        assert!(train(&mut clf, &data, &short(1)).is_err());
        let mut unet = Network::toy_unet(8, 0).unwrap();
        assert!(train_classifier(&mut unet, &data, &short(1)).is_err());
    }

    #[test]
    fn single_sample_is_memorized() {
        let data = squares(1);
        let mut net = Network::toy_unet(8, 1).unwrap();
        train(&mut net, &data, &short(200)).unwrap();
        let dice = evaluate_dice(&net, &data, 0.0).unwrap();
        assert!(dice >= 0.95, "dice {dice}");
    }

    #[test]
    fn zero_mask_negatives_drive_activation_down() {
        let data: Vec<Sample> = squares(8)
            .into_iter()
            .map(|s| Sample { target: Tensor::zeros(&[1, 8, 8]), ..s })
            .collect();
        let mut net = Network::toy_unet(8, 2).unwrap();
        train(&mut net, &data, &short(60)).unwrap();
        for s in &data {
            let mean = net.forward(&s.input).unwrap().data().iter().sum::<f64>() / 64.0;
            assert!(mean < 0.1, "mean activation {mean}");
        }
    }

    fn labelled(bright: bool, i: usize) -> Sample {
        let level = if bright { 1.0 } else { 0.0 };
        let mut input = vec![0.0; 64];
        for (k, v) in input.iter_mut().enumerate() {
            *v = level + 0.05 * (((k * 7 + i * 13) % 11) as f64 / 11.0);
        }
        Sample {
            input: Tensor::from_vec(&[1, 8, 8], input).unwrap(),
            target: Tensor::from_vec(&[1], vec![f64::from(u8::from(bright))]).unwrap(),
        }
    }

    fn classifier_cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 4, ..TrainConfig::classifier_default() }
    }

    #[test]
    fn classifier_separates_and_stays_at_chance_without_signal() {
        let data: Vec<Sample> = (0..16).map(|i| labelled(i % 2 == 0, i)).collect();
        let mut net = Network::toy_classifier(8, 4).unwrap();
        let report = train_classifier(&mut net, &data, &classifier_cfg(60)).unwrap();
        assert_eq!(report.epochs.last().unwrap().accuracy, Some(1.0));
        let mut again = Network::toy_classifier(8, 4).unwrap();
        assert_eq!(train_classifier(&mut again, &data, &classifier_cfg(60)).unwrap(), report);

        let blank: Vec<Sample> = (0..16)
            .map(|i| Sample { input: Tensor::from_vec(&[1, 8, 8], vec![0.5; 64]).unwrap(), ..labelled(i % 2 == 0, 0) })
            .collect();
        let mut net = Network::toy_classifier(8, 4).unwrap();
        train_classifier(&mut net, &blank, &classifier_cfg(20)).unwrap();
        let hits = blank
            .iter()
            .filter(|s| (net.forward(&s.input).unwrap().data()[0] >= 0.5) == (s.target.data()[0] == 1.0))
            .count();
        assert_eq!(hits, 8);
    }

    #[test]
    fn non_finite_loss_names_epoch_and_batch() {
        let mut data = squares(4);
        data[2].input.data_mut()[5] = f64::NAN;
        let mut net = Network::toy_unet(8, 0).unwrap();
        let err = train(&mut net, &data, &TrainConfig { batch_size: 1, ..short(2) }).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, .. }), "{err}");
    }
}
