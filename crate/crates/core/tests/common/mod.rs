//! Shared helpers: central finite-difference gradient checks and small
//! synthetic datasets.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonotag::nnet::{dice_loss, dice_loss_grad, Layer, LayerKind, Network, ReluMode, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_CHECKED: usize = 24;

/// `|a - n| / max(|a|, |n|)`, with values below 1e-9 on both sides
/// counted as agreeing.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Inputs away from relu kinks and max-pool ties: distinct values at least
/// 0.01 apart with random sign.
fn spread(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    let data = ranks
        .into_iter()
        .map(|r| {
            let mag = 0.02 + 0.01 * r as f64 + rng.random_range(0.0..0.004);
            if rng.random_bool(0.5) { mag } else { -mag }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(MAX_CHECKED);
    idx
}

/// A random small configuration of the given layer kind, with its input
/// shape and (for concatenation) skip shape.
pub fn random_layer(kind: &str, rng: &mut ChaCha8Rng) -> (LayerKind, Vec<usize>, Option<Vec<usize>>) {
    let c = rng.random_range(1..=3);
    let h = 2 * rng.random_range(1..=3);
    let w = 2 * rng.random_range(1..=3);
    match kind {
        "conv2d" => {
            let k = [1, 3, 5][rng.random_range(0..3)];
            (LayerKind::Conv2d { in_ch: c, out_ch: rng.random_range(1..=3), k }, vec![c, h, w], None)
        }
        "relu" => (LayerKind::Relu, vec![c, h, w], None),
        "maxpool2" => (LayerKind::MaxPool2, vec![c, h, w], None),
        "upsample2" => (LayerKind::Upsample2, vec![c, h, w], None),
        "concat_skip" => (LayerKind::ConcatSkip { from: 0 }, vec![c, h, w], Some(vec![rng.random_range(1..=3), h, w])),
        "dense" => {
            let n = rng.random_range(1..=12);
            (LayerKind::Dense { inputs: n, outputs: rng.random_range(1..=4) }, vec![n], None)
        }
        "sigmoid" => (LayerKind::Sigmoid, vec![c, h, w], None),
        "global_avg_pool" => (LayerKind::GlobalAvgPool, vec![c, h, w], None),
        other => panic!("unknown layer kind {other}"),
    }
}

pub const LAYER_KINDS: [&str; 8] = [
    "conv2d",
    "relu",
    "maxpool2",
    "upsample2",
    "concat_skip",
    "dense",
    "sigmoid",
    "global_avg_pool",
];

/// Largest relative error between analytic and central-difference
/// gradients of `sum(w * layer(x))` over sampled input, skip and parameter
/// coordinates of one random configuration.
pub fn layer_grad_error(kind: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lk, in_shape, skip_shape) = random_layer(kind, &mut rng);
    let mut layer = Layer::new(lk);
    layer.init(&mut rng);
    for b in layer.params.iter_mut().skip(1) {
        *b = uniform(&mut rng, b.shape(), -0.5, 0.5);
    }
    let x = spread(&mut rng, &in_shape);
    let skip = skip_shape.map(|s| spread(&mut rng, &s));
    let (y, argmax) = layer.forward(&x, skip.as_ref()).unwrap();
    let wts = uniform(&mut rng, y.shape(), -1.0, 1.0);
    let objective = |layer: &Layer, x: &Tensor, skip: Option<&Tensor>| -> f64 {
        let (y, _) = layer.forward(x, skip).unwrap();
        y.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
    };
    let mut pgrads: Vec<Tensor> = layer.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let (gx, gskip) = layer
        .backward(&x, &y, argmax.as_deref(), &wts, ReluMode::Standard, Some(&mut pgrads))
        .unwrap();
    let mut worst: f64 = 0.0;
    for i in sample_indices(&mut rng, x.len()) {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += FD_STEP;
        xm.data_mut()[i] -= FD_STEP;
        let num = (objective(&layer, &xp, skip.as_ref()) - objective(&layer, &xm, skip.as_ref())) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], num));
    }
    if let (Some(s), Some(gs)) = (&skip, &gskip) {
        for i in sample_indices(&mut rng, s.len()) {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp.data_mut()[i] += FD_STEP;
            sm.data_mut()[i] -= FD_STEP;
            let num = (objective(&layer, &x, Some(&sp)) - objective(&layer, &x, Some(&sm))) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(gs.data()[i], num));
        }
    }
    for (p, pgrad) in pgrads.iter().enumerate() {
        for i in sample_indices(&mut rng, layer.params[p].len()) {
            let (mut lp, mut lm) = (layer.clone(), layer.clone());
            lp.params[p].data_mut()[i] += FD_STEP;
            lm.params[p].data_mut()[i] -= FD_STEP;
            let num = (objective(&lp, &x, skip.as_ref()) - objective(&lm, &x, skip.as_ref())) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(pgrad.data()[i], num));
        }
    }
    worst
}

/// Largest relative error of the Dice-loss gradient on one random case.
pub fn dice_grad_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=64);
    let pred = uniform(&mut rng, &[n], 0.05, 0.95);
    let target = Tensor::from_vec(&[n], (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect()).unwrap();
    let smooth = rng.random_range(0.5..2.0);
    let (_, grad) = dice_loss_grad(&pred, &target, smooth).unwrap();
    let mut worst: f64 = 0.0;
    for i in sample_indices(&mut rng, n) {
        let (mut pp, mut pm) = (pred.clone(), pred.clone());
        pp.data_mut()[i] += FD_STEP;
        pm.data_mut()[i] -= FD_STEP;
        let num = (dice_loss(&pp, &target, smooth).unwrap() - dice_loss(&pm, &target, smooth).unwrap()) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad.data()[i], num));
    }
    worst
}

/// Largest relative error of whole-network input and parameter gradients of
/// `sum(w * net(x))`.
pub fn network_grad_error(net: &Network, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &net.input_shape(), -1.0, 1.0);
    let trace = net.trace(&x).unwrap();
    let wts = uniform(&mut rng, trace.output().shape(), -1.0, 1.0);
    let objective = |net: &Network, x: &Tensor| -> f64 {
        net.forward(x).unwrap().data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
    };
    let mut sink: Vec<Vec<Tensor>> = net
        .layers()
        .iter()
        .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
        .collect();
    let last = net.layers().len() - 1;
    let bp = net.backprop(&trace, last, &wts, ReluMode::Standard, Some(&mut sink)).unwrap();
    let mut worst: f64 = 0.0;
    for i in sample_indices(&mut rng, x.len()) {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += FD_STEP;
        xm.data_mut()[i] -= FD_STEP;
        let num = (objective(net, &xp) - objective(net, &xm)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(bp.input_grad.data()[i], num));
    }
    for (li, layer) in net.layers().iter().enumerate() {
        for (p, grad) in sink[li].iter().enumerate() {
            for i in sample_indices(&mut rng, layer.params[p].len()).into_iter().take(4) {
                let (mut np, mut nm) = (net.clone(), net.clone());
                np.layers_mut()[li].params[p].data_mut()[i] += FD_STEP;
                nm.layers_mut()[li].params[p].data_mut()[i] -= FD_STEP;
                let num = (objective(&np, &x) - objective(&nm, &x)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(grad.data()[i], num));
            }
        }
    }
    worst
}
