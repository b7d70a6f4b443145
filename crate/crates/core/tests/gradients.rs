mod common;

use common::*;
use sonotag::nnet::{LayerKind, Network, Topology};

const TOL: f64 = 1e-4;
const CASES: u64 = 20;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for kind in LAYER_KINDS {
        for seed in 0..CASES {
            let err = layer_grad_error(kind, seed);
            assert!(err < TOL, "{kind} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn dice_loss_matches_finite_differences() {
    for seed in 0..CASES {
        let err = dice_grad_error(seed);
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn toy_networks_match_finite_differences() {
    for seed in 0..3 {
        let unet = Network::toy_unet(8, seed).unwrap();
        assert!(network_grad_error(&unet, 100 + seed) < TOL);
        let clf = Network::toy_classifier(8, seed).unwrap();
        assert!(network_grad_error(&clf, 200 + seed) < TOL);
    }
}

#[test]
fn skip_gradient_reaches_both_branches() {
    // the relu output reaches the concat directly and through pool/upsample
    let kinds = [
        LayerKind::Conv2d { in_ch: 1, out_ch: 2, k: 3 },
        LayerKind::Relu,
        LayerKind::MaxPool2,
        LayerKind::Upsample2,
        LayerKind::ConcatSkip { from: 1 },
        LayerKind::Conv2d { in_ch: 4, out_ch: 1, k: 1 },
        LayerKind::Sigmoid,
    ];
    let net = Network::new(&kinds, Topology::Unet, [1, 4, 6], 9).unwrap();
    for seed in 0..5 {
        assert!(network_grad_error(&net, seed) < TOL);
    }
}
