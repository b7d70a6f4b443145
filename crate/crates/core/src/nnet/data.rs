//! Mapping between native spectrograms and the square network grid.
//!
//! The native `bins x frames` plane is partitioned into `size x size`
//! blocks (see [`block_bounds`]). Inputs take each block's peak magnitude
//! so that calls shorter than a block survive the reduction; targets mark a
//! block when any of its pixels is set. Predictions go back to the native
//! plane by painting each block with its grid value.

use super::network::{Network, Topology};
use super::tensor::Tensor;
use crate::blobseg::BinaryMask;
use crate::dsp::{self, Scale, Spectrogram};
use crate::error::{Error, Result};
use crate::matrix::{block_bounds, Matrix};
use crate::metrics::BBox;

/// Side of the square network input.
pub const NET_SIZE: usize = 64;
/// Decibels mapped to one input unit.
const DB_PER_UNIT: f64 = 20.0;

/// Network input from a linear-magnitude spectrogram: block-max pooling,
/// dB with an 80 dB floor, per-row mean subtraction, scaled to 20 dB per
/// unit. Output shape `[1, size, size]`.
pub fn prepare_input(spec: &Spectrogram, size: usize) -> Result<Tensor> {
    if spec.scale != Scale::Linear {
        return Err(Error::InvalidParameter(
            "network input is built from a linear-magnitude spectrogram".into(),
        ));
    }
    let pooled = spec
        .values
        .block_reduce(size, size, f64::NEG_INFINITY, f64::max);
    let db = Spectrogram {
        values: dsp::to_db(&pooled, dsp::DEFAULT_FLOOR_DB),
        scale: Scale::LogDb,
        ..spec.clone()
    };
    let centered = dsp::mean_subtract(&db);
    Tensor::from_vec(
        &[1, size, size],
        centered.values.as_slice().iter().map(|v| v / DB_PER_UNIT).collect(),
    )
}

pub fn prepare_target(mask: &BinaryMask, size: usize) -> Tensor {
    let grid = mask.block_any(size, size);
    Tensor::from_vec(
        &[1, size, size],
        grid.bits().iter().map(|&b| b as u8 as f64).collect(),
    )
    .expect("grid size")
}

/// Index of the block containing each native coordinate.
fn block_lookup(n_native: usize, n_grid: usize) -> Vec<usize> {
    let mut lookup = vec![0; n_native];
    for (i, &(s, e)) in block_bounds(n_native, n_grid).iter().enumerate() {
        for slot in &mut lookup[s..e] {
            *slot = i;
        }
    }
    lookup
}

/// Paints a grid mask back onto a `rows x cols` native plane.
pub fn grid_to_native(grid: &BinaryMask, rows: usize, cols: usize) -> BinaryMask {
    let rl = block_lookup(rows, grid.rows());
    let cl = block_lookup(cols, grid.cols());
    BinaryMask::from_fn(rows, cols, |r, c| grid.get(rl[r], cl[c]))
}

/// Grid cell containing a native `(row, col)`.
pub fn native_to_grid(row: usize, col: usize, native: (usize, usize), grid: (usize, usize)) -> (usize, usize) {
    (
        block_lookup(native.0, grid.0)[row],
        block_lookup(native.1, grid.1)[col],
    )
}

/// Smallest grid box covering a native box.
pub fn box_to_grid(b: &BBox, native: (usize, usize), grid: (usize, usize)) -> BBox {
    let rl = block_lookup(native.0, grid.0);
    let cl = block_lookup(native.1, grid.1);
    BBox {
        t0: cl[b.t0],
        t1: cl[b.t1],
        f0: rl[b.f0],
        f1: rl[b.f1],
    }
}

/// Native-plane box covered by a grid box.
pub fn grid_box_to_native(b: &BBox, native: (usize, usize), grid: (usize, usize)) -> BBox {
    let rb = block_bounds(native.0, grid.0);
    let cb = block_bounds(native.1, grid.1);
    BBox {
        t0: cb[b.t0].0,
        t1: cb[b.t1].1 - 1,
        f0: rb[b.f0].0,
        f1: rb[b.f1].1 - 1,
    }
}

fn require_unet(net: &Network) -> Result<()> {
    if net.topology() != Topology::Unet {
        return Err(Error::TopologyMismatch {
            expected: "unet".into(),
            actual: net.topology().name().into(),
        });
    }
    Ok(())
}

/// Thresholds the U-net output (`>= threshold`) on the network grid.
pub fn predict_grid_mask(net: &Network, input: &Tensor, threshold: f64) -> Result<BinaryMask> {
    require_unet(net)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let out = net.forward(input)?;
    let [_, h, w] = net.input_shape();
    BinaryMask::from_bits(h, w, out.data().iter().map(|&v| v >= threshold).collect())
}

/// Predicted mask on the spectrogram's native plane.
pub fn predict_mask(net: &Network, spec: &Spectrogram, threshold: f64) -> Result<BinaryMask> {
    require_unet(net)?;
    let [_, h, w] = net.input_shape();
    if h != w {
        return Err(Error::shape("square network input", format!("{h}x{w}")));
    }
    let grid = predict_grid_mask(net, &prepare_input(spec, h)?, threshold)?;
    let (rows, cols) = spec.shape();
    if (rows, cols) == (h, w) {
        return Ok(grid);
    }
    Ok(grid_to_native(&grid, rows, cols))
}

/// Classifier probability for a spectrogram.
pub fn predict_probability(net: &Network, spec: &Spectrogram) -> Result<f64> {
    if net.topology() != Topology::Classifier {
        return Err(Error::TopologyMismatch {
            expected: "classifier".into(),
            actual: net.topology().name().into(),
        });
    }
    let [_, h, _] = net.input_shape();
    Ok(net.forward(&prepare_input(spec, h)?)?.data()[0])
}

/// Grid-shaped matrix view of a `[1, h, w]` tensor.
pub fn tensor_to_matrix(t: &Tensor) -> Result<Matrix> {
    let (c, h, w) = t.chw()?;
    if c != 1 {
        return Err(Error::shape("single channel", c));
    }
    Matrix::from_vec(h, w, t.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Variant;

    fn spec(values: Matrix) -> Spectrogram {
        Spectrogram {
            values,
            sample_rate: 44_100,
            window_len: 512,
            hop: 706,
            scale: Scale::Linear,
            variant: Variant::Raw,
        }
    }

    #[test]
    fn input_rows_are_centered() {
        let s = spec(Matrix::from_fn(256, 624, |r, c| 1.0 + ((r * 7 + c * 3) % 11) as f64));
        let t = prepare_input(&s, 64).unwrap();
        assert_eq!(t.shape(), &[1, 64, 64]);
        for r in 0..64 {
            let mean: f64 = t.data()[r * 64..(r + 1) * 64].iter().sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn short_event_survives_pooling() {
        let mut m = Matrix::filled(256, 624, 1.0);
        m.set(100, 300, 1000.0);
        let t = prepare_input(&spec(m), 64).unwrap();
        let (gr, gc) = native_to_grid(100, 300, (256, 624), (64, 64));
        let v = t.data()[gr * 64 + gc];
        assert!(t.data().iter().all(|&x| x <= v));
        assert!(v > 2.0);
    }

    #[test]
    fn grid_round_trip_of_boxes() {
        let b = BBox { t0: 100, t1: 200, f0: 22, f1: 47 };
        let g = box_to_grid(&b, (256, 624), (64, 64));
        let back = grid_box_to_native(&g, (256, 624), (64, 64));
        assert!(back.t0 <= b.t0 && back.t1 >= b.t1 && back.f0 <= b.f0 && back.f1 >= b.f1);
        let mut mask = BinaryMask::new(256, 624);
        for r in b.f0..=b.f1 {
            for c in b.t0..=b.t1 {
                mask.set(r, c, true);
            }
        }
        let grid = mask.block_any(64, 64);
        let painted = grid_to_native(&grid, 256, 624);
        assert!(mask.is_subset_of(&painted));
        assert_eq!(crate::blobseg::connected_components(&painted)[0].bbox, back);
    }

    #[test]
    fn predict_mask_checks_topology_and_threshold() {
        let clf = Network::toy_classifier(64, 0).unwrap();
        let s = spec(Matrix::filled(256, 624, 1.0));
        assert!(matches!(predict_mask(&clf, &s, 0.5), Err(Error::TopologyMismatch { .. })));
        let unet = Network::toy_unet(64, 0).unwrap();
        assert!(predict_mask(&unet, &s, 1.0).is_err());
        assert!(predict_probability(&unet, &s).is_err());
    }

    #[test]
    fn zero_output_layer_gives_half_everywhere() {
        let mut net = Network::toy_unet(64, 0).unwrap();
        let n = net.layers().len();
        for p in &mut net.layers_mut()[n - 2].params {
            p.fill(0.0);
        }
        let s = spec(Matrix::from_fn(256, 624, |r, c| 1.0 + (r + c) as f64));
        // 0.5 >= 0.5 keeps every pixel
        let mask = predict_mask(&net, &s, 0.5).unwrap();
        assert_eq!(mask.shape(), (256, 624));
        assert_eq!(mask.count(), 256 * 624);
        assert!(predict_mask(&net, &s, 0.51).unwrap().is_empty());
    }
}
