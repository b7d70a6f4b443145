//! Attention maps of a trained classifier (grad-CAM and guided
//! backpropagation) and their conversion into boxes and YOLO labels.

use crate::blobseg::{connected_components, BinaryMask};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::BBox;
use crate::nnet::{Network, ReluMode, Tensor, Topology};

/// Attention intensity in `[0, 1]`; max-normalized unless all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    values: Matrix,
}

impl Heatmap {
    /// Clamps negatives to zero and divides by the maximum.
    pub fn normalized(raw: Matrix) -> Self {
        let clamped = raw.map(|v| v.max(0.0));
        let max = clamped.max();
        let values = if max > 0.0 { clamped.map(|v| v / max) } else { clamped };
        Self { values }
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Position of the maximum (first in row-major order).
    pub fn argmax(&self) -> (usize, usize) {
        let data = self.values.as_slice();
        let mut best = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        (best / self.values.cols(), best % self.values.cols())
    }
}

fn require_classifier(net: &Network) -> Result<()> {
    if net.topology() != Topology::Classifier {
        return Err(Error::TopologyMismatch {
            expected: "classifier".into(),
            actual: net.topology().name().into(),
        });
    }
    Ok(())
}

/// Gradient of the pre-sigmoid score and the forward trace.
fn score_backprop(net: &Network, input: &Tensor, mode: ReluMode) -> Result<(crate::nnet::Trace, crate::nnet::Backprop)> {
    let trace = net.trace(input)?;
    let logit = net.logit_node();
    let upstream = Tensor::from_vec(trace.outputs[logit].shape(), vec![1.0; trace.outputs[logit].len()])?;
    let bp = net.backprop(&trace, logit, &upstream, mode, None)?;
    Ok((trace, bp))
}

/// grad-CAM over the last convolution's feature maps, bilinearly upsampled
/// to the input's spatial size.
pub fn grad_cam(net: &Network, input: &Tensor) -> Result<Heatmap> {
    require_classifier(net)?;
    let feat = net.last_conv_features().ok_or(Error::NoConvLayer)?;
    let (trace, bp) = score_backprop(net, input, ReluMode::Standard)?;
    let maps = &trace.outputs[feat];
    let (k, h, w) = maps.chw()?;
    let plane = h * w;
    let grads = bp.node_grads[feat]
        .clone()
        .unwrap_or_else(|| Tensor::zeros(maps.shape()));
    let mut cam = vec![0.0; plane];
    for ch in 0..k {
        let g = &grads.data()[ch * plane..(ch + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        if alpha == 0.0 {
            continue;
        }
        let a = &maps.data()[ch * plane..(ch + 1) * plane];
        for (c, &v) in cam.iter_mut().zip(a) {
            *c += alpha * v;
        }
    }
    let cam = Matrix::from_vec(h, w, cam.into_iter().map(|v| v.max(0.0)).collect())?;
    let (_, ih, iw) = input.chw()?;
    Ok(Heatmap::normalized(cam.resize_bilinear(ih, iw)))
}

/// Guided-backpropagation saliency: `|d score / d input|` with relu
/// gradients gated on both the forward activation and the gradient sign,
/// collapsed over channels by maximum.
pub fn guided_backprop(net: &Network, input: &Tensor) -> Result<Heatmap> {
    require_classifier(net)?;
    let (_, bp) = score_backprop(net, input, ReluMode::Guided)?;
    Ok(Heatmap::normalized(channel_abs_max(&bp.input_grad)?))
}

/// Plain input gradient of the pre-sigmoid score, normalized the same way as
/// [`guided_backprop`].
pub fn input_gradient_map(net: &Network, input: &Tensor) -> Result<Heatmap> {
    require_classifier(net)?;
    let (_, bp) = score_backprop(net, input, ReluMode::Standard)?;
    Ok(Heatmap::normalized(channel_abs_max(&bp.input_grad)?))
}

fn channel_abs_max(t: &Tensor) -> Result<Matrix> {
    let (c, h, w) = t.chw()?;
    let plane = h * w;
    Ok(Matrix::from_fn(h, w, |r, col| {
        (0..c)
            .map(|ch| t.data()[ch * plane + r * w + col].abs())
            .fold(0.0, f64::max)
    }))
}

/// Boxes around 8-connected regions with `value >= threshold` and at least
/// `min_area` pixels, sorted by `(t0, f0)`.
pub fn heatmap_to_bboxes(hm: &Heatmap, threshold: f64, min_area: usize) -> Result<Vec<BBox>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let (rows, cols) = hm.shape();
    let mask = BinaryMask::from_fn(rows, cols, |r, c| hm.values.get(r, c) >= threshold);
    Ok(connected_components(&mask)
        .into_iter()
        .filter(|b| b.area() >= min_area)
        .map(|b| b.bbox)
        .collect())
}

/// `num / den` rounded half-up to six decimals, formatted exactly.
fn fixed6(num: usize, den: usize) -> String {
    let scaled = (2 * num as u128 * 1_000_000 + den as u128) / (2 * den as u128);
    format!("{}.{:06}", scaled / 1_000_000, scaled % 1_000_000)
}

/// YOLO label lines `0 cx cy w h`, one per box, normalized by image size.
/// Boxes are in bin coordinates (bin 0 = lowest frequency); the label uses
/// image rows with row 0 at the top (highest frequency).
pub fn export_yolo_labels(boxes: &[BBox], img_w: usize, img_h: usize) -> Result<String> {
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        if b.t0 > b.t1 || b.f0 > b.f1 || b.t1 >= img_w || b.f1 >= img_h {
            return Err(Error::BoxOutOfRange {
                index: i,
                width: img_w,
                height: img_h,
            });
        }
        let r0 = img_h - 1 - b.f1;
        let r1 = img_h - 1 - b.f0;
        out.push_str(&format!(
            "0 {} {} {} {}\n",
            fixed6(b.t0 + b.t1 + 1, 2 * img_w),
            fixed6(r0 + r1 + 1, 2 * img_h),
            fixed6(b.t1 - b.t0 + 1, img_w),
            fixed6(r1 - r0 + 1, img_h),
        ));
    }
    Ok(out)
}

/// Boxes back from YOLO label lines (inverse of [`export_yolo_labels`] up to
/// the six-decimal rounding).
pub fn parse_yolo_labels(text: &str, img_w: usize, img_h: usize) -> Result<Vec<BBox>> {
    let bad = |m: String| Error::Format(format!("yolo: {m}"));
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {f:?}", n + 1))))
            .collect::<Result<_>>()?;
        let [_, cx, cy, w, h] = fields[..] else {
            return Err(bad(format!("line {}: expected 5 fields", n + 1)));
        };
        let t0 = ((cx - w / 2.0) * img_w as f64).round() as usize;
        let t1 = ((cx + w / 2.0) * img_w as f64).round() as usize - 1;
        let r0 = ((cy - h / 2.0) * img_h as f64).round() as usize;
        let r1 = ((cy + h / 2.0) * img_h as f64).round() as usize - 1;
        boxes.push(BBox::new(t0, t1, img_h - 1 - r1, img_h - 1 - r0)?);
    }
    Ok(boxes)
}
