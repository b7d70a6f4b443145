//! Layer kinds with their forward and backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Stride-1 convolution with zero "same" padding; `k` is odd.
    Conv2d { in_ch: usize, out_ch: usize, k: usize },
    Relu,
    MaxPool2,
    /// Nearest-neighbor 2x upsampling.
    Upsample2,
    /// Channel concatenation `[previous, output of node `from`]`.
    ConcatSkip { from: usize },
    Dense { inputs: usize, outputs: usize },
    Sigmoid,
    GlobalAvgPool,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Upsample2 => "upsample2",
            LayerKind::ConcatSkip { .. } => "concat_skip",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::GlobalAvgPool => "global_avg_pool",
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Conv2d { in_ch, out_ch, k } => vec![vec![out_ch, in_ch, k, k], vec![out_ch]],
            LayerKind::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }
}

/// How relu passes gradients backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluMode {
    Standard,
    /// Also zeroes entries whose upstream gradient is negative.
    Guided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    /// Weights then bias, where the kind has parameters.
    pub params: Vec<Tensor>,
    pub grads: Vec<Tensor>,
}

impl Layer {
    pub fn new(kind: LayerKind) -> Self {
        let shapes = kind.param_shapes();
        Self {
            kind,
            params: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            grads: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let (fan_in, fan_out) = match self.kind {
            LayerKind::Conv2d { in_ch, out_ch, k } => (in_ch * k * k, out_ch * k * k),
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            _ => return,
        };
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in self.params[0].data_mut() {
            *w = rng.random_range(-a..a);
        }
        self.params[1].fill(0.0);
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Output shape for a given input shape (and skip shape for concat).
    pub fn output_shape(&self, input: &[usize], skip: Option<&[usize]>) -> Result<Vec<usize>> {
        let chw = |s: &[usize]| -> Result<(usize, usize, usize)> {
            match *s {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::shape("[c, h, w]", format!("{s:?}"))),
            }
        };
        match self.kind {
            LayerKind::Conv2d { in_ch, out_ch, .. } => {
                let (c, h, w) = chw(input)?;
                if c != in_ch {
                    return Err(Error::shape(format!("{in_ch} input channels"), c));
                }
                Ok(vec![out_ch, h, w])
            }
            LayerKind::Relu | LayerKind::Sigmoid => Ok(input.to_vec()),
            LayerKind::MaxPool2 => {
                let (c, h, w) = chw(input)?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape("even spatial size for maxpool2", format!("{h}x{w}")));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerKind::Upsample2 => {
                let (c, h, w) = chw(input)?;
                Ok(vec![c, 2 * h, 2 * w])
            }
            LayerKind::ConcatSkip { from } => {
                let (c, h, w) = chw(input)?;
                let skip = skip.ok_or_else(|| Error::shape(format!("skip from node {from}"), "none"))?;
                let (sc, sh, sw) = chw(skip)?;
                if (sh, sw) != (h, w) {
                    return Err(Error::shape(format!("skip of spatial size {h}x{w}"), format!("{sh}x{sw}")));
                }
                Ok(vec![c + sc, h, w])
            }
            LayerKind::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(Error::shape(format!("{inputs} dense inputs"), n));
                }
                Ok(vec![outputs])
            }
            LayerKind::GlobalAvgPool => {
                let (c, _, _) = chw(input)?;
                Ok(vec![c])
            }
        }
    }

    /// Forward pass. Returns the output and, for max pooling, the flat index
    /// of each window's maximum.
    pub fn forward(&self, x: &Tensor, skip: Option<&Tensor>) -> Result<(Tensor, Option<Vec<usize>>)> {
        let out_shape = self.output_shape(x.shape(), skip.map(Tensor::shape))?;
        let mut out = Tensor::zeros(&out_shape);
        let mut argmax = None;
        match self.kind {
            LayerKind::Conv2d { in_ch, out_ch, k } => {
                let (_, h, w) = x.chw()?;
                conv_forward(x.data(), &self.params[0], &self.params[1], in_ch, out_ch, k, h, w, out.data_mut());
            }
            LayerKind::Relu => {
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o = v.max(0.0);
                }
            }
            LayerKind::Sigmoid => {
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o = sigmoid(v);
                }
            }
            LayerKind::MaxPool2 => {
                let (c, h, w) = x.chw()?;
                let (oh, ow) = (h / 2, w / 2);
                let mut idx = vec![0usize; c * oh * ow];
                let xd = x.data();
                let od = out.data_mut();
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let base = ch * h * w;
                            let cands = [
                                base + 2 * y * w + 2 * xx,
                                base + 2 * y * w + 2 * xx + 1,
                                base + (2 * y + 1) * w + 2 * xx,
                                base + (2 * y + 1) * w + 2 * xx + 1,
                            ];
                            let mut best = cands[0];
                            for &cand in &cands[1..] {
                                if xd[cand] > xd[best] {
                                    best = cand;
                                }
                            }
                            let o = ch * oh * ow + y * ow + xx;
                            od[o] = xd[best];
                            idx[o] = best;
                        }
                    }
                }
                argmax = Some(idx);
            }
            LayerKind::Upsample2 => {
                let (c, h, w) = x.chw()?;
                let (oh, ow) = (2 * h, 2 * w);
                let xd = x.data();
                let od = out.data_mut();
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            od[ch * oh * ow + y * ow + xx] = xd[ch * h * w + (y / 2) * w + xx / 2];
                        }
                    }
                }
            }
            LayerKind::ConcatSkip { .. } => {
                let skip = skip.expect("checked by output_shape");
                let n = x.len();
                out.data_mut()[..n].copy_from_slice(x.data());
                out.data_mut()[n..].copy_from_slice(skip.data());
            }
            LayerKind::Dense { inputs, outputs } => {
                let wd = self.params[0].data();
                let bd = self.params[1].data();
                let xd = x.data();
                for (o, slot) in out.data_mut().iter_mut().enumerate().take(outputs) {
                    let row = &wd[o * inputs..(o + 1) * inputs];
                    *slot = bd[o] + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            LayerKind::GlobalAvgPool => {
                let (c, h, w) = x.chw()?;
                let n = (h * w) as f64;
                for ch in 0..c {
                    out.data_mut()[ch] = x.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n;
                }
            }
        }
        Ok((out, argmax))
    }

    /// Backward pass. Adds parameter gradients into `param_grads` when given
    /// and returns the gradient with respect to the input and, for
    /// concatenation, the skip input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        argmax: Option<&[usize]>,
        grad_out: &Tensor,
        mode: ReluMode,
        param_grads: Option<&mut [Tensor]>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        if grad_out.shape() != y.shape() {
            return Err(Error::shape(format!("{:?}", y.shape()), format!("{:?}", grad_out.shape())));
        }
        let mut gx = Tensor::zeros(x.shape());
        let mut gskip = None;
        let g = grad_out.data();
        match self.kind {
            LayerKind::Conv2d { in_ch, out_ch, k } => {
                let (_, h, w) = x.chw()?;
                if let Some(pg) = param_grads {
                    let (gw, gb) = pg.split_at_mut(1);
                    conv_backward_params(x.data(), g, in_ch, out_ch, k, h, w, gw[0].data_mut(), gb[0].data_mut());
                }
                conv_backward_input(g, &self.params[0], in_ch, out_ch, k, h, w, gx.data_mut());
            }
            LayerKind::Relu => {
                for ((o, &xv), &gv) in gx.data_mut().iter_mut().zip(x.data()).zip(g) {
                    let pass = xv > 0.0 && (mode == ReluMode::Standard || gv > 0.0);
                    *o = if pass { gv } else { 0.0 };
                }
            }
            LayerKind::Sigmoid => {
                for ((o, &yv), &gv) in gx.data_mut().iter_mut().zip(y.data()).zip(g) {
                    *o = gv * yv * (1.0 - yv);
                }
            }
            LayerKind::MaxPool2 => {
                let idx = argmax.ok_or(Error::BackwardBeforeForward)?;
                let gd = gx.data_mut();
                for (o, &src) in idx.iter().enumerate() {
                    gd[src] += g[o];
                }
            }
            LayerKind::Upsample2 => {
                let (c, h, w) = x.chw()?;
                let (oh, ow) = (2 * h, 2 * w);
                let gd = gx.data_mut();
                for ch in 0..c {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            gd[ch * h * w + (yy / 2) * w + xx / 2] += g[ch * oh * ow + yy * ow + xx];
                        }
                    }
                }
            }
            LayerKind::ConcatSkip { .. } => {
                let n = x.len();
                gx.data_mut().copy_from_slice(&g[..n]);
                let (sc, sh, sw) = {
                    let (c, h, w) = y.chw()?;
                    (c - x.chw()?.0, h, w)
                };
                gskip = Some(Tensor::from_vec(&[sc, sh, sw], g[n..].to_vec())?);
            }
            LayerKind::Dense { inputs, outputs } => {
                let wd = self.params[0].data();
                let xd = x.data();
                if let Some(pg) = param_grads {
                    let (gw, gb) = pg.split_at_mut(1);
                    let gwd = gw[0].data_mut();
                    for o in 0..outputs {
                        gb[0].data_mut()[o] += g[o];
                        for i in 0..inputs {
                            gwd[o * inputs + i] += g[o] * xd[i];
                        }
                    }
                }
                let gd = gx.data_mut();
                for o in 0..outputs {
                    for i in 0..inputs {
                        gd[i] += g[o] * wd[o * inputs + i];
                    }
                }
            }
            LayerKind::GlobalAvgPool => {
                let (c, h, w) = x.chw()?;
                let n = (h * w) as f64;
                let gd = gx.data_mut();
                for ch in 0..c {
                    gd[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|v| *v = g[ch] / n);
                }
            }
        }
        Ok((gx, gskip))
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Range of output coordinates `o` for which `o + d` (with `d = kernel
/// offset - pad`) stays inside `[0, n)`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    weight: &Tensor,
    bias: &Tensor,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
) {
    let wd = weight.data();
    let pad = (k / 2) as isize;
    let plane = h * w;
    for o in 0..out_ch {
        let op = &mut out[o * plane..(o + 1) * plane];
        op.fill(bias.data()[o]);
        for i in 0..in_ch {
            let ip = &x[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = wd[((o * in_ch + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for yy in y0..y1 {
                        let src_row = (yy as isize + dy) as usize * w;
                        let src = &ip[(src_row as isize + x0 as isize + dx) as usize..(src_row as isize + x1 as isize + dx) as usize];
                        let dst = &mut op[yy * w + x0..yy * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_params(
    x: &[f64],
    g: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    h: usize,
    w: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for o in 0..out_ch {
        let gp = &g[o * plane..(o + 1) * plane];
        gb[o] += gp.iter().sum::<f64>();
        for i in 0..in_ch {
            let ip = &x[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(w, dx);
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        let src_row = (yy as isize + dy) as usize * w;
                        let src = &ip[(src_row as isize + x0 as isize + dx) as usize..(src_row as isize + x1 as isize + dx) as usize];
                        let gr = &gp[yy * w + x0..yy * w + x1];
                        acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[((o * in_ch + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_input(
    g: &[f64],
    weight: &Tensor,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    h: usize,
    w: usize,
    gx: &mut [f64],
) {
    let wd = weight.data();
    let pad = (k / 2) as isize;
    let plane = h * w;
    for o in 0..out_ch {
        let gp = &g[o * plane..(o + 1) * plane];
        for i in 0..in_ch {
            let gi = &mut gx[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = wd[((o * in_ch + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for yy in y0..y1 {
                        let dst_row = (yy as isize + dy) as usize * w;
                        let dst = &mut gi[(dst_row as isize + x0 as isize + dx) as usize..(dst_row as isize + x1 as isize + dx) as usize];
                        let src = &gp[yy * w + x0..yy * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of same-padded correlation.
    fn conv_oracle(x: &Tensor, layer: &Layer) -> Tensor {
        let LayerKind::Conv2d { in_ch, out_ch, k } = layer.kind else { unreachable!() };
        let (_, h, w) = x.chw().unwrap();
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[out_ch, h, w]);
        for o in 0..out_ch {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = layer.params[1].data()[o];
                    for i in 0..in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p;
                                let sx = xx as isize + kx as isize - p;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += layer.params[0].data()[((o * in_ch + i) * k + ky) * k + kx]
                                        * x.data()[i * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out.data_mut()[o * h * w + y * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Layer::new(LayerKind::Conv2d { in_ch: 2, out_ch: 3, k: 3 });
        layer.init(&mut rng);
        layer.params[1] = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = Tensor::from_vec(&[2, 5, 4], (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (y, _) = layer.forward(&x, None).unwrap();
        let oracle = conv_oracle(&x, &layer);
        for (a, b) in y.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut layer = Layer::new(LayerKind::Conv2d { in_ch: 1, out_ch: 1, k: 1 });
        layer.params[0].data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(layer.forward(&x, None).unwrap().0, x);
    }

    #[test]
    fn dense_gradient_is_input() {
        let mut layer = Layer::new(LayerKind::Dense { inputs: 1, outputs: 1 });
        layer.params[0].data_mut()[0] = 0.7;
        let x = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let (y, _) = layer.forward(&x, None).unwrap();
        let mut grads = vec![Tensor::zeros(&[1, 1]), Tensor::zeros(&[1])];
        let up = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let (gx, _) = layer.backward(&x, &y, None, &up, ReluMode::Standard, Some(&mut grads)).unwrap();
        assert_eq!(grads[0].data(), &[2.0]);
        assert_eq!(grads[1].data(), &[1.0]);
        assert_eq!(gx.data(), &[0.7]);
    }

    #[test]
    fn relu_blocks_negative_preactivation() {
        let layer = Layer::new(LayerKind::Relu);
        let x = Tensor::from_vec(&[3], vec![-1.0, 2.0, 3.0]).unwrap();
        let (y, _) = layer.forward(&x, None).unwrap();
        let up = Tensor::from_vec(&[3], vec![5.0, 5.0, -5.0]).unwrap();
        let (g, _) = layer.backward(&x, &y, None, &up, ReluMode::Standard, None).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, -5.0]);
        let (g, _) = layer.backward(&x, &y, None, &up, ReluMode::Guided, None).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn maxpool_requires_argmax_for_backward() {
        let layer = Layer::new(LayerKind::MaxPool2);
        let x = Tensor::zeros(&[1, 2, 2]);
        let y = Tensor::zeros(&[1, 1, 1]);
        assert!(matches!(
            layer.backward(&x, &y, None, &y, ReluMode::Standard, None),
            Err(Error::BackwardBeforeForward)
        ));
    }

    #[test]
    fn shape_errors() {
        let conv = Layer::new(LayerKind::Conv2d { in_ch: 2, out_ch: 1, k: 3 });
        assert!(conv.forward(&Tensor::zeros(&[1, 4, 4]), None).is_err());
        let pool = Layer::new(LayerKind::MaxPool2);
        assert!(pool.forward(&Tensor::zeros(&[1, 3, 4]), None).is_err());
        let cat = Layer::new(LayerKind::ConcatSkip { from: 0 });
        assert!(cat.forward(&Tensor::zeros(&[1, 4, 4]), Some(&Tensor::zeros(&[1, 2, 2]))).is_err());
    }
}
