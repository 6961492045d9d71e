//! Layer primitives with explicit reverse-mode passes.
//!
//! Convolutions are 3x3, stride 2, padding 1, lowered to GEMM via im2col.
//! Activations live in batch planes laid out `[channel][sample][y][x]` so a
//! whole batch runs through one GEMM per stage. All reductions run in a fixed
//! order, which keeps results bit-reproducible.

use crate::tensor::{gemm, Element, Tensor};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

/// Batched activation storage, `[channels][batch][height * width]`.
#[derive(Debug, Clone)]
pub struct BatchPlane<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub data: Vec<T>,
}

impl<T: Element> BatchPlane<T> {
    pub fn zeros(channels: usize, height: usize, width: usize, batch: usize) -> Self {
        BatchPlane {
            channels,
            height,
            width,
            batch,
            data: vec![T::zero(); channels * height * width * batch],
        }
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn sample_channel(&self, c: usize, b: usize) -> &[T] {
        let s = self.spatial();
        let start = (c * self.batch + b) * s;
        &self.data[start..start + s]
    }

    #[inline]
    pub fn sample_channel_mut(&mut self, c: usize, b: usize) -> &mut [T] {
        let s = self.spatial();
        let start = (c * self.batch + b) * s;
        &mut self.data[start..start + s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `[out_channels, in_channels, 3, 3]`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Element> ConvParams<T> {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(&[out_channels, in_channels, KERNEL, KERNEL]),
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    /// `[out_features, in_features]`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Element> DenseParams<T> {
    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        DenseParams {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }
}

pub fn conv_output_side(input_side: usize) -> usize {
    (input_side + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Gathers 3x3 stride-2 patches into `[in_c * 9, batch * out_h * out_w]`.
fn im2col<T: Element>(input: &BatchPlane<T>, out_h: usize, out_w: usize) -> Vec<T> {
    let n = input.batch * out_h * out_w;
    let mut cols = vec![T::zero(); input.channels * KERNEL * KERNEL * n];
    for ic in 0..input.channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ic * KERNEL + ky) * KERNEL + kx;
                let dst_base = row * n;
                for b in 0..input.batch {
                    let src = input.sample_channel(ic, b);
                    for oy in 0..out_h {
                        let iy = oy * STRIDE + ky;
                        let dst_row = dst_base + (b * out_h + oy) * out_w;
                        if iy < PAD || iy >= input.height + PAD {
                            continue; // rows outside stay zero
                        }
                        let iy = iy - PAD;
                        let src_row = iy * input.width;
                        for ox in 0..out_w {
                            let ix = ox * STRIDE + kx;
                            if ix < PAD || ix >= input.width + PAD {
                                continue;
                            }
                            cols[dst_row + ox] = src[src_row + ix - PAD];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatters column gradients back onto the input grid.
fn col2im<T: Element>(
    d_cols: &[T],
    channels: usize,
    height: usize,
    width: usize,
    batch: usize,
    out_h: usize,
    out_w: usize,
) -> BatchPlane<T> {
    let n = batch * out_h * out_w;
    let mut d_input = BatchPlane::zeros(channels, height, width, batch);
    for ic in 0..channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ic * KERNEL + ky) * KERNEL + kx;
                let src_base = row * n;
                for b in 0..batch {
                    let dst = d_input.sample_channel_mut(ic, b);
                    for oy in 0..out_h {
                        let iy = oy * STRIDE + ky;
                        if iy < PAD || iy >= height + PAD {
                            continue;
                        }
                        let iy = iy - PAD;
                        let src_row = src_base + (b * out_h + oy) * out_w;
                        for ox in 0..out_w {
                            let ix = ox * STRIDE + kx;
                            if ix < PAD || ix >= width + PAD {
                                continue;
                            }
                            dst[iy * width + ix - PAD] += d_cols[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    d_input
}

/// Convolution forward. Returns the pre-activation output and the im2col
/// buffer, which the backward pass reuses for the weight gradient.
pub fn conv_forward<T: Element>(
    input: &BatchPlane<T>,
    params: &ConvParams<T>,
) -> (BatchPlane<T>, Vec<T>) {
    let out_c = params.out_channels();
    debug_assert_eq!(params.in_channels(), input.channels);
    let out_h = conv_output_side(input.height);
    let out_w = conv_output_side(input.width);
    let n = input.batch * out_h * out_w;
    let k = input.channels * KERNEL * KERNEL;

    let cols = im2col(input, out_h, out_w);
    let mut out = BatchPlane::zeros(out_c, out_h, out_w, input.batch);
    gemm(
        out_c,
        k,
        n,
        params.weight.data(),
        false,
        &cols,
        false,
        T::zero(),
        &mut out.data,
    );
    for oc in 0..out_c {
        let bias = params.bias[oc];
        for v in &mut out.data[oc * n..(oc + 1) * n] {
            *v += bias;
        }
    }
    (out, cols)
}

/// Convolution backward. Accumulates parameter gradients into `d_params` and
/// returns the input gradient unless `need_input_grad` is false (first layer).
pub fn conv_backward<T: Element>(
    d_out: &BatchPlane<T>,
    cols: &[T],
    params: &ConvParams<T>,
    input_dims: (usize, usize, usize),
    d_params: &mut ConvParams<T>,
    need_input_grad: bool,
) -> Option<BatchPlane<T>> {
    let (in_c, in_h, in_w) = input_dims;
    let out_c = params.out_channels();
    let n = d_out.batch * d_out.spatial();
    let k = in_c * KERNEL * KERNEL;
    debug_assert_eq!(cols.len(), k * n);

    // dW += dOut * cols^T
    gemm(
        out_c,
        n,
        k,
        &d_out.data,
        false,
        cols,
        true,
        T::one(),
        d_params.weight.data_mut(),
    );
    for oc in 0..out_c {
        let mut acc = T::zero();
        for &g in &d_out.data[oc * n..(oc + 1) * n] {
            acc += g;
        }
        d_params.bias[oc] += acc;
    }

    if !need_input_grad {
        return None;
    }
    // dCols = W^T * dOut, then scatter back to the grid.
    let mut d_cols = vec![T::zero(); k * n];
    gemm(
        k,
        out_c,
        n,
        params.weight.data(),
        true,
        &d_out.data,
        false,
        T::zero(),
        &mut d_cols,
    );
    Some(col2im(
        &d_cols,
        in_c,
        in_h,
        in_w,
        d_out.batch,
        d_out.height,
        d_out.width,
    ))
}

pub fn relu_inplace<T: Element>(data: &mut [T]) {
    for v in data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks gradients by the post-activation values (`out > 0`).
pub fn relu_backward_inplace<T: Element>(d_data: &mut [T], activated: &[T]) {
    for (g, &a) in d_data.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Global average pooling: `[b][c] = mean over spatial`.
pub fn gap_forward<T: Element>(input: &BatchPlane<T>) -> Vec<T> {
    let s = input.spatial();
    let inv = T::one() / T::from_usize(s).unwrap();
    let mut feats = vec![T::zero(); input.batch * input.channels];
    for c in 0..input.channels {
        for b in 0..input.batch {
            let mut acc = T::zero();
            for &v in input.sample_channel(c, b) {
                acc += v;
            }
            feats[b * input.channels + c] = acc * inv;
        }
    }
    feats
}

pub fn gap_backward<T: Element>(
    d_feats: &[T],
    channels: usize,
    height: usize,
    width: usize,
    batch: usize,
) -> BatchPlane<T> {
    let mut d_input = BatchPlane::zeros(channels, height, width, batch);
    let inv = T::one() / T::from_usize(height * width).unwrap();
    for c in 0..channels {
        for b in 0..batch {
            let g = d_feats[b * channels + c] * inv;
            for v in d_input.sample_channel_mut(c, b) {
                *v = g;
            }
        }
    }
    d_input
}

/// Dense forward on row-major `[batch, in]` activations.
pub fn dense_forward<T: Element>(x: &[T], batch: usize, params: &DenseParams<T>) -> Vec<T> {
    let (out_f, in_f) = (params.out_features(), params.in_features());
    debug_assert_eq!(x.len(), batch * in_f);
    let mut out = vec![T::zero(); batch * out_f];
    gemm(batch, in_f, out_f, x, false, params.weight.data(), true, T::zero(), &mut out);
    for row in out.chunks_exact_mut(out_f) {
        for (v, &b) in row.iter_mut().zip(&params.bias) {
            *v += b;
        }
    }
    out
}

/// Dense backward: accumulates into `d_params`, returns input gradients.
pub fn dense_backward<T: Element>(
    x: &[T],
    d_out: &[T],
    batch: usize,
    params: &DenseParams<T>,
    d_params: &mut DenseParams<T>,
) -> Vec<T> {
    let (out_f, in_f) = (params.out_features(), params.in_features());
    // dW += dOut^T * x
    gemm(
        out_f,
        batch,
        in_f,
        d_out,
        true,
        x,
        false,
        T::one(),
        d_params.weight.data_mut(),
    );
    for row in d_out.chunks_exact(out_f) {
        for (db, &g) in d_params.bias.iter_mut().zip(row) {
            *db += g;
        }
    }
    let mut d_x = vec![T::zero(); batch * in_f];
    gemm(batch, out_f, in_f, d_out, false, params.weight.data(), false, T::zero(), &mut d_x);
    d_x
}
