//! Forward and backward kernels on plain tensors.
//!
//! Everything here is single threaded and uses a fixed reduction order, so
//! results are bit-reproducible on a given platform.

use crate::Tensor;

/// Geometry of a 2-D convolution over an `(N, C, H, W)` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Self {
        assert_eq!(input.len(), 4, "conv2d input must be (N, C, H, W), got {input:?}");
        assert_eq!(weight.len(), 4, "conv2d weight must be (O, C, kh, kw), got {weight:?}");
        assert_eq!(
            input[1], weight[1],
            "conv2d channel mismatch: input {input:?}, weight {weight:?}"
        );
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let g = Self {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            out_channels: weight[0],
            kernel_h: weight[2],
            kernel_w: weight[3],
            stride,
            padding,
        };
        assert!(
            g.height + 2 * padding >= g.kernel_h && g.width + 2 * padding >= g.kernel_w,
            "conv2d kernel larger than padded input: input {input:?}, weight {weight:?}"
        );
        g
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

/// `c = op(a) * op(b) + beta * c` with row-major operands; `a` is `m x k` and
/// `b` is `k x n` after the optional transposes.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the given slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let pad = g.padding as isize;
    for ci in 0..g.in_channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *out = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, cols: &[f64], x: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let pad = g.padding as isize;
    for ci in 0..g.in_channels {
        let plane = &mut x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (ci * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation, `(N, C, H, W) * (O, C, kh, kw) -> (N, O, Ho, Wo)`.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Tensor {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, padding);
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[g.out_channels], "conv2d bias shape");
    }
    let (ho, wo) = (g.out_height(), g.out_width());
    let out_len = g.out_channels * ho * wo;
    let mut out = vec![0.0; g.batch * out_len];
    let mut cols = vec![0.0; g.patch_len() * ho * wo];
    for n in 0..g.batch {
        im2col(&g, &x.data()[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(ho * wo).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        gemm(
            g.out_channels,
            g.patch_len(),
            ho * wo,
            weight.data(),
            false,
            &cols,
            false,
            if bias.is_some() { 1.0 } else { 0.0 },
            dst,
        );
    }
    Tensor::from_vec(&[g.batch, g.out_channels, ho, wo], out).expect("conv2d output shape")
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let g = ConvGeometry::new(x.shape(), weight.shape(), stride, padding);
    let (ho, wo) = (g.out_height(), g.out_width());
    let out_len = g.out_channels * ho * wo;
    let patch = g.patch_len();

    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    let mut gw = need_weight.then(|| vec![0.0; weight.len()]);
    let mut cols = vec![0.0; patch * ho * wo];
    for n in 0..g.batch {
        let go = &grad_out.data()[n * out_len..(n + 1) * out_len];
        if let Some(gw) = gw.as_mut() {
            im2col(&g, &x.data()[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
            gemm(g.out_channels, ho * wo, patch, go, false, &cols, true, 1.0, gw);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(
                patch,
                g.out_channels,
                ho * wo,
                weight.data(),
                true,
                go,
                false,
                0.0,
                &mut cols,
            );
            col2im(&g, &cols, &mut gx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
    let gb = need_bias.then(|| {
        let mut gb = vec![0.0; g.out_channels];
        for n in 0..g.batch {
            for (o, chunk) in grad_out.data()[n * out_len..(n + 1) * out_len]
                .chunks(ho * wo)
                .enumerate()
            {
                gb[o] += chunk.iter().sum::<f64>();
            }
        }
        Tensor::from_vec(&[g.out_channels], gb).expect("bias grad shape")
    });
    (
        gx.map(|d| Tensor::from_vec(x.shape(), d).expect("input grad shape")),
        gw.map(|d| Tensor::from_vec(weight.shape(), d).expect("weight grad shape")),
        gb,
    )
}

/// Per-sample, per-channel normalization over spatial positions (biased
/// variance). Returns the normalized tensor and `1 / sqrt(var + eps)` per
/// `(n, c)` plane.
pub fn instance_norm_forward(x: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    assert_eq!(x.rank(), 4, "instance_norm expects (N, C, H, W)");
    let plane = x.dim(2) * x.dim(3);
    let mut out = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.dim(0) * x.dim(1));
    for chunk in x.data().chunks(plane) {
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
        let inv = 1.0 / (var + eps).sqrt();
        out.extend(chunk.iter().map(|v| (v - mean) * inv));
        inv_std.push(inv);
    }
    (Tensor::from_vec(x.shape(), out).expect("instance_norm shape"), inv_std)
}

pub fn instance_norm_backward(normalized: &Tensor, inv_std: &[f64], grad_out: &Tensor) -> Tensor {
    let plane = normalized.dim(2) * normalized.dim(3);
    let mut gx = Vec::with_capacity(normalized.len());
    for ((y, g), &inv) in normalized
        .data()
        .chunks(plane)
        .zip(grad_out.data().chunks(plane))
        .zip(inv_std)
    {
        let mean_g = g.iter().sum::<f64>() / plane as f64;
        let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
        gx.extend(g.iter().zip(y).map(|(gv, yv)| inv * (gv - mean_g - yv * mean_gy)));
    }
    Tensor::from_vec(normalized.shape(), gx).expect("instance_norm grad shape")
}

/// Nearest-neighbour upsampling by an integer factor on `(N, C, H, W)`.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Tensor {
    assert_eq!(x.rank(), 4, "upsample expects (N, C, H, W)");
    let (h, w) = (x.dim(2), x.dim(3));
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(x.len() * factor * factor);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    Tensor::from_vec(&[x.dim(0), x.dim(1), oh, ow], out).expect("upsample shape")
}

pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Tensor {
    let (oh, ow) = (grad_out.dim(2), grad_out.dim(3));
    let (h, w) = (oh / factor, ow / factor);
    let mut gx = vec![0.0; grad_out.len() / (factor * factor)];
    for (plane_out, plane_in) in grad_out.data().chunks(oh * ow).zip(gx.chunks_mut(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                plane_in[(oy / factor) * w + ox / factor] += plane_out[oy * ow + ox];
            }
        }
    }
    Tensor::from_vec(&[grad_out.dim(0), grad_out.dim(1), h, w], gx).expect("upsample grad shape")
}

/// Bilinear resize of a `(C, H, W)` tensor using half-pixel centres
/// (`align_corners = false`). Resizing to the same size is the identity.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    assert_eq!(x.rank(), 3, "resize_bilinear expects (C, H, W)");
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (src.floor() as usize).min(inp - 1);
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out).expect("resize shape")
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
