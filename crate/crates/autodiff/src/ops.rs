//! Differentiable operations on [`Var`].
//!
//! Shape errors are programming errors at this level and panic with the
//! offending shapes; the model layer validates user-facing inputs.

use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use crate::kernels;
use crate::{Tensor, Var};

fn unary<'t>(x: Var<'t>, value: Tensor, grad: impl Fn(&Tensor, &Tensor) -> Tensor + 'static) -> Var<'t> {
    let input = x.value();
    x.tape().record(value, &[x], move |g, _| vec![Some(grad(&input, g))])
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;

    fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b);
        let out = a.zip_map(&b, |x, y| x + y);
        self.tape()
            .record(out, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;

    fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b);
        let out = a.zip_map(&b, |x, y| x - y);
        self.tape()
            .record(out, &[self, other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))])
    }
}

/// Elementwise product.
impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;

    fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b);
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |gv, bv| gv * bv)),
                needs[1].then(|| g.zip_map(&a, |gv, av| gv * av)),
            ]
        })
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;

    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

impl<'t> Var<'t> {
    pub fn scale(self, factor: f64) -> Var<'t> {
        let out = self.value().map(|v| v * factor);
        unary(self, out, move |_, g| g.map(|v| v * factor))
    }

    pub fn add_scalar(self, offset: f64) -> Var<'t> {
        let out = self.value().map(|v| v + offset);
        unary(self, out, |_, g| g.clone())
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let out = self.value().map(|v| if v > 0.0 { v } else { slope * v });
        unary(self, out, move |x, g| {
            x.zip_map(g, |xv, gv| if xv > 0.0 { gv } else { slope * gv })
        })
    }

    pub fn tanh(self) -> Var<'t> {
        let out = Rc::new(self.value().map(f64::tanh));
        let y = Rc::clone(&out);
        self.tape().record((*out).clone(), &[self], move |g, _| {
            vec![Some(y.zip_map(g, |yv, gv| gv * (1.0 - yv * yv)))]
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = Rc::new(self.value().map(kernels::sigmoid));
        let y = Rc::clone(&out);
        self.tape().record((*out).clone(), &[self], move |g, _| {
            vec![Some(y.zip_map(g, |yv, gv| gv * yv * (1.0 - yv)))]
        })
    }

    /// `ln(1 + e^x)`, so `softplus(-z) = -ln sigmoid(z)`.
    pub fn softplus(self) -> Var<'t> {
        let out = self.value().map(kernels::softplus);
        unary(self, out, |x, g| x.zip_map(g, |xv, gv| gv * kernels::sigmoid(xv)))
    }

    /// Subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t> {
        let out = self.value().map(f64::abs);
        unary(self, out, |x, g| {
            x.zip_map(g, |xv, gv| {
                if xv > 0.0 {
                    gv
                } else if xv < 0.0 {
                    -gv
                } else {
                    0.0
                }
            })
        })
    }

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().record(Tensor::scalar(x.sum()), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = x
            .reshape(shape)
            .unwrap_or_else(|e| panic!("reshape {:?} -> {shape:?}: {e}", x.shape()));
        self.tape().record(out, &[self], move |g, _| {
            vec![Some(g.reshape(&old).expect("reshape grad"))]
        })
    }

    /// 2-D cross-correlation with zero padding; see [`kernels::conv2d_forward`].
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, stride: usize, padding: usize) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let out = kernels::conv2d_forward(&x, &w, b.as_deref(), stride, padding);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.tape().record(out, &parents, move |g, needs| {
            let (gx, gw, gb) =
                kernels::conv2d_backward(&x, &w, g, stride, padding, needs[0], needs[1], has_bias && needs[2]);
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(gb);
            }
            grads
        })
    }

    /// `(N, in) x (out, in)^T + bias -> (N, out)`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        assert!(
            x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
            "linear: input {:?}, weight {:?}",
            x.shape(),
            w.shape()
        );
        let (n, k, m) = (x.dim(0), x.dim(1), w.dim(0));
        let mut out = vec![0.0; n * m];
        if let Some(b) = bias {
            let b = b.value();
            assert_eq!(b.shape(), &[m], "linear bias shape");
            for row in out.chunks_mut(m) {
                row.copy_from_slice(b.data());
            }
        }
        kernels::gemm(
            n,
            k,
            m,
            x.data(),
            false,
            w.data(),
            true,
            if bias.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let out = Tensor::from_vec(&[n, m], out).expect("linear shape");
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.tape().record(out, &parents, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut d = vec![0.0; n * k];
                kernels::gemm(n, m, k, g.data(), false, w.data(), false, 0.0, &mut d);
                Tensor::from_vec(&[n, k], d).expect("linear dx")
            });
            let gw = needs[1].then(|| {
                let mut d = vec![0.0; m * k];
                kernels::gemm(m, n, k, g.data(), true, x.data(), false, 0.0, &mut d);
                Tensor::from_vec(&[m, k], d).expect("linear dw")
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(needs[2].then(|| {
                    let mut d = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (acc, v) in d.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::from_vec(&[m], d).expect("linear db")
                }));
            }
            grads
        })
    }

    /// Parameter-free instance normalization on `(N, C, H, W)`.
    pub fn instance_norm(self, eps: f64) -> Var<'t> {
        let (y, inv_std) = kernels::instance_norm_forward(&self.value(), eps);
        let y = Rc::new(y);
        let saved = Rc::clone(&y);
        self.tape().record((*y).clone(), &[self], move |g, _| {
            vec![Some(kernels::instance_norm_backward(&saved, &inv_std, g))]
        })
    }

    /// `x[n, c, :, :] * scale[n, c] + shift[n, c]`.
    pub fn channel_affine(self, scale: Var<'t>, shift: Var<'t>) -> Var<'t> {
        let x = self.value();
        let s = scale.value();
        let b = shift.value();
        assert_eq!(x.rank(), 4, "channel_affine expects (N, C, H, W)");
        let nc = [x.dim(0), x.dim(1)];
        assert_eq!(s.shape(), &nc, "channel_affine scale shape");
        assert_eq!(b.shape(), &nc, "channel_affine shift shape");
        let plane = x.dim(2) * x.dim(3);
        let mut out = Vec::with_capacity(x.len());
        for (i, chunk) in x.data().chunks(plane).enumerate() {
            let (sv, bv) = (s.data()[i], b.data()[i]);
            out.extend(chunk.iter().map(|v| v * sv + bv));
        }
        let out = Tensor::from_vec(x.shape(), out).expect("channel_affine shape");
        self.tape().record(out, &[self, scale, shift], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut d = Vec::with_capacity(g.len());
                for (i, chunk) in g.data().chunks(plane).enumerate() {
                    let sv = s.data()[i];
                    d.extend(chunk.iter().map(|v| v * sv));
                }
                Tensor::from_vec(x.shape(), d).expect("channel_affine dx")
            });
            let gs = needs[1].then(|| {
                let d = g
                    .data()
                    .chunks(plane)
                    .zip(x.data().chunks(plane))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::from_vec(&nc, d).expect("channel_affine dscale")
            });
            let gb = needs[2].then(|| {
                let d = g.data().chunks(plane).map(|c| c.iter().sum()).collect();
                Tensor::from_vec(&nc, d).expect("channel_affine dshift")
            });
            vec![gx, gs, gb]
        })
    }

    /// Global average pooling, `(N, C, H, W) -> (N, C)`.
    pub fn spatial_mean(self) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.rank(), 4, "spatial_mean expects (N, C, H, W)");
        let shape = x.shape().to_vec();
        let plane = shape[2] * shape[3];
        let out = x
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let out = Tensor::from_vec(&shape[..2], out).expect("spatial_mean shape");
        self.tape().record(out, &[self], move |g, _| {
            let mut d = Vec::with_capacity(g.len() * plane);
            for &v in g.data() {
                d.extend(std::iter::repeat_n(v / plane as f64, plane));
            }
            vec![Some(Tensor::from_vec(&shape, d).expect("spatial_mean grad"))]
        })
    }

    pub fn upsample_nearest(self, factor: usize) -> Var<'t> {
        let out = kernels::upsample_nearest(&self.value(), factor);
        self.tape().record(out, &[self], move |g, _| {
            vec![Some(kernels::upsample_nearest_backward(g, factor))]
        })
    }

    /// Averages consecutive groups of `group` entries along the leading axis:
    /// `(N * group, ...) -> (N, ...)`.
    pub fn group_mean(self, group: usize) -> Var<'t> {
        let x = self.value();
        assert!(
            group >= 1 && x.dim(0).is_multiple_of(group),
            "group_mean: leading axis {} not divisible by {group}",
            x.dim(0)
        );
        let inner = x.len() / x.dim(0);
        let n = x.dim(0) / group;
        let mut out = vec![0.0; n * inner];
        for (i, row) in x.data().chunks(inner).enumerate() {
            let dst = &mut out[(i / group) * inner..(i / group + 1) * inner];
            for (acc, v) in dst.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut out {
            *v /= group as f64;
        }
        let mut shape = x.shape().to_vec();
        shape[0] = n;
        let in_shape = x.shape().to_vec();
        let out = Tensor::from_vec(&shape, out).expect("group_mean shape");
        self.tape().record(out, &[self], move |g, _| {
            let mut d = Vec::with_capacity(g.len() * group);
            for row in g.data().chunks(inner) {
                for _ in 0..group {
                    d.extend(row.iter().map(|v| v / group as f64));
                }
            }
            vec![Some(Tensor::from_vec(&in_shape, d).expect("group_mean grad"))]
        })
    }

    /// Picks `x[n, columns[n]]` from an `(N, C)` matrix, giving `(N,)`.
    pub fn select_per_row(self, columns: &[usize]) -> Var<'t> {
        let x = self.value();
        assert!(
            x.rank() == 2 && x.dim(0) == columns.len(),
            "select_per_row: input {:?}, {} columns",
            x.shape(),
            columns.len()
        );
        let width = x.dim(1);
        assert!(
            columns.iter().all(|&c| c < width),
            "select_per_row: column out of range"
        );
        let out = columns
            .iter()
            .enumerate()
            .map(|(n, &c)| x.data()[n * width + c])
            .collect();
        let out = Tensor::from_vec(&[columns.len()], out).expect("select shape");
        let columns = columns.to_vec();
        let shape = x.shape().to_vec();
        self.tape().record(out, &[self], move |g, _| {
            let mut d = Tensor::zeros(&shape);
            for (n, &c) in columns.iter().enumerate() {
                d.data_mut()[n * width + c] = g.data()[n];
            }
            vec![Some(d)]
        })
    }

    /// Column range `[start, start + len)` of an `(N, D)` matrix.
    pub fn narrow_columns(self, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        assert!(
            x.rank() == 2 && start + len <= x.dim(1),
            "narrow_columns: input {:?}, range {start}..{}",
            x.shape(),
            start + len
        );
        let width = x.dim(1);
        let out: Vec<f64> = x
            .data()
            .chunks(width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::from_vec(&[x.dim(0), len], out).expect("narrow shape");
        let shape = x.shape().to_vec();
        self.tape().record(out, &[self], move |g, _| {
            let mut d = Tensor::zeros(&shape);
            for (dst, src) in d.data_mut().chunks_mut(width).zip(g.data().chunks(len)) {
                dst[start..start + len].copy_from_slice(src);
            }
            vec![Some(d)]
        })
    }
}
