//! Forward definitions of every differentiable operation.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, PadMode, Padding, Window};
use crate::tensor::{Real, Shape, Tensor};

/// One of the four tensor axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    N = 0,
    C = 1,
    H = 2,
    W = 3,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Views `shape` as `[outer, len, inner]` around `axis`.
pub(crate) fn split_axis(shape: Shape, axis: Axis) -> (usize, usize, usize) {
    let a = axis.index();
    let outer = shape.0[..a].iter().product();
    let inner = shape.0[a + 1..].iter().product();
    (outer, shape.0[a], inner)
}

pub(crate) fn softmax_forward<T: Real>(x: &Tensor<T>, axis: Axis) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| d[at(k)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..len {
                let e = (d[at(k)] - max).exp();
                d[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                d[at(k)] /= total;
            }
        }
    }
    out
}

pub(crate) fn row_norms<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let w = x.shape().w();
    x.data().chunks(w).map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt()).collect()
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!("{what}: shape {} vs {}", va.shape(), vb.shape())));
        }
        va.zip_map(vb, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a))
    }

    /// `sqrt(x² + eps²)`, a differentiable stand-in for `|x|`.
    pub fn smooth_abs(&mut self, a: Var, eps: T) -> Var {
        let e2 = eps * eps;
        let v = self.value(a).map(|x| (x * x + e2).sqrt());
        self.push(v, Op::SmoothAbs(a, eps))
    }

    /// Elementwise square root; inputs must be non-negative.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(i) = self.value(a).data().iter().position(|&x| x < T::zero()) {
            return Err(Error::NonFinite { index: i, context: "sqrt of negative value".into() });
        }
        let v = self.value(a).map(|x| x.sqrt());
        Ok(self.push(v, Op::Sqrt(a)))
    }

    /// Hard clamp into `[lo, hi]`; the gradient is zero where the input lies outside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Numerically stable softmax (max subtracted before exponentiation).
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let v = softmax_forward(self.value(a), axis);
        self.push(v, Op::Softmax(a, axis))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.push(v, Op::Mean(a))
    }

    /// Batched matrix product over the last two axes: `(n,c,M,K)·(n,c,K,P)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.c() != sb.c() || sa.w() != sb.h() {
            return Err(Error::dim(format!("matmul: {sa} · {sb}")));
        }
        let (m, k, p) = (sa.h(), sa.w(), sb.w());
        let mut out = Vec::with_capacity(sa.n() * sa.c() * m * p);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for blk in 0..sa.n() * sa.c() {
            out.extend(kernels::matmul(m, k, p, &va[blk * m * k..(blk + 1) * m * k], &vb[blk * k * p..(blk + 1) * k * p]));
        }
        let v = Tensor::from_vec(Shape::new(sa.n(), sa.c(), m, p), out)?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let (r, c) = (s.h(), s.w());
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(s.numel());
        for blk in 0..s.n() * s.c() {
            out.extend(kernels::transpose(r, c, &src[blk * r * c..(blk + 1) * r * c]));
        }
        let v = Tensor::from_vec(Shape::new(s.n(), s.c(), c, r), out).expect("same element count");
        self.push(v, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, vars: &[Var], axis: Axis) -> Result<Var> {
        let first = vars.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.shape(*first);
        let mut total = 0;
        for &v in vars {
            let s = self.shape(v);
            if (0..4).any(|i| i != axis.index() && s.0[i] != base.0[i]) {
                return Err(Error::dim(format!("concat along {axis:?}: {s} vs {base}")));
            }
            total += s.0[axis.index()];
        }
        let out_shape = base.with_axis(axis.index(), total);
        let (outer, _, inner) = split_axis(out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.numel());
        for o in 0..outer {
            for &v in vars {
                let len = self.shape(v).0[axis.index()];
                out.extend_from_slice(&self.value(v).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let t = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(t, Op::Concat(vars.to_vec(), axis)))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.0[axis.index()] {
            return Err(Error::dim(format!("narrow {axis:?} [{start}, {}) out of {s}", start + len)));
        }
        let (outer, full, inner) = split_axis(s, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let t = Tensor::from_vec(s.with_axis(axis.index(), len), out)?;
        Ok(self.push(t, Op::Narrow(a, axis, start)))
    }

    /// Spatial crop to rows `[top, top+h)` and columns `[left, left+w)`.
    pub fn crop(&mut self, a: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let rows = self.narrow(a, Axis::H, top, h)?;
        self.narrow(rows, Axis::W, left, w)
    }

    pub fn upsample_nearest(&mut self, a: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::dim("upsample factor must be positive"));
        }
        let v = kernels::upsample_nearest(self.value(a), factor);
        Ok(self.push(v, Op::Upsample(a, factor)))
    }

    pub fn pad(&mut self, a: Var, pad: Padding, mode: PadMode) -> Result<Var> {
        let v = kernels::pad2d(self.value(a), pad, mode)?;
        Ok(self.push(v, Op::Pad(a, pad, mode)))
    }

    /// Patch extraction; see [`kernels::im2col`].
    pub fn im2col(&mut self, a: Var, win: Window) -> Result<Var> {
        let v = kernels::im2col(self.value(a), &win)?;
        Ok(self.push(v, Op::Im2col(a, win)))
    }

    /// Scatter-add of a patch matrix back into an image of shape `target`.
    pub fn col2im(&mut self, a: Var, target: Shape, win: Window) -> Result<Var> {
        let v = kernels::col2im(self.value(a), target, &win)?;
        Ok(self.push(v, Op::Col2im(a, win)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, win: Window) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &win)?;
        Ok(self.push(v, Op::Conv2d { x, w, b, win }))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, win: Window) -> Result<Var> {
        let v = kernels::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &win)?;
        Ok(self.push(v, Op::ConvTranspose2d { x, w, b, win }))
    }

    /// Per-channel normalization. With `stats = None` the statistics are
    /// computed from the batch (biased variance); otherwise the given
    /// `(mean, var)` are used as constants.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: Option<(&[T], &[T])>, eps: T) -> Result<Var> {
        let xs = self.shape(x);
        let c = xs.c();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::dim(format!("batch_norm: affine parameters do not match {c} channels")));
        }
        let m = xs.n() * xs.h() * xs.w();
        let (mean, var): (Vec<T>, Vec<T>) = match stats {
            Some((mu, var)) => {
                if mu.len() != c || var.len() != c {
                    return Err(Error::dim("batch_norm: running statistics do not match channels"));
                }
                (mu.to_vec(), var.to_vec())
            }
            None => {
                if m <= 1 {
                    return Err(Error::contract("batch statistics need more than one value per channel"));
                }
                batch_moments(self.value(x))
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        let mut out = self.value(x).clone();
        let hw = xs.h() * xs.w();
        for n in 0..xs.n() {
            for ci in 0..c {
                let (mu, is, g, b) = (mean[ci], inv_std[ci], gv[ci], bv[ci]);
                for v in &mut out.data_mut()[(n * c + ci) * hw..(n * c + ci + 1) * hw] {
                    *v = g * ((*v - mu) * is) + b;
                }
            }
        }
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats: stats.is_none() }))
    }

    /// `w / σ` with `σ = uᵀ W v`, where `W` is `w` reshaped to `Cout × rest`
    /// and `u`, `v` are held constant.
    pub fn spectral_norm(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        let s = self.shape(w);
        let (rows, cols) = (s.n(), s.numel() / s.n().max(1));
        if u.len() != rows || v.len() != cols {
            return Err(Error::dim(format!("spectral_norm: u/v of length {}/{} for {rows}×{cols}", u.len(), v.len())));
        }
        let wd = self.value(w).data();
        let mut sigma = T::zero();
        for r in 0..rows {
            let row_dot: T = wd[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum();
            sigma += u[r] * row_dot;
        }
        if sigma.abs() <= T::of(1e-12) {
            return Err(Error::contract("spectral norm undefined: σ̂ is zero"));
        }
        let out = self.value(w).map(|x| x / sigma);
        Ok(self.push(out, Op::SpectralNorm { w, u: u.to_vec(), v: v.to_vec(), sigma }))
    }

    /// Divides every row (last axis) by `max(‖row‖, eps)`.
    pub fn row_normalize(&mut self, a: Var, eps: T) -> Var {
        let t = self.value(a);
        let w = t.shape().w();
        let norms = row_norms(t);
        let mut out = t.clone();
        for (row, &n) in out.data_mut().chunks_mut(w).zip(&norms) {
            let d = n.max(eps);
            for v in row {
                *v /= d;
            }
        }
        self.push(out, Op::RowNormalize(a, eps))
    }

    /// Selects rows of a `1×1×R×K` matrix.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.n() != 1 || s.c() != 1 {
            return Err(Error::dim(format!("gather_rows expects a matrix, got {s}")));
        }
        let k = s.w();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            if r >= s.h() {
                return Err(Error::dim(format!("row {r} out of {} rows", s.h())));
            }
            out.extend_from_slice(&src[r * k..(r + 1) * k]);
        }
        let t = Tensor::from_vec(Shape::matrix(rows.len(), k), out)?;
        Ok(self.push(t, Op::GatherRows(a, rows.to_vec())))
    }

    /// Places the rows of `a` at `rows` inside a zero `1×1×total×K` matrix.
    pub fn scatter_rows(&mut self, a: Var, rows: &[usize], total: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.n() != 1 || s.c() != 1 || s.h() != rows.len() {
            return Err(Error::dim(format!("scatter_rows: {s} with {} target rows", rows.len())));
        }
        let k = s.w();
        let mut out = Tensor::zeros(Shape::matrix(total, k));
        for (i, &r) in rows.iter().enumerate() {
            if r >= total {
                return Err(Error::dim(format!("row {r} out of {total} rows")));
            }
            out.data_mut()[r * k..(r + 1) * k].copy_from_slice(&self.value(a).data()[i * k..(i + 1) * k]);
        }
        Ok(self.push(out, Op::ScatterRows(a, rows.to_vec())))
    }

    /// `x + p` where `mask` is set, `x` untouched elsewhere.
    pub fn masked_residual(&mut self, x: Var, p: Var, mask: &[bool]) -> Result<Var> {
        let (sx, sp) = (self.shape(x), self.shape(p));
        if sx != sp || mask.len() != sx.numel() {
            return Err(Error::dim(format!("masked_residual: {sx}, {sp}, mask of {}", mask.len())));
        }
        let mut out = self.value(x).clone();
        for ((o, &pv), &m) in out.data_mut().iter_mut().zip(self.value(p).data()).zip(mask) {
            if m {
                *o += pv;
            }
        }
        Ok(self.push(out, Op::MaskedResidual { x, p, mask: mask.to_vec() }))
    }
}

/// Per-channel mean and biased variance over `(N, H, W)`, two-pass.
pub fn batch_moments<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let c = s.c();
    let m = T::of((s.n() * s.h() * s.w()) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut acc = T::zero();
        for n in 0..s.n() {
            acc += x.plane(n, ci).iter().copied().sum::<T>();
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for n in 0..s.n() {
            sq += x.plane(n, ci).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
        mean[ci] = mu;
        var[ci] = sq / m;
    }
    (mean, var)
}
