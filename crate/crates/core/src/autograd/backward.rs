//! Vector-Jacobian products for every operation in [`Op`].

use super::ops::{row_norms, split_axis};
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Shape, Tensor};

type Contribs<T> = Vec<(Var, Tensor<T>)>;

fn scaled<T: Real>(g: &Tensor<T>, s: T) -> Tensor<T> {
    g.map(|v| v * s)
}

/// Sums per-channel values over `(N, H, W)`.
fn channel_sums<T: Real>(t: &Tensor<T>) -> Vec<T> {
    let s = t.shape();
    (0..s.c()).map(|c| (0..s.n()).map(|n| t.plane(n, c).iter().copied().sum::<T>()).sum()).collect()
}

impl<T: Real> Graph<T> {
    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].tracks_grad
    }

    pub(super) fn backward_node(&self, i: usize, g: &Tensor<T>) -> Result<Contribs<T>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut c: Contribs<T> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                c.push((*a, g.clone()));
                c.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                c.push((*a, g.clone()));
                c.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.tracks(*a) {
                    c.push((*a, g.zip_map(val(*b), |gv, bv| gv * bv)?));
                }
                if self.tracks(*b) {
                    c.push((*b, g.zip_map(val(*a), |gv, av| gv * av)?));
                }
            }
            Op::AddScalar(a) => c.push((*a, g.clone())),
            Op::MulScalar(a, s) => c.push((*a, scaled(g, *s))),
            Op::Relu(a) => {
                c.push((*a, g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                c.push((*a, g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { gv * s })?));
            }
            Op::Abs(a) => {
                c.push((*a, g.zip_map(val(*a), |gv, x| gv * if x > T::zero() { T::one() } else if x < T::zero() { -T::one() } else { T::zero() })?));
            }
            Op::SmoothAbs(a, _) => {
                // d/dx sqrt(x² + ε²) = x / out
                let x = val(*a);
                let data = g.data().iter().zip(x.data()).zip(out.data()).map(|((&gv, &xv), &o)| gv * xv / o).collect();
                c.push((*a, Tensor::from_vec(x.shape(), data)?));
            }
            Op::Sqrt(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &o)| if o > T::zero() { gv / (T::of(2.0) * o) } else { T::zero() })
                    .collect();
                c.push((*a, Tensor::from_vec(out.shape(), data)?));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                c.push((*a, g.zip_map(val(*a), |gv, x| if x >= lo && x <= hi { gv } else { T::zero() })?));
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let mut gx = Tensor::zeros(out.shape());
                let (y, gd) = (out.data(), g.data());
                let dst = gx.data_mut();
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + ii;
                        let dot: T = (0..len).map(|k| y[at(k)] * gd[at(k)]).sum();
                        for k in 0..len {
                            dst[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                c.push((*a, gx));
            }
            Op::Sum(a) => c.push((*a, Tensor::full(val(*a).shape(), g.data()[0]))),
            Op::Mean(a) => {
                let n = T::of(val(*a).numel() as f64);
                c.push((*a, Tensor::full(val(*a).shape(), g.data()[0] / n)));
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, p) = (sa.h(), sa.w(), sb.w());
                let blocks = sa.n() * sa.c();
                if self.tracks(*a) {
                    let mut ga = Vec::with_capacity(sa.numel());
                    for blk in 0..blocks {
                        let mut blk_g = vec![T::zero(); m * k];
                        let bb = &val(*b).data()[blk * k * p..(blk + 1) * k * p];
                        T::gemm_op(m, p, k, &g.data()[blk * m * p..(blk + 1) * m * p], false, bb, true, &mut blk_g);
                        ga.extend(blk_g);
                    }
                    c.push((*a, Tensor::from_vec(sa, ga)?));
                }
                if self.tracks(*b) {
                    let mut gb = Vec::with_capacity(sb.numel());
                    for blk in 0..blocks {
                        let mut blk_g = vec![T::zero(); k * p];
                        let ab = &val(*a).data()[blk * m * k..(blk + 1) * m * k];
                        T::gemm_op(k, m, p, ab, true, &g.data()[blk * m * p..(blk + 1) * m * p], false, &mut blk_g);
                        gb.extend(blk_g);
                    }
                    c.push((*b, Tensor::from_vec(sb, gb)?));
                }
            }
            Op::Transpose(a) => {
                let s = g.shape();
                let (r, cc) = (s.h(), s.w());
                let mut gt = Vec::with_capacity(s.numel());
                for blk in 0..s.n() * s.c() {
                    gt.extend(kernels::transpose(r, cc, &g.data()[blk * r * cc..(blk + 1) * r * cc]));
                }
                c.push((*a, Tensor::from_vec(val(*a).shape(), gt)?));
            }
            Op::Reshape(a) => c.push((*a, g.clone().reshape(val(*a).shape())?)),
            Op::Concat(vars, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &v in vars {
                    let len = val(v).shape().0[axis.index()];
                    let mut part = Vec::with_capacity(val(v).numel());
                    for o in 0..outer {
                        part.extend_from_slice(&g.data()[(o * total + offset) * inner..(o * total + offset + len) * inner]);
                    }
                    offset += len;
                    c.push((v, Tensor::from_vec(val(v).shape(), part)?));
                }
            }
            Op::Narrow(a, axis, start) => {
                let src_shape = val(*a).shape();
                let (outer, full, inner) = split_axis(src_shape, *axis);
                let len = out.shape().0[axis.index()];
                let mut ga = Tensor::zeros(src_shape);
                for o in 0..outer {
                    ga.data_mut()[(o * full + start) * inner..(o * full + start + len) * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                c.push((*a, ga));
            }
            Op::Upsample(a, f) => c.push((*a, kernels::upsample_nearest_backward(g, *f))),
            Op::Pad(a, pad, mode) => c.push((*a, kernels::pad2d_backward(g, val(*a).shape(), *pad, *mode))),
            Op::Im2col(a, win) => c.push((*a, kernels::col2im(g, val(*a).shape(), win)?)),
            Op::Col2im(a, win) => c.push((*a, kernels::im2col(g, win)?)),
            Op::Conv2d { x, w, b, win } => {
                let (gx, gw, gb) = kernels::conv2d_backward(val(*x), val(*w), g, win, self.tracks(*x), self.tracks(*w));
                c.extend(gx.map(|t| (*x, t)));
                c.extend(gw.map(|t| (*w, t)));
                if let Some(b) = b {
                    c.push((*b, gb.reshape(val(*b).shape())?));
                }
            }
            Op::ConvTranspose2d { x, w, b, win } => {
                let (gx, gw, gb) =
                    kernels::conv_transpose2d_backward(val(*x), val(*w), g, win, self.tracks(*x), self.tracks(*w));
                c.extend(gx.map(|t| (*x, t)));
                c.extend(gw.map(|t| (*w, t)));
                if let Some(b) = b {
                    c.push((*b, gb.reshape(val(*b).shape())?));
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                let xv = val(*x);
                let s = xv.shape();
                let hw = s.h() * s.w();
                let xhat = Tensor::from_fn(s, |[n, ci, h, w]| (xv.get(n, ci, h, w) - mean[ci]) * inv_std[ci]);
                let gsum = channel_sums(g);
                let gxhat = channel_sums(&g.zip_map(&xhat, |a, b| a * b)?);
                c.push((*beta, Tensor::from_vec(val(*beta).shape(), gsum.clone())?));
                c.push((*gamma, Tensor::from_vec(val(*gamma).shape(), gxhat.clone())?));
                if self.tracks(*x) {
                    let gamma_v = val(*gamma).data();
                    let m = T::of((s.n() * hw) as f64);
                    let mut gx = Tensor::zeros(s);
                    for n in 0..s.n() {
                        for ci in 0..s.c() {
                            let k = gamma_v[ci] * inv_std[ci];
                            let base = (n * s.c() + ci) * hw;
                            for j in base..base + hw {
                                gx.data_mut()[j] = if *batch_stats {
                                    k / m * (m * g.data()[j] - gsum[ci] - xhat.data()[j] * gxhat[ci])
                                } else {
                                    k * g.data()[j]
                                };
                            }
                        }
                    }
                    c.push((*x, gx));
                }
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wv = val(*w);
                let cols = v.len();
                let inner: T = g.data().iter().zip(wv.data()).map(|(&a, &b)| a * b).sum();
                let coef = inner / (*sigma * *sigma);
                let data = (0..wv.numel())
                    .map(|j| g.data()[j] / *sigma - coef * u[j / cols] * v[j % cols])
                    .collect();
                c.push((*w, Tensor::from_vec(wv.shape(), data)?));
            }
            Op::RowNormalize(a, eps) => {
                let x = val(*a);
                let w = x.shape().w();
                let norms = row_norms(x);
                let mut gx = Tensor::zeros(x.shape());
                for (r, &n) in norms.iter().enumerate() {
                    let rg = &g.data()[r * w..(r + 1) * w];
                    let dst = &mut gx.data_mut()[r * w..(r + 1) * w];
                    if n > *eps {
                        let y = &out.data()[r * w..(r + 1) * w];
                        let dot: T = y.iter().zip(rg).map(|(&a, &b)| a * b).sum();
                        for j in 0..w {
                            dst[j] = (rg[j] - y[j] * dot) / n;
                        }
                    } else {
                        for j in 0..w {
                            dst[j] = rg[j] / *eps;
                        }
                    }
                }
                c.push((*a, gx));
            }
            Op::GatherRows(a, rows) => {
                let s = val(*a).shape();
                let k = s.w();
                let mut ga = Tensor::zeros(s);
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..k {
                        ga.data_mut()[r * k + j] += g.data()[i * k + j];
                    }
                }
                c.push((*a, ga));
            }
            Op::ScatterRows(a, rows) => {
                let k = out.shape().w();
                let mut part = Vec::with_capacity(rows.len() * k);
                for &r in rows {
                    part.extend_from_slice(&g.data()[r * k..(r + 1) * k]);
                }
                c.push((*a, Tensor::from_vec(Shape::matrix(rows.len(), k), part)?));
            }
            Op::MaskedResidual { x, p, mask } => {
                c.push((*x, g.clone()));
                let data = g.data().iter().zip(mask).map(|(&gv, &m)| if m { gv } else { T::zero() }).collect();
                c.push((*p, Tensor::from_vec(g.shape(), data)?));
            }
        }
        for (v, t) in &c {
            if t.shape() != val(*v).shape() {
                return Err(Error::Structural(format!(
                    "{} produced gradient {} for input of shape {}",
                    node.op.name(),
                    t.shape(),
                    val(*v).shape()
                )));
            }
        }
        Ok(c)
    }
}
