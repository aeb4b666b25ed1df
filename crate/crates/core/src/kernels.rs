//! Raw numeric kernels on flat slices: GEMM, im2col/col2im, convolution and
//! its adjoints, resampling and padding.
//!
//! All routines are deterministic: every output element is produced by a
//! single sequential accumulation whose order does not depend on threading.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Sliding-window geometry shared by convolution, im2col and col2im.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Window {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Self {
        Window { kh: kernel.0, kw: kernel.1, sh: stride.0, sw: stride.1, ph: pad.0, pw: pad.1 }
    }

    /// Square kernel, equal stride and padding on both axes.
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        Self::new((k, k), (stride, stride), (pad, pad))
    }

    /// Output extent `floor((H + 2p − k)/s) + 1` on each axis.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.sh == 0 || self.sw == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::dim("kernel and stride must be positive"));
        }
        let (hp, wp) = (h + 2 * self.ph, w + 2 * self.pw);
        if self.kh > hp || self.kw > wp {
            return Err(Error::dim(format!(
                "kernel {}×{} larger than padded input {hp}×{wp}",
                self.kh, self.kw
            )));
        }
        Ok(((hp - self.kh) / self.sh + 1, (wp - self.kw) / self.sw + 1))
    }

    /// Output extent of the transposed convolution, `(H − 1)s − 2p + k`.
    pub fn transposed_out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = ((h.max(1) - 1) * self.sh + self.kh).checked_sub(2 * self.ph);
        let ow = ((w.max(1) - 1) * self.sw + self.kw).checked_sub(2 * self.pw);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::dim("transposed convolution output would be empty")),
        }
    }

    fn patch_len(&self, c: usize) -> usize {
        c * self.kh * self.kw
    }
}

/// `c = a · b` for row-major `m×k` and `k×n` matrices.
pub fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm_acc(m, k, n, a, b, &mut c);
    c
}

/// Transpose of a row-major `rows×cols` matrix.
pub fn transpose<T: Real>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Output positions `o` along one axis whose tap `k` lands inside the input,
/// as a half-open range.
#[inline]
fn valid_range(k: usize, stride: usize, pad: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = if extent + pad > k { ((extent + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Patch matrix of one image in `(C·kh·kw) × (OH·OW)` layout (one column per output position).
/// Every element is written exactly once, so no zero-initialised buffer is needed.
fn im2col_kp<T: Real>(img: &[T], c: usize, h: usize, w: usize, win: &Window, oh: usize, ow: usize) -> Vec<T> {
    let mut cols = Vec::with_capacity(win.patch_len(c) * oh * ow);
    let zero = T::zero();
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..win.kh {
            let (y0, y1) = valid_range(ky, win.sh, win.ph, h, oh);
            for kx in 0..win.kw {
                let (x0, x1) = valid_range(kx, win.sw, win.pw, w, ow);
                cols.resize(cols.len() + y0 * ow, zero);
                for oy in y0..y1 {
                    let src = &plane[(oy * win.sh + ky - win.ph) * w..];
                    cols.resize(cols.len() + x0, zero);
                    if x1 > x0 {
                        let ix0 = x0 * win.sw + kx - win.pw;
                        if win.sw == 1 {
                            cols.extend_from_slice(&src[ix0..ix0 + x1 - x0]);
                        } else {
                            cols.extend(src[ix0..].iter().step_by(win.sw).take(x1 - x0).copied());
                        }
                    }
                    cols.resize(cols.len() + ow - x1, zero);
                }
                cols.resize(cols.len() + (oh - y1) * ow, zero);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_kp`]: scatter-adds columns back into an image.
fn col2im_kp<T: Real>(cols: &[T], c: usize, h: usize, w: usize, win: &Window, oh: usize, ow: usize, img: &mut [T]) {
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..win.kh {
            let (y0, y1) = valid_range(ky, win.sh, win.ph, h, oh);
            for kx in 0..win.kw {
                let (x0, x1) = valid_range(kx, win.sw, win.pw, w, ow);
                let row = (ci * win.kh + ky) * win.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in y0..y1 {
                    let dst = &mut plane[(oy * win.sh + ky - win.ph) * w..];
                    let s = &src[oy * ow..(oy + 1) * ow];
                    if x1 > x0 {
                        let ix0 = x0 * win.sw + kx - win.pw;
                        for (d, &v) in dst[ix0..].iter_mut().step_by(win.sw).zip(&s[x0..x1]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// im2col over a batch: row `i` holds the flattened receptive field of output
/// position `i` (batch-major, then row-major over the output grid), with the
/// patch laid out channel-major as `c·kh·kw + ky·kw + kx`. Padding reads zero.
pub fn im2col<T: Real>(x: &Tensor<T>, win: &Window) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    let (oh, ow) = win.out_hw(h, w)?;
    let k = win.patch_len(c);
    let p = oh * ow;
    let mut out = vec![T::zero(); n * p * k];
    for ni in 0..n {
        let img = &x.data()[ni * c * h * w..(ni + 1) * c * h * w];
        let kp = im2col_kp(img, c, h, w, win, oh, ow);
        let dst = &mut out[ni * p * k..(ni + 1) * p * k];
        for r in 0..k {
            for col in 0..p {
                dst[col * k + r] = kp[r * p + col];
            }
        }
    }
    Tensor::from_vec(Shape::matrix(n * p, k), out)
}

/// Adjoint of [`im2col`]: overlapping patch entries are summed into an
/// image of shape `target`.
pub fn col2im<T: Real>(rows: &Tensor<T>, target: Shape, win: &Window) -> Result<Tensor<T>> {
    let [n, c, h, w] = target.0;
    let (oh, ow) = win.out_hw(h, w)?;
    let k = win.patch_len(c);
    let p = oh * ow;
    if rows.shape() != Shape::matrix(n * p, k) {
        return Err(Error::dim(format!(
            "col2im: expected {} patch matrix, got {}",
            Shape::matrix(n * p, k),
            rows.shape()
        )));
    }
    let mut out = Tensor::zeros(target);
    for ni in 0..n {
        let src = &rows.data()[ni * p * k..(ni + 1) * p * k];
        let kp = transpose(p, k, src);
        col2im_kp(&kp, c, h, w, win, oh, ow, &mut out.data_mut()[ni * c * h * w..(ni + 1) * c * h * w]);
    }
    Ok(out)
}

/// Number of patches covering each pixel (the col2im of an all-ones patch matrix).
pub fn overlap_counts<T: Real>(target: Shape, win: &Window) -> Result<Tensor<T>> {
    let [n, c, h, w] = target.0;
    let (oh, ow) = win.out_hw(h, w)?;
    col2im(&Tensor::ones(Shape::matrix(n * oh * ow, c * win.kh * win.kw)), target, win)
}

fn check_conv_shapes(xs: Shape, ws: Shape, bias: Option<usize>, cin_axis: usize) -> Result<()> {
    if xs.c() != ws.0[cin_axis] {
        return Err(Error::dim(format!("channel mismatch: input {xs} vs weight {ws}")));
    }
    let cout = ws.0[1 - cin_axis];
    if let Some(b) = bias {
        if b != cout {
            return Err(Error::dim(format!("bias has {b} entries, expected {cout}")));
        }
    }
    Ok(())
}

/// Cross-correlation `x ⋆ w + b` with `w` of shape `Cout×Cin×kh×kw`.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, win: &Window) -> Result<Tensor<T>> {
    let ws = w.shape();
    check_conv_shapes(x.shape(), ws, b.map(|b| b.numel()), 1)?;
    if (ws.h(), ws.w()) != (win.kh, win.kw) {
        return Err(Error::dim("kernel shape disagrees with window"));
    }
    let [n, c, h, wd] = x.shape().0;
    let cout = ws.n();
    let (oh, ow) = win.out_hw(h, wd)?;
    let p = oh * ow;
    let k = win.patch_len(c);
    let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
    for ni in 0..n {
        let cols = im2col_kp(&x.data()[ni * c * h * wd..(ni + 1) * c * h * wd], c, h, wd, win, oh, ow);
        let dst = &mut out.data_mut()[ni * cout * p..(ni + 1) * cout * p];
        if let Some(b) = b {
            for co in 0..cout {
                dst[co * p..(co + 1) * p].fill(b.data()[co]);
            }
        }
        T::gemm_acc(cout, k, p, w.data(), &cols, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    win: &Window,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let [n, c, h, wd] = x.shape().0;
    let cout = w.shape().n();
    let [_, _, oh, ow] = grad_out.shape().0;
    let p = oh * ow;
    let k = win.patch_len(c);
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut gb = Tensor::zeros(Shape::new(1, 1, 1, cout));
    for ni in 0..n {
        let go = &grad_out.data()[ni * cout * p..(ni + 1) * cout * p];
        for co in 0..cout {
            gb.data_mut()[co] += go[co * p..(co + 1) * p].iter().copied().sum::<T>();
        }
        if let Some(gw) = gw.as_mut() {
            let cols = im2col_kp(&x.data()[ni * c * h * wd..(ni + 1) * c * h * wd], c, h, wd, win, oh, ow);
            T::gemm_op(cout, p, k, go, false, &cols, true, gw.data_mut());
        }
        if let Some(gx) = gx.as_mut() {
            let mut dcols = vec![T::zero(); k * p];
            T::gemm_op(k, cout, p, w.data(), true, go, false, &mut dcols);
            col2im_kp(&dcols, c, h, wd, win, oh, ow, &mut gx.data_mut()[ni * c * h * wd..(ni + 1) * c * h * wd]);
        }
    }
    (gx, gw, gb)
}

/// Transposed convolution with `w` of shape `Cin×Cout×kh×kw`; overlapping
/// contributions are summed.
pub fn conv_transpose2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, win: &Window) -> Result<Tensor<T>> {
    let ws = w.shape();
    check_conv_shapes(x.shape(), ws, b.map(|b| b.numel()), 0)?;
    if (ws.h(), ws.w()) != (win.kh, win.kw) {
        return Err(Error::dim("kernel shape disagrees with window"));
    }
    let [n, cin, h, wd] = x.shape().0;
    let cout = ws.c();
    let (oh, ow) = win.transposed_out_hw(h, wd)?;
    if win.out_hw(oh, ow)? != (h, wd) {
        return Err(Error::dim("transposed geometry is not invertible for this stride"));
    }
    let p = h * wd;
    let k = win.patch_len(cout);
    let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
    for ni in 0..n {
        let xs = &x.data()[ni * cin * p..(ni + 1) * cin * p];
        let mut cols = vec![T::zero(); k * p];
        T::gemm_op(k, cin, p, w.data(), true, xs, false, &mut cols);
        let dst = &mut out.data_mut()[ni * cout * oh * ow..(ni + 1) * cout * oh * ow];
        col2im_kp(&cols, cout, oh, ow, win, h, wd, dst);
        if let Some(b) = b {
            for co in 0..cout {
                for v in &mut dst[co * oh * ow..(co + 1) * oh * ow] {
                    *v += b.data()[co];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    win: &Window,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let [n, cin, h, wd] = x.shape().0;
    let cout = w.shape().c();
    let [_, _, oh, ow] = grad_out.shape().0;
    let p = h * wd;
    let k = win.patch_len(cout);
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut gb = Tensor::zeros(Shape::new(1, 1, 1, cout));
    for ni in 0..n {
        let go = &grad_out.data()[ni * cout * oh * ow..(ni + 1) * cout * oh * ow];
        for co in 0..cout {
            gb.data_mut()[co] += go[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum::<T>();
        }
        let cols = im2col_kp(go, cout, oh, ow, win, h, wd);
        if let Some(gx) = gx.as_mut() {
            T::gemm_acc(cin, k, p, w.data(), &cols, &mut gx.data_mut()[ni * cin * p..(ni + 1) * cin * p]);
        }
        if let Some(gw) = gw.as_mut() {
            T::gemm_op(cin, p, k, &x.data()[ni * cin * p..(ni + 1) * cin * p], false, &cols, true, gw.data_mut());
        }
    }
    (gx, gw, gb)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape().0;
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / factor) * w..(y / factor + 1) * w];
            for (xo, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[xo / factor];
            }
        }
    }
    out
}

/// Adjoint of [`upsample_nearest`]: sums each `factor×factor` block.
pub fn upsample_nearest_backward<T: Real>(g: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, oh, ow] = g.shape().0;
    let (h, w) = (oh / factor, ow / factor);
    let mut out = Tensor::zeros(Shape::new(n, c, h, w));
    for plane in 0..n * c {
        let src = &g.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / factor) * w + x / factor] += src[y * ow + x];
            }
        }
    }
    out
}

/// Border handling for [`pad2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`dcb|abcd|cba`).
    Reflect,
}

/// Spatial padding amounts `(top, bottom, left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn pad_source(o: usize, before: usize, n: usize, mode: PadMode) -> Option<usize> {
    let i = o as isize - before as isize;
    match mode {
        PadMode::Zero => (i >= 0 && (i as usize) < n).then_some(i as usize),
        PadMode::Reflect => Some(reflect_index(i, n)),
    }
}

pub fn pad2d<T: Real>(x: &Tensor<T>, pad: Padding, mode: PadMode) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if mode == PadMode::Reflect && (pad.top.max(pad.bottom) >= h || pad.left.max(pad.right) >= w) {
        return Err(Error::dim(format!("reflection padding {pad:?} too large for {h}×{w}")));
    }
    let (oh, ow) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let Some(sy) = pad_source(y, pad.top, h, mode) else { continue };
            for xo in 0..ow {
                if let Some(sx) = pad_source(xo, pad.left, w, mode) {
                    dst[y * ow + xo] = src[sy * w + sx];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`pad2d`] for an input of shape `input`.
pub fn pad2d_backward<T: Real>(g: &Tensor<T>, input: Shape, pad: Padding, mode: PadMode) -> Tensor<T> {
    let [n, c, h, w] = input.0;
    let [_, _, oh, ow] = g.shape().0;
    let mut out = Tensor::zeros(input);
    for plane in 0..n * c {
        let src = &g.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            let Some(sy) = pad_source(y, pad.top, h, mode) else { continue };
            for xo in 0..ow {
                if let Some(sx) = pad_source(xo, pad.left, w, mode) {
                    dst[sy * w + sx] += src[y * ow + xo];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_hw_matches_formula() {
        let win = Window::square(3, 2, 1);
        assert_eq!(win.out_hw(8, 8).unwrap(), (4, 4));
        assert_eq!(win.out_hw(7, 5).unwrap(), (4, 3));
        assert!(Window::square(5, 1, 0).out_hw(4, 4).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = Padding { top: 0, bottom: 0, left: 2, right: 2 };
        let y = pad2d(&x, p, PadMode::Reflect).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn overlap_counts_interior_is_kernel_area() {
        let counts = overlap_counts::<f64>(Shape::new(1, 1, 5, 5), &Window::square(3, 1, 1)).unwrap();
        assert_eq!(counts.get(0, 0, 2, 2), 9.0);
        assert_eq!(counts.get(0, 0, 0, 0), 4.0);
        assert_eq!(counts.get(0, 0, 0, 2), 6.0);
    }
}
