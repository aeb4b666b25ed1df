//! Training losses, each averaged over the unknown region of the trimap.

use crate::autograd::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{PadMode, Padding, Window};
use crate::metrics::{gaussian_derivative_kernels, GRAD_SIGMA};
use crate::tensor::{Real, Shape, Tensor};

/// Smoothing constant of the L1 terms: `|d| ≈ sqrt(d² + ε²)`.
pub const LOSS_EPS: f64 = 1e-6;

/// Unknown-pixel mask over a whole batch of one-hot trimaps, `N·H·W` long.
pub fn batch_unknown_mask<T: Real>(trimap: &Tensor<T>) -> Vec<bool> {
    let n = trimap.shape().n();
    (0..n).flat_map(|i| trimap.plane(i, crate::gca::TRIMAP_UNKNOWN).iter().map(|&v| v == T::one())).collect()
}

/// Per-element weights that turn a sum into the mean over masked pixels,
/// repeated across `channels`.
fn mean_weights<T: Real>(shape: Shape, mask: &[bool]) -> Result<Tensor<T>> {
    let [n, c, h, w] = shape.0;
    if mask.len() != n * h * w {
        return Err(Error::dim(format!("mask of {} values for {shape}", mask.len())));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::contract("loss needs a non-empty unknown region"));
    }
    let wgt = T::of(1.0 / (count * c) as f64);
    Ok(Tensor::from_fn(shape, |[i, _, y, x]| if mask[(i * h + y) * w + x] { wgt } else { T::zero() }))
}

fn masked_mean<T: Real>(g: &mut Graph<T>, per_pixel: Var, mask: &[bool]) -> Result<Var> {
    let wt = g.constant(mean_weights(g.shape(per_pixel), mask)?);
    let weighted = g.mul(per_pixel, wt)?;
    Ok(g.sum(weighted))
}

/// Mean of `sqrt((α̂−α)² + ε²)` over unknown pixels.
pub fn alpha_prediction_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var, mask: &[bool]) -> Result<Var> {
    let d = g.sub(pred, gt)?;
    let s = g.smooth_abs(d, T::of(LOSS_EPS));
    masked_mean(g, s, mask)
}

/// Mean over unknown pixels and color channels of the smoothed
/// `|I − (α̂F + (1−α̂)B)|`.
pub fn compositional_loss<T: Real>(g: &mut Graph<T>, pred: Var, fg: Var, bg: Var, image: Var, mask: &[bool]) -> Result<Var> {
    let c = g.shape(fg).c();
    let rep: Vec<Var> = vec![pred; c];
    let pred_c = g.concat(&rep, Axis::C)?;
    let span = g.sub(fg, bg)?;
    let lift = g.mul(pred_c, span)?;
    let comp = g.add(bg, lift)?;
    let d = g.sub(comp, image)?;
    let s = g.smooth_abs(d, T::of(LOSS_EPS));
    masked_mean(g, s, mask)
}

/// The `2×1×k×k` filter bank (x then y) of Gaussian-derivative kernels,
/// flipped so cross-correlation applies a true convolution.
pub fn gradient_filters<T: Real>() -> (Tensor<T>, usize) {
    let (hx, hy, half) = gaussian_derivative_kernels(GRAD_SIGMA);
    let k = 2 * half + 1;
    let t = Tensor::from_fn(Shape::new(2, 1, k, k), |[o, _, i, j]| {
        let src = if o == 0 { &hx } else { &hy };
        T::of(src[(k - 1 - i) * k + (k - 1 - j)])
    });
    (t, half)
}

/// `sqrt(gx² + gy² + ε²)` per pixel, with reflected borders.
pub fn gradient_magnitude_var<T: Real>(g: &mut Graph<T>, alpha: Var) -> Result<Var> {
    let (filters, half) = gradient_filters::<T>();
    let k = 2 * half + 1;
    let padded = g.pad(alpha, Padding::uniform(half), PadMode::Reflect)?;
    let f = g.constant(filters);
    let d = g.conv2d(padded, f, None, Window::square(k, 1, 0))?;
    let sq = g.mul(d, d)?;
    let gx2 = g.narrow(sq, Axis::C, 0, 1)?;
    let gy2 = g.narrow(sq, Axis::C, 1, 1)?;
    let m2 = g.add(gx2, gy2)?;
    let m2 = g.add_scalar(m2, T::of(LOSS_EPS * LOSS_EPS));
    g.sqrt(m2)
}

/// Mean absolute difference of gradient magnitudes over unknown pixels.
pub fn gradient_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var, mask: &[bool]) -> Result<Var> {
    let mp = gradient_magnitude_var(g, pred)?;
    let mg = gradient_magnitude_var(g, gt)?;
    let d = g.sub(mp, mg)?;
    let a = g.abs(d);
    masked_mean(g, a, mask)
}
