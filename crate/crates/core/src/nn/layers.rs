use log::warn;

use super::params::{Ctx, Mode, ParamId, ParamKind, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::Window;
use crate::tensor::{Real, Shape, Tensor};

/// Power-iteration steps run when a spectrally normalized layer is created,
/// so that σ̂ is meaningful before the first training step.
const SPECTRAL_WARMUP_ITERS: usize = 15;
const NORM_EPS: f64 = 1e-12;

/// Scales `v` to unit length; a (near-)zero vector is left untouched so the
/// iteration can recover once the weight becomes non-zero.
fn normalize<T: Real>(v: &mut [T]) -> bool {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n <= T::of(NORM_EPS) {
        return false;
    }
    for x in v {
        *x /= n;
    }
    true
}

/// One power-iteration step on the `rows×cols` matrix `w`:
/// `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`. Returns `σ̂ = uᵀWv`.
pub fn power_iteration<T: Real>(w: &[T], rows: usize, cols: usize, u: &mut [T], v: &mut [T]) -> T {
    let mut nv: Vec<T> = (0..cols).map(|j| (0..rows).map(|r| w[r * cols + j] * u[r]).sum()).collect();
    if normalize(&mut nv) {
        v.copy_from_slice(&nv);
    }
    let mut nu: Vec<T> =
        (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().zip(v.iter()).map(|(&a, &b)| a * b).sum()).collect();
    if normalize(&mut nu) {
        u.copy_from_slice(&nu);
    }
    sigma_estimate(w, cols, u, v)
}

pub fn sigma_estimate<T: Real>(w: &[T], cols: usize, u: &[T], v: &[T]) -> T {
    u.iter()
        .enumerate()
        .map(|(r, &ur)| ur * w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum::<T>())
        .sum()
}

/// Power-iteration state `(u, v)` of a spectrally normalized weight.
#[derive(Clone, Copy, Debug)]
pub struct SpectralState {
    pub u: ParamId,
    pub v: ParamId,
}

impl SpectralState {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, weight: ParamId) -> Result<Self> {
        let w = store.get(weight).clone();
        let rows = w.shape().n();
        let cols = w.numel() / rows;
        let mut rng = store.rng_for(&format!("{name}.sn_u"));
        let mut u = Tensor::<T>::randn(Shape::new(1, 1, 1, rows), 1.0, &mut rng).into_data();
        normalize(&mut u);
        let mut v = Tensor::<T>::randn(Shape::new(1, 1, 1, cols), 1.0, &mut rng).into_data();
        normalize(&mut v);
        for _ in 0..SPECTRAL_WARMUP_ITERS {
            power_iteration(w.data(), rows, cols, &mut u, &mut v);
        }
        let u = store.add(format!("{name}.sn_u"), Tensor::from_vec(Shape::new(1, 1, 1, rows), u)?, ParamKind::State)?;
        let v = store.add(format!("{name}.sn_v"), Tensor::from_vec(Shape::new(1, 1, 1, cols), v)?, ParamKind::State)?;
        Ok(SpectralState { u, v })
    }

    /// Runs one power-iteration step on `w`, persisting `u` and `v`.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, w: &Tensor<T>) -> T {
        let rows = w.shape().n();
        let cols = w.numel() / rows;
        let mut u = store.get(self.u).data().to_vec();
        let mut v = store.get(self.v).data().to_vec();
        let sigma = power_iteration(w.data(), rows, cols, &mut u, &mut v);
        store.get_mut(self.u).data_mut().copy_from_slice(&u);
        store.get_mut(self.v).data_mut().copy_from_slice(&v);
        sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    Kaiming,
    Zeros,
}

/// Construction parameters for [`Conv2d`].
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub spectral: bool,
    pub init: Init,
}

impl ConvSpec {
    /// `k×k` convolution with "same" padding, spectral norm on, no bias.
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec { cin, cout, kernel, stride, pad: kernel / 2, bias: false, spectral: true, init: Init::Kaiming }
    }

    pub fn bias(mut self, on: bool) -> Self {
        self.bias = on;
        self
    }

    pub fn spectral(mut self, on: bool) -> Self {
        self.spectral = on;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }
}

/// 2-D convolution (cross-correlation) with optional spectral normalization.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub window: Window,
    pub spectral: Option<SpectralState>,
    pub cin: usize,
    pub cout: usize,
}

fn init_weight<T: Real>(store: &ParamStore<T>, name: &str, shape: Shape, fan_in: usize, init: Init) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Kaiming => {
            let mut rng = store.rng_for(name);
            Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), &mut rng)
        }
    }
}

impl Conv2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec) -> Result<Self> {
        let shape = Shape::new(spec.cout, spec.cin, spec.kernel, spec.kernel);
        let wname = format!("{name}.weight");
        let w = init_weight(store, &wname, shape, spec.cin * spec.kernel * spec.kernel, spec.init);
        let weight = store.add(wname, w, ParamKind::Trainable)?;
        let bias = if spec.bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, spec.cout, 1, 1)), ParamKind::Trainable)?)
        } else {
            None
        };
        let spectral = if spec.spectral {
            Some(SpectralState::new(store, name, weight)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            window: Window::square(spec.kernel, spec.stride, spec.pad),
            spectral,
            cin: spec.cin,
            cout: spec.cout,
        })
    }

    /// The weight as used in the forward pass: `W / σ̂` when spectrally
    /// normalized. In training mode one power-iteration step runs first.
    pub fn effective_weight<T: Real>(&self, ctx: &mut Ctx<'_, T>) -> Result<Var> {
        let w = ctx.param(self.weight);
        let Some(sn) = self.spectral else { return Ok(w) };
        if ctx.training() && ctx.update_state {
            let current = ctx.graph.value(w).clone();
            sn.step(ctx.store, &current);
        }
        let (u, v) = (ctx.store.get(sn.u).data().to_vec(), ctx.store.get(sn.v).data().to_vec());
        match ctx.graph.spectral_norm(w, &u, &v) {
            Ok(out) => Ok(out),
            Err(Error::Contract(_)) => {
                warn!("spectral norm skipped for a zero weight (σ̂ undefined)");
                Ok(w)
            }
            Err(e) => Err(e),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let xs = ctx.graph.shape(x);
        if xs.c() != self.cin {
            return Err(Error::dim(format!("conv expects {} input channels, got {xs}", self.cin)));
        }
        let w = self.effective_weight(ctx)?;
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(x, w, b, self.window)
    }
}

/// One power-iteration step on the layer's weight, persisting `(u, v)`, and
/// returns the normalized weight `W / σ̂`. A zero weight is returned
/// unchanged with a warning.
pub fn spectral_normalize<T: Real>(layer: &Conv2d, store: &mut ParamStore<T>) -> Result<Tensor<T>> {
    let sn = layer.spectral.ok_or_else(|| Error::contract("layer has no spectral normalization"))?;
    let w = store.get(layer.weight).clone();
    let sigma = sn.step(store, &w);
    if sigma.abs() <= T::of(NORM_EPS) {
        warn!("spectral norm skipped for a zero weight (σ̂ undefined)");
        return Ok(w);
    }
    Ok(w.map(|x| x / sigma))
}

/// Transposed convolution; `weight` has shape `Cin×Cout×k×k`. Overlapping
/// contributions are summed.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub window: Window,
    pub cin: usize,
    pub cout: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec) -> Result<Self> {
        let shape = Shape::new(spec.cin, spec.cout, spec.kernel, spec.kernel);
        let wname = format!("{name}.weight");
        let w = init_weight(store, &wname, shape, spec.cin * spec.kernel * spec.kernel, spec.init);
        let weight = store.add(wname, w, ParamKind::Trainable)?;
        let bias = if spec.bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, spec.cout, 1, 1)), ParamKind::Trainable)?)
        } else {
            None
        };
        Ok(ConvTranspose2d {
            weight,
            bias,
            window: Window::square(spec.kernel, spec.stride, spec.pad),
            cin: spec.cin,
            cout: spec.cout,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv_transpose2d(x, w, b, self.window)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let s = Shape::new(1, channels, 1, 1);
        Ok(BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(s), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(s), ParamKind::Trainable)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(s), ParamKind::State)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(s), ParamKind::State)?,
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        })
    }

    /// Training mode normalizes with batch statistics and folds them into the
    /// running averages; evaluation mode uses the running averages.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let xs = ctx.graph.shape(x);
        if xs.c() != self.channels {
            return Err(Error::dim(format!("batch norm expects {} channels, got {xs}", self.channels)));
        }
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let out = ctx.graph.batch_norm(x, gamma, beta, None, T::of(self.eps))?;
                if ctx.update_state {
                    let (mean, var) = crate::autograd::batch_moments(ctx.graph.value(x));
                    let m = (xs.n() * xs.h() * xs.w()) as f64;
                    let unbias = T::of(m / (m - 1.0));
                    let mom = T::of(self.momentum);
                    let keep = T::one() - mom;
                    for (r, b) in ctx.store.get_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                        *r = keep * *r + mom * *b;
                    }
                    for (r, b) in ctx.store.get_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                        *r = keep * *r + mom * *b * unbias;
                    }
                }
                Ok(out)
            }
            Mode::Eval => {
                let mean = ctx.store.get(self.running_mean).data().to_vec();
                let var = ctx.store.get(self.running_var).data().to_vec();
                ctx.graph.batch_norm(x, gamma, beta, Some((&mean, &var)), T::of(self.eps))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn spectral_normalize_on_plain_layer_is_contract_error() {
        let mut store = ParamStore::<f64>::new(0);
        let conv = Conv2d::new(&mut store, "c", ConvSpec::new(2, 2, 3, 1).spectral(false)).unwrap();
        assert!(matches!(spectral_normalize(&conv, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn batchnorm_train_single_value_is_contract_error() {
        let mut store = ParamStore::<f64>::new(0);
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
        let x = ctx.constant(Tensor::ones(Shape::new(1, 2, 1, 1)));
        assert!(matches!(bn.forward(&mut ctx, x), Err(Error::Contract(_))));
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let mut store = ParamStore::<f64>::new(0);
        let conv = Conv2d::new(&mut store, "c", ConvSpec::new(3, 2, 3, 1)).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
        let x = ctx.constant(Tensor::ones(Shape::new(1, 2, 4, 4)));
        assert!(matches!(conv.forward(&mut ctx, x), Err(Error::Dimension(_))));
    }
}
