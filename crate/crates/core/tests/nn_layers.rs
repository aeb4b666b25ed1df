mod common;

use common::*;
use gca_matting::autograd::Graph;
use gca_matting::nn::{spectral_normalize, BatchNorm2d, Conv2d, ConvSpec, ConvTranspose2d, Ctx, Mode, ParamStore, ResidualBlock};
use gca_matting::tensor::{Shape, Tensor};

fn top_singular_value(w: &Tensor<f64>) -> f64 {
    let rows = w.shape().n();
    let m = nalgebra::DMatrix::from_row_slice(rows, w.numel() / rows, w.data());
    m.singular_values().max()
}

#[test]
fn spectral_norm_converges_to_unit_top_singular_value() {
    let mut store = ParamStore::<f64>::new(11);
    let conv = Conv2d::new(&mut store, "c", ConvSpec::new(4, 6, 3, 1)).unwrap();
    let raw = store.get(conv.weight).clone();
    let mut normalized = raw.clone();
    for _ in 0..200 {
        normalized = spectral_normalize(&conv, &mut store).unwrap();
    }
    approx::assert_abs_diff_eq!(top_singular_value(&normalized), 1.0, epsilon = 1e-6);
    let ratio = raw.data()[0] / normalized.data()[0];
    approx::assert_abs_diff_eq!(ratio, top_singular_value(&raw), epsilon = 1e-6);
}

#[test]
fn spectral_norm_leaves_zero_weight_alone() {
    let mut store = ParamStore::<f64>::new(1);
    let conv = Conv2d::new(&mut store, "c", ConvSpec::new(2, 2, 3, 1)).unwrap();
    *store.get_mut(conv.weight) = Tensor::zeros(Shape::new(2, 2, 3, 3));
    let w = spectral_normalize(&conv, &mut store).unwrap();
    assert!(w.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_layer_without_spectral_norm_matches_reference() {
    let mut store = ParamStore::<f64>::new(3);
    let conv = Conv2d::new(&mut store, "c", ConvSpec::new(3, 5, 3, 2).bias(true).spectral(false)).unwrap();
    *store.get_mut(conv.bias.unwrap()) = Tensor::from_fn(Shape::new(1, 5, 1, 1), |[_, c, _, _]| c as f64 * 0.1);
    let x = uniform(Shape::new(2, 3, 7, 6), -1.0, 1.0, &mut rng(3));
    let want = conv2d_reference(&x, store.get(conv.weight), Some(store.get(conv.bias.unwrap()).data()), 2, 1);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
    let xv = ctx.constant(x);
    let y = conv.forward(&mut ctx, xv).unwrap();
    assert!(max_abs_diff(g.value(y).data(), want.data()) < 1e-12);
}

#[test]
fn transposed_conv_doubles_resolution() {
    let mut store = ParamStore::<f32>::new(4);
    let up = ConvTranspose2d::new(&mut store, "up", ConvSpec::new(4, 2, 4, 2).pad(1)).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
    let x = ctx.constant(Tensor::ones(Shape::new(1, 4, 5, 7)));
    let y = up.forward(&mut ctx, x).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 2, 10, 14));
}

#[test]
fn batch_norm_tracks_unbiased_running_statistics() {
    let mut store = ParamStore::<f64>::new(5);
    let bn = BatchNorm2d::new(&mut store, "bn", 1).unwrap();
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
    let xv = ctx.constant(x.clone());
    let y = bn.forward(&mut ctx, xv).unwrap();
    // Batch mean 3, biased variance 3.5, unbiased 14/3.
    approx::assert_abs_diff_eq!(store.get(bn.running_mean).data()[0], 0.3, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(store.get(bn.running_var).data()[0], 0.9 + 0.1 * 14.0 / 3.0, epsilon = 1e-12);
    let out = g.value(y).data();
    approx::assert_abs_diff_eq!(out.iter().sum::<f64>(), 0.0, epsilon = 1e-12);

    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
    let xv = ctx.constant(x);
    let y = bn.forward(&mut ctx, xv).unwrap();
    let (m, v) = (0.3, 0.9 + 0.1 * 14.0 / 3.0);
    approx::assert_abs_diff_eq!(g.value(y).data()[3], (6.0 - m) / (v + 1e-5f64).sqrt(), epsilon = 1e-12);
}

#[test]
fn frozen_state_in_train_mode() {
    let mut store = ParamStore::<f64>::new(6);
    let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
    let before = store.get(bn.running_var).clone();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
    ctx.update_state = false;
    let x = ctx.constant(uniform(Shape::new(2, 2, 3, 3), -1.0, 1.0, &mut rng(6)));
    bn.forward(&mut ctx, x).unwrap();
    assert!(store.get(bn.running_var).bitwise_eq(&before));
}

#[test]
fn residual_block_downsamples_and_backpropagates() {
    let mut store = ParamStore::<f32>::new(7);
    let block = ResidualBlock::new(&mut store, "res", 3, 8, 2).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Train);
    let x = ctx.constant(uniform(Shape::new(2, 3, 8, 8), -1.0, 1.0, &mut rng(7)).cast());
    let y = block.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.shape(y), Shape::new(2, 8, 4, 4));
    let loss = ctx.graph.mean(y);
    ctx.graph.backward(loss).unwrap();
    let grads = ctx.param_grads();
    assert!(!grads.is_empty());
    assert!(grads.iter().all(|(_, t)| t.is_finite()));
}
