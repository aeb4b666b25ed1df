//! Spectrally normalized convolution: σ̂ from power iteration against the
//! exact top singular value, and the layer applied to an image batch.

use gca_matting::autograd::Graph;
use gca_matting::nn::{spectral_normalize, Conv2d, ConvSpec, Ctx, Mode, ParamStore};
use gca_matting::tensor::{Shape, Tensor};

fn top_singular(w: &Tensor<f64>) -> f64 {
    let rows = w.shape().n();
    nalgebra::DMatrix::from_row_slice(rows, w.numel() / rows, w.data()).singular_values().max()
}

fn main() -> gca_matting::Result<()> {
    let mut store = ParamStore::<f64>::new(3);
    let conv = Conv2d::new(&mut store, "conv", ConvSpec::new(8, 16, 3, 2))?;
    let raw = store.get(conv.weight).clone();
    println!("exact σ of the raw weight: {:.6}", top_singular(&raw));
    for iters in [1, 5, 20, 100] {
        let mut w = raw.clone();
        for _ in 0..iters {
            w = spectral_normalize(&conv, &mut store)?;
        }
        println!("after {iters:3} more power iterations: σ(W/σ̂) = {:.6}", top_singular(&w));
    }
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
    let x = ctx.constant(Tensor::ones(Shape::new(1, 8, 32, 32)));
    let y = conv.forward(&mut ctx, x)?;
    println!("output shape {}", g.shape(y));
    Ok(())
}
