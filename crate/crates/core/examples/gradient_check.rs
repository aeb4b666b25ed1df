//! Finite-difference check of a small conv → leaky ReLU → softmax graph.

use gca_matting::autograd::Axis;
use gca_matting::fdcheck::{fd_check, FdConfig};
use gca_matting::kernels::Window;
use gca_matting::tensor::{Shape, Tensor};
use rand::SeedableRng;

fn main() -> gca_matting::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::randn(Shape::new(2, 3, 6, 6), 1.0, &mut rng);
    let w = Tensor::<f64>::randn(Shape::new(4, 3, 3, 3), 0.5, &mut rng);
    let report = fd_check(
        |g, v| {
            let y = g.conv2d(v[0], v[1], None, Window::square(3, 2, 1))?;
            let y = g.leaky_relu(y, 0.2);
            Ok(g.softmax(y, Axis::C))
        },
        &[x, w],
        &FdConfig::default(),
    )?;
    for (i, input) in report.inputs.iter().enumerate() {
        println!("input {i}: {input:?}");
    }
    println!("max relative error {:.3e}, passed: {}", report.max_rel_error(), report.passed());
    Ok(())
}
