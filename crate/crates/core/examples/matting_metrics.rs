//! The four matte error measures on a blurred-edge prediction.

use gca_matting::data::{generate_trimap, synthesize_foreground, unknown_mask};
use gca_matting::metrics::evaluate_pair;
use gca_matting::tensor::Tensor;

fn box_blur(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.shape().h(), t.shape().w());
    Tensor::from_fn(t.shape(), |[n, c, y, x]| {
        let mut s = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                s += t.get(n, c, yy, xx);
            }
        }
        s / 9.0
    })
}

fn main() -> gca_matting::Result<()> {
    let (_, gt) = synthesize_foreground(3, 128, 128);
    let trimap = generate_trimap(&gt, 8, 8)?;
    let mask = unknown_mask(&trimap);
    let mut pred = gt.clone();
    for (name, passes) in [("exact", 0), ("blur x1", 1), ("blur x4", 3)] {
        for _ in 0..passes {
            pred = box_blur(&pred);
        }
        let row = evaluate_pair(name, &pred, &gt, &mask)?;
        println!("{name:8} MSE {:.5} SAD {:.4} Grad {:.4} Conn {:.4}", row.mse, row.sad, row.grad, row.conn);
    }
    Ok(())
}
