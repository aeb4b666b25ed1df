mod common;

use common::*;
use gca_matting::autograd::{Axis, Graph};
use gca_matting::kernels::{self, Window};
use gca_matting::tensor::{Shape, Tensor};
use proptest::prelude::*;

#[test]
fn matmul_matches_nalgebra() {
    let mut r = rng(1);
    let a = uniform(Shape::new(1, 1, 7, 5), -1.0, 1.0, &mut r);
    let b = uniform(Shape::new(1, 1, 5, 9), -1.0, 1.0, &mut r);
    let got = kernels::matmul(7, 5, 9, a.data(), b.data());
    let na = nalgebra::DMatrix::from_row_slice(7, 5, a.data());
    let nb = nalgebra::DMatrix::from_row_slice(5, 9, b.data());
    let want = na * nb;
    for i in 0..7 {
        for j in 0..9 {
            approx::assert_abs_diff_eq!(got[i * 9 + j], want[(i, j)], epsilon = 1e-12);
        }
    }
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut r = rng(2);
    for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1), (5, 1, 2)] {
        let x = uniform(Shape::new(2, 3, 9, 8), -1.0, 1.0, &mut r);
        let w = uniform(Shape::new(4, 3, k, k), -1.0, 1.0, &mut r);
        let b = uniform(Shape::new(1, 4, 1, 1), -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), Window::square(k, s, p)).unwrap();
        let want = conv2d_reference(&x, &w, Some(b.data()), s, p);
        assert_eq!(g.shape(y), want.shape());
        assert!(max_abs_diff(g.value(y).data(), want.data()) < 1e-12, "k{k} s{s} p{p}");
    }
}

#[test]
fn conv_transpose2d_matches_scatter_reference() {
    let mut r = rng(3);
    for (k, s, p) in [(4, 2, 1), (3, 1, 1), (2, 2, 0)] {
        let x = uniform(Shape::new(1, 3, 5, 6), -1.0, 1.0, &mut r);
        let w = uniform(Shape::new(3, 2, k, k), -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv_transpose2d(xv, wv, None, Window::square(k, s, p)).unwrap();
        let want = conv_transpose2d_reference(&x, &w, s, p);
        assert_eq!(g.shape(y), want.shape());
        assert!(max_abs_diff(g.value(y).data(), want.data()) < 1e-12);
    }
}

#[test]
fn im2col_then_col2im_counts_window_coverage() {
    let x = Tensor::<f64>::ones(Shape::new(1, 1, 4, 4));
    let mut g = Graph::new();
    let xv = g.constant(x);
    let win = Window::square(3, 1, 1);
    let cols = g.im2col(xv, win).unwrap();
    let back = g.col2im(cols, Shape::new(1, 1, 4, 4), win).unwrap();
    // Corner pixels are seen by 4 windows, edges by 6, interior by 9.
    let v = g.value(back);
    assert_eq!(v.get(0, 0, 0, 0), 4.0);
    assert_eq!(v.get(0, 0, 0, 1), 6.0);
    assert_eq!(v.get(0, 0, 1, 1), 9.0);
}

#[test]
fn backward_accumulates_over_reuse() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 3.0]).unwrap());
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let s = g.sum(z);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[3.0, -3.0, 7.0]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(4);
    let x = uniform(Shape::new(2, 3, 4, 5), -30.0, 30.0, &mut r);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let y = g.softmax(xv, Axis::W);
    for row in g.value(y).data().chunks(5) {
        approx::assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}

fn small_shape() -> impl Strategy<Value = Shape> {
    (1usize..3, 1usize..4, 1usize..6, 1usize..6).prop_map(|(n, c, h, w)| Shape::new(n, c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transpose_is_an_involution(shape in small_shape(), seed in any::<u64>()) {
        let x = uniform(shape, -1.0, 1.0, &mut rng(seed));
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let t = g.transpose(v);
        let tt = g.transpose(t);
        prop_assert!(g.value(tt).bitwise_eq(&x));
    }

    #[test]
    fn narrow_pieces_concat_back(shape in small_shape(), seed in any::<u64>()) {
        prop_assume!(shape.c() >= 2);
        let x = uniform(shape, -1.0, 1.0, &mut rng(seed));
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let a = g.narrow(v, Axis::C, 0, 1).unwrap();
        let b = g.narrow(v, Axis::C, 1, shape.c() - 1).unwrap();
        let c = g.concat(&[a, b], Axis::C).unwrap();
        prop_assert!(g.value(c).bitwise_eq(&x));
    }

    #[test]
    fn sum_gradient_is_ones(shape in small_shape(), seed in any::<u64>()) {
        let x = uniform(shape, -1.0, 1.0, &mut rng(seed));
        let mut g = Graph::new();
        let v = g.leaf(x);
        let s = g.sum(v);
        g.backward(s).unwrap();
        prop_assert!(g.grad(v).unwrap().data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut r = rng(seed);
        let x = uniform(Shape::new(1, 2, 5, 5), -1.0, 1.0, &mut r);
        let w = uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
        let base = conv2d_reference(&x, &w, None, 1, 1);
        let mut g = Graph::new();
        let xv = g.constant(x.map(|v| v * a));
        let wv = g.constant(w);
        let y = g.conv2d(xv, wv, None, Window::square(3, 1, 1)).unwrap();
        let scaled: Vec<f64> = base.data().iter().map(|v| v * a).collect();
        prop_assert!(max_abs_diff(g.value(y).data(), &scaled) < 1e-10);
    }
}
