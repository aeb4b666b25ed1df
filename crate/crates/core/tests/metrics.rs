mod common;

use common::*;
use gca_matting::metrics::{
    connectivity_error, evaluate_pair, gaussian_derivative_kernels, gradient_error, gradient_magnitude, largest_component, mse, sad,
    MetricReport, GRAD_SIGMA,
};
use gca_matting::tensor::{Shape, Tensor};
use proptest::prelude::*;

fn plane(h: usize, w: usize, v: &[f64]) -> Tensor<f32> {
    Tensor::from_vec(Shape::new(1, 1, h, w), v.iter().map(|&x| x as f32).collect()).unwrap()
}

#[test]
fn gradient_kernel_shape() {
    let (hx, hy, half) = gaussian_derivative_kernels(GRAD_SIGMA);
    assert_eq!(half, 4);
    approx::assert_abs_diff_eq!(hx.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-12);
    approx::assert_abs_diff_eq!(hx.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
    assert_eq!(hx[half * 9 + 8], hy[8 * 9 + half]);
}

#[test]
fn gradient_magnitude_matches_reference_on_a_ramp() {
    let (h, w) = (12, 15);
    let img: Vec<f64> = (0..h * w).map(|i| ((i % w) as f64 / w as f64).powi(2)).collect();
    let got = gradient_magnitude(&img, h, w);
    let want = gradient_magnitude_reference(&img, h, w, GRAD_SIGMA);
    assert!(max_abs_diff(&got, &want) < 1e-12);
    assert!(got[6 * w + 7] > 0.0);
    let flat = gradient_magnitude(&vec![0.3; h * w], h, w);
    assert!(flat.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn component_ties_keep_the_column_major_first() {
    // Two 2-pixel components; the one in column 0 comes first.
    let (h, w) = (3, 4);
    let mut m = vec![false; h * w];
    for &(y, x) in &[(2, 0), (2, 1), (0, 2), (0, 3)] {
        m[y * w + x] = true;
    }
    let got = largest_component(&m, h, w);
    assert_eq!(got, largest_component_reference(&m, h, w));
    assert!(got[2 * w] && got[2 * w + 1] && !got[2]);
}

#[test]
fn hand_computed_values() {
    let gt = [0.0, 0.5, 1.0, 0.25];
    let pred = [0.5, 0.25, 1.0, 0.75];
    let unknown = [false, true, true, true];
    let (p, g) = (plane(2, 2, &pred), plane(2, 2, &gt));
    approx::assert_abs_diff_eq!(sad(&p, &g, &unknown).unwrap(), 0.75 / 1000.0, epsilon = 1e-15);
    approx::assert_abs_diff_eq!(mse(&p, &g, &unknown).unwrap(), (0.0625 + 0.25) / 3.0, epsilon = 1e-15);
}

#[test]
fn connectivity_flags_mattes_without_opaque_pixels() {
    let gt = vec![0.5; 16];
    let pred = vec![0.4; 16];
    let c = connectivity_error(&plane(4, 4, &pred), &plane(4, 4, &gt), &[true; 16]).unwrap();
    assert!(c.flagged);
    let mut gt2 = gt.clone();
    gt2[0] = 1.0;
    assert!(!connectivity_error(&plane(4, 4, &pred), &plane(4, 4, &gt2), &[true; 16]).unwrap().flagged);
}

#[test]
fn report_csv_has_a_mean_row() {
    let g = plane(2, 2, &[0.0, 0.5, 1.0, 0.5]);
    let rows = vec![
        evaluate_pair("a", &plane(2, 2, &[0.0, 0.4, 1.0, 0.5]), &g, &[false, true, false, true]).unwrap(),
        evaluate_pair("b", &g, &g, &[false, true, false, true]).unwrap(),
    ];
    let csv = MetricReport { rows }.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "name,MSE,SAD,Grad,Conn,conn_flagged");
    assert!(lines[3].starts_with("mean,0.002500,0.000050,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_match_oracles(seed in any::<u64>(), h in 2usize..10, w in 2usize..10) {
        use rand::Rng;
        let mut r = rng(seed);
        let q = |v: f64| (v as f32) as f64;
        let gt: Vec<f64> = (0..h * w).map(|_| match r.gen_range(0..3) { 0 => 0.0, 1 => 1.0, _ => q(r.gen_range(0.0..1.0)) }).collect();
        let pred: Vec<f64> = (0..h * w).map(|_| q(r.gen_range(0.0..1.0))).collect();
        let unknown: Vec<bool> = gt.iter().map(|&g| (g > 0.0 && g < 1.0) || r.gen_bool(0.3)).collect();
        prop_assume!(unknown.iter().any(|&u| u));
        let (p, g) = (plane(h, w, &pred), plane(h, w, &gt));
        prop_assert!((sad(&p, &g, &unknown).unwrap() - sad_reference(&pred, &gt, &unknown)).abs() < 1e-9);
        prop_assert!((mse(&p, &g, &unknown).unwrap() - mse_reference(&pred, &gt, &unknown)).abs() < 1e-9);
        prop_assert!((gradient_error(&p, &g, &unknown).unwrap() - grad_reference(&pred, &gt, h, w, &unknown)).abs() < 1e-9);
        prop_assert!((connectivity_error(&p, &g, &unknown).unwrap().value - conn_reference(&pred, &gt, h, w, &unknown)).abs() < 1e-9);
    }

    #[test]
    fn largest_component_matches_union_find(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
        use rand::Rng;
        let mut r = rng(seed);
        let m: Vec<bool> = (0..h * w).map(|_| r.gen_bool(0.5)).collect();
        prop_assert_eq!(largest_component(&m, h, w), largest_component_reference(&m, h, w));
    }
}
