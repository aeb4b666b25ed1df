mod common;

use common::*;
use gca_matting::autograd::Graph;
use gca_matting::gca::{
    attention_var, classify_regions, extract_attention_map, guided_attention, guided_similarity, propagate, propagate_var,
    region_weights, similarity_var, AttentionResult, GcaConfig, RegionMask, NEUTRAL_GRAY,
};
use gca_matting::tensor::{Shape, Tensor};
use proptest::prelude::*;

fn center_only(h: usize, w: usize) -> RegionMask {
    let mut m = vec![false; h * w];
    m[(h / 2) * w + w / 2] = true;
    RegionMask::new(h, w, m).unwrap()
}

#[test]
fn one_hot_attention_copies_the_key_value() {
    let cfg = GcaConfig::default();
    let mask = center_only(5, 5);
    let alpha = Tensor::<f64>::from_fn(Shape::new(1, 2, 5, 5), |[_, c, y, x]| (c * 100 + y * 5 + x) as f64);
    for key in [0usize, 7, 19, 24] {
        let mut scores = Tensor::zeros(Shape::matrix(1, 25));
        scores.data_mut()[key] = 1.0;
        let map = gca_matting::gca::AttentionMap { h: 5, w: 5, queries: vec![12], argmax: vec![(key % 5, key / 5)], weights: None };
        let out = propagate(&alpha, &AttentionResult { scores: scores.clone(), map }, &mask, &cfg).unwrap();
        for c in 0..2 {
            assert_eq!(out.get(0, c, 2, 2), alpha.get(0, c, key / 5, key % 5));
            assert_eq!(out.plane(0, c).iter().filter(|&&v| v != 0.0).count(), usize::from(alpha.get(0, c, key / 5, key % 5) != 0.0));
        }
        let rows = vec![scores.data().to_vec()];
        let want = propagation_reference(alpha.data(), 2, 5, 5, &mask.unknown, &rows, &cfg);
        assert!(max_abs_diff(out.data(), &want) < 1e-12);
    }
}

#[test]
fn attention_prefers_the_matching_cluster() {
    // Left half red-ish, right half blue-ish; unknown cells in the middle
    // columns should look to their own side.
    let (h, w) = (8, 10);
    let guide = Tensor::<f64>::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
        let left = x < w / 2;
        let base = match (c, left) {
            (0, true) | (2, false) => 1.0,
            _ => 0.05,
        };
        base + 0.01 * ((x * 7 + y * 3) % 5) as f64
    });
    let unknown: Vec<bool> = (0..h * w).map(|i| (3..7).contains(&(i % w))).collect();
    let mask = RegionMask::new(h, w, unknown).unwrap();
    let cfg = GcaConfig::default();
    let attn = guided_attention(&guided_similarity(&guide, &mask, &cfg).unwrap(), &mask, &cfg).unwrap();
    for (&q, &(ax, _)) in attn.map.queries.iter().zip(&attn.map.argmax) {
        let (qx, qy) = (q % w, q / w);
        if qy == 0 || qy == h - 1 || qx == w / 2 - 1 || qx == w / 2 {
            continue;
        }
        assert_eq!(ax < w / 2, qx < w / 2, "query ({qx},{qy}) attends to column {ax}");
    }
}

#[test]
fn library_matches_reference_on_each_stage() {
    let cfg = GcaConfig::default();
    let mut r = rng(21);
    let (c, h, w) = (4, 6, 7);
    let guide = uniform(Shape::new(1, c, h, w), -1.0, 1.0, &mut r);
    let alpha = uniform(Shape::new(1, 3, h, w), -1.0, 1.0, &mut r);
    let unknown: Vec<bool> = (0..h * w).map(|i| (i * 5) % 3 == 0).collect();
    let mask = RegionMask::new(h, w, unknown.clone()).unwrap();
    let sim = guided_similarity(&guide, &mask, &cfg).unwrap();
    let sim_ref = similarity_reference(guide.data(), c, h, w, &unknown, &cfg);
    assert!(max_abs_diff(sim.data(), &sim_ref.concat()) < 1e-12);
    let attn = guided_attention(&sim, &mask, &cfg).unwrap();
    let attn_ref = attention_reference(&sim_ref, &unknown, &cfg);
    assert!(max_abs_diff(attn.scores.data(), &attn_ref.concat()) < 1e-12);
    let out = propagate(&alpha, &attn, &mask, &cfg).unwrap();
    let out_ref = propagation_reference(alpha.data(), 3, h, w, &unknown, &attn_ref, &cfg);
    assert!(max_abs_diff(out.data(), &out_ref) < 1e-12);

    // The differentiable path gives the same numbers.
    let mut g = Graph::new();
    let gv = g.constant(guide);
    let av = g.constant(alpha);
    let s = similarity_var(&mut g, gv, &mask, &cfg).unwrap();
    let (a, map) = attention_var(&mut g, s, &mask, &cfg).unwrap();
    let p = propagate_var(&mut g, av, a, &mask, &cfg).unwrap();
    assert_eq!(map, attn.map);
    assert!(max_abs_diff(g.value(p).data(), &out_ref) < 1e-12);
}

#[test]
fn region_classification_downsamples_the_trimap() {
    // Unknown band in columns 8..16 of a 16×32 trimap; at 1/8 resolution
    // only the cell covering that band is unknown.
    let trimap = trimap_from(16, 32, |_, x| if (8..16).contains(&x) { 1 } else if x < 8 { 0 } else { 2 });
    let masks = classify_regions(&trimap, (2, 4), &GcaConfig::default()).unwrap();
    assert_eq!(masks.len(), 1);
    assert_eq!(masks[0].unknown, vec![false, true, false, false, false, true, false, false]);
}

#[test]
fn visualization_keeps_known_cells_neutral() {
    let cfg = GcaConfig::default();
    let mask = RegionMask::new(4, 4, (0..16).map(|i| i % 4 >= 2).collect()).unwrap();
    let guide = uniform(Shape::new(1, 3, 4, 4), 0.0, 1.0, &mut rng(5));
    let attn = guided_attention(&guided_similarity(&guide, &mask, &cfg).unwrap(), &mask, &cfg).unwrap();
    let img = extract_attention_map(&attn.map);
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(img.pixel(x, y) == NEUTRAL_GRAY, x < 2, "cell ({x},{y})");
        }
    }
    assert!(img.caption().starts_with("w_unknown=1.0000"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn region_weights_match_reference(nu in 0usize..400, nk in 0usize..400) {
        prop_assume!(nu + nk > 0);
        let cfg = GcaConfig::default();
        let mask = RegionMask::new(1, nu + nk, (0..nu + nk).map(|i| i < nu).collect()).unwrap();
        let (wu, wk) = region_weights(&mask, &cfg).unwrap();
        let (ru, rk) = weights_reference(nu, nk, &cfg);
        prop_assert_eq!((wu, wk), (ru, rk));
        prop_assert!((0.1..=10.0).contains(&wu) && (0.1..=10.0).contains(&wk));
        if nu > 0 && nk > 0 {
            prop_assert!((wu * wk - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), h in 1usize..7, w in 2usize..7, c in 1usize..5) {
        let mut r = rng(seed);
        let cfg = GcaConfig::default();
        let guide = uniform(Shape::new(1, c, h, w), -2.0, 2.0, &mut r);
        let mut unknown: Vec<bool> = (0..h * w).map(|i| (seed >> (i % 60)) & 1 == 1).collect();
        unknown[0] = true;
        let mask = RegionMask::new(h, w, unknown).unwrap();
        let attn = guided_attention(&guided_similarity(&guide, &mask, &cfg).unwrap(), &mask, &cfg).unwrap();
        for (i, &q) in mask.unknown_indices().iter().enumerate() {
            let row = &attn.scores.data()[i * h * w..(i + 1) * h * w];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!(row[q] < 1e-8);
        }
    }
}
