//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written as plain nested loops over flat `f64`
//! buffers and shares no code with the library kernels.

#![allow(dead_code)]

use gca_matting::gca::GcaConfig;
use gca_matting::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn to_f64(t: &Tensor<f32>) -> Tensor<f64> {
    Tensor::from_fn(t.shape(), |[n, c, y, x]| t.get(n, c, y, x) as f64)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct cross-correlation: six nested loops, zero padding.
pub fn conv2d_reference(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, _, kh, kw] = w.shape().0;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.get(b, ci, iy as usize, ix as usize) * w.get(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution as a scatter-add of every input value times the
/// kernel, followed by cropping `pad` from each border.
pub fn conv_transpose2d_reference(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().0;
    let [_, cout, kh, kw] = w.shape().0;
    let (fh, fw) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
    let mut full = vec![0.0; n * cout * fh * fw];
    for b in 0..n {
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.get(b, ci, iy, ix);
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                full[((b * cout + co) * fh + iy * stride + ky) * fw + ix * stride + kx] += v * w.get(ci, co, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    let (oh, ow) = (fh - 2 * pad, fw - 2 * pad);
    Tensor::from_fn(Shape::new(n, cout, oh, ow), |[b, c, y, x]| full[((b * cout + c) * fh + y + pad) * fw + x + pad])
}

/// Zero-padded `k×k` patch of channel-major feature planes around `(y, x)`.
fn patch(feat: &[f64], c: usize, h: usize, w: usize, y: usize, x: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut v = Vec::with_capacity(c * k * k);
    for ch in 0..c {
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                let inside = yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w;
                v.push(if inside { feat[(ch * h + yy as usize) * w + xx as usize] } else { 0.0 });
            }
        }
    }
    v
}

fn clamp(v: f64, cfg: &GcaConfig) -> f64 {
    if v < cfg.clamp_lo {
        cfg.clamp_lo
    } else if v > cfg.clamp_hi {
        cfg.clamp_hi
    } else {
        v
    }
}

/// Weights for unknown and known keys, from cell counts.
pub fn weights_reference(n_unknown: usize, n_known: usize, cfg: &GcaConfig) -> (f64, f64) {
    let wu = if n_known == 0 { cfg.clamp_hi } else { clamp((n_unknown as f64 / n_known as f64).sqrt(), cfg) };
    let wk = if n_known == 0 { cfg.clamp_lo } else { clamp((n_known as f64 / n_unknown as f64).sqrt(), cfg) };
    (wu, wk)
}

/// Raw similarity rows (before weighting) for each unknown query, in
/// increasing linear order.
pub fn similarity_reference(guide: &[f64], c: usize, h: usize, w: usize, unknown: &[bool], cfg: &GcaConfig) -> Vec<Vec<f64>> {
    let k = cfg.patch_size;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt().max(cfg.eps_norm);
    let mut rows = Vec::new();
    for q in 0..h * w {
        if !unknown[q] {
            continue;
        }
        let pq = patch(guide, c, h, w, q / w, q % w, k);
        let nq = norm(&pq);
        let mut row = Vec::with_capacity(h * w);
        for key in 0..h * w {
            if key == q {
                row.push(cfg.lambda_self);
                continue;
            }
            let pk = patch(guide, c, h, w, key / w, key % w, k);
            let dot: f64 = pq.iter().zip(&pk).map(|(a, b)| a * b).sum();
            row.push(dot / (nq * norm(&pk)));
        }
        rows.push(row);
    }
    rows
}

/// Softmax over keys of the region-weighted similarities.
pub fn attention_reference(sim: &[Vec<f64>], unknown: &[bool], cfg: &GcaConfig) -> Vec<Vec<f64>> {
    let nu = unknown.iter().filter(|&&u| u).count();
    let (wu, wk) = weights_reference(nu, unknown.len() - nu, cfg);
    sim.iter()
        .map(|row| {
            let z: Vec<f64> = row.iter().enumerate().map(|(key, s)| s * if unknown[key] { wu } else { wk }).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|v| v / total).collect()
        })
        .collect()
}

/// Averaged reconstruction: each pixel of the unknown region receives, from
/// every unknown query whose window covers it, the attention-weighted
/// alpha value at the same offset from each key; the sum is divided by the
/// number of covering queries. Known pixels are zero.
pub fn propagation_reference(alpha: &[f64], c: usize, h: usize, w: usize, unknown: &[bool], attn: &[Vec<f64>], cfg: &GcaConfig) -> Vec<f64> {
    let r = (cfg.patch_size / 2) as isize;
    let queries: Vec<usize> = (0..h * w).filter(|&i| unknown[i]).collect();
    let at = |ch: usize, y: isize, x: isize| {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            alpha[(ch * h + y as usize) * w + x as usize]
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; c * h * w];
    for p in 0..h * w {
        if !unknown[p] {
            continue;
        }
        let (py, px) = ((p / w) as isize, (p % w) as isize);
        let mut count = 0.0;
        let mut acc = vec![0.0; c];
        for (qi, &q) in queries.iter().enumerate() {
            let (dy, dx) = (py - (q / w) as isize, px - (q % w) as isize);
            if dy.abs() > r || dx.abs() > r {
                continue;
            }
            count += 1.0;
            for key in 0..h * w {
                let a = attn[qi][key];
                let (ky, kx) = ((key / w) as isize, (key % w) as isize);
                for (ch, slot) in acc.iter_mut().enumerate() {
                    *slot += a * at(ch, ky + dy, kx + dx);
                }
            }
        }
        for ch in 0..c {
            out[ch * h * w + p] = if count > 0.0 { acc[ch] / count } else { 0.0 };
        }
    }
    out
}

/// Parameters of the two 1×1 adaptation convolutions of a block.
pub struct AdaptWeights {
    /// `Ci × Ci`, row = output channel.
    pub image_w: Vec<f64>,
    pub image_b: Vec<f64>,
    /// `Cα × Cα`.
    pub output_w: Vec<f64>,
}

fn pointwise(x: &[f64], c: usize, hw: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for co in 0..c {
        for p in 0..hw {
            let mut acc = b.map_or(0.0, |b| b[co]);
            for ci in 0..c {
                acc += w[co * c + ci] * x[ci * hw + p];
            }
            out[co * hw + p] = acc;
        }
    }
    out
}

/// The whole block on a batch: guidance adaptation, similarity, attention,
/// averaged propagation, output adaptation, residual sum inside the
/// unknown region.
pub fn gca_block_reference(alpha: &Tensor<f64>, image: &Tensor<f64>, masks: &[Vec<bool>], wts: &AdaptWeights, cfg: &GcaConfig) -> Tensor<f64> {
    let [n, ca, h, w] = alpha.shape().0;
    let ci = image.shape().c();
    let hw = h * w;
    let mut out = alpha.clone();
    for b in 0..n {
        let unknown = &masks[b];
        if !unknown.iter().any(|&u| u) {
            continue;
        }
        let img = &image.data()[b * ci * hw..(b + 1) * ci * hw];
        let al = &alpha.data()[b * ca * hw..(b + 1) * ca * hw];
        let guide = pointwise(img, ci, hw, &wts.image_w, Some(&wts.image_b));
        let sim = similarity_reference(&guide, ci, h, w, unknown, cfg);
        let attn = attention_reference(&sim, unknown, cfg);
        let recon = propagation_reference(al, ca, h, w, unknown, &attn, cfg);
        let adapted = pointwise(&recon, ca, hw, &wts.output_w, None);
        for ch in 0..ca {
            for p in 0..hw {
                if unknown[p] {
                    out.data_mut()[(b * ca + ch) * hw + p] = al[ch * hw + p] + adapted[ch * hw + p];
                }
            }
        }
    }
    out
}

/// Gradient magnitude transcribed from the benchmark procedure: build the
/// Gaussian-derivative kernel, normalize it, replicate-pad the image and
/// apply the kernel as a true convolution (flipped correlation).
pub fn gradient_magnitude_reference(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let epsilon: f64 = 1e-2;
    let pi = std::f64::consts::PI;
    let halfsize = (sigma * (-2.0 * ((2.0 * pi).sqrt() * sigma * epsilon).ln()).sqrt()).ceil() as usize;
    let size = 2 * halfsize + 1;
    let gauss = |x: f64| (-x.powi(2) / (2.0 * sigma.powi(2))).exp() / (sigma * (2.0 * pi).sqrt());
    let dgauss = |x: f64| -x * gauss(x) / sigma.powi(2);
    let mut hx = vec![vec![0.0; size]; size];
    for (i, row) in hx.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = gauss(i as f64 - halfsize as f64) * dgauss(j as f64 - halfsize as f64);
        }
    }
    let s: f64 = hx.iter().flatten().map(|v| v.abs() * v.abs()).sum::<f64>().sqrt();
    hx.iter_mut().flatten().for_each(|v| *v /= s);
    let hy: Vec<Vec<f64>> = (0..size).map(|i| (0..size).map(|j| hx[j][i]).collect()).collect();

    let (ph, pw) = (h + 2 * halfsize, w + 2 * halfsize);
    let mut padded = vec![0.0; ph * pw];
    for y in 0..ph {
        for x in 0..pw {
            let sy = (y as isize - halfsize as isize).max(0).min(h as isize - 1) as usize;
            let sx = (x as isize - halfsize as isize).max(0).min(w as isize - 1) as usize;
            padded[y * pw + x] = img[sy * w + sx];
        }
    }
    let filter = |k: &Vec<Vec<f64>>| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for i in 0..size {
                    for j in 0..size {
                        acc += k[size - 1 - i][size - 1 - j] * padded[(y + i) * pw + x + j];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let (gx, gy) = (filter(&hx), filter(&hy));
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// Known-region predictions replaced by the trimap value (the ground truth
/// there is exactly 0 or 1).
pub fn clamp_known(pred: &[f64], gt: &[f64], unknown: &[bool]) -> Vec<f64> {
    let mut out = pred.to_vec();
    for i in 0..out.len() {
        if !unknown[i] {
            out[i] = gt[i];
        }
    }
    out
}

pub fn grad_reference(pred: &[f64], gt: &[f64], h: usize, w: usize, unknown: &[bool]) -> f64 {
    let pred = &clamp_known(pred, gt, unknown);
    let pa = gradient_magnitude_reference(pred, h, w, 1.4);
    let ga = gradient_magnitude_reference(gt, h, w, 1.4);
    let mut e = 0.0;
    for i in 0..h * w {
        if unknown[i] {
            e += (pa[i] - ga[i]).powi(2);
        }
    }
    e / 1000.0
}

/// Union-find labelling; the largest component wins and ties go to the
/// component whose first pixel in column-major order comes first.
pub fn largest_component_reference(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                if mask[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
    }
    let mut size = vec![0usize; h * w];
    let mut first = vec![usize::MAX; h * w];
    for x in 0..w {
        for y in 0..h {
            let i = y * w + x;
            if mask[i] {
                let r = find(&mut parent, i);
                size[r] += 1;
                first[r] = first[r].min(x * h + y);
            }
        }
    }
    let best = (0..h * w).filter(|&r| size[r] > 0).min_by_key(|&r| (std::cmp::Reverse(size[r]), first[r]));
    (0..h * w).map(|i| mask[i] && Some(find(&mut parent, i)) == best).collect()
}

pub fn conn_reference(pred: &[f64], gt: &[f64], h: usize, w: usize, unknown: &[bool]) -> f64 {
    let pred = &clamp_known(pred, gt, unknown);
    let step = 0.1;
    let thresh: Vec<f64> = (0..=10).map(|i| i as f64 * step).collect();
    let mut l_map = vec![-1.0; h * w];
    for i in 1..thresh.len() {
        let both: Vec<bool> = (0..h * w).map(|p| pred[p] >= thresh[i] && gt[p] >= thresh[i]).collect();
        let omega = largest_component_reference(&both, h, w);
        for p in 0..h * w {
            if l_map[p] == -1.0 && !omega[p] {
                l_map[p] = thresh[i - 1];
            }
        }
    }
    for v in l_map.iter_mut() {
        if *v == -1.0 {
            *v = 1.0;
        }
    }
    let mut e = 0.0;
    for p in 0..h * w {
        let pd = pred[p] - l_map[p];
        let gd = gt[p] - l_map[p];
        let pphi = 1.0 - pd * if pd >= 0.15 { 1.0 } else { 0.0 };
        let gphi = 1.0 - gd * if gd >= 0.15 { 1.0 } else { 0.0 };
        if unknown[p] {
            e += (pphi - gphi).abs();
        }
    }
    e / 1000.0
}

pub fn sad_reference(pred: &[f64], gt: &[f64], unknown: &[bool]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        if unknown[i] {
            s += (pred[i] - gt[i]).abs();
        }
    }
    s / 1000.0
}

pub fn mse_reference(pred: &[f64], gt: &[f64], unknown: &[bool]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..pred.len() {
        if unknown[i] {
            s += (pred[i] - gt[i]).powi(2);
            n += 1.0;
        }
    }
    s / n
}

/// One-hot `1×3×H×W` trimap from per-pixel labels (0 bg, 1 unknown, 2 fg).
pub fn trimap_from(h: usize, w: usize, label: impl Fn(usize, usize) -> usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| if label(y, x) == c { 1.0 } else { 0.0 })
}
