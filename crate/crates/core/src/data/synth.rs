//! Procedural foregrounds and backgrounds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::quantize_u8;
use crate::tensor::{Shape, Tensor};

/// Smooth value noise in `[0, 1]`: random values on a lattice of spacing
/// `cell` pixels, blended with smoothstep weights.
pub fn value_noise(h: usize, w: usize, cell: f64, rng: &mut impl Rng) -> Vec<f32> {
    let cell = cell.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / cell;
        let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / cell;
            let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |gx: usize, gy: usize| lattice[gy * gw + gx];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}

fn over(acc: &mut [f64], layer: impl Fn(usize) -> f64) {
    for (i, a) in acc.iter_mut().enumerate() {
        let l = layer(i).clamp(0.0, 1.0);
        *a = *a + l * (1.0 - *a);
    }
}

fn soft_disk(w: usize, cx: f64, cy: f64, r: f64, band: f64) -> impl Fn(usize) -> f64 {
    move |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let d = (x - cx).hypot(y - cy);
        let t = ((r + band / 2.0 - d) / band).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    }
}

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) };
    (px - a.0 - t * dx).hypot(py - a.1 - t * dy)
}

/// A hair-like stroke: a quadratic Bézier skeleton with Gaussian falloff
/// across it.
fn stroke_layer(acc: &mut [f64], h: usize, w: usize, pts: [(f64, f64); 3], sigma: f64, peak: f64) {
    const SEGMENTS: usize = 24;
    let poly: Vec<(f64, f64)> = (0..=SEGMENTS)
        .map(|i| {
            let t = i as f64 / SEGMENTS as f64;
            let u = 1.0 - t;
            (
                u * u * pts[0].0 + 2.0 * u * t * pts[1].0 + t * t * pts[2].0,
                u * u * pts[0].1 + 2.0 * u * t * pts[1].1 + t * t * pts[2].1,
            )
        })
        .collect();
    let reach = 3.0 * sigma + 1.0;
    let (minx, maxx) = poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (miny, maxy) = poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let x0 = (minx - reach).floor().max(0.0) as usize;
    let x1 = ((maxx + reach).ceil().max(0.0) as usize).min(w.saturating_sub(1));
    let y0 = (miny - reach).floor().max(0.0) as usize;
    let y1 = ((maxy + reach).ceil().max(0.0) as usize).min(h.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = poly
                .windows(2)
                .map(|s| dist_to_segment(x as f64, y as f64, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            let l = peak * (-d * d / (2.0 * sigma * sigma)).exp();
            let a = &mut acc[y * w + x];
            *a = *a + l * (1.0 - *a);
        }
    }
}

fn draw_alpha(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = h.min(w) as f64;
    let mut acc = vec![0.0; h * w];
    let disks = rng.gen_range(1..=3);
    let mut anchors = Vec::new();
    for _ in 0..disks {
        let r = rng.gen_range(0.12..0.28) * m;
        let band = rng.gen_range(0.08..0.2) * m;
        let cx = rng.gen_range(0.3..0.7) * w as f64;
        let cy = rng.gen_range(0.3..0.7) * h as f64;
        anchors.push((cx, cy, r));
        over(&mut acc, soft_disk(w, cx, cy, r, band));
    }
    if rng.gen_bool(0.5) {
        // A rectangular patch whose opacity ramps linearly along a random direction.
        let (ang, x0, y0): (f64, f64, f64) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5));
        let (x1, y1): (f64, f64) = (x0 + rng.gen_range(0.2..0.4), y0 + rng.gen_range(0.2..0.4));
        let (dx, dy) = (ang.cos(), ang.sin());
        let span = (x1 - x0).max(y1 - y0) * m;
        let (cx, cy) = ((x0 + x1) / 2.0 * w as f64, (y0 + y1) / 2.0 * h as f64);
        over(&mut acc, |i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            if x < x0 * w as f64 || x > x1 * w as f64 || y < y0 * h as f64 || y > y1 * h as f64 {
                return 0.0;
            }
            0.5 + ((x - cx) * dx + (y - cy) * dy) / span
        });
    }
    for _ in 0..rng.gen_range(3..=8) {
        let (cx, cy, r) = anchors[rng.gen_range(0..anchors.len())];
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let start = (cx + r * theta.cos(), cy + r * theta.sin());
        let len = rng.gen_range(0.15..0.4) * m;
        let bend = rng.gen_range(-0.5..0.5);
        let mid = (start.0 + 0.5 * len * (theta + bend).cos(), start.1 + 0.5 * len * (theta + bend).sin());
        let end = (start.0 + len * (theta - bend).cos(), start.1 + len * (theta - bend).sin());
        stroke_layer(&mut acc, h, w, [start, mid, end], rng.gen_range(0.6..1.8), rng.gen_range(0.5..1.0));
    }
    acc
}

fn acceptable(alpha: &Tensor<f32>) -> bool {
    let d = alpha.data();
    let semi = d.iter().filter(|&&a| a > 0.0 && a < 1.0).count();
    semi as f64 >= 0.10 * d.len() as f64 && d.contains(&0.0) && d.contains(&1.0)
}

/// Seeded foreground color and alpha of size `h×w`. Alpha is quantized to
/// 8-bit levels, contains both exact 0 and exact 1, and at least 10% of its
/// pixels are semitransparent. Draws that miss these bounds are redrawn
/// from the same stream; a fixed soft disk is the last resort.
pub fn synthesize_foreground(seed: u64, h: usize, w: usize) -> (Tensor<f32>, Tensor<f32>) {
    const ATTEMPTS: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(1, 1, h, w);
    let mut alpha = None;
    for _ in 0..ATTEMPTS {
        let a = draw_alpha(h, w, &mut rng);
        let t = quantize_u8(&Tensor::from_fn(shape, |[_, _, y, x]| a[y * w + x] as f32));
        if acceptable(&t) {
            alpha = Some(t);
            break;
        }
    }
    let alpha = alpha.unwrap_or_else(|| {
        let m = h.min(w) as f64;
        let disk = soft_disk(w, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, 0.25 * m, 0.2 * m);
        quantize_u8(&Tensor::from_fn(shape, |[_, _, y, x]| disk(y * w + x) as f32))
    });

    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let coarse: Vec<Vec<f32>> = (0..3).map(|_| value_noise(h, w, rng.gen_range(6.0..16.0), &mut rng)).collect();
    let fine: Vec<Vec<f32>> = (0..3).map(|_| value_noise(h, w, rng.gen_range(1.5..4.0), &mut rng)).collect();
    let fg = Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
        let i = y * w + x;
        (0.55 * base[c] as f32 + 0.3 * coarse[c][i] + 0.15 * fine[c][i]).clamp(0.0, 1.0)
    });
    (quantize_u8(&fg), alpha)
}

/// Seeded background: a two-color gradient with value noise and a few
/// translucent rectangles.
pub fn synthesize_background(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (ang.cos(), ang.sin());
    let noise: Vec<Vec<f32>> = (0..3).map(|_| value_noise(h, w, rng.gen_range(2.0..12.0), &mut rng)).collect();
    let diag = ((h * h + w * w) as f64).sqrt().max(1.0);
    let mut bg = Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| {
        let t = (0.5 + ((x as f64 - w as f64 / 2.0) * dx + (y as f64 - h as f64 / 2.0) * dy) / diag) as f32;
        let g = c0[c] * (1.0 - t) + c1[c] * t;
        (0.7 * g + 0.3 * noise[c][y * w + x]).clamp(0.0, 1.0)
    });
    for _ in 0..rng.gen_range(0..4) {
        let (x0, y0) = (rng.gen_range(0..w.max(1)), rng.gen_range(0..h.max(1)));
        let (x1, y1) = ((x0 + rng.gen_range(1..=w.max(1))).min(w), (y0 + rng.gen_range(1..=h.max(1))).min(h));
        let color: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
        for c in 0..3 {
            let plane = bg.plane_mut(0, c);
            for y in y0..y1 {
                for x in x0..x1 {
                    plane[y * w + x] = 0.5 * plane[y * w + x] + 0.5 * color[c];
                }
            }
        }
    }
    quantize_u8(&bg)
}
