//! Binary morphology with disk structuring elements, via the exact Euclidean
//! distance transform (lower envelope of parabolas, two separable passes).

fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.fill(f64::INFINITY);
        return;
    };
    v[0] = q0;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `set` is true; infinite when `set` is empty.
pub fn squared_distance_to(set: &[bool], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(set.len(), h * w, "mask size");
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut buf_in = vec![0.0; n];
    let mut buf_out = vec![0.0; n];
    let mut d: Vec<f64> = set.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    for x in 0..w {
        for y in 0..h {
            buf_in[y] = d[y * w + x];
        }
        edt_1d(&buf_in[..h], &mut buf_out[..h], &mut v, &mut z);
        for y in 0..h {
            d[y * w + x] = buf_out[y];
        }
    }
    for y in 0..h {
        buf_in[..w].copy_from_slice(&d[y * w..(y + 1) * w]);
        edt_1d(&buf_in[..w], &mut buf_out[..w], &mut v, &mut z);
        d[y * w..(y + 1) * w].copy_from_slice(&buf_out[..w]);
    }
    d
}

/// Keeps the pixels of `mask` whose closed disk of radius `r` lies inside
/// `mask`. Pixels beyond the image border count as inside.
pub fn erode(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let d = squared_distance_to(&outside, h, w);
    let r2 = (r * r) as f64;
    mask.iter().zip(&d).map(|(&m, &d)| m && d > r2).collect()
}

/// Pixels within distance `r` of `mask`.
pub fn dilate(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let d = squared_distance_to(mask, h, w);
    let r2 = (r * r) as f64;
    d.iter().map(|&d| d <= r2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(set: &[bool], h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|p| {
                let (py, px) = ((p / w) as f64, (p % w) as f64);
                (0..h * w)
                    .filter(|&q| set[q])
                    .map(|q| {
                        let (qy, qx) = ((q / w) as f64, (q % w) as f64);
                        (py - qy).powi(2) + (px - qx).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(h in 1usize..9, w in 1usize..9, bits in proptest::collection::vec(proptest::bool::weighted(0.2), 64)) {
            let set: Vec<bool> = bits[..h * w].to_vec();
            prop_assert_eq!(squared_distance_to(&set, h, w), brute(&set, h, w));
        }
    }

    #[test]
    fn erode_single_pixel_hole() {
        let (h, w) = (9, 9);
        let mut m = vec![true; h * w];
        m[4 * w + 4] = false;
        let e = erode(&m, h, w, 2);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as i64 - 4).pow(2) + (x as i64 - 4).pow(2);
                assert_eq!(e[y * w + x], d2 > 4, "({x},{y})");
            }
        }
    }

    #[test]
    fn dilate_point_is_disk() {
        let (h, w) = (11, 11);
        let mut m = vec![false; h * w];
        m[5 * w + 5] = true;
        let d = dilate(&m, h, w, 3);
        assert_eq!(d.iter().filter(|&&b| b).count(), 29);
    }
}
