use super::morph::erode;
use crate::error::{Error, Result};
use crate::gca::{TRIMAP_BG, TRIMAP_FG, TRIMAP_UNKNOWN};
use crate::tensor::{Real, Shape, Tensor};

pub const FG_LEVEL: f32 = 0.999;
pub const BG_LEVEL: f32 = 0.001;

/// One-hot trimap from a `1×1×H×W` alpha matte. Foreground is the
/// `erode_r` erosion of `α ≥ 0.999`, background the `dilate_r` erosion of
/// `α ≤ 0.001` (equivalently, the complement of the dilated non-background);
/// everything else, including every pixel with `0 < α < 1`, is unknown.
pub fn generate_trimap(alpha: &Tensor<f32>, dilate_r: usize, erode_r: usize) -> Result<Tensor<f32>> {
    let s = alpha.shape();
    if s.n() != 1 || s.c() != 1 {
        return Err(Error::dim(format!("trimap generation expects a single alpha plane, got {s}")));
    }
    let (h, w) = (s.h(), s.w());
    let a = alpha.data();
    let fg_seed: Vec<bool> = a.iter().map(|&v| v >= FG_LEVEL).collect();
    let bg_seed: Vec<bool> = a.iter().map(|&v| v <= BG_LEVEL).collect();
    let fg = erode(&fg_seed, h, w, erode_r);
    let bg = erode(&bg_seed, h, w, dilate_r);
    let labels: Vec<usize> = (0..h * w)
        .map(|i| {
            if fg[i] && a[i] >= 1.0 {
                TRIMAP_FG
            } else if bg[i] && a[i] <= 0.0 {
                TRIMAP_BG
            } else {
                TRIMAP_UNKNOWN
            }
        })
        .collect();
    if !labels.contains(&TRIMAP_UNKNOWN) {
        return Err(Error::Degenerate("trimap has no unknown pixels".into()));
    }
    Ok(labels_to_one_hot(&labels, h, w))
}

pub fn labels_to_one_hot<T: Real>(labels: &[usize], h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| if labels[y * w + x] == c { T::one() } else { T::zero() })
}

/// Per-pixel label of a one-hot `1×3×H×W` trimap (the first channel at 1).
pub fn one_hot_to_labels<T: Real>(trimap: &Tensor<T>) -> Vec<usize> {
    let s = trimap.shape();
    let hw = s.h() * s.w();
    (0..hw)
        .map(|p| (0..3).find(|&c| trimap.plane(0, c)[p] == T::one()).unwrap_or(TRIMAP_UNKNOWN))
        .collect()
}

/// Unknown-region indicator of a one-hot trimap, per pixel of batch element 0.
pub fn unknown_mask<T: Real>(trimap: &Tensor<T>) -> Vec<bool> {
    trimap.plane(0, TRIMAP_UNKNOWN).iter().map(|&v| v == T::one()).collect()
}

/// Gray levels `{0, 128, 255}` to a one-hot trimap. Any other level is a
/// validation error listing the offending values.
pub fn trimap_from_gray(gray: &[u8], h: usize, w: usize) -> Result<Tensor<f32>> {
    if gray.len() != h * w {
        return Err(Error::dim(format!("{} gray values for {h}×{w}", gray.len())));
    }
    let mut bad: Vec<u8> = gray.iter().copied().filter(|v| !matches!(v, 0 | 128 | 255)).collect();
    if !bad.is_empty() {
        bad.sort_unstable();
        bad.dedup();
        let list: Vec<String> = bad.iter().map(|v| v.to_string()).collect();
        return Err(Error::Validation(format!("trimap contains gray levels other than 0/128/255: {}", list.join(", "))));
    }
    let labels: Vec<usize> = gray
        .iter()
        .map(|&v| match v {
            0 => TRIMAP_BG,
            128 => TRIMAP_UNKNOWN,
            _ => TRIMAP_FG,
        })
        .collect();
    Ok(labels_to_one_hot(&labels, h, w))
}

pub fn trimap_to_gray<T: Real>(trimap: &Tensor<T>) -> Vec<u8> {
    one_hot_to_labels(trimap)
        .into_iter()
        .map(|l| match l {
            TRIMAP_BG => 0,
            TRIMAP_UNKNOWN => 128,
            _ => 255,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_edge_band_width() {
        let (h, w) = (8, 40);
        let alpha = Tensor::from_fn(Shape::new(1, 1, h, w), |[_, _, _, x]| if x < 20 { 1.0 } else { 0.0 });
        let t = generate_trimap(&alpha, 5, 5).unwrap();
        let labels = one_hot_to_labels(&t);
        for y in 0..h {
            let row = &labels[y * w..(y + 1) * w];
            let unknown: Vec<usize> = (0..w).filter(|&x| row[x] == TRIMAP_UNKNOWN).collect();
            // Erosion by 5 removes x ∈ [15, 20) from the foreground and x ∈ [20, 25) from the background.
            assert_eq!(unknown, (15..25).collect::<Vec<_>>());
        }
    }

    #[test]
    fn opaque_alpha_is_degenerate() {
        let alpha = Tensor::ones(Shape::new(1, 1, 6, 6));
        assert!(matches!(generate_trimap(&alpha, 5, 5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gray_roundtrip_and_rejection() {
        let g = vec![0u8, 128, 255, 128];
        let t = trimap_from_gray(&g, 2, 2).unwrap();
        assert_eq!(trimap_to_gray(&t), g);
        let err = trimap_from_gray(&[0, 7, 200, 7], 2, 2).unwrap_err();
        assert!(err.to_string().contains("7, 200"), "{err}");
    }
}
