//! Synthetic and ingested matting data: compositing, procedural foregrounds,
//! trimap generation and the augmentation pipeline.
//!
//! Images are tensors with values in `[0, 1]`: RGB as `1×3×H×W`, alpha as
//! `1×1×H×W`, trimaps as one-hot `1×3×H×W` in (background, unknown,
//! foreground) order.

mod augment;
mod color;
mod io;
mod morph;
mod synth;
mod trimap;
mod warp;

pub use augment::{
    augment, hsv_jitter, merge_foregrounds, AugmentConfig, AugmentTrace, Background, Foregrounds, SampleSource,
    MAX_TRANSFORM_RETRIES,
};
pub use color::{hsv_to_rgb, rgb_to_hsv};
pub use io::{
    ingest_dataset, read_gray, read_png_text, read_rgb, read_trimap, write_attention_png, write_gray, write_rgb, write_trimap,
    BitDepth, EvalItem, EvalSet, IngestedDataset,
};
pub use morph::{dilate, erode, squared_distance_to};
pub use synth::{synthesize_background, synthesize_foreground, value_noise};
pub use trimap::{generate_trimap, labels_to_one_hot, one_hot_to_labels, trimap_from_gray, trimap_to_gray, unknown_mask};
pub use warp::{crop, flip_horizontal, resize_bilinear, warp_affine, Affine, Border};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct MattingSample {
    pub fg: Tensor<f32>,
    pub bg: Tensor<f32>,
    pub alpha: Tensor<f32>,
    pub image: Tensor<f32>,
    pub trimap: Tensor<f32>,
}

/// `α·F + (1−α)·B` per pixel and channel. `alpha` is `N×1×H×W`, broadcast
/// over the color channels.
pub fn composite<T: Real>(fg: &Tensor<T>, bg: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    let (sf, sb, sa) = (fg.shape(), bg.shape(), alpha.shape());
    if sf != sb || sa.c() != 1 || sa.n() != sf.n() || sa.h() != sf.h() || sa.w() != sf.w() {
        return Err(Error::Validation(format!("composite: fg {sf}, bg {sb}, alpha {sa} do not line up")));
    }
    Ok(Tensor::from_fn(sf, |[n, c, y, x]| {
        let a = alpha.get(n, 0, y, x);
        a * fg.get(n, c, y, x) + (T::one() - a) * bg.get(n, c, y, x)
    }))
}

/// Mixes two 64-bit values into a well-spread seed (SplitMix64 finalizer).
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rounds every value to the nearest multiple of `1/255`.
pub fn quantize_u8(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Stacks single-image tensors along the batch axis.
pub fn stack<T: Real>(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::dim("cannot stack zero tensors"))?.shape();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        let s = t.shape();
        if s.n() != 1 || s.c() != first.c() || s.h() != first.h() || s.w() != first.w() {
            return Err(Error::dim(format!("cannot stack {s} with {first}")));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(Shape::new(items.len(), first.c(), first.h(), first.w()), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_endpoints_and_mix() {
        let fg = Tensor::from_fn(Shape::new(1, 3, 1, 1), |[_, c, _, _]| [200.0, 0.0, 0.0][c]);
        let bg = Tensor::from_fn(Shape::new(1, 3, 1, 1), |[_, c, _, _]| [0.0, 200.0, 0.0][c]);
        let a = Tensor::full(Shape::new(1, 1, 1, 1), 0.25);
        assert_eq!(composite(&fg, &bg, &a).unwrap().data(), &[50.0, 150.0, 0.0]);
        assert_eq!(composite(&fg, &bg, &Tensor::ones(a.shape())).unwrap(), fg);
        assert_eq!(composite(&fg, &bg, &Tensor::zeros(a.shape())).unwrap(), bg);
    }

    #[test]
    fn composite_mismatch_is_validation_error() {
        let fg = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 3));
        assert!(matches!(composite(&fg, &fg, &a), Err(Error::Validation(_))));
    }
}
