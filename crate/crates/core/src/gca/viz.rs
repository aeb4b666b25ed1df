use super::AttentionMap;

/// Color of cells without attention (the known region).
pub const NEUTRAL_GRAY: [u8; 3] = [128, 128, 128];

/// An 8-bit RGB rendering of an attention map at feature resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    /// `(w_unknown, w_known)` used by the block, when it ran.
    pub weights: Option<(f64, f64)>,
}

impl AttentionImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Nearest-neighbor enlargement to `width × height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> AttentionImage {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                rgb.extend_from_slice(&self.pixel(sx, sy));
            }
        }
        AttentionImage { width, height, rgb, weights: self.weights }
    }

    /// The top-left `width × height` corner.
    pub fn crop(&self, width: usize, height: usize) -> AttentionImage {
        let (width, height) = (width.min(self.width), height.min(self.height));
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let row = 3 * y * self.width;
            rgb.extend_from_slice(&self.rgb[row..row + 3 * width]);
        }
        AttentionImage { width, height, rgb, weights: self.weights }
    }

    /// Caption listing the region weights, stored as PNG text metadata.
    pub fn caption(&self) -> String {
        match self.weights {
            Some((wu, wk)) => format!("w_unknown={wu:.4} w_known={wk:.4}"),
            None => "no unknown region".to_string(),
        }
    }
}

/// `h, s, v ∈ [0, 1]` to 8-bit RGB.
pub fn hsv_to_rgb8(h: f64, s: f64, v: f64) -> [u8; 3] {
    let (r, g, b) = crate::data::hsv_to_rgb(h as f32, s as f32, v as f32);
    [r, g, b].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Colors each query cell by the absolute position of its best match: hue
/// is the angle of `(x', y')` around the grid center, saturation its
/// distance from the center. Cells without a query are neutral gray.
pub fn extract_attention_map(map: &AttentionMap) -> AttentionImage {
    let (w, h) = (map.w, map.h);
    let mut rgb: Vec<u8> = NEUTRAL_GRAY.iter().copied().cycle().take(3 * w * h).collect();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let rmax = cx.hypot(cy).max(f64::EPSILON);
    for (&q, &(x, y)) in map.queries.iter().zip(&map.argmax) {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let hue = dy.atan2(dx) / std::f64::consts::TAU;
        let sat = (dx.hypot(dy) / rmax).min(1.0);
        rgb[3 * q..3 * q + 3].copy_from_slice(&hsv_to_rgb8(hue, sat, 1.0));
    }
    AttentionImage { width: w, height: h, rgb, weights: map.weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primary_hues() {
        assert_eq!(hsv_to_rgb8(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb8(1.0 / 3.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb8(2.0 / 3.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb8(0.3, 0.0, 1.0), [255, 255, 255]);
    }

    #[test]
    fn empty_map_is_gray() {
        let img = extract_attention_map(&AttentionMap::empty(3, 2));
        assert!(img.rgb.chunks(3).all(|p| p == NEUTRAL_GRAY));
        assert_eq!(img.resize_nearest(6, 4).rgb.len(), 6 * 4 * 3);
    }
}
