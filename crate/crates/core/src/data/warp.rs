//! Geometric resampling: affine warps with bilinear interpolation, resizing,
//! cropping and flips. Pixel `(x, y)` has its center at `(x, y)`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 2-D affine map `p ↦ M·p + t`, stored as the top two rows of a 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine(pub [[f64; 3]; 2]);

impl Affine {
    pub const IDENTITY: Affine = Affine([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translate(tx: f64, ty: f64) -> Self {
        Affine([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    pub fn linear(a: f64, b: f64, c: f64, d: f64) -> Self {
        Affine([[a, b, 0.0], [c, d, 0.0]])
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &Affine) -> Affine {
        let (a, b) = (&self.0, &other.0);
        let mut m = [[0.0; 3]; 2];
        for (r, row) in m.iter_mut().enumerate() {
            row[0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            row[1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            row[2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        Affine(m)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn inverse(&self) -> Result<Affine> {
        let m = &self.0;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::Degenerate("affine map is singular".into()));
        }
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        Ok(Affine([[a, b, -(a * m[0][2] + b * m[1][2])], [c, d, -(c * m[0][2] + d * m[1][2])]]))
    }

    /// Rotation (degrees), isotropic scale, horizontal shear (degrees) and
    /// flips, all about the center of a `w×h` image.
    pub fn about_center(w: usize, h: usize, rot_deg: f64, scale: f64, shear_deg: f64, flip_x: bool, flip_y: bool) -> Affine {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = rot_deg.to_radians().sin_cos();
        let rot = Affine::linear(c * scale, -s * scale, s * scale, c * scale);
        let shear = Affine::linear(1.0, shear_deg.to_radians().tan(), 0.0, 1.0);
        let flip = Affine::linear(if flip_x { -1.0 } else { 1.0 }, 0.0, 0.0, if flip_y { -1.0 } else { 1.0 });
        Affine::translate(cx, cy).then_after(&flip.then_after(&rot.then_after(&shear))).then_after(&Affine::translate(-cx, -cy))
    }
}

/// Treatment of samples that fall outside the source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    Replicate,
    Zero,
}

fn sample(plane: &[f32], h: usize, w: usize, x: f64, y: f64, border: Border) -> f32 {
    let inside = x >= -0.5 && y >= -0.5 && x <= w as f64 - 0.5 && y <= h as f64 - 0.5;
    if border == Border::Zero && !inside {
        return 0.0;
    }
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = ((xc - x0 as f64) as f32, (yc - y0 as f64) as f32);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `src` so that output pixel `p` takes the bilinear value of `src`
/// at `forward⁻¹(p)`.
pub fn warp_affine(src: &Tensor<f32>, forward: &Affine, out_h: usize, out_w: usize, border: Border) -> Result<Tensor<f32>> {
    let s = src.shape();
    if s.h() == 0 || s.w() == 0 {
        return Err(Error::dim("cannot warp an empty image"));
    }
    let inv = forward.inverse()?;
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), out_h, out_w));
    for n in 0..s.n() {
        for c in 0..s.c() {
            let plane = src.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..out_h {
                for x in 0..out_w {
                    let (sx, sy) = inv.apply(x as f64, y as f64);
                    dst[y * out_w + x] = sample(plane, s.h(), s.w(), sx, sy, border);
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear resize with aligned pixel centers.
pub fn resize_bilinear(src: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let s = src.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    let sx = (out_w as f64) / (s.w() as f64);
    let sy = (out_h as f64) / (s.h() as f64);
    let fwd = Affine([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5]]);
    warp_affine(src, &fwd, out_h, out_w, Border::Replicate)
}

/// The `h×w` window with top-left corner `(top, left)`.
pub fn crop(src: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let s = src.shape();
    if top + h > s.h() || left + w > s.w() {
        return Err(Error::dim(format!("crop {h}×{w} at ({left},{top}) exceeds {}×{}", s.h(), s.w())));
    }
    Ok(Tensor::from_fn(Shape::new(s.n(), s.c(), h, w), |[n, c, y, x]| src.get(n, c, y + top, x + left)))
}

pub fn flip_horizontal(src: &Tensor<f32>) -> Tensor<f32> {
    let w = src.shape().w();
    Tensor::from_fn(src.shape(), |[n, c, y, x]| src.get(n, c, y, w - 1 - x))
}
