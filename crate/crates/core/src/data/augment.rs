//! The augmentation pipeline: merge → optional resize → affine → trimap →
//! unknown-centered crop → HSV jitter → composite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::color::{hsv_to_rgb, rgb_to_hsv};
use super::io::IngestedDataset;
use super::synth::{synthesize_background, synthesize_foreground};
use super::trimap::{generate_trimap, unknown_mask};
use super::warp::{crop, resize_bilinear, warp_affine, Affine, Border};
use super::{composite, derive_seed, MattingSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine draws attempted before a sample is given up.
pub const MAX_TRANSFORM_RETRIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub merge_prob: f64,
    pub resize_prob: f64,
    /// Side length of the optional square resize.
    pub resize_to: usize,
    /// Side length of synthetic foregrounds before augmentation.
    pub source_size: usize,
    /// Side length of the square training crop.
    pub crop: usize,
    pub radius_min: usize,
    pub radius_max: usize,
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub shear_deg: f64,
    pub flip_prob: f64,
    /// Hue offset drawn from `±hue_shift` (fraction of the color wheel).
    pub hue_shift: f64,
    pub saturation: (f64, f64),
    pub value: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            merge_prob: 0.5,
            resize_prob: 0.25,
            resize_to: 80,
            source_size: 96,
            crop: 64,
            radius_min: 5,
            radius_max: 29,
            rotation_deg: 30.0,
            scale_min: 0.8,
            scale_max: 1.25,
            shear_deg: 10.0,
            flip_prob: 0.5,
            hue_shift: 0.05,
            saturation: (0.8, 1.2),
            value: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// Full-size settings: 512 crops from 640 resizes.
    pub fn full() -> Self {
        AugmentConfig { resize_to: 640, source_size: 640, crop: 512, ..Self::default() }
    }

    /// Merging, resizing, warping and jitter all switched off.
    pub fn identity() -> Self {
        AugmentConfig {
            merge_prob: 0.0,
            resize_prob: 0.0,
            rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            shear_deg: 0.0,
            flip_prob: 0.0,
            hue_shift: 0.0,
            saturation: (1.0, 1.0),
            value: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.merge_prob) || !prob(self.resize_prob) || !prob(self.flip_prob) {
            return Err(Error::Config("augment probabilities must lie in [0, 1]".into()));
        }
        if self.crop == 0 || self.resize_to == 0 || self.source_size == 0 {
            return Err(Error::Config("augment sizes must be positive".into()));
        }
        if self.radius_min > self.radius_max {
            return Err(Error::Config(format!("augment radius range [{}, {}] is empty", self.radius_min, self.radius_max)));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config("augment scale range must be positive and ordered".into()));
        }
        if self.saturation.0 > self.saturation.1 || self.value.0 > self.value.1 || self.hue_shift < 0.0 {
            return Err(Error::Config("augment HSV ranges must be ordered".into()));
        }
        Ok(())
    }
}

/// Over-composites foreground `a` onto foreground `b`:
/// `α = αa + αb(1−αa)`, `F = (αa·Fa + (1−αa)·αb·Fb) / α`.
pub fn merge_foregrounds(a: (&Tensor<f32>, &Tensor<f32>), b: (&Tensor<f32>, &Tensor<f32>)) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let ((fa, aa), (fb, ab)) = (a, b);
    if fa.shape() != fb.shape() || aa.shape() != ab.shape() {
        return Err(Error::Validation(format!("cannot merge {} with {}", fa.shape(), fb.shape())));
    }
    let alpha = aa.zip_map(ab, |x, y| x + y * (1.0 - x))?;
    let fg = Tensor::from_fn(fa.shape(), |[n, c, y, x]| {
        let (xa, xb) = (aa.get(n, 0, y, x), ab.get(n, 0, y, x));
        let a_new = alpha.get(n, 0, y, x);
        if xb == 0.0 || xa == 1.0 || a_new == 0.0 {
            fa.get(n, c, y, x)
        } else {
            (xa * fa.get(n, c, y, x) + (1.0 - xa) * xb * fb.get(n, c, y, x)) / a_new
        }
    });
    Ok((fg, alpha))
}

/// Shifts hue by `dh` (wrapping) and scales saturation and value, clamped to `[0, 1]`.
pub fn hsv_jitter(rgb: &Tensor<f32>, dh: f32, sat: f32, val: f32) -> Tensor<f32> {
    let s = rgb.shape();
    let mut out = rgb.clone();
    let hw = s.h() * s.w();
    for n in 0..s.n() {
        for p in 0..hw {
            let (r, g, b) = (rgb.plane(n, 0)[p], rgb.plane(n, 1)[p], rgb.plane(n, 2)[p]);
            let (h, sa, v) = rgb_to_hsv(r, g, b);
            let (r, g, b) = hsv_to_rgb(h + dh, (sa * sat).clamp(0.0, 1.0), (v * val).clamp(0.0, 1.0));
            out.plane_mut(n, 0)[p] = r;
            out.plane_mut(n, 1)[p] = g;
            out.plane_mut(n, 2)[p] = b;
        }
    }
    out
}

/// Where backgrounds come from.
#[derive(Clone, Debug)]
pub enum Background {
    Synthetic,
    /// Backgrounds sampled by random crops of these images.
    Images(Vec<Tensor<f32>>),
}

impl Background {
    fn draw(&self, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Tensor<f32>> {
        match self {
            Background::Synthetic => Ok(synthesize_background(rng.gen(), h, w)),
            Background::Images(list) => {
                if list.is_empty() {
                    return Err(Error::Ingest("background pool is empty".into()));
                }
                let mut img = list[rng.gen_range(0..list.len())].clone();
                let s = img.shape();
                if s.h() < h || s.w() < w {
                    let k = (h as f64 / s.h() as f64).max(w as f64 / s.w() as f64);
                    img = resize_bilinear(&img, (s.h() as f64 * k).ceil() as usize, (s.w() as f64 * k).ceil() as usize)?;
                }
                let s = img.shape();
                let top = rng.gen_range(0..=s.h() - h);
                let left = rng.gen_range(0..=s.w() - w);
                crop(&img, top, left, h, w)
            }
        }
    }
}

/// Parameters drawn by one pipeline run.
#[derive(Clone, Debug)]
pub struct AugmentTrace {
    pub merged: bool,
    pub resized: bool,
    pub affine: Affine,
    pub transform_attempts: usize,
    pub dilate_r: usize,
    pub erode_r: usize,
    /// Trimap of the warped image, before cropping.
    pub full_trimap: Tensor<f32>,
    /// `(x, y)` of the crop center in the warped image.
    pub center: (usize, usize),
    /// `(top, left)` of the crop window.
    pub window: (usize, usize),
    pub hsv: (f32, f32, f32),
}

fn draw_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Runs the pipeline on one foreground. `partner` is the candidate for
/// merging. Fails with [`Error::Degenerate`] when no transform in
/// [`MAX_TRANSFORM_RETRIES`] leaves an unknown pixel.
pub fn augment(
    fg: &Tensor<f32>,
    alpha: &Tensor<f32>,
    partner: Option<(&Tensor<f32>, &Tensor<f32>)>,
    background: &Background,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(MattingSample, AugmentTrace)> {
    let (mut fg, mut alpha) = (fg.clone(), alpha.clone());
    let merge_draw = rng.gen::<f64>();
    let mut merged = false;
    if let Some((pf, pa)) = partner {
        if merge_draw < cfg.merge_prob {
            let (h, w) = (fg.shape().h(), fg.shape().w());
            let (pf, pa) = if pf.shape().h() != h || pf.shape().w() != w {
                (resize_bilinear(pf, h, w)?, resize_bilinear(pa, h, w)?)
            } else {
                (pf.clone(), pa.clone())
            };
            (fg, alpha) = merge_foregrounds((&fg, &alpha), (&pf, &pa))?;
            merged = true;
        }
    }
    let resized = rng.gen::<f64>() < cfg.resize_prob;
    if resized {
        fg = resize_bilinear(&fg, cfg.resize_to, cfg.resize_to)?;
        alpha = resize_bilinear(&alpha, cfg.resize_to, cfg.resize_to)?;
    }
    let (h0, w0) = (fg.shape().h(), fg.shape().w());
    if h0 < cfg.crop || w0 < cfg.crop {
        let k = (cfg.crop as f64 / h0 as f64).max(cfg.crop as f64 / w0 as f64);
        let (h1, w1) = (((h0 as f64 * k).ceil() as usize).max(cfg.crop), ((w0 as f64 * k).ceil() as usize).max(cfg.crop));
        fg = resize_bilinear(&fg, h1, w1)?;
        alpha = resize_bilinear(&alpha, h1, w1)?;
    }
    let (h, w) = (fg.shape().h(), fg.shape().w());

    let mut found = None;
    for attempt in 1..=MAX_TRANSFORM_RETRIES {
        let rot = draw_uniform(rng, -cfg.rotation_deg, cfg.rotation_deg);
        let scale = draw_uniform(rng, cfg.scale_min, cfg.scale_max);
        let shear = draw_uniform(rng, -cfg.shear_deg, cfg.shear_deg);
        let flip = rng.gen::<f64>() < cfg.flip_prob;
        let dilate_r = rng.gen_range(cfg.radius_min..=cfg.radius_max);
        let erode_r = rng.gen_range(cfg.radius_min..=cfg.radius_max);
        let affine = Affine::about_center(w, h, rot, scale, shear, flip, false);
        let wf = warp_affine(&fg, &affine, h, w, Border::Replicate)?;
        let wa = warp_affine(&alpha, &affine, h, w, Border::Zero)?;
        match generate_trimap(&wa, dilate_r, erode_r) {
            Ok(t) => {
                found = Some((wf, wa, t, affine, attempt, dilate_r, erode_r));
                break;
            }
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let Some((wf, wa, full_trimap, affine, transform_attempts, dilate_r, erode_r)) = found else {
        return Err(Error::Degenerate(format!("no unknown pixel after {MAX_TRANSFORM_RETRIES} transforms")));
    };

    let unknown: Vec<usize> = unknown_mask(&full_trimap).iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i).collect();
    let c = unknown[rng.gen_range(0..unknown.len())];
    let center = (c % w, c / w);
    let half = cfg.crop / 2;
    let top = center.1.saturating_sub(half).min(h - cfg.crop);
    let left = center.0.saturating_sub(half).min(w - cfg.crop);
    let fg_c = crop(&wf, top, left, cfg.crop, cfg.crop)?;
    let alpha_c = crop(&wa, top, left, cfg.crop, cfg.crop)?;
    let trimap_c = crop(&full_trimap, top, left, cfg.crop, cfg.crop)?;

    let dh = draw_uniform(rng, -cfg.hue_shift, cfg.hue_shift) as f32;
    let ds = draw_uniform(rng, cfg.saturation.0, cfg.saturation.1) as f32;
    let dv = draw_uniform(rng, cfg.value.0, cfg.value.1) as f32;
    let fg_j = if (dh, ds, dv) == (0.0, 1.0, 1.0) { fg_c } else { hsv_jitter(&fg_c, dh, ds, dv) };

    let bg = background.draw(rng, cfg.crop, cfg.crop)?;
    let image = composite(&fg_j, &bg, &alpha_c)?;
    let sample = MattingSample { fg: fg_j, bg, alpha: alpha_c, image, trimap: trimap_c };
    let trace = AugmentTrace {
        merged,
        resized,
        affine,
        transform_attempts,
        dilate_r,
        erode_r,
        full_trimap,
        center,
        window: (top, left),
        hsv: (dh, ds, dv),
    };
    Ok((sample, trace))
}

/// Where foregrounds come from.
#[derive(Clone, Debug)]
pub enum Foregrounds {
    Synthetic,
    Ingested(IngestedDataset),
}

/// Deterministic sample stream: sample `i` is a pure function of
/// `(seed, i, config)`.
#[derive(Clone, Debug)]
pub struct SampleSource {
    pub cfg: AugmentConfig,
    pub seed: u64,
    pub foregrounds: Foregrounds,
    pub background: Background,
}

/// Samples skipped (degenerate draws) before the source gives up.
const MAX_SKIPS: u64 = 64;

impl SampleSource {
    pub fn synthetic(cfg: AugmentConfig, seed: u64) -> Self {
        SampleSource { cfg, seed, foregrounds: Foregrounds::Synthetic, background: Background::Synthetic }
    }

    fn foreground(&self, key: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        match &self.foregrounds {
            Foregrounds::Synthetic => Ok(synthesize_foreground(key, self.cfg.source_size, self.cfg.source_size)),
            Foregrounds::Ingested(ds) => {
                if ds.is_empty() {
                    return Err(Error::Ingest("dataset has no samples".into()));
                }
                ds.load((key % ds.len() as u64) as usize)
            }
        }
    }

    pub fn sample_traced(&self, index: u64) -> Result<(MattingSample, AugmentTrace)> {
        for skip in 0..MAX_SKIPS {
            let key = derive_seed(derive_seed(self.seed, index), skip);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let (fg, alpha) = self.foreground(rng.gen())?;
            let partner = self.foreground(rng.gen())?;
            match augment(&fg, &alpha, Some((&partner.0, &partner.1)), &self.background, &self.cfg, &mut rng) {
                Ok(out) => return Ok(out),
                Err(Error::Degenerate(msg)) => {
                    log::warn!("sample {index}: skipped degenerate draw ({msg})");
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Degenerate(format!("sample {index}: every draw was degenerate")))
    }

    pub fn sample(&self, index: u64) -> Result<MattingSample> {
        self.sample_traced(index).map(|(s, _)| s)
    }
}
