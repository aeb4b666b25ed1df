//! Guided contextual attention.
//!
//! Low-level image features decide *where* to look; high-level alpha features
//! supply *what* is copied. For every unknown position the 3×3 image-feature
//! patch around it is compared (cosine similarity) with every patch of the
//! feature map, the scores are re-weighted by region size and turned into a
//! softmax, and the attention-weighted alpha-feature patches are pasted back
//! with overlap averaging. The reconstruction is added to the alpha features
//! inside the unknown region only.

mod viz;

pub use viz::{extract_attention_map, hsv_to_rgb8, AttentionImage, NEUTRAL_GRAY};

use crate::autograd::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, Window};
use crate::nn::{Conv2d, ConvSpec, Ctx, Init, ParamStore};
use crate::tensor::{Real, Shape, Tensor};

/// Channel order of one-hot trimaps.
pub const TRIMAP_BG: usize = 0;
pub const TRIMAP_UNKNOWN: usize = 1;
pub const TRIMAP_FG: usize = 2;

/// How the pooled unknown fraction of a feature cell decides its region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionRule {
    /// Unknown when the pooled unknown fraction exceeds the threshold.
    Threshold,
    /// Unknown when any covered pixel is unknown.
    Any,
}

/// Denominator used when averaging overlapping pasted patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapNorm {
    /// Count only the patches pasted by unknown queries.
    UnknownQueries,
    /// Count every patch position of the transposed convolution.
    AllPatches,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcaConfig {
    pub patch_size: usize,
    pub lambda_self: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub unknown_threshold: f64,
    pub eps_norm: f64,
    pub region_rule: RegionRule,
    pub overlap_norm: OverlapNorm,
}

impl Default for GcaConfig {
    fn default() -> Self {
        GcaConfig {
            patch_size: 3,
            lambda_self: -1e4,
            clamp_lo: 0.1,
            clamp_hi: 10.0,
            unknown_threshold: 0.5,
            eps_norm: 1e-6,
            region_rule: RegionRule::Threshold,
            overlap_norm: OverlapNorm::UnknownQueries,
        }
    }
}

impl GcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 {
            return Err(Error::Config(format!("gca.patch_size must be odd, got {}", self.patch_size)));
        }
        if !(self.clamp_lo < self.clamp_hi) || self.clamp_lo <= 0.0 {
            return Err(Error::Config(format!("gca clamp bounds must satisfy 0 < lo < hi, got [{}, {}]", self.clamp_lo, self.clamp_hi)));
        }
        if !(self.lambda_self < 0.0) {
            return Err(Error::Config(format!("gca.lambda_self must be negative, got {}", self.lambda_self)));
        }
        if !(self.unknown_threshold > 0.0 && self.unknown_threshold < 1.0) {
            return Err(Error::Config(format!("gca.unknown_threshold must lie in (0,1), got {}", self.unknown_threshold)));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::Config("gca.eps_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        Window::square(self.patch_size, 1, self.patch_size / 2)
    }

    fn clamp(&self, x: f64) -> f64 {
        x.max(self.clamp_lo).min(self.clamp_hi)
    }
}

/// Unknown/known split of a feature grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    pub h: usize,
    pub w: usize,
    pub unknown: Vec<bool>,
}

impl RegionMask {
    pub fn new(h: usize, w: usize, unknown: Vec<bool>) -> Result<Self> {
        if unknown.len() != h * w {
            return Err(Error::dim(format!("region mask of {} cells for a {h}×{w} grid", unknown.len())));
        }
        Ok(RegionMask { h, w, unknown })
    }

    pub fn all(h: usize, w: usize, unknown: bool) -> Self {
        RegionMask { h, w, unknown: vec![unknown; h * w] }
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_unknown(&self) -> usize {
        self.unknown.iter().filter(|&&u| u).count()
    }

    pub fn n_known(&self) -> usize {
        self.len() - self.n_unknown()
    }

    /// Linear indices of unknown cells in increasing order.
    pub fn unknown_indices(&self) -> Vec<usize> {
        self.unknown.iter().enumerate().filter(|(_, &u)| u).map(|(i, _)| i).collect()
    }
}

/// Checks that every pixel of an `N×3×H×W` trimap has exactly one channel at 1
/// and the others at 0.
pub fn validate_one_hot<T: Real>(trimap: &Tensor<T>) -> Result<()> {
    let s = trimap.shape();
    if s.c() != 3 {
        return Err(Error::Validation(format!("trimap must have 3 channels, got {s}")));
    }
    let hw = s.h() * s.w();
    for n in 0..s.n() {
        let planes: Vec<&[T]> = (0..3).map(|c| trimap.plane(n, c)).collect();
        for p in 0..hw {
            let mut ones = 0;
            for plane in &planes {
                let v = plane[p];
                if v == T::one() {
                    ones += 1;
                } else if v != T::zero() {
                    return Err(Error::Validation(format!(
                        "trimap is not one-hot: value {v} at batch {n}, pixel ({}, {})",
                        p % s.w(),
                        p / s.w()
                    )));
                }
            }
            if ones != 1 {
                return Err(Error::Validation(format!(
                    "trimap is not one-hot: {ones} active channels at batch {n}, pixel ({}, {})",
                    p % s.w(),
                    p / s.w()
                )));
            }
        }
    }
    Ok(())
}

/// Region masks at feature resolution, one per batch element: the unknown
/// channel is average-pooled over each `H/H' × W/W'` cell and thresholded.
pub fn classify_regions<T: Real>(trimap: &Tensor<T>, feature_hw: (usize, usize), cfg: &GcaConfig) -> Result<Vec<RegionMask>> {
    validate_one_hot(trimap)?;
    let s = trimap.shape();
    let (fh, fw) = feature_hw;
    if fh == 0 || fw == 0 || s.h() % fh != 0 || s.w() % fw != 0 {
        return Err(Error::dim(format!("feature grid {fh}×{fw} does not evenly divide trimap {}×{}", s.h(), s.w())));
    }
    let (ch, cw) = (s.h() / fh, s.w() / fw);
    let area = (ch * cw) as f64;
    (0..s.n())
        .map(|n| {
            let plane = trimap.plane(n, TRIMAP_UNKNOWN);
            let unknown = (0..fh * fw)
                .map(|cell| {
                    let (cy, cx) = (cell / fw, cell % fw);
                    let mut sum = 0.0;
                    for y in cy * ch..(cy + 1) * ch {
                        for x in cx * cw..(cx + 1) * cw {
                            sum += plane[y * s.w() + x].to_f64_lossy();
                        }
                    }
                    match cfg.region_rule {
                        RegionRule::Threshold => sum / area > cfg.unknown_threshold,
                        RegionRule::Any => sum > 0.0,
                    }
                })
                .collect();
            RegionMask::new(fh, fw, unknown)
        })
        .collect()
}

/// `(w_unknown, w_known)`: `clamp(√(|U|/|K|))` and `clamp(√(|K|/|U|))`.
/// With no known cells the unknown weight saturates at `clamp_hi`.
pub fn region_weights(mask: &RegionMask, cfg: &GcaConfig) -> Result<(f64, f64)> {
    let (u, k) = (mask.n_unknown() as f64, mask.n_known() as f64);
    if u == 0.0 {
        return Err(Error::contract("region weights need at least one unknown cell"));
    }
    Ok((cfg.clamp((u / k).sqrt()), cfg.clamp((k / u).sqrt())))
}

pub fn region_weight(mask: &RegionMask, key_is_unknown: bool, cfg: &GcaConfig) -> Result<f64> {
    let (wu, wk) = region_weights(mask, cfg)?;
    Ok(if key_is_unknown { wu } else { wk })
}

/// Summary of one attention pass, enough to draw the attention map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub h: usize,
    pub w: usize,
    /// Linear indices of the query cells.
    pub queries: Vec<usize>,
    /// Per query, `(x', y')` of the highest weighted score (lowest index on ties).
    pub argmax: Vec<(usize, usize)>,
    /// `(w_unknown, w_known)`; `None` when there were no queries.
    pub weights: Option<(f64, f64)>,
}

impl AttentionMap {
    fn empty(h: usize, w: usize) -> Self {
        AttentionMap { h, w, queries: Vec::new(), argmax: Vec::new(), weights: None }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionResult<T: Real = f32> {
    /// `|U| × H'W'` softmax rows.
    pub scores: Tensor<T>,
    pub map: AttentionMap,
}

fn check_single<T: Real>(g: &Graph<T>, v: Var, mask: &RegionMask, what: &str) -> Result<()> {
    let s = g.shape(v);
    if s.n() != 1 || s.h() != mask.h || s.w() != mask.w {
        return Err(Error::dim(format!("{what} {s} does not match a single {}×{} grid", mask.h, mask.w)));
    }
    Ok(())
}

/// Records the similarity of every unknown query patch with every key patch;
/// self matches are replaced by `λ`. Returns `|U| × H'W'`.
pub fn similarity_var<T: Real>(g: &mut Graph<T>, image_feat: Var, mask: &RegionMask, cfg: &GcaConfig) -> Result<Var> {
    check_single(g, image_feat, mask, "image features")?;
    let hw = mask.len();
    let queries = mask.unknown_indices();
    let patches = g.im2col(image_feat, cfg.window())?;
    let normed = g.row_normalize(patches, T::of(cfg.eps_norm));
    let q = g.gather_rows(normed, &queries)?;
    let kt = g.transpose(normed);
    let s = g.matmul(q, kt)?;
    let mut keep = Tensor::ones(Shape::matrix(queries.len(), hw));
    let mut lambda = Tensor::zeros(Shape::matrix(queries.len(), hw));
    for (i, &p) in queries.iter().enumerate() {
        keep.data_mut()[i * hw + p] = T::zero();
        lambda.data_mut()[i * hw + p] = T::of(cfg.lambda_self);
    }
    let keep = g.constant(keep);
    let lambda = g.constant(lambda);
    let s = g.mul(s, keep)?;
    g.add(s, lambda)
}

/// Multiplies each key column by its region weight and applies a softmax
/// along the keys. Returns the scores and the argmax summary.
pub fn attention_var<T: Real>(g: &mut Graph<T>, similarity: Var, mask: &RegionMask, cfg: &GcaConfig) -> Result<(Var, AttentionMap)> {
    let queries = mask.unknown_indices();
    let hw = mask.len();
    if g.shape(similarity) != Shape::matrix(queries.len(), hw) {
        return Err(Error::dim(format!("similarity {} for {} queries over {hw} keys", g.shape(similarity), queries.len())));
    }
    let (wu, wk) = region_weights(mask, cfg)?;
    let col: Vec<T> = mask.unknown.iter().map(|&u| T::of(if u { wu } else { wk })).collect();
    let weights = Tensor::from_fn(Shape::matrix(queries.len(), hw), |[_, _, _, k]| col[k]);
    let weights = g.constant(weights);
    let weighted = g.mul(similarity, weights)?;
    let argmax = g
        .value(weighted)
        .data()
        .chunks(hw)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            (best % mask.w, best / mask.w)
        })
        .collect();
    let scores = g.softmax(weighted, Axis::W);
    Ok((scores, AttentionMap { h: mask.h, w: mask.w, queries, argmax, weights: Some((wu, wk)) }))
}

/// Per-cell reciprocal overlap count, zero outside the unknown region.
fn paste_scale<T: Real>(mask: &RegionMask, channels: usize, cfg: &GcaConfig) -> Result<Tensor<T>> {
    let (h, w) = (mask.h, mask.w);
    let win = cfg.window();
    let counts: Vec<f64> = match cfg.overlap_norm {
        OverlapNorm::AllPatches => kernels::overlap_counts::<f64>(Shape::new(1, 1, h, w), &win)?.into_data(),
        OverlapNorm::UnknownQueries => {
            let r = (cfg.patch_size / 2) as isize;
            let mut c = vec![0.0; h * w];
            for q in mask.unknown_indices() {
                let (qy, qx) = ((q / w) as isize, (q % w) as isize);
                for y in (qy - r).max(0)..=(qy + r).min(h as isize - 1) {
                    for x in (qx - r).max(0)..=(qx + r).min(w as isize - 1) {
                        c[y as usize * w + x as usize] += 1.0;
                    }
                }
            }
            c
        }
    };
    let scale: Vec<T> = counts
        .iter()
        .zip(&mask.unknown)
        .map(|(&c, &u)| if u && c > 0.0 { T::of(1.0 / c) } else { T::zero() })
        .collect();
    Ok(Tensor::from_fn(Shape::new(1, channels, h, w), |[_, _, y, x]| scale[y * w + x]))
}

/// Pastes the attention-weighted alpha-feature patches back onto the grid,
/// averages overlaps and zeroes the known region. `1×C×H'×W'` in and out.
pub fn propagate_var<T: Real>(g: &mut Graph<T>, alpha_feat: Var, scores: Var, mask: &RegionMask, cfg: &GcaConfig) -> Result<Var> {
    check_single(g, alpha_feat, mask, "alpha features")?;
    let queries = mask.unknown_indices();
    let shape = g.shape(alpha_feat);
    let win = cfg.window();
    let patches = g.im2col(alpha_feat, win)?;
    let pasted = g.matmul(scores, patches)?;
    let rows = g.scatter_rows(pasted, &queries, mask.len())?;
    let summed = g.col2im(rows, shape, win)?;
    let scale = g.constant(paste_scale(mask, shape.c(), cfg)?);
    g.mul(summed, scale)
}

fn single_graph<T: Real>(t: &Tensor<T>, g: &mut Graph<T>) -> Result<Var> {
    if t.shape().n() != 1 {
        return Err(Error::dim(format!("expected a single feature map, got {}", t.shape())));
    }
    Ok(g.constant(t.clone()))
}

/// Similarity rows for the unknown queries of one `1×C×H'×W'` feature map.
/// An all-known mask yields an empty `0 × H'W'` result.
pub fn guided_similarity<T: Real>(image_feat: &Tensor<T>, mask: &RegionMask, cfg: &GcaConfig) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = single_graph(image_feat, &mut g)?;
    let s = similarity_var(&mut g, x, mask, cfg)?;
    Ok(g.value(s).clone())
}

pub fn guided_attention<T: Real>(similarity: &Tensor<T>, mask: &RegionMask, cfg: &GcaConfig) -> Result<AttentionResult<T>> {
    let mut g = Graph::new();
    let s = g.constant(similarity.clone());
    let (a, map) = attention_var(&mut g, s, mask, cfg)?;
    Ok(AttentionResult { scores: g.value(a).clone(), map })
}

/// The averaged, masked reconstruction (before the output adaptation and the
/// residual sum). Zero everywhere when there are no unknown cells.
pub fn propagate<T: Real>(alpha_feat: &Tensor<T>, attn: &AttentionResult<T>, mask: &RegionMask, cfg: &GcaConfig) -> Result<Tensor<T>> {
    if mask.n_unknown() == 0 {
        return Ok(Tensor::zeros(alpha_feat.shape()));
    }
    let mut g = Graph::new();
    let x = single_graph(alpha_feat, &mut g)?;
    let a = g.constant(attn.scores.clone());
    let p = propagate_var(&mut g, x, a, mask, cfg)?;
    Ok(g.value(p).clone())
}

/// A guided contextual attention block with its two 1×1 adaptation
/// convolutions: one on the image features before patch extraction, one on
/// the propagated alpha features before the residual sum.
#[derive(Clone, Debug)]
pub struct GcaBlock {
    pub image_adapt: Conv2d,
    pub output_adapt: Conv2d,
    pub cfg: GcaConfig,
}

pub struct GcaOutput {
    pub out: Var,
    pub maps: Vec<AttentionMap>,
}

impl GcaBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        image_channels: usize,
        alpha_channels: usize,
        cfg: GcaConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let image_adapt = Conv2d::new(
            store,
            &format!("{name}.image_adapt"),
            ConvSpec::new(image_channels, image_channels, 1, 1).bias(true).spectral(false),
        )?;
        let output_adapt = Conv2d::new(
            store,
            &format!("{name}.output_adapt"),
            ConvSpec::new(alpha_channels, alpha_channels, 1, 1).spectral(false).init(Init::Zeros),
        )?;
        Ok(GcaBlock { image_adapt, output_adapt, cfg })
    }

    /// `alpha_feat`: `N×Cα×H'×W'`, `image_feat`: `N×Ci×H'×W'`, one mask per
    /// batch element. Batch elements with no unknown cells pass through
    /// untouched; when none have any, the input node itself is returned.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, alpha_feat: Var, image_feat: Var, masks: &[RegionMask]) -> Result<GcaOutput> {
        let (sa, si) = (ctx.graph.shape(alpha_feat), ctx.graph.shape(image_feat));
        if sa.n() != si.n() || sa.h() != si.h() || sa.w() != si.w() {
            return Err(Error::dim(format!("alpha features {sa} and image features {si} differ in batch or grid")));
        }
        if masks.len() != sa.n() {
            return Err(Error::dim(format!("{} region masks for batch of {}", masks.len(), sa.n())));
        }
        if let Some(m) = masks.iter().find(|m| m.h != sa.h() || m.w != sa.w()) {
            return Err(Error::dim(format!("region mask {}×{} for feature grid {}×{}", m.h, m.w, sa.h(), sa.w())));
        }
        if masks.iter().all(|m| m.n_unknown() == 0) {
            return Ok(GcaOutput { out: alpha_feat, maps: masks.iter().map(|m| AttentionMap::empty(m.h, m.w)).collect() });
        }
        let guide = self.image_adapt.forward(ctx, image_feat)?;
        let mut parts = Vec::with_capacity(sa.n());
        let mut maps = Vec::with_capacity(sa.n());
        for (n, mask) in masks.iter().enumerate() {
            if mask.n_unknown() == 0 {
                parts.push(ctx.constant(Tensor::zeros(sa.with_axis(0, 1))));
                maps.push(AttentionMap::empty(mask.h, mask.w));
                continue;
            }
            let guide_n = ctx.graph.narrow(guide, Axis::N, n, 1)?;
            let alpha_n = ctx.graph.narrow(alpha_feat, Axis::N, n, 1)?;
            let s = similarity_var(ctx.graph, guide_n, mask, &self.cfg)?;
            let (a, map) = attention_var(ctx.graph, s, mask, &self.cfg)?;
            parts.push(propagate_var(ctx.graph, alpha_n, a, mask, &self.cfg)?);
            maps.push(map);
        }
        let pasted = if parts.len() == 1 { parts[0] } else { ctx.graph.concat(&parts, Axis::N)? };
        let adapted = self.output_adapt.forward(ctx, pasted)?;
        let hw = sa.h() * sa.w();
        let select: Vec<bool> = (0..sa.numel()).map(|i| masks[i / (sa.c() * hw)].unknown[i % hw]).collect();
        let out = ctx.graph.masked_residual(alpha_feat, adapted, &select)?;
        Ok(GcaOutput { out, maps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    fn trimap_from_labels(h: usize, w: usize, label: impl Fn(usize, usize) -> usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 3, h, w), |[_, c, y, x]| if label(y, x) == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn classify_all_unknown_and_all_known() {
        let cfg = GcaConfig::default();
        let t = trimap_from_labels(16, 16, |_, _| TRIMAP_UNKNOWN);
        let m = &classify_regions(&t, (4, 4), &cfg).unwrap()[0];
        assert_eq!((m.n_unknown(), m.n_known()), (16, 0));
        let t = trimap_from_labels(16, 16, |_, _| TRIMAP_FG);
        assert_eq!(classify_regions(&t, (4, 4), &cfg).unwrap()[0].n_unknown(), 0);
    }

    #[test]
    fn classify_rejects_soft_trimap() {
        let mut t = trimap_from_labels(4, 4, |_, _| TRIMAP_BG);
        t.set(0, 0, 1, 1, 0.5);
        assert!(matches!(classify_regions(&t, (2, 2), &GcaConfig::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn weights_follow_clamped_ratio() {
        let cfg = GcaConfig::default();
        let mask = |u: usize, k: usize| RegionMask::new(1, u + k, (0..u + k).map(|i| i < u).collect()).unwrap();
        assert_eq!(region_weights(&mask(4, 1), &cfg).unwrap(), (2.0, 0.5));
        assert_eq!(region_weights(&mask(100, 1), &cfg).unwrap(), (10.0, 0.1));
        assert_eq!(region_weights(&mask(3, 0), &cfg).unwrap().0, 10.0);
        assert!(matches!(region_weights(&mask(0, 3), &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn self_similarity_is_lambda() {
        let cfg = GcaConfig::default();
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |[_, c, y, x]| (c + 2 * y + x) as f64);
        let mask = RegionMask::all(3, 3, true);
        let s = guided_similarity(&x, &mask, &cfg).unwrap();
        for q in 0..9 {
            assert_eq!(s.data()[q * 9 + q], -1e4);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = GcaConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.patch_size = 4;
        assert!(cfg.validate().is_err());
        let cfg = GcaConfig { lambda_self: 1.0, ..GcaConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn block_is_identity_without_unknowns() {
        let mut store = ParamStore::<f32>::new(1);
        let blk = GcaBlock::new(&mut store, "g", 4, 5, GcaConfig::default()).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut store, Mode::Eval);
        let a = ctx.constant(Tensor::ones(Shape::new(2, 5, 4, 4)));
        let i = ctx.constant(Tensor::ones(Shape::new(2, 4, 4, 4)));
        let masks = vec![RegionMask::all(4, 4, false); 2];
        let out = blk.forward(&mut ctx, a, i, &masks).unwrap();
        assert_eq!(out.out, a);
    }
}
