//! Encoder–decoder matting network with optional guided contextual attention.
//!
//! ```text
//! image ─┬─────────────────────────────── guide convs (stride 2 ×k) ──┐
//!        │                                                           │
//! [image, trimap] ─ stem ─ stage 0 ─ … ─ stage k−1 ─ GCA ─ … ─ stage S−1
//!        │             │                  │                       │
//!        │         shortcut           shortcut                  decoder
//!        │             └──────── + ─ up ─ └── + ─ GCA ─ up ─ …  ───┘
//!        └─ input shortcut ─ + ─ head ─ clamp[0,1]
//! ```
//! Stage `i` halves the resolution and has `base·2^i` channels; the attention
//! blocks sit at `1/gca_stage_downsample` of the input resolution.

use serde::{Deserialize, Serialize};

use crate::autograd::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::gca::{self, AttentionMap, GcaBlock, GcaConfig};
use crate::kernels::{self, PadMode, Padding};
use crate::nn::{Conv2d, ConvBnRelu, ConvSpec, Ctx, Mode, ParamStore, ResidualBlock, ShortcutBlock, UpStage};
use crate::tensor::{Real, Shape, Tensor};

/// Spatial multiple required by [`MattingModel::forward`]; [`MattingModel::infer_full`] pads to it.
pub const SIZE_MULTIPLE: usize = 32;
pub const HEAD_BIAS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Residual blocks per encoder stage; the length is the number of stages.
    pub encoder_blocks: Vec<usize>,
    /// Residual blocks per decoder stage.
    pub decoder_blocks: usize,
    pub gca_stage_downsample: usize,
    pub guide_channels: usize,
    pub use_gca: bool,
    pub input_channels: usize,
    pub gca: GcaConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            base_channels: 16,
            encoder_blocks: vec![2, 2, 2, 2],
            decoder_blocks: 1,
            gca_stage_downsample: 8,
            guide_channels: 32,
            use_gca: true,
            input_channels: 6,
            gca: GcaConfig::default(),
        }
    }

    pub fn full() -> Self {
        ModelConfig {
            base_channels: 32,
            encoder_blocks: vec![3, 4, 4, 2],
            decoder_blocks: 2,
            guide_channels: 32,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown model preset {other:?} (expected desk or full)"))),
        }
    }

    pub fn baseline(mut self) -> Self {
        self.use_gca = false;
        self
    }

    pub fn stages(&self) -> usize {
        self.encoder_blocks.len()
    }

    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Number of stride-2 steps before the attention stage.
    pub fn gca_depth(&self) -> usize {
        self.gca_stage_downsample.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 6 {
            return Err(Error::Config(format!("model.input_channels must be 6 (image + one-hot trimap), got {}", self.input_channels)));
        }
        if self.base_channels == 0 || self.guide_channels == 0 {
            return Err(Error::Config("model channel counts must be positive".into()));
        }
        if self.stages() < 2 || self.encoder_blocks.iter().any(|&b| b == 0) || self.decoder_blocks == 0 {
            return Err(Error::Config("model needs at least two encoder stages and one block per stage".into()));
        }
        if (1usize << self.stages()) > SIZE_MULTIPLE {
            return Err(Error::Config(format!("at most {} encoder stages are supported", SIZE_MULTIPLE.trailing_zeros())));
        }
        let ds = self.gca_stage_downsample;
        if !ds.is_power_of_two() || ds < 2 || self.gca_depth() >= self.stages() {
            return Err(Error::Config(format!(
                "model.gca_stage_downsample must be a power of two between 2 and {}, got {ds}",
                1usize << (self.stages() - 1)
            )));
        }
        self.gca.validate()
    }
}

#[derive(Clone, Debug)]
pub struct MattingNetwork {
    pub cfg: ModelConfig,
    stem: ConvBnRelu,
    encoder: Vec<Vec<ResidualBlock>>,
    guide: Vec<ConvBnRelu>,
    gca_encoder: Option<GcaBlock>,
    gca_decoder: Option<GcaBlock>,
    decoder: Vec<UpStage>,
    shortcuts: Vec<ShortcutBlock>,
    input_shortcut: ShortcutBlock,
    head: Conv2d,
}

pub struct ModelOutput {
    /// `N×1×H×W` in `[0, 1]`.
    pub alpha: Var,
    /// Attention summaries per batch element (empty for the baseline).
    pub encoder_attention: Vec<AttentionMap>,
    pub decoder_attention: Vec<AttentionMap>,
}

impl MattingNetwork {
    pub fn new<T: Real>(cfg: ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.base_channels;
        let stem = ConvBnRelu::new(store, "stem", ConvSpec::new(cfg.input_channels, base, 3, 1))?;
        let mut encoder = Vec::new();
        for (i, &blocks) in cfg.encoder_blocks.iter().enumerate() {
            let cin = if i == 0 { base } else { cfg.stage_channels(i - 1) };
            let cout = cfg.stage_channels(i);
            let stage = (0..blocks)
                .map(|b| {
                    let (ci, s) = if b == 0 { (cin, 2) } else { (cout, 1) };
                    ResidualBlock::new(store, &format!("enc{i}.{b}"), ci, cout, s)
                })
                .collect::<Result<Vec<_>>>()?;
            encoder.push(stage);
        }
        let depth = cfg.gca_depth();
        let (mut guide, mut gca_encoder, mut gca_decoder) = (Vec::new(), None, None);
        if cfg.use_gca {
            let mut cin = 3;
            for j in 0..depth {
                let cout = if j + 1 == depth { cfg.guide_channels } else { (base << j).min(cfg.guide_channels) };
                guide.push(ConvBnRelu::new(store, &format!("guide{j}"), ConvSpec::new(cin, cout, 3, 2))?);
                cin = cout;
            }
            let ca = cfg.stage_channels(depth - 1);
            gca_encoder = Some(GcaBlock::new(store, "gca_enc", cfg.guide_channels, ca, cfg.gca.clone())?);
            gca_decoder = Some(GcaBlock::new(store, "gca_dec", cfg.guide_channels, ca, cfg.gca.clone())?);
        }
        // Decoder stage j lands on the resolution of encoder stage j − 1 (the stem for j = 0).
        let s = cfg.stages();
        let mut decoder = Vec::new();
        let mut shortcuts = Vec::new();
        for j in (0..s - 1).rev() {
            let (cin, cout) = (cfg.stage_channels(j + 1), cfg.stage_channels(j));
            decoder.push(UpStage::new(store, &format!("dec{j}"), cin, cout, cfg.decoder_blocks)?);
            shortcuts.push(ShortcutBlock::new(store, &format!("short{j}"), cout, cout)?);
        }
        decoder.push(UpStage::new(store, "dec_out", cfg.stage_channels(0), base, cfg.decoder_blocks)?);
        let input_shortcut = ShortcutBlock::new(store, "short_in", cfg.input_channels, base)?;
        let head = Conv2d::new(store, "head", ConvSpec::new(base, 1, 3, 1).bias(true))?;
        let b = head.bias.expect("head has a bias");
        store.get_mut(b).data_mut().fill(T::of(HEAD_BIAS));
        Ok(MattingNetwork {
            cfg,
            stem,
            encoder,
            guide,
            gca_encoder,
            gca_decoder,
            decoder,
            shortcuts,
            input_shortcut,
            head,
        })
    }

    /// `image`: `N×3×H×W` node; `trimap`: one-hot `N×3×H×W` (bg, unknown, fg).
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, image: Var, trimap: &Tensor<T>) -> Result<ModelOutput> {
        let si = ctx.graph.shape(image);
        if si.c() != 3 {
            return Err(Error::dim(format!("image must have 3 channels, got {si}")));
        }
        if trimap.shape() != si {
            return Err(Error::Validation(format!("trimap {} does not match image {si}", trimap.shape())));
        }
        if si.h() % SIZE_MULTIPLE != 0 || si.w() % SIZE_MULTIPLE != 0 || si.h() == 0 || si.w() == 0 {
            return Err(Error::contract(format!(
                "image {}×{} is not a multiple of {SIZE_MULTIPLE}; use infer_full for arbitrary sizes",
                si.h(),
                si.w()
            )));
        }
        gca::validate_one_hot(trimap)?;
        let tri = ctx.constant(trimap.clone());
        let input = ctx.graph.concat(&[image, tri], Axis::C)?;

        let depth = self.cfg.gca_depth();
        let ds = self.cfg.gca_stage_downsample;
        let guidance = if self.cfg.use_gca {
            let masks = gca::classify_regions(trimap, (si.h() / ds, si.w() / ds), &self.cfg.gca)?;
            let mut g = image;
            for conv in &self.guide {
                g = conv.forward(ctx, g)?;
            }
            Some((g, masks))
        } else {
            None
        };

        let mut x = self.stem.forward(ctx, input)?;
        let mut features = Vec::with_capacity(self.encoder.len());
        let mut encoder_attention = Vec::new();
        for (i, stage) in self.encoder.iter().enumerate() {
            for block in stage {
                x = block.forward(ctx, x)?;
            }
            if i + 1 == depth {
                if let (Some(block), Some((g, masks))) = (&self.gca_encoder, &guidance) {
                    let out = block.forward(ctx, x, *g, masks)?;
                    x = out.out;
                    encoder_attention = out.maps;
                }
            }
            features.push(x);
        }

        let mut decoder_attention = Vec::new();
        let s = self.encoder.len();
        for (k, (stage, shortcut)) in self.decoder.iter().zip(&self.shortcuts).enumerate() {
            let j = s - 2 - k;
            x = stage.forward(ctx, x)?;
            let skip = shortcut.forward(ctx, features[j])?;
            x = ctx.graph.add(x, skip)?;
            if j + 1 == depth {
                if let (Some(block), Some((g, masks))) = (&self.gca_decoder, &guidance) {
                    let out = block.forward(ctx, x, *g, masks)?;
                    x = out.out;
                    decoder_attention = out.maps;
                }
            }
        }
        x = self.decoder.last().expect("output stage").forward(ctx, x)?;
        let skip = self.input_shortcut.forward(ctx, input)?;
        x = ctx.graph.add(x, skip)?;
        let logits = self.head.forward(ctx, x)?;
        let alpha = ctx.graph.clamp(logits, T::zero(), T::one());
        Ok(ModelOutput { alpha, encoder_attention, decoder_attention })
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct MattingModel<T: Real = f32> {
    pub net: MattingNetwork,
    pub store: ParamStore<T>,
}

/// Alpha estimate and attention summaries from an evaluation-mode pass.
#[derive(Clone, Debug)]
pub struct Prediction<T: Real = f32> {
    pub alpha: Tensor<T>,
    pub encoder_attention: Vec<AttentionMap>,
    pub decoder_attention: Vec<AttentionMap>,
}

impl<T: Real> MattingModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let net = MattingNetwork::new(cfg, &mut store)?;
        Ok(MattingModel { net, store })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Evaluation-mode forward on sizes that are multiples of [`SIZE_MULTIPLE`].
    pub fn predict(&mut self, image: &Tensor<T>, trimap: &Tensor<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &mut self.store, Mode::Eval);
        let x = ctx.constant(image.clone());
        let out = self.net.forward(&mut ctx, x, trimap)?;
        Ok(Prediction {
            alpha: g.value(out.alpha).clone(),
            encoder_attention: out.encoder_attention,
            decoder_attention: out.decoder_attention,
        })
    }

    /// Whole-image inference at any size of at least `SIZE_MULTIPLE`: the
    /// inputs are reflect-padded on the bottom/right to the next multiple,
    /// and the prediction is cropped back.
    pub fn infer_full(&mut self, image: &Tensor<T>, trimap: &Tensor<T>) -> Result<Prediction<T>> {
        let s = image.shape();
        if trimap.shape() != s {
            return Err(Error::Validation(format!("trimap {} does not match image {s}", trimap.shape())));
        }
        if s.h() < SIZE_MULTIPLE || s.w() < SIZE_MULTIPLE {
            return Err(Error::Validation(format!("image {}×{} is smaller than {SIZE_MULTIPLE}×{SIZE_MULTIPLE}", s.h(), s.w())));
        }
        let pad = Padding {
            top: 0,
            bottom: s.h().next_multiple_of(SIZE_MULTIPLE) - s.h(),
            left: 0,
            right: s.w().next_multiple_of(SIZE_MULTIPLE) - s.w(),
        };
        if pad.bottom == 0 && pad.right == 0 {
            return self.predict(image, trimap);
        }
        let img = kernels::pad2d(image, pad, PadMode::Reflect)?;
        let tri = kernels::pad2d(trimap, pad, PadMode::Reflect)?;
        let mut p = self.predict(&img, &tri)?;
        let full = p.alpha;
        p.alpha = Tensor::from_fn(Shape::new(s.n(), 1, s.h(), s.w()), |[n, c, y, x]| full.get(n, c, y, x));
        Ok(p)
    }

    /// Alpha estimate and its recomposite `α̂F + (1−α̂)B`. Needs the
    /// foreground and background layers, which only synthetic data has.
    pub fn predict_and_composite(
        &mut self,
        image: &Tensor<T>,
        trimap: &Tensor<T>,
        fg: Option<&Tensor<T>>,
        bg: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (Some(fg), Some(bg)) = (fg, bg) else {
            return Err(Error::Unsupported("recompositing needs foreground and background layers".into()));
        };
        let alpha = self.infer_full(image, trimap)?.alpha;
        let comp = crate::data::composite(fg, bg, &alpha)?;
        Ok((alpha, comp))
    }
}
