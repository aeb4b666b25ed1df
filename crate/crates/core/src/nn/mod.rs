//! Trainable layers and the blocks assembled from them.

mod blocks;
mod layers;
mod params;

pub use blocks::{ConvBnRelu, ResidualBlock, ShortcutBlock, UpStage};
pub use layers::{
    power_iteration, sigma_estimate, spectral_normalize, BatchNorm2d, Conv2d, ConvSpec, ConvTranspose2d, Init,
    SpectralState, BN_EPS, BN_MOMENTUM,
};
pub use params::{Ctx, Mode, ParamEntry, ParamId, ParamKind, ParamStore};
