use super::layers::{BatchNorm2d, Conv2d, ConvSpec, Init};
use super::params::{Ctx, ParamStore};
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Real;

/// Spectrally normalized convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv2d::new(store, &format!("{name}.conv"), spec)?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), spec.cout)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.graph.relu(y))
    }
}

/// Two 3×3 convolutions with a skip connection:
/// `shortcut(x) + BN(conv2(ReLU(BN(conv1(x)))))`.
///
/// The shortcut is the identity unless the stride or channel count changes,
/// in which case it is a 1×1 convolution followed by batch norm.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: ConvBnRelu,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub projection: Option<(Conv2d, BatchNorm2d)>,
}

impl ResidualBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Self::with_init(store, name, cin, cout, stride, Init::Kaiming)
    }

    /// `second_init` sets the initializer of the second convolution;
    /// [`Init::Zeros`] makes the block return its (projected) input.
    pub fn with_init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        second_init: Init,
    ) -> Result<Self> {
        let first = ConvBnRelu::new(store, &format!("{name}.c1"), ConvSpec::new(cin, cout, 3, stride))?;
        let conv2 = Conv2d::new(store, &format!("{name}.c2.conv"), ConvSpec::new(cout, cout, 3, 1).init(second_init))?;
        let bn2 = BatchNorm2d::new(store, &format!("{name}.c2.bn"), cout)?;
        let projection = if stride != 1 || cin != cout {
            Some((
                Conv2d::new(store, &format!("{name}.proj.conv"), ConvSpec::new(cin, cout, 1, stride))?,
                BatchNorm2d::new(store, &format!("{name}.proj.bn"), cout)?,
            ))
        } else {
            None
        };
        Ok(ResidualBlock { first, conv2, bn2, projection })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.first.forward(ctx, x)?;
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        let skip = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(ctx, x)?;
                bn.forward(ctx, s)?
            }
            None => x,
        };
        ctx.graph.add(skip, y)
    }
}

/// Two stacked [`ConvBnRelu`] layers mapping encoder features (or the raw
/// input) to a decoder channel count at unchanged resolution.
#[derive(Clone, Debug)]
pub struct ShortcutBlock {
    pub a: ConvBnRelu,
    pub b: ConvBnRelu,
}

impl ShortcutBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(ShortcutBlock {
            a: ConvBnRelu::new(store, &format!("{name}.a"), ConvSpec::new(cin, cout, 3, 1))?,
            b: ConvBnRelu::new(store, &format!("{name}.b"), ConvSpec::new(cout, cout, 3, 1))?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.a.forward(ctx, x)?;
        self.b.forward(ctx, y)
    }
}

/// Nearest-neighbor ×2 upsampling followed by residual blocks; the first
/// block projects `cin` to `cout`.
#[derive(Clone, Debug)]
pub struct UpStage {
    pub blocks: Vec<ResidualBlock>,
}

impl UpStage {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, depth: usize) -> Result<Self> {
        let blocks = (0..depth.max(1))
            .map(|i| ResidualBlock::new(store, &format!("{name}.{i}"), if i == 0 { cin } else { cout }, cout, 1))
            .collect::<Result<_>>()?;
        Ok(UpStage { blocks })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut y = ctx.graph.upsample_nearest(x, 2)?;
        for b in &self.blocks {
            y = b.forward(ctx, y)?;
        }
        Ok(y)
    }
}
