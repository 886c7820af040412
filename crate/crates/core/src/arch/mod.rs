//! Declarative network specifications and the magnification forward pass.
//!
//! A [`NetworkSpec`] describes the encoder / manipulator / decoder layer
//! stacks and is the single source of truth for the forward pass, parameter
//! accounting and FLOPs accounting. Builders produce the baseline
//! architecture, the proposed real-time architecture, and channel/resolution
//! scaled variants of the baseline.

mod count;
mod forward;
mod params;
mod switches;
pub mod text;

pub use count::{count_flops, count_params};
pub use forward::{impulse_response, ModelRun};
pub use params::{init_params, sync_switch_params, ModelParams};
pub use switches::{attach_switches, discard_switches, switch_names, SwitchScope};

use crate::error::{Error, Result};
use crate::tensor::ops::Scale;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Relu,
    None,
}

/// Which neural component a removal switch interpolates away.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SwitchKind {
    /// F(x) = (1-w) relu(x) + w x
    Activation,
    /// F(x) = (1-w) G(x) + w (G(x) - x)
    Skip,
    /// F(x) = (1-w) G(x) + w x
    Block,
}

impl SwitchKind {
    pub fn name(self) -> &'static str {
        match self {
            SwitchKind::Activation => "activation",
            SwitchKind::Skip => "skip",
            SwitchKind::Block => "block",
        }
    }
}

/// A learnable switch attached to a residual block. The omega value itself
/// lives in the parameter table (initialized to 0) so it can be optimized
/// and checkpointed like any other parameter.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RemovalSwitch {
    pub kind: SwitchKind,
    pub learnable: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerKind {
    Conv,
    Resblock,
    Resize,
    Concat,
}

#[derive(Clone, PartialEq, Debug)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Conv: activation after the conv. Resblock: the activation between its
    /// two convs (removable).
    pub activation: Activation,
    /// Resblock only: whether the identity path is present (removable).
    pub skip: bool,
    /// Resize only.
    pub scale: Option<Scale>,
    /// Resblock only: attached removal switches.
    pub switches: Vec<RemovalSwitch>,
}

impl LayerSpec {
    pub fn conv(kernel: usize, in_ch: usize, out_ch: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            activation,
            skip: false,
            scale: None,
            switches: Vec::new(),
        }
    }

    pub fn resblock(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Resblock,
            in_ch: channels,
            out_ch: channels,
            kernel: 3,
            stride: 1,
            activation: Activation::Relu,
            skip: true,
            scale: None,
            switches: Vec::new(),
        }
    }

    pub fn resize(scale: Scale) -> Self {
        LayerSpec {
            kind: LayerKind::Resize,
            in_ch: 0,
            out_ch: 0,
            kernel: 0,
            stride: 1,
            activation: Activation::None,
            skip: false,
            scale: Some(scale),
            switches: Vec::new(),
        }
    }

    pub fn concat(out_ch: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Concat,
            in_ch: out_ch,
            out_ch,
            kernel: 0,
            stride: 1,
            activation: Activation::None,
            skip: false,
            scale: None,
            switches: Vec::new(),
        }
    }

    /// Symmetric zero padding preserving spatial dims at stride 1.
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn switch(&self, kind: SwitchKind) -> Option<&RemovalSwitch> {
        self.switches.iter().find(|s| s.kind == kind)
    }
}

/// Resolution of the latent motion representation relative to the input.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SpatialFactor {
    Half,
    Quarter,
    Eighth,
}

impl SpatialFactor {
    pub fn denominator(self) -> usize {
        match self {
            SpatialFactor::Half => 2,
            SpatialFactor::Quarter => 4,
            SpatialFactor::Eighth => 8,
        }
    }
}

/// Channel width multiplier for [`build_variant`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ChannelScale {
    Full,
    Half,
    Quarter,
    Eighth,
}

impl ChannelScale {
    pub fn divisor(self) -> usize {
        match self {
            ChannelScale::Full => 1,
            ChannelScale::Half => 2,
            ChannelScale::Quarter => 4,
            ChannelScale::Eighth => 8,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum EncoderSpec {
    /// Shared trunk feeding a shape header (motion signal) and a texture
    /// header (appearance signal).
    TwoBranch {
        trunk: Vec<LayerSpec>,
        shape_head: Vec<LayerSpec>,
        texture_head: Vec<LayerSpec>,
    },
    /// One stack whose output serves as both texture and shape.
    SingleBranch { layers: Vec<LayerSpec> },
}

#[derive(Clone, PartialEq, Debug)]
pub struct NetworkSpec {
    pub encoder: EncoderSpec,
    pub manipulator: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub spatial_factor: SpatialFactor,
}

/// Channel count / downsampling state while walking a layer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct WalkState {
    pub ch: usize,
    /// input resolution divided by `den` at this point
    pub den: usize,
}

pub(crate) fn walk_layers(layers: &[LayerSpec], mut st: WalkState, what: &str) -> Result<WalkState> {
    for (i, l) in layers.iter().enumerate() {
        match l.kind {
            LayerKind::Conv => {
                if l.in_ch != st.ch {
                    return Err(Error::Spec(format!(
                        "{what}[{i}]: conv expects {} channels, chain carries {}",
                        l.in_ch, st.ch
                    )));
                }
                if l.kernel % 2 == 0 || l.kernel == 0 {
                    return Err(Error::Spec(format!("{what}[{i}]: kernel must be odd")));
                }
                if l.stride != 1 && l.stride != 2 && l.stride != 4 {
                    return Err(Error::Spec(format!("{what}[{i}]: unsupported stride {}", l.stride)));
                }
                st.ch = l.out_ch;
                st.den *= l.stride;
            }
            LayerKind::Resblock => {
                if l.in_ch != l.out_ch {
                    return Err(Error::Spec(format!("{what}[{i}]: resblock must preserve channels")));
                }
                if l.in_ch != st.ch {
                    return Err(Error::Spec(format!(
                        "{what}[{i}]: resblock expects {} channels, chain carries {}",
                        l.in_ch, st.ch
                    )));
                }
            }
            LayerKind::Resize => {
                let scale = l
                    .scale
                    .ok_or_else(|| Error::Spec(format!("{what}[{i}]: resize without scale")))?;
                let (num, den) = scale.ratio();
                // den scales inversely with resolution
                if (st.den * den) % num != 0 {
                    return Err(Error::Spec(format!("{what}[{i}]: resize breaks the resolution chain")));
                }
                st.den = st.den * den / num;
            }
            LayerKind::Concat => {
                return Err(Error::Spec(format!(
                    "{what}[{i}]: concat is only valid as the first decoder layer"
                )));
            }
        }
    }
    Ok(st)
}

impl NetworkSpec {
    pub fn single_branch(&self) -> bool {
        matches!(self.encoder, EncoderSpec::SingleBranch { .. })
    }

    /// (texture state, shape state) after the encoder.
    pub(crate) fn encoder_out(&self) -> Result<(WalkState, WalkState)> {
        let start = WalkState { ch: 3, den: 1 };
        match &self.encoder {
            EncoderSpec::TwoBranch { trunk, shape_head, texture_head } => {
                let t = walk_layers(trunk, start, "encoder.trunk")?;
                let shape = walk_layers(shape_head, t, "encoder.shape")?;
                let tex = walk_layers(texture_head, t, "encoder.texture")?;
                Ok((tex, shape))
            }
            EncoderSpec::SingleBranch { layers } => {
                let e = walk_layers(layers, start, "encoder")?;
                Ok((e, e))
            }
        }
    }

    /// Validate every dimension chain end-to-end.
    pub fn validate(&self) -> Result<()> {
        let (tex, shape) = self.encoder_out()?;
        let man = walk_layers(&self.manipulator, shape, "manipulator")?;
        if man.ch != shape.ch || man.den != shape.den {
            return Err(Error::Spec("manipulator must preserve the shape representation layout".into()));
        }
        // decoder: concat of texture + magnified shape at the latent resolution
        let latent = self.spatial_factor.denominator();
        let Some((first, rest)) = self.decoder.split_first() else {
            return Err(Error::Spec("decoder is empty".into()));
        };
        if first.kind != LayerKind::Concat {
            return Err(Error::Spec("decoder must start with a concat layer".into()));
        }
        if tex.den > latent && shape.den > latent {
            // inputs would need upsampling to reach the latent resolution;
            // only the texture path is allowed to upsample (baseline layout)
        }
        if first.out_ch != tex.ch + shape.ch {
            return Err(Error::Spec(format!(
                "decoder concat carries {} channels but texture {} + shape {} = {}",
                first.out_ch,
                tex.ch,
                shape.ch,
                tex.ch + shape.ch
            )));
        }
        let out = walk_layers(rest, WalkState { ch: first.out_ch, den: latent }, "decoder")?;
        if out.ch != 3 || out.den != 1 {
            return Err(Error::Spec(format!(
                "decoder ends at {} channels / 1-in-{} resolution, expected 3 channels at full resolution",
                out.ch, out.den
            )));
        }
        Ok(())
    }

    /// Input dims must be divisible by this for a clean forward pass.
    pub fn required_divisor(&self) -> usize {
        let mut div = self.spatial_factor.denominator();
        if let Ok((tex, shape)) = self.encoder_out() {
            div = div.max(tex.den).max(shape.den);
        }
        div
    }
}

/// The baseline deep architecture.
pub fn build_baseline() -> NetworkSpec {
    build_variant(ChannelScale::Full, SpatialFactor::Half, 9)
}

/// Baseline topology with scaled channel width, latent spatial resolution,
/// and decoder depth.
pub fn build_variant(channel_scale: ChannelScale, spatial_factor: SpatialFactor, decoder_depth: usize) -> NetworkSpec {
    let d = channel_scale.divisor();
    let (c1, c2) = (16 / d, 32 / d);
    let dec_c = 2 * c2;
    let trunk = vec![
        LayerSpec::conv(7, 3, c1, 1, Activation::Relu),
        LayerSpec::conv(3, c1, c2, 2, Activation::Relu),
        LayerSpec::resblock(c2),
        LayerSpec::resblock(c2),
        LayerSpec::resblock(c2),
    ];
    let shape_head = vec![
        LayerSpec::conv(3, c2, c2, 1, Activation::Relu),
        LayerSpec::resblock(c2),
        LayerSpec::resblock(c2),
    ];
    let texture_head = vec![
        LayerSpec::conv(3, c2, c2, 2, Activation::Relu),
        LayerSpec::resblock(c2),
        LayerSpec::resblock(c2),
    ];
    let manipulator = vec![
        LayerSpec::conv(3, c2, c2, 1, Activation::Relu),
        LayerSpec::resblock(c2),
        LayerSpec::conv(3, c2, c2, 1, Activation::Relu),
    ];
    let mut decoder = vec![LayerSpec::concat(dec_c)];
    decoder.extend((0..decoder_depth).map(|_| LayerSpec::resblock(dec_c)));
    match spatial_factor {
        SpatialFactor::Half => decoder.push(LayerSpec::resize(Scale::Up2)),
        SpatialFactor::Quarter => decoder.push(LayerSpec::resize(Scale::Up4)),
        SpatialFactor::Eighth => {
            decoder.push(LayerSpec::resize(Scale::Up4));
            decoder.push(LayerSpec::resize(Scale::Up2));
        }
    }
    decoder.push(LayerSpec::conv(3, dec_c, c2, 1, Activation::Relu));
    decoder.push(LayerSpec::conv(7, c2, 3, 1, Activation::None));
    NetworkSpec {
        encoder: EncoderSpec::TwoBranch { trunk, shape_head, texture_head },
        manipulator,
        decoder,
        spatial_factor,
    }
}

/// The proposed real-time architecture: a single linear encoder layer, a
/// quarter-resolution latent representation, and a 4x deeper decoder at half
/// the channel width.
pub fn build_proposed() -> NetworkSpec {
    let c = 16;
    let dec_c = 2 * c;
    let encoder = EncoderSpec::SingleBranch {
        layers: vec![LayerSpec::conv(7, 3, c, 4, Activation::None)],
    };
    let manipulator = vec![
        LayerSpec::conv(3, c, c, 1, Activation::Relu),
        LayerSpec::resblock(c),
        LayerSpec::conv(3, c, c, 1, Activation::Relu),
    ];
    let mut decoder = vec![LayerSpec::concat(dec_c)];
    decoder.extend((0..36).map(|_| LayerSpec::resblock(dec_c)));
    decoder.push(LayerSpec::resize(Scale::Up4));
    decoder.push(LayerSpec::conv(3, dec_c, c, 1, Activation::Relu));
    decoder.push(LayerSpec::conv(7, c, 3, 1, Activation::None));
    NetworkSpec {
        encoder,
        manipulator,
        decoder,
        spatial_factor: SpatialFactor::Quarter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_identity_variant() {
        assert_eq!(build_baseline(), build_variant(ChannelScale::Full, SpatialFactor::Half, 9));
    }

    #[test]
    fn all_builders_validate() {
        build_baseline().validate().unwrap();
        build_proposed().validate().unwrap();
        for cs in [ChannelScale::Full, ChannelScale::Half, ChannelScale::Quarter, ChannelScale::Eighth] {
            for sf in [SpatialFactor::Half, SpatialFactor::Quarter, SpatialFactor::Eighth] {
                build_variant(cs, sf, 9).validate().unwrap();
            }
        }
    }

    #[test]
    fn proposed_decoder_is_four_times_deeper_at_half_channels() {
        let base = build_baseline();
        let prop = build_proposed();
        let count_rb = |s: &NetworkSpec| s.decoder.iter().filter(|l| l.kind == LayerKind::Resblock).count();
        let rb_ch = |s: &NetworkSpec| {
            s.decoder
                .iter()
                .find(|l| l.kind == LayerKind::Resblock)
                .map(|l| l.out_ch)
                .unwrap()
        };
        assert_eq!(count_rb(&prop), 4 * count_rb(&base));
        assert_eq!(rb_ch(&prop) * 2, rb_ch(&base));
    }

    #[test]
    fn divisors() {
        assert_eq!(build_baseline().required_divisor(), 4);
        assert_eq!(build_proposed().required_divisor(), 4);
        assert_eq!(build_variant(ChannelScale::Full, SpatialFactor::Eighth, 9).required_divisor(), 8);
    }

    #[test]
    fn inconsistent_chain_is_rejected() {
        let mut spec = build_proposed();
        spec.decoder[1].in_ch = 48;
        spec.decoder[1].out_ch = 48;
        assert!(spec.validate().is_err());
    }
}
