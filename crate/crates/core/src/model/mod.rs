//! The RIMformer network: channel-expansion embedding, encoder and decoder
//! stacks built from dual multi-head self-attention with learned relative
//! position scores, GLU convolution blocks, and feed-forward blocks.
//!
//! Parameters live in plain structs of [`Tensor`]s; the forward pass is
//! assembled on a [`crate::graph::Graph`] so one code path serves both
//! inference and training.

mod forward;

pub use forward::{
    bind_model, build_forward, conv_block, decoder_layer, dual_attention_block, embed_channels,
    encoder_layer, feed_forward, glu, relative_attention, rimformer_forward, ModelNodes, NORM_EPS,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::kaiming_init_with;
use crate::windowing::WindowConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// N: encoder count and decoder count.
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    /// Feed-forward hidden width multiplier.
    pub ff_expansion: usize,
    /// Depthwise kernel length; must be odd.
    pub conv_kernel: usize,
    pub window: WindowConfig,
    pub n_frames: usize,
    /// 2 for I/Q input.
    pub in_channels: usize,
}

impl ModelConfig {
    /// Full-size profile: d_model 64, 4 heads, N = 7.
    pub fn paper(signal_len: usize) -> Result<Self> {
        let window = WindowConfig::default_paper();
        let n_frames = window.n_frames(signal_len)?;
        let cfg = ModelConfig {
            n_layers: 7,
            d_model: 64,
            n_heads: 4,
            d_k: 16,
            d_v: 16,
            ff_expansion: 4,
            conv_kernel: 15,
            window,
            n_frames,
            in_channels: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale profile: d_model 16, 2 heads, N = 2.
    pub fn tiny(signal_len: usize) -> Result<Self> {
        let window = WindowConfig::default_paper();
        let n_frames = window.n_frames(signal_len)?;
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_k: 8,
            d_v: 8,
            ff_expansion: 4,
            conv_kernel: 15,
            window,
            n_frames,
            in_channels: 2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn segment_len(&self) -> usize {
        self.window.segment_len()
    }

    pub fn signal_len(&self) -> usize {
        self.n_frames * self.window.slide + self.window.overlap
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads * self.d_k != self.d_model || self.n_heads * self.d_v != self.d_model {
            return Err(Error::invalid("h*d_k and h*d_v must both equal d_model"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::invalid("conv_kernel must be odd"));
        }
        if self.n_layers == 0 || self.n_frames == 0 || self.in_channels == 0 {
            return Err(Error::invalid("layer, frame and channel counts must be >= 1"));
        }
        Ok(())
    }
}

/// Projections of one multi-head attention and its relative-position score
/// tables (one table per head; entry `j - i + axis_len - 1` scores offset
/// `j - i`, so the materialized score matrix is Toeplitz).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub rel: Vec<Tensor>,
}

impl AttentionParams {
    fn init(cfg: &ModelConfig, axis_len: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let (hk, hv) = (cfg.n_heads * cfg.d_k, cfg.n_heads * cfg.d_v);
        Ok(AttentionParams {
            w_q: kaiming_init_with(vec![d, hk], d, rng)?.with_grad(),
            w_k: kaiming_init_with(vec![d, hk], d, rng)?.with_grad(),
            w_v: kaiming_init_with(vec![d, hv], d, rng)?.with_grad(),
            w_o: kaiming_init_with(vec![hv, d], hv, rng)?.with_grad(),
            rel: (0..cfg.n_heads)
                .map(|_| Tensor::zeros(vec![2 * axis_len - 1]).with_grad())
                .collect(),
        })
    }

    pub fn n_heads(&self) -> usize {
        self.rel.len()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.shape()[1] / self.rel.len()
    }

    pub fn d_v(&self) -> usize {
        self.w_v.shape()[1] / self.rel.len()
    }

    fn names(&self, prefix: &str, out: &mut Vec<String>) {
        out.push(format!("{prefix}.wq"));
        out.push(format!("{prefix}.wk"));
        out.push(format!("{prefix}.wv"));
        out.push(format!("{prefix}.wo"));
        for h in 0..self.rel.len() {
            out.push(format!("{prefix}.rel{h}"));
        }
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([&self.w_q, &self.w_k, &self.w_v, &self.w_o]);
        out.extend(self.rel.iter());
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]);
        out.extend(self.rel.iter_mut());
    }
}

/// Layer-norm gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Tensor,
    pub shift: Tensor,
}

impl NormParams {
    fn init(d: usize) -> Self {
        NormParams {
            gain: Tensor::filled(vec![d], 1.0).with_grad(),
            shift: Tensor::zeros(vec![d]).with_grad(),
        }
    }

    fn names(&self, prefix: &str, out: &mut Vec<String>) {
        out.push(format!("{prefix}.gain"));
        out.push(format!("{prefix}.shift"));
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([&self.gain, &self.shift]);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.gain, &mut self.shift]);
    }
}

/// Pre-norm plus the two attention branches: intra-frame (over the segment
/// axis) and inter-frame (over the frame axis).
#[derive(Debug, Clone, PartialEq)]
pub struct DualAttentionParams {
    pub norm: NormParams,
    pub intra: AttentionParams,
    pub inter: AttentionParams,
}

impl DualAttentionParams {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(DualAttentionParams {
            norm: NormParams::init(cfg.d_model),
            intra: AttentionParams::init(cfg, cfg.segment_len(), rng)?,
            inter: AttentionParams::init(cfg, cfg.n_frames, rng)?,
        })
    }

    fn names(&self, prefix: &str, out: &mut Vec<String>) {
        self.norm.names(&format!("{prefix}.norm"), out);
        self.intra.names(&format!("{prefix}.intra"), out);
        self.inter.names(&format!("{prefix}.inter"), out);
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.norm.tensors(out);
        self.intra.tensors(out);
        self.inter.tensors(out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.norm.tensors_mut(out);
        self.intra.tensors_mut(out);
        self.inter.tensors_mut(out);
    }
}

/// Pointwise expansion, GLU gate, depthwise conv, pointwise contraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    /// `[1, d_model, 2*d_model]` pointwise expansion.
    pub pw_in_w: Tensor,
    pub pw_in_b: Tensor,
    /// GLU value projection `[2*d_model, d_model]` and bias.
    pub glu_w: Tensor,
    pub glu_b: Tensor,
    /// GLU gate projection and bias.
    pub glu_v: Tensor,
    pub glu_c: Tensor,
    /// `[conv_kernel, 1, d_model]` depthwise kernel.
    pub dw_w: Tensor,
    pub dw_b: Tensor,
    /// `[1, d_model, d_model]` pointwise contraction.
    pub pw_out_w: Tensor,
    pub pw_out_b: Tensor,
}

impl ConvBlockParams {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let k = cfg.conv_kernel;
        Ok(ConvBlockParams {
            pw_in_w: kaiming_init_with(vec![1, d, 2 * d], d, rng)?.with_grad(),
            pw_in_b: Tensor::zeros(vec![2 * d]).with_grad(),
            glu_w: kaiming_init_with(vec![2 * d, d], 2 * d, rng)?.with_grad(),
            glu_b: Tensor::zeros(vec![d]).with_grad(),
            glu_v: kaiming_init_with(vec![2 * d, d], 2 * d, rng)?.with_grad(),
            glu_c: Tensor::zeros(vec![d]).with_grad(),
            dw_w: kaiming_init_with(vec![k, 1, d], k, rng)?.with_grad(),
            dw_b: Tensor::zeros(vec![d]).with_grad(),
            pw_out_w: kaiming_init_with(vec![1, d, d], d, rng)?.with_grad(),
            pw_out_b: Tensor::zeros(vec![d]).with_grad(),
        })
    }

    fn names(&self, prefix: &str, out: &mut Vec<String>) {
        for part in [
            "pw_in.w", "pw_in.b", "glu.w", "glu.b", "glu.v", "glu.c", "dw.w", "dw.b", "pw_out.w",
            "pw_out.b",
        ] {
            out.push(format!("{prefix}.{part}"));
        }
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([
            &self.pw_in_w,
            &self.pw_in_b,
            &self.glu_w,
            &self.glu_b,
            &self.glu_v,
            &self.glu_c,
            &self.dw_w,
            &self.dw_b,
            &self.pw_out_w,
            &self.pw_out_b,
        ]);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([
            &mut self.pw_in_w,
            &mut self.pw_in_b,
            &mut self.glu_w,
            &mut self.glu_b,
            &mut self.glu_v,
            &mut self.glu_c,
            &mut self.dw_w,
            &mut self.dw_b,
            &mut self.pw_out_w,
            &mut self.pw_out_b,
        ]);
    }
}

/// Position-wise two-layer feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FeedForwardParams {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        let hidden = cfg.ff_expansion * d;
        Ok(FeedForwardParams {
            w1: kaiming_init_with(vec![d, hidden], d, rng)?.with_grad(),
            b1: Tensor::zeros(vec![hidden]).with_grad(),
            w2: kaiming_init_with(vec![hidden, d], hidden, rng)?.with_grad(),
            b2: Tensor::zeros(vec![d]).with_grad(),
        })
    }

    fn names(&self, prefix: &str, out: &mut Vec<String>) {
        for part in ["w1", "b1", "w2", "b2"] {
            out.push(format!("{prefix}.{part}"));
        }
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
    }
}

/// One encoder or decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub attn: DualAttentionParams,
    pub conv_norm: NormParams,
    pub conv: ConvBlockParams,
    pub ff_norm: NormParams,
    pub ff: FeedForwardParams,
}

impl LayerParams {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(LayerParams {
            attn: DualAttentionParams::init(cfg, rng)?,
            conv_norm: NormParams::init(cfg.d_model),
            conv: ConvBlockParams::init(cfg, rng)?,
            ff_norm: NormParams::init(cfg.d_model),
            ff: FeedForwardParams::init(cfg, rng)?,
        })
    }

    fn names(&self, prefix: &str, out: &mut Vec<String>) {
        self.attn.names(&format!("{prefix}.attn"), out);
        self.conv_norm.names(&format!("{prefix}.conv_norm"), out);
        self.conv.names(&format!("{prefix}.conv"), out);
        self.ff_norm.names(&format!("{prefix}.ff_norm"), out);
        self.ff.names(&format!("{prefix}.ff"), out);
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.attn.tensors(out);
        self.conv_norm.tensors(out);
        self.conv.tensors(out);
        self.ff_norm.tensors(out);
        self.ff.tensors(out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.attn.tensors_mut(out);
        self.conv_norm.tensors_mut(out);
        self.conv.tensors_mut(out);
        self.ff_norm.tensors_mut(out);
        self.ff.tensors_mut(out);
    }
}

/// All parameters of one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RimformerParams {
    /// `[1, in_channels, d_model]` channel-expansion kernel.
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub encoders: Vec<LayerParams>,
    pub decoders: Vec<LayerParams>,
    /// `[1, d_model, in_channels]` output projection.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl RimformerParams {
    /// Seeded Kaiming initialization of every weight; biases and relative
    /// score tables start at zero, norms at identity.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        Ok(RimformerParams {
            embed_w: kaiming_init_with(vec![1, cfg.in_channels, d], cfg.in_channels, &mut rng)?
                .with_grad(),
            embed_b: Tensor::zeros(vec![d]).with_grad(),
            encoders: (0..cfg.n_layers)
                .map(|_| LayerParams::init(cfg, &mut rng))
                .collect::<Result<_>>()?,
            decoders: (0..cfg.n_layers)
                .map(|_| LayerParams::init(cfg, &mut rng))
                .collect::<Result<_>>()?,
            out_w: kaiming_init_with(vec![1, d, cfg.in_channels], d, &mut rng)?.with_grad(),
            out_b: Tensor::zeros(vec![cfg.in_channels]).with_grad(),
        })
    }

    /// Stable parameter names, in the traversal order shared by the optimizer
    /// and the checkpoint format.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["embed.w".to_string(), "embed.b".to_string()];
        for (i, l) in self.encoders.iter().enumerate() {
            l.names(&format!("enc{i}"), &mut out);
        }
        for (i, l) in self.decoders.iter().enumerate() {
            l.names(&format!("dec{i}"), &mut out);
        }
        out.push("out.w".to_string());
        out.push("out.b".to_string());
        out
    }

    /// Every tensor with its stable name, in traversal order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.names().into_iter().zip(self.tensors()).collect()
    }

    /// Mutable variant of [`RimformerParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.names().into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed_w, &self.embed_b];
        for l in &self.encoders {
            l.tensors(&mut out);
        }
        for l in &self.decoders {
            l.tensors(&mut out);
        }
        out.extend([&self.out_w, &self.out_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embed_w, &mut self.embed_b];
        for l in &mut self.encoders {
            l.tensors_mut(&mut out);
        }
        for l in &mut self.decoders {
            l.tensors_mut(&mut out);
        }
        out.extend([&mut self.out_w, &mut self.out_b]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// Closed-form parameter count for a config (asserted against the allocated
/// tensors in tests).
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let (h, dk, dv) = (cfg.n_heads, cfg.d_k, cfg.d_v);
    let attn = |axis: usize| 2 * d * h * dk + d * h * dv + h * dv * d + h * (2 * axis - 1);
    let norm = 2 * d;
    let dual = norm + attn(cfg.segment_len()) + attn(cfg.n_frames);
    let conv = (d * 2 * d + 2 * d)          // pointwise expansion
        + 2 * (2 * d * d + d)               // GLU value + gate projections
        + (cfg.conv_kernel * d + d)         // depthwise
        + (d * d + d); // pointwise contraction
    let hidden = cfg.ff_expansion * d;
    let ff = d * hidden + hidden + hidden * d + d;
    let layer = dual + norm + conv + norm + ff;
    let embed = cfg.in_channels * d + d;
    let out = d * cfg.in_channels + cfg.in_channels;
    embed + 2 * cfg.n_layers * layer + out
}
