//! Graph assembly for the network forward pass, plus tensor-level entry
//! points that run a throwaway inference graph.

use super::{
    AttentionParams, ConvBlockParams, DualAttentionParams, FeedForwardParams, LayerParams,
    ModelConfig, NormParams, RimformerParams,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Padding};
use crate::tensor::Tensor;
use crate::windowing::{split_windows, SegmentStack};

/// Layer-norm stabilizer used everywhere in the network.
pub const NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// parameter binding
// ---------------------------------------------------------------------------

pub struct AttnNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
    pub w_o: NodeId,
    pub rel: Vec<NodeId>,
}

pub struct NormNodes {
    pub gain: NodeId,
    pub shift: NodeId,
}

pub struct DualNodes {
    pub norm: NormNodes,
    pub intra: AttnNodes,
    pub inter: AttnNodes,
}

pub struct ConvNodes {
    pub pw_in_w: NodeId,
    pub pw_in_b: NodeId,
    pub glu_w: NodeId,
    pub glu_b: NodeId,
    pub glu_v: NodeId,
    pub glu_c: NodeId,
    pub dw_w: NodeId,
    pub dw_b: NodeId,
    pub pw_out_w: NodeId,
    pub pw_out_b: NodeId,
}

pub struct FfNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

pub struct LayerNodes {
    pub attn: DualNodes,
    pub conv_norm: NormNodes,
    pub conv: ConvNodes,
    pub ff_norm: NormNodes,
    pub ff: FfNodes,
}

/// Every parameter registered on a graph, mirroring [`RimformerParams`].
pub struct ModelNodes {
    pub embed_w: NodeId,
    pub embed_b: NodeId,
    pub encoders: Vec<LayerNodes>,
    pub decoders: Vec<LayerNodes>,
    pub out_w: NodeId,
    pub out_b: NodeId,
}

fn bind_one(g: &mut Graph, t: &Tensor, trainable: bool) -> NodeId {
    if trainable {
        g.leaf(t)
    } else {
        g.constant(t)
    }
}

fn bind_attn(g: &mut Graph, p: &AttentionParams, tr: bool) -> AttnNodes {
    AttnNodes {
        w_q: bind_one(g, &p.w_q, tr),
        w_k: bind_one(g, &p.w_k, tr),
        w_v: bind_one(g, &p.w_v, tr),
        w_o: bind_one(g, &p.w_o, tr),
        rel: p.rel.iter().map(|t| bind_one(g, t, tr)).collect(),
    }
}

fn bind_norm(g: &mut Graph, p: &NormParams, tr: bool) -> NormNodes {
    NormNodes {
        gain: bind_one(g, &p.gain, tr),
        shift: bind_one(g, &p.shift, tr),
    }
}

fn bind_layer(g: &mut Graph, p: &LayerParams, tr: bool) -> LayerNodes {
    LayerNodes {
        attn: DualNodes {
            norm: bind_norm(g, &p.attn.norm, tr),
            intra: bind_attn(g, &p.attn.intra, tr),
            inter: bind_attn(g, &p.attn.inter, tr),
        },
        conv_norm: bind_norm(g, &p.conv_norm, tr),
        conv: ConvNodes {
            pw_in_w: bind_one(g, &p.conv.pw_in_w, tr),
            pw_in_b: bind_one(g, &p.conv.pw_in_b, tr),
            glu_w: bind_one(g, &p.conv.glu_w, tr),
            glu_b: bind_one(g, &p.conv.glu_b, tr),
            glu_v: bind_one(g, &p.conv.glu_v, tr),
            glu_c: bind_one(g, &p.conv.glu_c, tr),
            dw_w: bind_one(g, &p.conv.dw_w, tr),
            dw_b: bind_one(g, &p.conv.dw_b, tr),
            pw_out_w: bind_one(g, &p.conv.pw_out_w, tr),
            pw_out_b: bind_one(g, &p.conv.pw_out_b, tr),
        },
        ff_norm: bind_norm(g, &p.ff_norm, tr),
        ff: FfNodes {
            w1: bind_one(g, &p.ff.w1, tr),
            b1: bind_one(g, &p.ff.b1, tr),
            w2: bind_one(g, &p.ff.w2, tr),
            b2: bind_one(g, &p.ff.b2, tr),
        },
    }
}

/// Register every parameter on `g`. With `trainable` the nodes are gradient
/// leaves; node registration order matches [`RimformerParams::named`].
pub fn bind_model(g: &mut Graph, p: &RimformerParams, trainable: bool) -> ModelNodes {
    ModelNodes {
        embed_w: bind_one(g, &p.embed_w, trainable),
        embed_b: bind_one(g, &p.embed_b, trainable),
        encoders: p
            .encoders
            .iter()
            .map(|l| bind_layer(g, l, trainable))
            .collect(),
        decoders: p
            .decoders
            .iter()
            .map(|l| bind_layer(g, l, trainable))
            .collect(),
        out_w: bind_one(g, &p.out_w, trainable),
        out_b: bind_one(g, &p.out_b, trainable),
    }
}

impl ModelNodes {
    /// Node ids in the same order as [`RimformerParams::named`].
    pub fn ordered_ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.embed_w, self.embed_b];
        let push_attn = |out: &mut Vec<NodeId>, a: &AttnNodes| {
            out.extend([a.w_q, a.w_k, a.w_v, a.w_o]);
            out.extend(a.rel.iter().copied());
        };
        let push_layer = |out: &mut Vec<NodeId>, l: &LayerNodes| {
            out.extend([l.attn.norm.gain, l.attn.norm.shift]);
            push_attn(out, &l.attn.intra);
            push_attn(out, &l.attn.inter);
            out.extend([l.conv_norm.gain, l.conv_norm.shift]);
            out.extend([
                l.conv.pw_in_w,
                l.conv.pw_in_b,
                l.conv.glu_w,
                l.conv.glu_b,
                l.conv.glu_v,
                l.conv.glu_c,
                l.conv.dw_w,
                l.conv.dw_b,
                l.conv.pw_out_w,
                l.conv.pw_out_b,
            ]);
            out.extend([l.ff_norm.gain, l.ff_norm.shift]);
            out.extend([l.ff.w1, l.ff.b1, l.ff.w2, l.ff.b2]);
        };
        for l in &self.encoders {
            push_layer(&mut out, l);
        }
        for l in &self.decoders {
            push_layer(&mut out, l);
        }
        out.extend([self.out_w, self.out_b]);
        out
    }
}

// ---------------------------------------------------------------------------
// graph builders
// ---------------------------------------------------------------------------

/// Multi-head attention with additive relative-position scores:
/// per head `A = softmax((QKᵀ + S)/√d_k)`, `S[i][j] = rel[j − i]`;
/// output = `Concat(heads)·W_o`.
pub fn attention_nodes(
    g: &mut Graph,
    x_q: NodeId,
    x_kv: NodeId,
    p: &AttnNodes,
    d_k: usize,
    d_v: usize,
) -> Result<NodeId> {
    let h = p.rel.len();
    let n = g.shape(x_q)[0];
    let m = g.shape(x_kv)[0];
    if n != m {
        return Err(Error::invalid(
            "relative scores require equal query/key lengths",
        ));
    }
    let q_all = g.matmul(x_q, p.w_q)?;
    let k_all = g.matmul(x_kv, p.w_k)?;
    let v_all = g.matmul(x_kv, p.w_v)?;
    let inv_sqrt = 1.0 / (d_k as f64).sqrt();
    let mut heads = Vec::with_capacity(h);
    for i in 0..h {
        let q = g.slice_cols(q_all, i * d_k, (i + 1) * d_k)?;
        let k = g.slice_cols(k_all, i * d_k, (i + 1) * d_k)?;
        let v = g.slice_cols(v_all, i * d_v, (i + 1) * d_v)?;
        let kt = g.transpose2(k)?;
        let qk = g.matmul(q, kt)?;
        let s_rel = g.toeplitz(p.rel[i], m)?;
        let scores = g.add(qk, s_rel)?;
        let scaled = g.scale(scores, inv_sqrt);
        let a = g.softmax_rows(scaled)?;
        heads.push(g.matmul(a, v)?);
    }
    let cat = g.concat_cols(&heads)?;
    g.matmul(cat, p.w_o)
}

/// Two attention branches over a `[F, S, D]` block with a shared pre-norm:
/// intra-frame attention over the segment axis of every frame, inter-frame
/// attention over the frame axis of every sample index;
/// `out = x + intra(norm(x)) + inter(norm(x))`. With `kv` present the keys
/// and values of both branches come from the (identically normalized) `kv`
/// stream.
pub fn dual_attention_nodes(
    g: &mut Graph,
    x: NodeId,
    kv: Option<NodeId>,
    p: &DualNodes,
    d_k: usize,
    d_v: usize,
) -> Result<NodeId> {
    let sh = g.shape(x).to_vec();
    if sh.len() != 3 {
        return Err(Error::invalid("dual attention expects [F, S, D]"));
    }
    if let Some(k) = kv {
        if g.shape(k) != sh {
            return Err(Error::invalid("cross-attention kv shape mismatch"));
        }
    }
    let (f, s) = (sh[0], sh[1]);
    let xn = g.layer_norm(x, p.norm.gain, p.norm.shift, NORM_EPS)?;
    let kvn = match kv {
        Some(k) => g.layer_norm(k, p.norm.gain, p.norm.shift, NORM_EPS)?,
        None => xn,
    };
    // intra-frame: attend across the S samples of each frame
    let mut parts = Vec::with_capacity(f);
    for i in 0..f {
        let q = g.frame(xn, i)?;
        let k = g.frame(kvn, i)?;
        parts.push(attention_nodes(g, q, k, &p.intra, d_k, d_v)?);
    }
    let intra = g.stack0(&parts)?;
    // inter-frame: attend across the F frames of each sample index
    let xt = g.transpose01(xn)?;
    let kvt = g.transpose01(kvn)?;
    let mut parts = Vec::with_capacity(s);
    for i in 0..s {
        let q = g.frame(xt, i)?;
        let k = g.frame(kvt, i)?;
        parts.push(attention_nodes(g, q, k, &p.inter, d_k, d_v)?);
    }
    let inter_t = g.stack0(&parts)?;
    let inter = g.transpose01(inter_t)?;
    let sum = g.add(x, intra)?;
    g.add(sum, inter)
}

/// Gated linear unit `(xW + b) ⊗ σ(xV + c)` on a 2-d node.
pub fn glu_nodes(
    g: &mut Graph,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    v: NodeId,
    c: NodeId,
) -> Result<NodeId> {
    let val = g.matmul(x, w)?;
    let val = g.add_bias(val, b)?;
    let gate = g.matmul(x, v)?;
    let gate = g.add_bias(gate, c)?;
    let gate = g.sigmoid(gate);
    g.mul(val, gate)
}

/// Convolution block over the flattened `F·S` time axis: pointwise expansion
/// to 2D channels, GLU back to D, depthwise conv, swish, pointwise out.
/// The caller adds the residual.
pub fn conv_block_nodes(g: &mut Graph, x: NodeId, p: &ConvNodes) -> Result<NodeId> {
    let sh = g.shape(x).to_vec();
    if sh.len() != 3 {
        return Err(Error::invalid("conv block expects [F, S, D]"));
    }
    let (f, s, d) = (sh[0], sh[1], sh[2]);
    let flat = g.reshape(x, vec![f * s, d])?;
    let expanded = g.conv1d(flat, p.pw_in_w, p.pw_in_b, 1, Padding::Same)?;
    let gated = glu_nodes(g, expanded, p.glu_w, p.glu_b, p.glu_v, p.glu_c)?;
    let dw = g.conv1d(gated, p.dw_w, p.dw_b, d, Padding::Same)?;
    let act = g.swish(dw);
    let out = g.conv1d(act, p.pw_out_w, p.pw_out_b, 1, Padding::Same)?;
    g.reshape(out, vec![f, s, d])
}

/// Position-wise `swish(xW1 + b1)·W2 + b2`, shape preserving.
pub fn feed_forward_nodes(g: &mut Graph, x: NodeId, p: &FfNodes) -> Result<NodeId> {
    let sh = g.shape(x).to_vec();
    let d = *sh.last().ok_or_else(|| Error::invalid("feed_forward on 0-d"))?;
    let rows = g.data(x).len() / d;
    let flat = g.reshape(x, vec![rows, d])?;
    let h = g.matmul(flat, p.w1)?;
    let h = g.add_bias(h, p.b1)?;
    let h = g.swish(h);
    let out = g.matmul(h, p.w2)?;
    let out = g.add_bias(out, p.b2)?;
    g.reshape(out, sh)
}

fn norm_nodes(g: &mut Graph, x: NodeId, p: &NormNodes) -> Result<NodeId> {
    g.layer_norm(x, p.gain, p.shift, NORM_EPS)
}

/// One layer: dual attention, then pre-normed conv block and feed-forward,
/// each behind its own residual. `kv` switches the attention to
/// cross-attention (decoder).
pub fn layer_nodes(
    g: &mut Graph,
    x: NodeId,
    kv: Option<NodeId>,
    p: &LayerNodes,
    d_k: usize,
    d_v: usize,
) -> Result<NodeId> {
    let x1 = dual_attention_nodes(g, x, kv, &p.attn, d_k, d_v)?;
    let n1 = norm_nodes(g, x1, &p.conv_norm)?;
    let c = conv_block_nodes(g, n1, &p.conv)?;
    let x2 = g.add(x1, c)?;
    let n2 = norm_nodes(g, x2, &p.ff_norm)?;
    let f = feed_forward_nodes(g, n2, &p.ff)?;
    g.add(x2, f)
}

/// Full network on segments `[F, S, in]`: channel embedding, N encoders,
/// N decoders cross-attending to the final encoder output, output
/// projection, overlap merge to `[signal_len, in]`.
pub fn build_forward(
    g: &mut Graph,
    nodes: &ModelNodes,
    cfg: &ModelConfig,
    x_seg: NodeId,
) -> Result<NodeId> {
    let sh = g.shape(x_seg).to_vec();
    if sh != [cfg.n_frames, cfg.segment_len(), cfg.in_channels] {
        return Err(Error::invalid(format!(
            "segments shaped {:?}, config wants [{}, {}, {}]",
            sh,
            cfg.n_frames,
            cfg.segment_len(),
            cfg.in_channels
        )));
    }
    let (f, s) = (cfg.n_frames, cfg.segment_len());
    let flat = g.reshape(x_seg, vec![f * s, cfg.in_channels])?;
    let emb = g.conv1d(flat, nodes.embed_w, nodes.embed_b, 1, Padding::Same)?;
    let emb = g.reshape(emb, vec![f, s, cfg.d_model])?;
    let mut enc = emb;
    for l in &nodes.encoders {
        enc = layer_nodes(g, enc, None, l, cfg.d_k, cfg.d_v)?;
    }
    let mut dec = emb;
    for l in &nodes.decoders {
        dec = layer_nodes(g, dec, Some(enc), l, cfg.d_k, cfg.d_v)?;
    }
    let flat = g.reshape(dec, vec![f * s, cfg.d_model])?;
    let out = g.conv1d(flat, nodes.out_w, nodes.out_b, 1, Padding::Same)?;
    let seg = g.reshape(out, vec![f, s, cfg.in_channels])?;
    g.overlap_merge(seg, cfg.window.slide, cfg.window.overlap)
}

// ---------------------------------------------------------------------------
// tensor-level entry points (throwaway inference graphs)
// ---------------------------------------------------------------------------

fn check_finite(params: &[&Tensor]) -> Result<()> {
    if params.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidState("non-finite parameters".into()));
    }
    Ok(())
}

/// Channel expansion `in_channels → d_model` via a kernel-1 convolution
/// applied identically at every sample of every frame.
pub fn embed_channels(x: &SegmentStack, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_finite(&[w, b])?;
    let sh = x.segments.shape().to_vec();
    let mut g = Graph::new_inference();
    let xs = g.constant(&x.segments);
    let (wn, bn) = (g.constant(w), g.constant(b));
    let flat = g.reshape(xs, vec![sh[0] * sh[1], sh[2]])?;
    let y = g.conv1d(flat, wn, bn, 1, Padding::Same)?;
    let d = g.shape(y)[1];
    let out = g.reshape(y, vec![sh[0], sh[1], d])?;
    Ok(g.value(out))
}

/// Tensor-level attention; head count and per-head dims come from the
/// parameter shapes.
pub fn relative_attention(x_q: &Tensor, x_kv: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let mut finite: Vec<&Tensor> = vec![&p.w_q, &p.w_k, &p.w_v, &p.w_o];
    finite.extend(p.rel.iter());
    check_finite(&finite)?;
    let mut g = Graph::new_inference();
    let q = g.constant(x_q);
    let kv = g.constant(x_kv);
    let nodes = bind_attn(&mut g, p, false);
    let out = attention_nodes(&mut g, q, kv, &nodes, p.d_k(), p.d_v())?;
    Ok(g.value(out))
}

/// Tensor-level dual attention block (`kv` present = cross-attention).
pub fn dual_attention_block(
    x: &Tensor,
    kv: Option<&Tensor>,
    p: &DualAttentionParams,
) -> Result<Tensor> {
    let mut g = Graph::new_inference();
    let xn = g.constant(x);
    let kvn = kv.map(|t| g.constant(t));
    let nodes = DualNodes {
        norm: bind_norm(&mut g, &p.norm, false),
        intra: bind_attn(&mut g, &p.intra, false),
        inter: bind_attn(&mut g, &p.inter, false),
    };
    let out = dual_attention_nodes(&mut g, xn, kvn, &nodes, p.intra.d_k(), p.intra.d_v())?;
    Ok(g.value(out))
}

/// Tensor-level GLU on `[..., C]`.
pub fn glu(x: &Tensor, w: &Tensor, b: &Tensor, v: &Tensor, c: &Tensor) -> Result<Tensor> {
    let sh = x.shape().to_vec();
    let ch = *sh.last().ok_or_else(|| Error::invalid("glu on 0-d"))?;
    let mut g = Graph::new_inference();
    let flat = x.reshaped(vec![x.len() / ch, ch])?;
    let xn = g.constant(&flat);
    let (wn, bn, vn, cn) = (g.constant(w), g.constant(b), g.constant(v), g.constant(c));
    let out = glu_nodes(&mut g, xn, wn, bn, vn, cn)?;
    let c_out = g.shape(out)[1];
    let mut out_sh = sh;
    *out_sh.last_mut().expect("nonempty") = c_out;
    g.value(out).reshaped(out_sh)
}

/// Tensor-level convolution block (residual added by the caller).
pub fn conv_block(x: &Tensor, p: &ConvBlockParams) -> Result<Tensor> {
    let mut g = Graph::new_inference();
    let xn = g.constant(x);
    let nodes = bind_layer_conv(&mut g, p);
    let out = conv_block_nodes(&mut g, xn, &nodes)?;
    Ok(g.value(out))
}

fn bind_layer_conv(g: &mut Graph, p: &ConvBlockParams) -> ConvNodes {
    ConvNodes {
        pw_in_w: g.constant(&p.pw_in_w),
        pw_in_b: g.constant(&p.pw_in_b),
        glu_w: g.constant(&p.glu_w),
        glu_b: g.constant(&p.glu_b),
        glu_v: g.constant(&p.glu_v),
        glu_c: g.constant(&p.glu_c),
        dw_w: g.constant(&p.dw_w),
        dw_b: g.constant(&p.dw_b),
        pw_out_w: g.constant(&p.pw_out_w),
        pw_out_b: g.constant(&p.pw_out_b),
    }
}

/// Tensor-level position-wise feed-forward.
pub fn feed_forward(x: &Tensor, p: &FeedForwardParams) -> Result<Tensor> {
    let mut g = Graph::new_inference();
    let xn = g.constant(x);
    let nodes = FfNodes {
        w1: g.constant(&p.w1),
        b1: g.constant(&p.b1),
        w2: g.constant(&p.w2),
        b2: g.constant(&p.b2),
    };
    let out = feed_forward_nodes(&mut g, xn, &nodes)?;
    Ok(g.value(out))
}

/// Tensor-level encoder layer.
pub fn encoder_layer(x: &Tensor, p: &LayerParams, d_k: usize, d_v: usize) -> Result<Tensor> {
    let mut g = Graph::new_inference();
    let xn = g.constant(x);
    let nodes = bind_layer(&mut g, p, false);
    let out = layer_nodes(&mut g, xn, None, &nodes, d_k, d_v)?;
    Ok(g.value(out))
}

/// Tensor-level decoder layer cross-attending to `enc_out`.
pub fn decoder_layer(
    x: &Tensor,
    enc_out: &Tensor,
    p: &LayerParams,
    d_k: usize,
    d_v: usize,
) -> Result<Tensor> {
    let mut g = Graph::new_inference();
    let xn = g.constant(x);
    let en = g.constant(enc_out);
    let nodes = bind_layer(&mut g, p, false);
    let out = layer_nodes(&mut g, xn, Some(en), &nodes, d_k, d_v)?;
    Ok(g.value(out))
}

/// End-to-end forward pass: `[signal_len, in_channels]` interfered signal in,
/// same-shape reconstruction out.
pub fn rimformer_forward(x: &Tensor, params: &RimformerParams, cfg: &ModelConfig) -> Result<Tensor> {
    if !params.all_finite() {
        return Err(Error::InvalidState("non-finite parameters".into()));
    }
    let stack = split_windows(x, &cfg.window)?;
    if stack.n_frames() != cfg.n_frames {
        return Err(Error::invalid(format!(
            "signal yields {} frames, config wants {}",
            stack.n_frames(),
            cfg.n_frames
        )));
    }
    let mut g = Graph::new_inference();
    let xs = g.constant(&stack.segments);
    let nodes = bind_model(&mut g, params, false);
    let out = build_forward(&mut g, &nodes, cfg, xs)?;
    Ok(g.value(out))
}
