//! The four kernel families applied at every level of the network.
//!
//! A kernel maps a batch of `(L_in, M_in)` segments to `(L_out, M_out)`
//! outputs. In the encoder direction a kernel compresses a segment to a
//! single token (`L_out = 1`); in the decoder direction it grows one token
//! into a segment (`L_in = 1`). All four families honor the same contract
//! so they are interchangeable behind the wrapper:
//!
//! * linear  — flatten, one affine map, reshape
//! * mlp     — flatten, affine, tanh, affine, reshape
//! * transformer — per-token embedding + sinusoidal positions, self-attention
//!   blocks with residuals, flatten-and-project to the output segment
//! * lstm    — unroll a cell over the tokens, project the concatenated
//!   hidden states

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    Mlp,
    Transformer,
    Lstm,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Mlp => "mlp",
            KernelKind::Transformer => "transformer",
            KernelKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelKind::Linear),
            "mlp" => Ok(KernelKind::Mlp),
            "transformer" => Ok(KernelKind::Transformer),
            "lstm" => Ok(KernelKind::Lstm),
            other => Err(Error::Config(format!("unknown kernel kind {other:?}"))),
        }
    }
}

/// Declarative description of one layer's kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub l_in: usize,
    pub m_in: usize,
    pub l_out: usize,
    pub m_out: usize,
    /// MLP hidden width, transformer token width, or LSTM state width.
    pub hidden: Option<usize>,
    /// Attention heads (transformer only).
    pub heads: Option<usize>,
    /// Self-attention block count (transformer only).
    pub blocks: Option<usize>,
}

impl KernelSpec {
    pub fn linear(l_in: usize, m_in: usize, l_out: usize, m_out: usize) -> Self {
        KernelSpec { kind: KernelKind::Linear, l_in, m_in, l_out, m_out, hidden: None, heads: None, blocks: None }
    }

    pub fn mlp(l_in: usize, m_in: usize, l_out: usize, m_out: usize, hidden: usize) -> Self {
        KernelSpec { kind: KernelKind::Mlp, l_in, m_in, l_out, m_out, hidden: Some(hidden), heads: None, blocks: None }
    }

    pub fn transformer(
        l_in: usize,
        m_in: usize,
        l_out: usize,
        m_out: usize,
        width: usize,
        heads: usize,
        blocks: usize,
    ) -> Self {
        KernelSpec {
            kind: KernelKind::Transformer,
            l_in,
            m_in,
            l_out,
            m_out,
            hidden: Some(width),
            heads: Some(heads),
            blocks: Some(blocks),
        }
    }

    pub fn lstm(l_in: usize, m_in: usize, l_out: usize, m_out: usize, hidden: usize) -> Self {
        KernelSpec { kind: KernelKind::Lstm, l_in, m_in, l_out, m_out, hidden: Some(hidden), heads: None, blocks: None }
    }

    pub fn flat_in(&self) -> usize {
        self.l_in * self.m_in
    }

    pub fn flat_out(&self) -> usize {
        self.l_out * self.m_out
    }

    /// Token count for sequence kernels: the long side of the contract.
    pub fn tokens(&self) -> usize {
        if self.l_out == 1 {
            self.l_in
        } else {
            self.l_out
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_in < 1 || self.m_in < 1 || self.l_out < 1 || self.m_out < 1 {
            return Err(Error::Config(format!("kernel extents must be >= 1: {self:?}")));
        }
        match self.kind {
            KernelKind::Linear => {
                if self.hidden.is_some() || self.heads.is_some() || self.blocks.is_some() {
                    return Err(Error::Config("linear kernel takes no hyperparameters".into()));
                }
            }
            KernelKind::Mlp => {
                if self.hidden.is_none() {
                    return Err(Error::Config("mlp kernel needs a hidden width".into()));
                }
                if self.heads.is_some() || self.blocks.is_some() {
                    return Err(Error::Config("heads/blocks are transformer-only fields".into()));
                }
            }
            KernelKind::Transformer => {
                let width = self.hidden.ok_or_else(|| Error::Config("transformer kernel needs a token width".into()))?;
                let heads = self.heads.ok_or_else(|| Error::Config("transformer kernel needs a head count".into()))?;
                if self.blocks.is_none() {
                    return Err(Error::Config("transformer kernel needs a block count".into()));
                }
                if heads == 0 || width % heads != 0 {
                    return Err(Error::Config(format!(
                        "token width {width} not divisible by {heads} heads"
                    )));
                }
                if self.l_out != 1 && self.l_in != 1 {
                    return Err(Error::Config(format!(
                        "transformer kernel must compress to one token or grow from one token, got {} -> {}",
                        self.l_in, self.l_out
                    )));
                }
            }
            KernelKind::Lstm => {
                if self.hidden.is_none() {
                    return Err(Error::Config("lstm kernel needs a state width".into()));
                }
                if self.heads.is_some() || self.blocks.is_some() {
                    return Err(Error::Config("heads/blocks are transformer-only fields".into()));
                }
                if self.l_out != 1 && self.l_in != 1 {
                    return Err(Error::Config(format!(
                        "lstm kernel must compress to one token or grow from one token, got {} -> {}",
                        self.l_in, self.l_out
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sinusoidal positional table, `len x width` row-major, with frequencies
/// `w_i = 10000^(-2*floor(i/2)/width)`: even columns sine, odd columns
/// cosine.
pub fn positional_encoding(len: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * width);
    for t in 0..len {
        for i in 0..width {
            let omega = libm::pow(10000.0, -2.0 * ((i / 2) as f64) / width as f64);
            let angle = omega * t as f64;
            out.push(if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) });
        }
    }
    out
}

/// Scaled dot-product attention: `softmax(Q K^T / sqrt(Dk)) V`.
///
/// Shapes `q: (..., n, Dk)`, `k: (..., m, Dk)`, `v: (..., m, Dv)`; any equal
/// batch prefix is carried through.
pub fn attention(g: &mut Graph, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    let qshape = g.shape(q).to_vec();
    let kshape = g.shape(k).to_vec();
    if qshape.len() < 2 || kshape.len() < 2 {
        return Err(dim_err("attention", format!("need matrices, got {qshape:?} and {kshape:?}")));
    }
    let dk = qshape[qshape.len() - 1];
    if kshape[kshape.len() - 1] != dk {
        return Err(dim_err(
            "attention",
            format!("key width mismatch: {qshape:?} vs {kshape:?}"),
        ));
    }
    let kt = g.transpose_last(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / libm::sqrt(dk as f64))?;
    let axis = g.shape(scaled).len() - 1;
    let weights = g.softmax(scaled, axis)?;
    g.matmul(weights, v)
}

/// Multi-head self-attention over already-bound projection matrices:
/// `Concat(head_1 .. head_H) W_o` with `head_i = attention(x Wq_i, x Wk_i, x Wv_i)`.
pub fn multi_head_self_attention(
    g: &mut Graph,
    x: TensorId,
    heads: &[(TensorId, TensorId, TensorId)],
    w_out: TensorId,
) -> Result<TensorId> {
    if heads.is_empty() {
        return Err(Error::Config("attention needs at least one head".into()));
    }
    let mut outputs = Vec::with_capacity(heads.len());
    for &(wq, wk, wv) in heads {
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        outputs.push(attention(g, q, k, v)?);
    }
    let axis = g.shape(outputs[0]).len() - 1;
    let cat = g.concat(&outputs, axis)?;
    g.matmul(cat, w_out)
}

/// Bound gate weights for one [`lstm_step`] call.
#[derive(Debug, Clone, Copy)]
pub struct LstmGates {
    pub w_f: TensorId,
    pub w_i: TensorId,
    pub w_c: TensorId,
    pub w_o: TensorId,
    pub b_f: TensorId,
    pub b_i: TensorId,
    pub b_c: TensorId,
    pub b_o: TensorId,
}

/// One LSTM cell update on a batch of rows.
///
/// `x_t: (batch, in_w)`, `h_prev`/`c_prev`: `(batch, state)`; gate weights
/// are `(state + in_w, state)`, biases `(state,)`. Returns `(h_t, c_t)`.
pub fn lstm_step(
    g: &mut Graph,
    x_t: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
    gates: &LstmGates,
) -> Result<(TensorId, TensorId)> {
    let hx = g.concat(&[h_prev, x_t], 1)?;
    let f_lin = g.matmul(hx, gates.w_f)?;
    let f_lin = g.add_bcast(f_lin, gates.b_f)?;
    let f = g.sigmoid(f_lin)?;
    let i_lin = g.matmul(hx, gates.w_i)?;
    let i_lin = g.add_bcast(i_lin, gates.b_i)?;
    let i = g.sigmoid(i_lin)?;
    let c_lin = g.matmul(hx, gates.w_c)?;
    let c_lin = g.add_bcast(c_lin, gates.b_c)?;
    let c_bar = g.tanh(c_lin)?;
    let o_lin = g.matmul(hx, gates.w_o)?;
    let o_lin = g.add_bcast(o_lin, gates.b_o)?;
    let o = g.sigmoid(o_lin)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, c_bar)?;
    let c_t = g.add(keep, write)?;
    let c_act = g.tanh(c_t)?;
    let h_t = g.mul(o, c_act)?;
    Ok((h_t, c_t))
}

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    /// Per-head (Wq, Wk, Wv), each `width x head_width`, no bias.
    pub heads: Vec<(ParamId, ParamId, ParamId)>,
    pub w_out: ParamId,
    pub ffn_w: ParamId,
    pub ffn_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct TransformerParams {
    /// Encoder direction: per-token embedding `m_in -> width`.
    /// Decoder direction: seed projection `m_in -> tokens*width`.
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub blocks: Vec<BlockParams>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// Constant sinusoidal table, `tokens x width`.
    pub pe: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmKernelParams {
    /// Decoder direction only: seed projection `m_in -> steps*state`.
    pub seed: Option<(ParamId, ParamId)>,
    pub w_f: ParamId,
    pub w_i: ParamId,
    pub w_c: ParamId,
    pub w_o: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

/// Named parameter tensors of one kernel instance.
#[derive(Debug, Clone)]
pub enum KernelParams {
    Linear(LinearParams),
    Mlp(MlpParams),
    Transformer(TransformerParams),
    Lstm(LstmKernelParams),
}

fn decoder_direction(spec: &KernelSpec) -> bool {
    spec.l_out != 1 && spec.l_in == 1
}

impl KernelParams {
    /// Register this kernel's parameters under `prefix` and initialize them
    /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    pub fn init(spec: &KernelSpec, prefix: &str, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let f_in = spec.flat_in();
        let f_out = spec.flat_out();
        match spec.kind {
            KernelKind::Linear => {
                let w = store.register_uniform(format!("{prefix}.w"), alloc::vec![f_in, f_out], f_in, rng)?;
                let b = store.register_uniform(format!("{prefix}.b"), alloc::vec![f_out], f_in, rng)?;
                Ok(KernelParams::Linear(LinearParams { w, b }))
            }
            KernelKind::Mlp => {
                let h = spec.hidden.unwrap();
                let w1 = store.register_uniform(format!("{prefix}.w1"), alloc::vec![f_in, h], f_in, rng)?;
                let b1 = store.register_uniform(format!("{prefix}.b1"), alloc::vec![h], f_in, rng)?;
                let w2 = store.register_uniform(format!("{prefix}.w2"), alloc::vec![h, f_out], h, rng)?;
                let b2 = store.register_uniform(format!("{prefix}.b2"), alloc::vec![f_out], h, rng)?;
                Ok(KernelParams::Mlp(MlpParams { w1, b1, w2, b2 }))
            }
            KernelKind::Transformer => {
                let width = spec.hidden.unwrap();
                let heads = spec.heads.unwrap();
                let blocks = spec.blocks.unwrap();
                let tokens = spec.tokens();
                let head_w = width / heads;
                let embed_out = if decoder_direction(spec) { tokens * width } else { width };
                let embed_w = store.register_uniform(
                    format!("{prefix}.embed.w"),
                    alloc::vec![spec.m_in, embed_out],
                    spec.m_in,
                    rng,
                )?;
                let embed_b =
                    store.register_uniform(format!("{prefix}.embed.b"), alloc::vec![embed_out], spec.m_in, rng)?;
                let mut block_params = Vec::with_capacity(blocks);
                for bi in 0..blocks {
                    let mut head_ids = Vec::with_capacity(heads);
                    for hi in 0..heads {
                        let wq = store.register_uniform(
                            format!("{prefix}.block{bi}.head{hi}.wq"),
                            alloc::vec![width, head_w],
                            width,
                            rng,
                        )?;
                        let wk = store.register_uniform(
                            format!("{prefix}.block{bi}.head{hi}.wk"),
                            alloc::vec![width, head_w],
                            width,
                            rng,
                        )?;
                        let wv = store.register_uniform(
                            format!("{prefix}.block{bi}.head{hi}.wv"),
                            alloc::vec![width, head_w],
                            width,
                            rng,
                        )?;
                        head_ids.push((wq, wk, wv));
                    }
                    let w_out = store.register_uniform(
                        format!("{prefix}.block{bi}.wo"),
                        alloc::vec![width, width],
                        width,
                        rng,
                    )?;
                    let ffn_w = store.register_uniform(
                        format!("{prefix}.block{bi}.ffn.w"),
                        alloc::vec![width, width],
                        width,
                        rng,
                    )?;
                    let ffn_b = store.register_uniform(
                        format!("{prefix}.block{bi}.ffn.b"),
                        alloc::vec![width],
                        width,
                        rng,
                    )?;
                    block_params.push(BlockParams { heads: head_ids, w_out, ffn_w, ffn_b });
                }
                let proj_in = tokens * width;
                let proj_w =
                    store.register_uniform(format!("{prefix}.proj.w"), alloc::vec![proj_in, f_out], proj_in, rng)?;
                let proj_b =
                    store.register_uniform(format!("{prefix}.proj.b"), alloc::vec![f_out], proj_in, rng)?;
                Ok(KernelParams::Transformer(TransformerParams {
                    embed_w,
                    embed_b,
                    blocks: block_params,
                    proj_w,
                    proj_b,
                    pe: positional_encoding(tokens, width),
                }))
            }
            KernelKind::Lstm => {
                let state = spec.hidden.unwrap();
                let steps = spec.tokens();
                let dec = decoder_direction(spec);
                let in_w = if dec { state } else { spec.m_in };
                let seed = if dec {
                    let sw = store.register_uniform(
                        format!("{prefix}.seed.w"),
                        alloc::vec![spec.m_in, steps * state],
                        spec.m_in,
                        rng,
                    )?;
                    let sb = store.register_uniform(
                        format!("{prefix}.seed.b"),
                        alloc::vec![steps * state],
                        spec.m_in,
                        rng,
                    )?;
                    Some((sw, sb))
                } else {
                    None
                };
                let gate_in = state + in_w;
                let w_f = store.register_uniform(format!("{prefix}.wf"), alloc::vec![gate_in, state], gate_in, rng)?;
                let w_i = store.register_uniform(format!("{prefix}.wi"), alloc::vec![gate_in, state], gate_in, rng)?;
                let w_c = store.register_uniform(format!("{prefix}.wc"), alloc::vec![gate_in, state], gate_in, rng)?;
                let w_o = store.register_uniform(format!("{prefix}.wo"), alloc::vec![gate_in, state], gate_in, rng)?;
                let b_f = store.register_uniform(format!("{prefix}.bf"), alloc::vec![state], gate_in, rng)?;
                let b_i = store.register_uniform(format!("{prefix}.bi"), alloc::vec![state], gate_in, rng)?;
                let b_c = store.register_uniform(format!("{prefix}.bc"), alloc::vec![state], gate_in, rng)?;
                let b_o = store.register_uniform(format!("{prefix}.bo"), alloc::vec![state], gate_in, rng)?;
                let proj_in = steps * state;
                let proj_w =
                    store.register_uniform(format!("{prefix}.proj.w"), alloc::vec![proj_in, f_out], proj_in, rng)?;
                let proj_b =
                    store.register_uniform(format!("{prefix}.proj.b"), alloc::vec![f_out], proj_in, rng)?;
                Ok(KernelParams::Lstm(LstmKernelParams {
                    seed,
                    w_f,
                    w_i,
                    w_c,
                    w_o,
                    b_f,
                    b_i,
                    b_c,
                    b_o,
                    proj_w,
                    proj_b,
                }))
            }
        }
    }

    /// Apply the kernel to `x: (batch, l_in, m_in)`, producing
    /// `(batch, l_out, m_out)`. Deterministic given parameters and input.
    pub fn forward(
        &self,
        spec: &KernelSpec,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != spec.l_in || shape[2] != spec.m_in {
            return Err(dim_err(
                "kernel_forward",
                format!("expected (B, {}, {}), got {shape:?}", spec.l_in, spec.m_in),
            ));
        }
        let batch = shape[0];
        match self {
            KernelParams::Linear(p) => {
                let flat = g.reshape(x, alloc::vec![batch, spec.flat_in()])?;
                let w = bind.leaf(g, store, p.w)?;
                let b = bind.leaf(g, store, p.b)?;
                let y = g.matmul(flat, w)?;
                let y = g.add_bcast(y, b)?;
                g.reshape(y, alloc::vec![batch, spec.l_out, spec.m_out])
            }
            KernelParams::Mlp(p) => {
                let flat = g.reshape(x, alloc::vec![batch, spec.flat_in()])?;
                let w1 = bind.leaf(g, store, p.w1)?;
                let b1 = bind.leaf(g, store, p.b1)?;
                let w2 = bind.leaf(g, store, p.w2)?;
                let b2 = bind.leaf(g, store, p.b2)?;
                let h = g.matmul(flat, w1)?;
                let h = g.add_bcast(h, b1)?;
                let h = g.tanh(h)?;
                let y = g.matmul(h, w2)?;
                let y = g.add_bcast(y, b2)?;
                g.reshape(y, alloc::vec![batch, spec.l_out, spec.m_out])
            }
            KernelParams::Transformer(p) => transformer_forward(spec, p, g, store, bind, x, batch),
            KernelParams::Lstm(p) => lstm_kernel_forward(spec, p, g, store, bind, x, batch),
        }
    }

    /// Every parameter of this kernel, in registration order.
    pub fn param_ids(&self, out: &mut Vec<ParamId>) {
        match self {
            KernelParams::Linear(p) => out.extend([p.w, p.b]),
            KernelParams::Mlp(p) => out.extend([p.w1, p.b1, p.w2, p.b2]),
            KernelParams::Transformer(p) => {
                out.extend([p.embed_w, p.embed_b]);
                for b in &p.blocks {
                    for &(wq, wk, wv) in &b.heads {
                        out.extend([wq, wk, wv]);
                    }
                    out.extend([b.w_out, b.ffn_w, b.ffn_b]);
                }
                out.extend([p.proj_w, p.proj_b]);
            }
            KernelParams::Lstm(p) => {
                if let Some((sw, sb)) = p.seed {
                    out.extend([sw, sb]);
                }
                out.extend([p.w_f, p.w_i, p.w_c, p.w_o, p.b_f, p.b_i, p.b_c, p.b_o, p.proj_w, p.proj_b]);
            }
        }
    }
}

fn transformer_forward(
    spec: &KernelSpec,
    p: &TransformerParams,
    g: &mut Graph,
    store: &ParamStore,
    bind: &mut Binding,
    x: TensorId,
    batch: usize,
) -> Result<TensorId> {
    let width = spec.hidden.unwrap();
    let tokens = spec.tokens();
    let embed_w = bind.leaf(g, store, p.embed_w)?;
    let embed_b = bind.leaf(g, store, p.embed_b)?;
    // Embed to (batch, tokens, width): per-token in the encoder direction,
    // one seed projection fanned out in the decoder direction.
    let mut h = if decoder_direction(spec) {
        let flat = g.reshape(x, alloc::vec![batch, spec.m_in])?;
        let seeded = g.matmul(flat, embed_w)?;
        let seeded = g.add_bcast(seeded, embed_b)?;
        g.reshape(seeded, alloc::vec![batch, tokens, width])?
    } else {
        let flat = g.reshape(x, alloc::vec![batch * spec.l_in, spec.m_in])?;
        let e = g.matmul(flat, embed_w)?;
        let e = g.add_bcast(e, embed_b)?;
        g.reshape(e, alloc::vec![batch, tokens, width])?
    };
    let pe = g.constant(p.pe.clone(), alloc::vec![tokens, width])?;
    h = g.add_bcast(h, pe)?;
    for block in &p.blocks {
        let mut head_ids = Vec::with_capacity(block.heads.len());
        for &(wq, wk, wv) in &block.heads {
            head_ids.push((
                bind.leaf(g, store, wq)?,
                bind.leaf(g, store, wk)?,
                bind.leaf(g, store, wv)?,
            ));
        }
        let w_out = bind.leaf(g, store, block.w_out)?;
        let attn = multi_head_self_attention(g, h, &head_ids, w_out)?;
        h = g.add(h, attn)?;
        let ffn_w = bind.leaf(g, store, block.ffn_w)?;
        let ffn_b = bind.leaf(g, store, block.ffn_b)?;
        let flat = g.reshape(h, alloc::vec![batch * tokens, width])?;
        let ff = g.matmul(flat, ffn_w)?;
        let ff = g.add_bcast(ff, ffn_b)?;
        let ff = g.tanh(ff)?;
        let ff = g.reshape(ff, alloc::vec![batch, tokens, width])?;
        h = g.add(h, ff)?;
    }
    let proj_w = bind.leaf(g, store, p.proj_w)?;
    let proj_b = bind.leaf(g, store, p.proj_b)?;
    let flat = g.reshape(h, alloc::vec![batch, tokens * width])?;
    let y = g.matmul(flat, proj_w)?;
    let y = g.add_bcast(y, proj_b)?;
    g.reshape(y, alloc::vec![batch, spec.l_out, spec.m_out])
}

fn lstm_kernel_forward(
    spec: &KernelSpec,
    p: &LstmKernelParams,
    g: &mut Graph,
    store: &ParamStore,
    bind: &mut Binding,
    x: TensorId,
    batch: usize,
) -> Result<TensorId> {
    let state = spec.hidden.unwrap();
    let steps = spec.tokens();
    // Inputs per step: raw segment tokens in the encoder direction, the
    // seeded fan-out of the single input token in the decoder direction.
    let (seq, in_w) = if decoder_direction(spec) {
        let (sw, sb) = p.seed.as_ref().copied().unwrap();
        let sw = bind.leaf(g, store, sw)?;
        let sb = bind.leaf(g, store, sb)?;
        let flat = g.reshape(x, alloc::vec![batch, spec.m_in])?;
        let seeded = g.matmul(flat, sw)?;
        let seeded = g.add_bcast(seeded, sb)?;
        (g.reshape(seeded, alloc::vec![batch, steps, state])?, state)
    } else {
        (x, spec.m_in)
    };
    let gates = LstmGates {
        w_f: bind.leaf(g, store, p.w_f)?,
        w_i: bind.leaf(g, store, p.w_i)?,
        w_c: bind.leaf(g, store, p.w_c)?,
        w_o: bind.leaf(g, store, p.w_o)?,
        b_f: bind.leaf(g, store, p.b_f)?,
        b_i: bind.leaf(g, store, p.b_i)?,
        b_c: bind.leaf(g, store, p.b_c)?,
        b_o: bind.leaf(g, store, p.b_o)?,
    };
    let mut h = g.constant(alloc::vec![0.0; batch * state], alloc::vec![batch, state])?;
    let mut c = g.constant(alloc::vec![0.0; batch * state], alloc::vec![batch, state])?;
    let mut hiddens = Vec::with_capacity(steps);
    for t in 0..steps {
        let x_t = g.narrow(seq, 1, t, 1)?;
        let x_t = g.reshape(x_t, alloc::vec![batch, in_w])?;
        let (h_t, c_t) = lstm_step(g, x_t, h, c, &gates)?;
        hiddens.push(h_t);
        h = h_t;
        c = c_t;
    }
    let all = g.concat(&hiddens, 1)?;
    let proj_w = bind.leaf(g, store, p.proj_w)?;
    let proj_b = bind.leaf(g, store, p.proj_b)?;
    let y = g.matmul(all, proj_w)?;
    let y = g.add_bcast(y, proj_b)?;
    g.reshape(y, alloc::vec![batch, spec.l_out, spec.m_out])
}

/// Closed-form parameter count of one kernel, by construction rules alone.
pub fn param_count(spec: &KernelSpec) -> usize {
    let f_in = spec.flat_in();
    let f_out = spec.flat_out();
    match spec.kind {
        KernelKind::Linear => f_in * f_out + f_out,
        KernelKind::Mlp => {
            let h = spec.hidden.unwrap();
            f_in * h + h + h * f_out + f_out
        }
        KernelKind::Transformer => {
            let width = spec.hidden.unwrap();
            let heads = spec.heads.unwrap();
            let blocks = spec.blocks.unwrap();
            let tokens = spec.tokens();
            let head_w = width / heads;
            let embed_out = if decoder_direction(spec) { tokens * width } else { width };
            let embed = spec.m_in * embed_out + embed_out;
            let per_block = 3 * heads * width * head_w + width * width + width * width + width;
            let proj = tokens * width * f_out + f_out;
            embed + blocks * per_block + proj
        }
        KernelKind::Lstm => {
            let state = spec.hidden.unwrap();
            let steps = spec.tokens();
            let dec = decoder_direction(spec);
            let in_w = if dec { state } else { spec.m_in };
            let seed = if dec { spec.m_in * steps * state + steps * state } else { 0 };
            let gates = 4 * ((state + in_w) * state + state);
            let proj = steps * state * f_out + f_out;
            seed + gates + proj
        }
    }
}

/// Short descriptor used in per-layer reports.
pub fn kernel_label(spec: &KernelSpec) -> String {
    format!(
        "{} ({}x{} -> {}x{})",
        spec.kind.as_str(),
        spec.l_in,
        spec.m_in,
        spec.l_out,
        spec.m_out
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{grad_check, DEFAULT_STEP};

    fn store_with(specs: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = specs
            .iter()
            .map(|(name, shape, data)| s.register((*name).into(), shape.clone(), data.clone()).unwrap())
            .collect();
        (s, ids)
    }

    fn bind_gates(g: &mut Graph, bind: &mut Binding, store: &ParamStore, ids: &[ParamId]) -> LstmGates {
        LstmGates {
            w_f: bind.leaf(g, store, ids[0]).unwrap(),
            w_i: bind.leaf(g, store, ids[1]).unwrap(),
            w_c: bind.leaf(g, store, ids[2]).unwrap(),
            w_o: bind.leaf(g, store, ids[3]).unwrap(),
            b_f: bind.leaf(g, store, ids[4]).unwrap(),
            b_i: bind.leaf(g, store, ids[5]).unwrap(),
            b_c: bind.leaf(g, store, ids[6]).unwrap(),
            b_o: bind.leaf(g, store, ids[7]).unwrap(),
        }
    }

    #[test]
    fn linear_identity_weights_pass_input_through() {
        let spec = KernelSpec::linear(2, 1, 1, 2);
        let (store, ids) = store_with(&[
            ("k.w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]),
            ("k.b", vec![2], vec![0.0, 0.0]),
        ]);
        let params = KernelParams::Linear(LinearParams { w: ids[0], b: ids[1] });
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(vec![3.0, -1.5], vec![1, 2, 1], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2]);
        assert_eq!(g.data(y), &[3.0, -1.5]);
    }

    #[test]
    fn linear_hand_affine() {
        // x=[1,2], w=[[1,1],[1,-1]], b=[0.5,0] -> [3.5, -1]
        let spec = KernelSpec::linear(2, 1, 2, 1);
        let (store, ids) = store_with(&[
            ("k.w", vec![2, 2], vec![1.0, 1.0, 1.0, -1.0]),
            ("k.b", vec![2], vec![0.5, 0.0]),
        ]);
        let params = KernelParams::Linear(LinearParams { w: ids[0], b: ids[1] });
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(vec![1.0, 2.0], vec![1, 2, 1], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        assert_eq!(g.data(y), &[3.5, -1.0]);
    }

    #[test]
    fn linear_grad_check() {
        let spec = KernelSpec::linear(3, 1, 1, 2);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(4);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let x_id = store
            .register("input".into(), alloc::vec![2, 3, 1], (0..6).map(|i| 0.3 * i as f64 - 0.7).collect())
            .unwrap();
        let all: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let report = grad_check(
            &mut store,
            &all,
            |s, g, b| {
                let x = b.leaf(g, s, x_id)?;
                let y = params.forward(&spec, g, s, b, x)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            DEFAULT_STEP,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn mlp_zero_params_zero_output() {
        let spec = KernelSpec::mlp(2, 1, 1, 2, 3);
        let (store, ids) = store_with(&[
            ("k.w1", vec![2, 3], vec![0.0; 6]),
            ("k.b1", vec![3], vec![0.0; 3]),
            ("k.w2", vec![3, 2], vec![0.0; 6]),
            ("k.b2", vec![2], vec![0.0; 2]),
        ]);
        let params = KernelParams::Mlp(MlpParams { w1: ids[0], b1: ids[1], w2: ids[2], b2: ids[3] });
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(vec![1.0, -2.0], vec![1, 2, 1], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        assert_eq!(g.data(y), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_scalar_hand_value() {
        // hidden=1, w1=2, w2=3, b=0: x=[1] -> tanh(2)*3
        let spec = KernelSpec::mlp(1, 1, 1, 1, 1);
        let (store, ids) = store_with(&[
            ("k.w1", vec![1, 1], vec![2.0]),
            ("k.b1", vec![1], vec![0.0]),
            ("k.w2", vec![1, 1], vec![3.0]),
            ("k.b2", vec![1], vec![0.0]),
        ]);
        let params = KernelParams::Mlp(MlpParams { w1: ids[0], b1: ids[1], w2: ids[2], b2: ids[3] });
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(vec![1.0], vec![1, 1, 1], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        let want = libm::tanh(2.0) * 3.0;
        assert!((g.data(y)[0] - want).abs() < 1e-12);
        assert!((want - 2.8921).abs() < 1e-4);
    }

    #[test]
    fn mlp_grad_check() {
        let spec = KernelSpec::mlp(2, 1, 1, 3, 4);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(8);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let x_id = store
            .register("input".into(), alloc::vec![2, 2, 1], alloc::vec![0.2, -0.4, 0.9, 0.1])
            .unwrap();
        let all: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let report = grad_check(
            &mut store,
            &all,
            |s, g, b| {
                let x = b.leaf(g, s, x_id)?;
                let y = params.forward(&spec, g, s, b, x)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            DEFAULT_STEP,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn positional_encoding_first_row_and_range() {
        let pe = positional_encoding(5, 6);
        // t=0: sin(0)=0 on even columns, cos(0)=1 on odd columns.
        for i in 0..6 {
            let want = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe[i], want);
        }
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
        // Position 1, column 0: omega = 10000^0 = 1 -> sin(1).
        assert!((pe[6] - libm::sin(1.0)).abs() < 1e-12);
        assert!((pe[6] - 0.8415).abs() < 1e-4);
    }

    #[test]
    fn attention_uniform_when_queries_orthogonal() {
        // Q K^T = 0 -> uniform softmax -> each output row is the V column mean.
        let mut g = Graph::new();
        let q = g.leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2], false).unwrap();
        let k = g.leaf(vec![0.0; 4], vec![2, 2], false).unwrap();
        let v = g.leaf(vec![1.0, 10.0, 3.0, 20.0], vec![2, 2], false).unwrap();
        let out = attention(&mut g, q, k, v).unwrap();
        for row in 0..2 {
            assert!((g.data(out)[row * 2] - 2.0).abs() < 1e-12);
            assert!((g.data(out)[row * 2 + 1] - 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_single_key_returns_value_row() {
        let mut g = Graph::new();
        let q = g.leaf(vec![0.3, -0.8, 2.0, 0.1], vec![2, 2], false).unwrap();
        let k = g.leaf(vec![5.0, -3.0], vec![1, 2], false).unwrap();
        let v = g.leaf(vec![7.0, 8.0, 9.0], vec![1, 3], false).unwrap();
        let out = attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.data(out), &[7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn attention_matches_scalar_loop_oracle() {
        let mut rng = Rng::new(21);
        let (n, m, dk, dv) = (3, 3, 2, 2);
        let qd: Vec<f64> = (0..n * dk).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let kd: Vec<f64> = (0..m * dk).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let vd: Vec<f64> = (0..m * dv).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut g = Graph::new();
        let q = g.leaf(qd.clone(), vec![n, dk], false).unwrap();
        let k = g.leaf(kd.clone(), vec![m, dk], false).unwrap();
        let v = g.leaf(vd.clone(), vec![m, dv], false).unwrap();
        let out = attention(&mut g, q, k, v).unwrap();

        // Independent scalar-loop oracle: per-row softmax-weighted sum.
        let scale = 1.0 / libm::sqrt(dk as f64);
        for i in 0..n {
            let mut scores = vec![0.0; m];
            for j in 0..m {
                for d in 0..dk {
                    scores[j] += qd[i * dk + d] * kd[j * dk + d];
                }
                scores[j] *= scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
            let z: f64 = exps.iter().sum();
            for d in 0..dv {
                let mut want = 0.0;
                for j in 0..m {
                    want += exps[j] / z * vd[j * dv + d];
                }
                assert!((g.data(out)[i * dv + d] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_are_convex() {
        // Row weights sum to 1: attention over constant-one values returns 1.
        let mut rng = Rng::new(33);
        let mut g = Graph::new();
        let q = g.leaf((0..8).map(|_| rng.uniform(-40.0, 40.0)).collect(), vec![4, 2], false).unwrap();
        let k = g.leaf((0..8).map(|_| rng.uniform(-40.0, 40.0)).collect(), vec![4, 2], false).unwrap();
        let v = g.leaf(vec![1.0; 4], vec![4, 1], false).unwrap();
        let out = attention(&mut g, q, k, v).unwrap();
        for row in g.data(out) {
            assert!((row - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn multi_head_h1_identity_projections_equal_plain_attention() {
        let mut rng = Rng::new(12);
        let (t, d) = (3, 2);
        let xd: Vec<f64> = (0..t * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let mut g = Graph::new();
        let x = g.leaf(xd.clone(), vec![t, d], false).unwrap();
        let wq = g.constant(eye.clone(), vec![d, d]).unwrap();
        let wk = g.constant(eye.clone(), vec![d, d]).unwrap();
        let wv = g.constant(eye.clone(), vec![d, d]).unwrap();
        let wo = g.constant(eye.clone(), vec![d, d]).unwrap();
        let mha = multi_head_self_attention(&mut g, x, &[(wq, wk, wv)], wo).unwrap();
        let plain = attention(&mut g, x, x, x).unwrap();
        for (a, b) in g.data(mha).iter().zip(g.data(plain)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn multi_head_h2_composes_from_single_heads() {
        let mut rng = Rng::new(19);
        let (t, d, hw) = (3, 4, 2);
        let xd: Vec<f64> = (0..t * d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut mk = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform(-0.7, 0.7)).collect() };
        let h1: Vec<Vec<f64>> = (0..3).map(|_| mk(d * hw)).collect();
        let h2: Vec<Vec<f64>> = (0..3).map(|_| mk(d * hw)).collect();
        let wo_d = mk(d * d);

        let mut g = Graph::new();
        let x = g.leaf(xd.clone(), vec![t, d], false).unwrap();
        let ids1 = (
            g.constant(h1[0].clone(), vec![d, hw]).unwrap(),
            g.constant(h1[1].clone(), vec![d, hw]).unwrap(),
            g.constant(h1[2].clone(), vec![d, hw]).unwrap(),
        );
        let ids2 = (
            g.constant(h2[0].clone(), vec![d, hw]).unwrap(),
            g.constant(h2[1].clone(), vec![d, hw]).unwrap(),
            g.constant(h2[2].clone(), vec![d, hw]).unwrap(),
        );
        let wo = g.constant(wo_d.clone(), vec![d, d]).unwrap();
        let mha = multi_head_self_attention(&mut g, x, &[ids1, ids2], wo).unwrap();
        assert_eq!(g.shape(mha), &[t, d]);

        // Oracle: two independent attention calls, concatenated, projected.
        let q1 = g.matmul(x, ids1.0).unwrap();
        let k1 = g.matmul(x, ids1.1).unwrap();
        let v1 = g.matmul(x, ids1.2).unwrap();
        let a1 = attention(&mut g, q1, k1, v1).unwrap();
        let q2 = g.matmul(x, ids2.0).unwrap();
        let k2 = g.matmul(x, ids2.1).unwrap();
        let v2 = g.matmul(x, ids2.2).unwrap();
        let a2 = attention(&mut g, q2, k2, v2).unwrap();
        let cat = g.concat(&[a1, a2], 1).unwrap();
        let want = g.matmul(cat, wo).unwrap();
        for (a, b) in g.data(mha).iter().zip(g.data(want)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn transformer_encoder_shape_contract() {
        let spec = KernelSpec::transformer(4, 3, 1, 6, 4, 2, 1);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g
            .leaf((0..2 * 4 * 3).map(|i| (i as f64) * 0.1).collect(), vec![2, 4, 3], false)
            .unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        assert_eq!(g.shape(y), &[2, 1, 6]);
    }

    #[test]
    fn transformer_zero_projection_zero_output() {
        let spec = KernelSpec::transformer(3, 2, 1, 4, 4, 2, 1);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        if let KernelParams::Transformer(ref p) = params {
            store.get_mut(p.proj_w).data.iter_mut().for_each(|v| *v = 0.0);
            store.get_mut(p.proj_b).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(vec![1.0; 6], vec![1, 3, 2], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        assert!(g.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transformer_grad_check_tiny() {
        // 2 tokens, width 4, 2 heads, 1 block.
        let spec = KernelSpec::transformer(2, 2, 1, 2, 4, 2, 1);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(14);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let x_id = store
            .register("input".into(), alloc::vec![1, 2, 2], alloc::vec![0.5, -0.2, 0.1, 0.8])
            .unwrap();
        let all: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let report = grad_check(
            &mut store,
            &all,
            |s, g, b| {
                let x = b.leaf(g, s, x_id)?;
                let y = params.forward(&spec, g, s, b, x)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            DEFAULT_STEP,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn lstm_step_zero_weights() {
        // All-zero weights: every gate is 0.5, candidate 0 ->
        // C_t = 0.5*C_prev, h_t = 0.5*tanh(0.5*C_prev).
        let (store, ids) = store_with(&[
            ("wf", vec![2, 1], vec![0.0; 2]),
            ("wi", vec![2, 1], vec![0.0; 2]),
            ("wc", vec![2, 1], vec![0.0; 2]),
            ("wo", vec![2, 1], vec![0.0; 2]),
            ("bf", vec![1], vec![0.0]),
            ("bi", vec![1], vec![0.0]),
            ("bc", vec![1], vec![0.0]),
            ("bo", vec![1], vec![0.0]),
        ]);
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let gates = bind_gates(&mut g, &mut bind, &store, &ids);
        let c0 = 0.8;
        let x = g.leaf(vec![2.0], vec![1, 1], false).unwrap();
        let h_prev = g.constant(vec![0.0], vec![1, 1]).unwrap();
        let c_prev = g.constant(vec![c0], vec![1, 1]).unwrap();
        let (h, c) = lstm_step(&mut g, x, h_prev, c_prev, &gates).unwrap();
        assert!((g.data(c)[0] - 0.5 * c0).abs() < 1e-15);
        assert!((g.data(h)[0] - 0.5 * libm::tanh(0.5 * c0)).abs() < 1e-15);
    }

    #[test]
    fn lstm_step_scalar_hand_computation() {
        // Unit weights, x=1, h=0, C=0: every gate sees pre-activation 1.
        let (store, ids) = store_with(&[
            ("wf", vec![2, 1], vec![1.0; 2]),
            ("wi", vec![2, 1], vec![1.0; 2]),
            ("wc", vec![2, 1], vec![1.0; 2]),
            ("wo", vec![2, 1], vec![1.0; 2]),
            ("bf", vec![1], vec![0.0]),
            ("bi", vec![1], vec![0.0]),
            ("bc", vec![1], vec![0.0]),
            ("bo", vec![1], vec![0.0]),
        ]);
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let gates = bind_gates(&mut g, &mut bind, &store, &ids);
        let x = g.leaf(vec![1.0], vec![1, 1], false).unwrap();
        let h_prev = g.constant(vec![0.0], vec![1, 1]).unwrap();
        let c_prev = g.constant(vec![0.0], vec![1, 1]).unwrap();
        let (h, c) = lstm_step(&mut g, x, h_prev, c_prev, &gates).unwrap();
        let sig1 = 1.0 / (1.0 + libm::exp(-1.0));
        let c_want = sig1 * libm::tanh(1.0);
        let h_want = sig1 * libm::tanh(c_want);
        assert!((g.data(c)[0] - c_want).abs() < 1e-12);
        assert!((g.data(h)[0] - h_want).abs() < 1e-12);
        assert!((c_want - 0.5568).abs() < 1e-4);
        assert!((h_want - 0.3696).abs() < 1e-4);
    }

    #[test]
    fn lstm_three_step_grad_check() {
        let spec = KernelSpec::lstm(3, 2, 1, 2, 3);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(25);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let x_id = store
            .register(
                "input".into(),
                alloc::vec![1, 3, 2],
                (0..6).map(|i| 0.25 * i as f64 - 0.6).collect(),
            )
            .unwrap();
        let all: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let report = grad_check(
            &mut store,
            &all,
            |s, g, b| {
                let x = b.leaf(g, s, x_id)?;
                let y = params.forward(&spec, g, s, b, x)?;
                let sq = g.mul(y, y)?;
                g.mean_all(sq)
            },
            DEFAULT_STEP,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn lstm_kernel_single_step_degenerate() {
        let spec = KernelSpec::lstm(1, 2, 1, 3, 2);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(6);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(vec![0.4, -0.9], vec![1, 1, 2], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 3]);

        // Oracle: one explicit lstm_step plus the affine projection.
        let p = match &params {
            KernelParams::Lstm(p) => p.clone(),
            _ => unreachable!(),
        };
        let ids = [p.w_f, p.w_i, p.w_c, p.w_o, p.b_f, p.b_i, p.b_c, p.b_o];
        let gates = bind_gates(&mut g, &mut bind, &store, &ids);
        let x2 = g.leaf(vec![0.4, -0.9], vec![1, 2], false).unwrap();
        let h0 = g.constant(vec![0.0, 0.0], vec![1, 2]).unwrap();
        let c0 = g.constant(vec![0.0, 0.0], vec![1, 2]).unwrap();
        let (h, _) = lstm_step(&mut g, x2, h0, c0, &gates).unwrap();
        let pw = bind.leaf(&mut g, &store, p.proj_w).unwrap();
        let pb = bind.leaf(&mut g, &store, p.proj_b).unwrap();
        let want = g.matmul(h, pw).unwrap();
        let want = g.add_bcast(want, pb).unwrap();
        for (a, b) in g.data(y).iter().zip(g.data(want)) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn lstm_kernel_matches_unrolled_oracle() {
        // 4-step random sequence equals stepping the cell by hand.
        let spec = KernelSpec::lstm(4, 2, 1, 3, 2);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(40);
        let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
        let xd: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut g = Graph::new();
        let mut bind = Binding::for_store(&store);
        let x = g.leaf(xd.clone(), vec![1, 4, 2], false).unwrap();
        let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();

        let p = match &params {
            KernelParams::Lstm(p) => p.clone(),
            _ => unreachable!(),
        };
        let ids = [p.w_f, p.w_i, p.w_c, p.w_o, p.b_f, p.b_i, p.b_c, p.b_o];
        let gates = bind_gates(&mut g, &mut bind, &store, &ids);
        let mut h = g.constant(vec![0.0, 0.0], vec![1, 2]).unwrap();
        let mut c = g.constant(vec![0.0, 0.0], vec![1, 2]).unwrap();
        let mut hs = Vec::new();
        for t in 0..4 {
            let x_t = g.leaf(xd[t * 2..(t + 1) * 2].to_vec(), vec![1, 2], false).unwrap();
            let (h_t, c_t) = lstm_step(&mut g, x_t, h, c, &gates).unwrap();
            hs.push(h_t);
            h = h_t;
            c = c_t;
        }
        let cat = g.concat(&hs, 1).unwrap();
        let pw = bind.leaf(&mut g, &store, p.proj_w).unwrap();
        let pb = bind.leaf(&mut g, &store, p.proj_b).unwrap();
        let want = g.matmul(cat, pw).unwrap();
        let want = g.add_bcast(want, pb).unwrap();
        for (a, b) in g.data(y).iter().zip(g.data(want)) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn kernel_forward_is_deterministic() {
        for kind in [KernelKind::Linear, KernelKind::Mlp, KernelKind::Transformer, KernelKind::Lstm] {
            let spec = match kind {
                KernelKind::Linear => KernelSpec::linear(2, 2, 1, 4),
                KernelKind::Mlp => KernelSpec::mlp(2, 2, 1, 4, 3),
                KernelKind::Transformer => KernelSpec::transformer(2, 2, 1, 4, 4, 2, 1),
                KernelKind::Lstm => KernelSpec::lstm(2, 2, 1, 4, 3),
            };
            let mut store = ParamStore::new();
            let mut rng = Rng::new(77);
            let params = KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
            let xd: Vec<f64> = (0..4).map(|i| 0.3 * i as f64).collect();
            let run = || {
                let mut g = Graph::new();
                let mut bind = Binding::for_store(&store);
                let x = g.leaf(xd.clone(), vec![1, 2, 2], false).unwrap();
                let y = params.forward(&spec, &mut g, &store, &mut bind, x).unwrap();
                g.data(y).to_vec()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn param_count_matches_registry() {
        for spec in [
            KernelSpec::linear(3, 1, 1, 8),
            KernelSpec::mlp(4, 2, 1, 8, 16),
            KernelSpec::transformer(4, 8, 1, 8, 8, 2, 2),
            KernelSpec::transformer(1, 8, 4, 8, 8, 2, 1),
            KernelSpec::lstm(4, 8, 1, 8, 8),
            KernelSpec::lstm(1, 8, 4, 8, 8),
        ] {
            let mut store = ParamStore::new();
            let mut rng = Rng::new(1);
            KernelParams::init(&spec, "k", &mut store, &mut rng).unwrap();
            assert_eq!(store.scalar_count(), param_count(&spec), "spec {spec:?}");
        }
    }

    #[test]
    fn spec_validation_rejects_misuse() {
        assert!(KernelSpec {
            kind: KernelKind::Linear,
            l_in: 2,
            m_in: 1,
            l_out: 1,
            m_out: 2,
            hidden: Some(3),
            heads: None,
            blocks: None
        }
        .validate()
        .is_err());
        assert!(KernelSpec::transformer(2, 2, 1, 2, 5, 2, 1).validate().is_err()); // 5 % 2 != 0
        assert!(KernelSpec::transformer(3, 2, 2, 2, 4, 2, 1).validate().is_err()); // neither side is one token
        assert!(KernelSpec::lstm(0, 1, 1, 1, 2).validate().is_err());
    }
}
