//! Encoder/decoder assembly: kernel wrappers, skip connections, parameter
//! accounting, and attention-cost accounting.
//!
//! The encoder consumes the look-back levels outermost-in (segment-unit
//! first), then the feature levels, ending at a latent of shape
//! `(B, 1, latent_width)`. The decoder mirrors the schedule in reverse
//! against its own output factorization of the horizon. Each look-back
//! level's encoder output is added to the mirrored decoder layer's input;
//! when the two schedules put a different number of segments at a mirrored
//! pair, a small affine adapter mixes the encoder segments down to the
//! decoder's count.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::check::{grad_check, CheckReport, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelKind, KernelParams, KernelSpec};
use crate::params::{Binding, ParamId, ParamStore};
use crate::partition::{self, PartitionPlan};
use crate::rng::Rng;
use crate::tensor::{Graph, TensorId};

/// Which family fills each layer of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Every layer linear.
    Linear,
    /// The two layers closest to the latent use a tanh hidden layer.
    Linear1Hidden,
    /// Every layer uses a tanh hidden layer.
    Linear5Hidden,
    /// The two layers closest to the latent are transformer kernels.
    Transformer,
    /// The two layers closest to the latent are LSTM kernels.
    Lstm,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::Linear1Hidden => "linear-1-hidden",
            Variant::Linear5Hidden => "linear-5-hidden",
            Variant::Transformer => "transformer",
            Variant::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Variant::Linear),
            "linear-1-hidden" => Ok(Variant::Linear1Hidden),
            "linear-5-hidden" => Ok(Variant::Linear5Hidden),
            "transformer" => Ok(Variant::Transformer),
            "lstm" => Ok(Variant::Lstm),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }

    pub const ALL: [Variant; 5] = [
        Variant::Linear,
        Variant::Linear1Hidden,
        Variant::Linear5Hidden,
        Variant::Transformer,
        Variant::Lstm,
    ];

    fn special_kind(&self) -> Option<KernelKind> {
        match self {
            Variant::Linear => None,
            Variant::Linear1Hidden => Some(KernelKind::Mlp),
            Variant::Linear5Hidden => None, // handled as all-mlp
            Variant::Transformer => Some(KernelKind::Transformer),
            Variant::Lstm => Some(KernelKind::Lstm),
        }
    }
}

/// Factorization of the forecast horizon driving the decoder's look-back
/// side: `horizon = unit * prod(multiples)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputSchedule {
    pub horizon: usize,
    pub unit: usize,
    pub multiples: Vec<usize>,
}

impl OutputSchedule {
    pub fn new(horizon: usize, unit: usize, multiples: Vec<usize>) -> Self {
        OutputSchedule { horizon, unit, multiples }
    }

    /// Mirror the encoder schedule (horizon = look-back window).
    pub fn mirror(plan: &PartitionPlan) -> Self {
        OutputSchedule {
            horizon: plan.lookback,
            unit: plan.l_unit,
            multiples: plan.l_multiples.clone(),
        }
    }

    pub fn groups(&self) -> usize {
        self.multiples.iter().product()
    }

    pub fn levels(&self) -> usize {
        1 + self.multiples.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.unit < 1 || self.multiples.iter().any(|&m| m < 1) {
            return Err(Error::Config("output schedule factors must be >= 1".into()));
        }
        let prod = self.unit * self.groups();
        if prod != self.horizon {
            return Err(Error::Config(format!(
                "horizon product mismatch: unit {} x multiples {:?} = {prod}, expected {}",
                self.unit, self.multiples, self.horizon
            )));
        }
        Ok(())
    }
}

/// Optional knobs on top of a variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOverrides {
    /// Hidden width of mlp kernels (default: plan hidden).
    pub mlp_hidden: Option<usize>,
    /// Transformer token width (default: plan hidden).
    pub attn_width: Option<usize>,
    pub heads: usize,
    pub blocks: usize,
    /// LSTM state width (default: plan hidden).
    pub lstm_state: Option<usize>,
    pub use_skips: bool,
    /// Full per-layer kind control; overrides the variant placement.
    pub encoder_kinds: Option<Vec<KernelKind>>,
    pub decoder_kinds: Option<Vec<KernelKind>>,
}

impl Default for KernelOverrides {
    fn default() -> Self {
        KernelOverrides {
            mlp_hidden: None,
            attn_width: None,
            heads: 2,
            blocks: 1,
            lstm_state: None,
            use_skips: true,
            encoder_kinds: None,
            decoder_kinds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Lookback(usize),
    Feature(usize),
}

impl Level {
    pub fn multiple(&self) -> usize {
        match self {
            Level::Lookback(m) | Level::Feature(m) => *m,
        }
    }
}

/// One layer: reshape to segments, add the skip buffer if set, apply the
/// kernel, record the output for the mirrored layer.
#[derive(Debug, Clone)]
pub struct KernelWrapper {
    pub spec: KernelSpec,
    pub params: KernelParams,
    pub level: Level,
    /// Segments this layer processes per batch element.
    pub segments_per_batch: usize,
    pub skip_output: Option<TensorId>,
    pub skip_input: Option<TensorId>,
}

impl KernelWrapper {
    fn forward(
        &mut self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        let numel: usize = g.shape(x).iter().product();
        let seg = self.spec.l_in * self.spec.m_in;
        if !numel.is_multiple_of(seg) {
            return Err(Error::Dimension {
                op: "wrapper_forward",
                detail: format!(
                    "activation of {numel} values cannot form ({}, {}) segments",
                    self.spec.l_in, self.spec.m_in
                ),
            });
        }
        let mut h = g.reshape(x, alloc::vec![numel / seg, self.spec.l_in, self.spec.m_in])?;
        if let Some(skip) = self.skip_input {
            h = g.add(h, skip)?;
        }
        let y = self.params.forward(&self.spec, g, store, bind, h)?;
        self.skip_output = Some(y);
        Ok(y)
    }
}

/// Mixes an encoder skip into the segment count and width the mirrored
/// decoder layer expects. Only present when the two schedules disagree.
#[derive(Debug, Clone)]
pub struct SkipAdapter {
    pub seg_w: ParamId,
    pub seg_b: ParamId,
    /// Width stage, only when encoder and decoder widths differ.
    pub width_w: Option<(ParamId, ParamId)>,
    pub from_segments: usize,
    pub to_segments: usize,
    pub from_width: usize,
    pub to_width: usize,
}

#[derive(Debug, Clone)]
struct SkipLink {
    enc: usize,
    dec: usize,
    adapter: Option<SkipAdapter>,
}

/// Assembled encoder/decoder with skip buffers. The matching [`ParamStore`]
/// returned by [`build`] is the model's parameter registry.
#[derive(Debug, Clone)]
pub struct KUNetModel {
    pub plan: PartitionPlan,
    pub out: OutputSchedule,
    pub variant: Variant,
    pub overrides: KernelOverrides,
    pub encoder: Vec<KernelWrapper>,
    pub decoder: Vec<KernelWrapper>,
    skips: Vec<SkipLink>,
}

fn pick_kinds(
    variant: Variant,
    count: usize,
    innermost_first: bool,
    custom: &Option<Vec<KernelKind>>,
) -> Result<Vec<KernelKind>> {
    if let Some(kinds) = custom {
        if kinds.len() != count {
            return Err(Error::Config(format!(
                "kind override has {} entries for {count} layers",
                kinds.len()
            )));
        }
        return Ok(kinds.clone());
    }
    let base = match variant {
        Variant::Linear5Hidden => KernelKind::Mlp,
        _ => KernelKind::Linear,
    };
    let mut kinds = alloc::vec![base; count];
    if let Some(special) = variant.special_kind() {
        let n = count.min(2);
        for i in 0..n {
            let idx = if innermost_first { i } else { count - 1 - i };
            kinds[idx] = special;
        }
    }
    Ok(kinds)
}

fn make_spec(
    kind: KernelKind,
    l_in: usize,
    m_in: usize,
    l_out: usize,
    m_out: usize,
    plan: &PartitionPlan,
    ov: &KernelOverrides,
) -> KernelSpec {
    match kind {
        KernelKind::Linear => KernelSpec::linear(l_in, m_in, l_out, m_out),
        KernelKind::Mlp => KernelSpec::mlp(l_in, m_in, l_out, m_out, ov.mlp_hidden.unwrap_or(plan.hidden)),
        KernelKind::Transformer => KernelSpec::transformer(
            l_in,
            m_in,
            l_out,
            m_out,
            ov.attn_width.unwrap_or(plan.hidden),
            ov.heads,
            ov.blocks,
        ),
        KernelKind::Lstm => KernelSpec::lstm(l_in, m_in, l_out, m_out, ov.lstm_state.unwrap_or(plan.hidden)),
    }
}

/// Build the model and its parameter registry. Parameters are drawn from
/// `seed`, layer by layer in a fixed order.
pub fn build(
    plan: &PartitionPlan,
    out: &OutputSchedule,
    variant: Variant,
    overrides: &KernelOverrides,
    seed: u64,
) -> Result<(KUNetModel, ParamStore)> {
    plan.validate()?;
    out.validate()?;
    if plan.latent_len != 1 {
        return Err(Error::Config(format!(
            "latent length {} unsupported: the latent is a single token per batch element",
            plan.latent_len
        )));
    }
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);

    let enc_levels: Vec<Level> = core::iter::once(Level::Lookback(plan.l_unit))
        .chain(plan.l_multiples.iter().map(|&m| Level::Lookback(m)))
        .chain(plan.m_multiples.iter().map(|&m| Level::Feature(m)))
        .collect();
    let enc_count = enc_levels.len();
    let enc_kinds = pick_kinds(variant, enc_count, false, &overrides.encoder_kinds)?;

    let mut encoder = Vec::with_capacity(enc_count);
    for (idx, level) in enc_levels.iter().enumerate() {
        let last = idx == enc_count - 1;
        let m_in = if idx == 0 { plan.m_unit } else { plan.hidden };
        let l_out = if last { plan.latent_len } else { 1 };
        let m_out = if last { plan.latent_width } else { plan.hidden };
        let spec = make_spec(enc_kinds[idx], level.multiple(), m_in, l_out, m_out, plan, overrides);
        let params = KernelParams::init(&spec, &format!("enc{idx}"), &mut store, &mut rng)?;
        let segments_per_batch: usize = enc_levels[idx + 1..].iter().map(|l| l.multiple()).product();
        encoder.push(KernelWrapper {
            spec,
            params,
            level: *level,
            segments_per_batch,
            skip_output: None,
            skip_input: None,
        });
    }

    let dec_levels: Vec<Level> = plan
        .m_multiples
        .iter()
        .rev()
        .map(|&m| Level::Feature(m))
        .chain(out.multiples.iter().rev().map(|&m| Level::Lookback(m)))
        .chain(core::iter::once(Level::Lookback(out.unit)))
        .collect();
    let dec_count = dec_levels.len();
    let dec_kinds = pick_kinds(variant, dec_count, true, &overrides.decoder_kinds)?;

    let mut decoder = Vec::with_capacity(dec_count);
    let mut expanded = 1usize;
    for (idx, level) in dec_levels.iter().enumerate() {
        let last = idx == dec_count - 1;
        let m_in = if idx == 0 { plan.latent_width } else { plan.hidden };
        let m_out = if last { plan.m_unit } else { plan.hidden };
        let spec = make_spec(dec_kinds[idx], 1, m_in, level.multiple(), m_out, plan, overrides);
        let params = KernelParams::init(&spec, &format!("dec{idx}"), &mut store, &mut rng)?;
        decoder.push(KernelWrapper {
            spec,
            params,
            level: *level,
            segments_per_batch: expanded,
            skip_output: None,
            skip_input: None,
        });
        expanded *= level.multiple();
    }

    // Skip links pair look-back levels by distance from the outer ends:
    // encoder layer i-1 (input side) with decoder layer dec_count-i (output
    // side). Feature levels carry no skips.
    let mut skips = Vec::new();
    if overrides.use_skips {
        let pairs = plan.lookback_levels().min(out.levels());
        for i in 1..=pairs {
            let enc_idx = i - 1;
            let dec_idx = dec_count - i;
            let from_segments = encoder[enc_idx].segments_per_batch;
            let to_segments = decoder[dec_idx].segments_per_batch * plan.latent_len.max(1);
            let from_width = encoder[enc_idx].spec.m_out * encoder[enc_idx].spec.l_out;
            let to_width = decoder[dec_idx].spec.m_in;
            let adapter = if from_segments == to_segments && from_width == to_width {
                None
            } else {
                let seg_w = store.register_uniform(
                    format!("skip{i}.seg.w"),
                    alloc::vec![from_segments, to_segments],
                    from_segments,
                    &mut rng,
                )?;
                let seg_b = store.register_uniform(
                    format!("skip{i}.seg.b"),
                    alloc::vec![to_segments],
                    from_segments,
                    &mut rng,
                )?;
                let width_w = if from_width != to_width {
                    let ww = store.register_uniform(
                        format!("skip{i}.width.w"),
                        alloc::vec![from_width, to_width],
                        from_width,
                        &mut rng,
                    )?;
                    let wb = store.register_uniform(
                        format!("skip{i}.width.b"),
                        alloc::vec![to_width],
                        from_width,
                        &mut rng,
                    )?;
                    Some((ww, wb))
                } else {
                    None
                };
                Some(SkipAdapter {
                    seg_w,
                    seg_b,
                    width_w,
                    from_segments,
                    to_segments,
                    from_width,
                    to_width,
                })
            };
            skips.push(SkipLink { enc: enc_idx, dec: dec_idx, adapter });
        }
    }

    let model = KUNetModel {
        plan: plan.clone(),
        out: out.clone(),
        variant,
        overrides: overrides.clone(),
        encoder,
        decoder,
        skips,
    };
    Ok((model, store))
}

impl KUNetModel {
    /// Full encoder -> skip transfer -> decoder pass.
    ///
    /// `x` is `(B, L, M)`; the result is `(B, T, M)`. Skip buffers are
    /// cleared on entry and repopulated during the pass, so one model
    /// instance must not run two passes concurrently.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        x: TensorId,
    ) -> Result<TensorId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.plan.lookback || shape[2] != self.plan.features {
            return Err(Error::Dimension {
                op: "model_forward",
                detail: format!(
                    "expected (B, {}, {}), got {shape:?}",
                    self.plan.lookback, self.plan.features
                ),
            });
        }
        let batch = shape[0];
        for w in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            w.skip_output = None;
            w.skip_input = None;
        }

        let mut h = partition::encode_arrange(g, x, &self.plan)?;
        for wrapper in &mut self.encoder {
            h = wrapper.forward(g, store, bind, h)?;
        }
        let latent_shape = g.shape(h);
        if latent_shape != [batch, self.plan.latent_len, self.plan.latent_width] {
            return Err(Error::Contract(format!(
                "latent shape {latent_shape:?} does not match plan ({batch}, {}, {})",
                self.plan.latent_len, self.plan.latent_width
            )));
        }

        for link in &self.skips {
            let src = self.encoder[link.enc]
                .skip_output
                .ok_or_else(|| Error::Contract("encoder skip buffer empty after pass".into()))?;
            let routed = match &link.adapter {
                None => src,
                Some(a) => apply_adapter(g, store, bind, a, src, batch)?,
            };
            self.decoder[link.dec].skip_input = Some(routed);
        }

        for wrapper in &mut self.decoder {
            h = wrapper.forward(g, store, bind, h)?;
        }
        partition::decode_arrange(g, h, batch, self.out.unit, &self.out.multiples, &self.plan)
    }

    /// Inference convenience: run a fresh graph over raw values.
    pub fn predict(&mut self, store: &ParamStore, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut bind = Binding::for_store(store);
        let x_id = g.constant(
            x.to_vec(),
            alloc::vec![batch, self.plan.lookback, self.plan.features],
        )?;
        let y = self.forward(&mut g, store, &mut bind, x_id)?;
        Ok(g.data(y).to_vec())
    }

    /// Forecast a horizon from a batch of look-back windows; alias of
    /// [`Self::predict`] that names the shapes.
    pub fn forecast(&mut self, store: &ParamStore, window: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.predict(store, window, batch)
    }

    pub fn horizon(&self) -> usize {
        self.out.horizon
    }

    /// Every parameter id, encoder first, then decoder, then adapters.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for w in self.encoder.iter().chain(self.decoder.iter()) {
            w.params.param_ids(&mut ids);
        }
        for link in &self.skips {
            if let Some(a) = &link.adapter {
                ids.extend([a.seg_w, a.seg_b]);
                if let Some((ww, wb)) = a.width_w {
                    ids.extend([ww, wb]);
                }
            }
        }
        ids
    }

    /// Closed-form parameter accounting, layer by layer.
    pub fn count_parameters(&self) -> ParameterReport {
        let mut layers = Vec::new();
        for (i, w) in self.encoder.iter().enumerate() {
            layers.push(LayerCount {
                name: format!("enc{i}"),
                label: kernels::kernel_label(&w.spec),
                count: kernels::param_count(&w.spec),
            });
        }
        for (i, w) in self.decoder.iter().enumerate() {
            layers.push(LayerCount {
                name: format!("dec{i}"),
                label: kernels::kernel_label(&w.spec),
                count: kernels::param_count(&w.spec),
            });
        }
        for (i, link) in self.skips.iter().enumerate() {
            if let Some(a) = &link.adapter {
                let mut count = a.from_segments * a.to_segments + a.to_segments;
                if a.width_w.is_some() {
                    count += a.from_width * a.to_width + a.to_width;
                }
                layers.push(LayerCount {
                    name: format!("skip{}", i + 1),
                    label: format!(
                        "adapter ({}x{} -> {}x{})",
                        a.from_segments, a.from_width, a.to_segments, a.to_width
                    ),
                    count,
                });
            }
        }
        let total = layers.iter().map(|l| l.count).sum();
        ParameterReport { layers, total }
    }

    /// Multiply-accumulate count of attention score computation
    /// (`segments * tokens^2 * width` per block) across one forward pass
    /// with the given batch size.
    pub fn attention_cost(&self, batch: usize) -> u64 {
        let mut total = 0u64;
        for w in self.encoder.iter().chain(self.decoder.iter()) {
            if w.spec.kind == KernelKind::Transformer {
                let tokens = w.spec.tokens() as u64;
                let width = w.spec.hidden.unwrap() as u64;
                let blocks = w.spec.blocks.unwrap() as u64;
                let segments = (batch * w.segments_per_batch) as u64;
                total += segments * tokens * tokens * width * blocks;
            }
        }
        total
    }
}

fn apply_adapter(
    g: &mut Graph,
    store: &ParamStore,
    bind: &mut Binding,
    a: &SkipAdapter,
    src: TensorId,
    batch: usize,
) -> Result<TensorId> {
    // (B*Se, 1, We) -> (B, We, Se) -> segment mix -> (B, Sd, We) -> optional
    // width affine -> (B*Sd, 1, Wd).
    let grouped = g.reshape(src, alloc::vec![batch, a.from_segments, a.from_width])?;
    let swapped = g.permute(grouped, &[0, 2, 1])?;
    let seg_w = bind.leaf(g, store, a.seg_w)?;
    let seg_b = bind.leaf(g, store, a.seg_b)?;
    let mixed = g.matmul(swapped, seg_w)?;
    let mixed = g.add_bcast(mixed, seg_b)?;
    let back = g.permute(mixed, &[0, 2, 1])?;
    let routed = if let Some((ww, wb)) = a.width_w {
        let flat = g.reshape(back, alloc::vec![batch * a.to_segments, a.from_width])?;
        let ww = bind.leaf(g, store, ww)?;
        let wb = bind.leaf(g, store, wb)?;
        let y = g.matmul(flat, ww)?;
        g.add_bcast(y, wb)?
    } else {
        back
    };
    g.reshape(routed, alloc::vec![batch * a.to_segments, 1, a.to_width])
}

#[derive(Debug, Clone)]
pub struct LayerCount {
    pub name: String,
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ParameterReport {
    pub layers: Vec<LayerCount>,
    pub total: usize,
}

/// Finite-difference check of the whole model: every parameter and the
/// input, against `d mean(forward(x)^2)`.
pub fn grad_check_model(
    model: &mut KUNetModel,
    store: &ParamStore,
    batch: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    let mut check_store = store.clone();
    let mut rng = Rng::new(seed ^ 0x5eed);
    let n = batch * model.plan.lookback * model.plan.features;
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x_id = check_store.register(
        "input".into(),
        alloc::vec![batch, model.plan.lookback, model.plan.features],
        data,
    )?;
    let which: Vec<ParamId> = check_store.iter().map(|(id, _)| id).collect();
    grad_check(
        &mut check_store,
        &which,
        |s, g, b| {
            let x = b.leaf(g, s, x_id)?;
            let y = model.forward(g, s, b, x)?;
            let sq = g.mul(y, y)?;
            g.mean_all(sq)
        },
        DEFAULT_STEP,
        tol,
    )
}
