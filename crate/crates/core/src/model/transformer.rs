//! Encoder-decoder forward passes on the autodiff tape.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamSet, TensorId};
use crate::tokens::{TokenId, END_ID};

use super::config::ModelConfig;

/// Per-position role of an encoder input token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    TaskInput,
    Ftr,
    Pad,
}

/// Final encoder states plus the segment layout they were computed over.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub states: TensorId,
    pub segment: Vec<Segment>,
    pub n_x: usize,
    pub n_r: usize,
}

/// Final decoder states and the tied-head logits, one row per decoder input
/// position.
#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    pub states: TensorId,
    pub logits: TensorId,
}

/// Which encoder positions the decoder's cross-attention may see.
#[derive(Debug, Clone)]
pub struct CrossAttnMask {
    pub visible: Vec<bool>,
}

/// The rationale bottleneck: with `bottleneck_on`, only task-input states are
/// visible to the decoder; otherwise everything except padding is.
pub fn build_bottleneck_mask(segment: &[Segment], bottleneck_on: bool) -> Result<CrossAttnMask> {
    if !segment.contains(&Segment::TaskInput) {
        return Err(Error::DegenerateMask(
            "cross-attention mask needs at least one task-input position".into(),
        ));
    }
    let visible = segment
        .iter()
        .map(|s| match s {
            Segment::TaskInput => true,
            Segment::Ftr => !bottleneck_on,
            Segment::Pad => false,
        })
        .collect();
    Ok(CrossAttnMask { visible })
}

#[derive(Debug, Clone, Copy)]
struct LnSlots {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnSlots {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfSlots {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayerSlots {
    ln1: LnSlots,
    attn: AttnSlots,
    ln2: LnSlots,
    ff: FfSlots,
}

#[derive(Debug, Clone, Copy)]
struct DecLayerSlots {
    ln1: LnSlots,
    self_attn: AttnSlots,
    ln2: LnSlots,
    cross_attn: AttnSlots,
    ln3: LnSlots,
    ff: FfSlots,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_emb: usize,
    enc_pos: usize,
    dec_pos: usize,
    enc: Vec<EncLayerSlots>,
    enc_final: LnSlots,
    dec: Vec<DecLayerSlots>,
    dec_final: LnSlots,
}

/// A transformer: config, named parameters, and slot layout.
#[derive(Debug, Clone)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
}

const INIT_STD: f64 = 0.02;

struct Builder<'r> {
    params: ParamSet,
    normal: Normal<f64>,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| self.normal.sample(&mut self.rng))
            .collect();
        self.params
            .add(name, &[rows, cols], data)
            .expect("fresh name")
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnSlots {
        let gamma = self
            .params
            .add(&format!("{prefix}.gamma"), &[d], vec![1.0; d])
            .expect("fresh name");
        let beta = self
            .params
            .add(&format!("{prefix}.beta"), &[d], vec![0.0; d])
            .expect("fresh name");
        LnSlots { gamma, beta }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnSlots {
        AttnSlots {
            wq: self.matrix(&format!("{prefix}.wq"), d, d),
            wk: self.matrix(&format!("{prefix}.wk"), d, d),
            wv: self.matrix(&format!("{prefix}.wv"), d, d),
            wo: self.matrix(&format!("{prefix}.wo"), d, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfSlots {
        let w1 = self.matrix(&format!("{prefix}.w1"), d, d_ff);
        let b1 = self
            .params
            .add(&format!("{prefix}.b1"), &[d_ff], vec![0.0; d_ff])
            .expect("fresh name");
        let w2 = self.matrix(&format!("{prefix}.w2"), d_ff, d);
        let b2 = self
            .params
            .add(&format!("{prefix}.b2"), &[d], vec![0.0; d])
            .expect("fresh name");
        FfSlots { w1, b1, w2, b2 }
    }
}

impl TransformerModel {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut b = Builder {
            params: ParamSet::new(),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
            rng,
        };
        let tok_emb = b.matrix("embed.tok", config.vocab_size, d);
        let enc_pos = b.matrix("enc.pos", config.max_seq_len, d);
        let dec_pos = b.matrix("dec.pos", config.max_seq_len, d);
        let enc = (0..config.n_enc_layers)
            .map(|i| EncLayerSlots {
                ln1: b.ln(&format!("enc.{i}.ln1"), d),
                attn: b.attn(&format!("enc.{i}.attn"), d),
                ln2: b.ln(&format!("enc.{i}.ln2"), d),
                ff: b.ff(&format!("enc.{i}.ff"), d, config.d_ff),
            })
            .collect();
        let enc_final = b.ln("enc.final_ln", d);
        let dec = (0..config.n_dec_layers)
            .map(|i| DecLayerSlots {
                ln1: b.ln(&format!("dec.{i}.ln1"), d),
                self_attn: b.attn(&format!("dec.{i}.self"), d),
                ln2: b.ln(&format!("dec.{i}.ln2"), d),
                cross_attn: b.attn(&format!("dec.{i}.cross"), d),
                ln3: b.ln(&format!("dec.{i}.ln3"), d),
                ff: b.ff(&format!("dec.{i}.ff"), d, config.d_ff),
            })
            .collect();
        let dec_final = b.ln("dec.final_ln", d);
        Ok(Self {
            config,
            params: b.params,
            layout: Layout {
                tok_emb,
                enc_pos,
                dec_pos,
                enc,
                enc_final,
                dec,
                dec_final,
            },
        })
    }

    /// Start a forward pass whose parameter leaves receive gradients.
    pub fn forward(&self) -> Forward<'_> {
        Forward::new(self, true)
    }

    /// Start a forward pass with all parameters bound as constants.
    pub fn forward_frozen(&self) -> Forward<'_> {
        Forward::new(self, false)
    }
}

/// One forward pass: a graph plus lazily bound parameter leaves.
pub struct Forward<'m> {
    model: &'m TransformerModel,
    pub graph: Graph,
    trainable: bool,
    bound: Vec<Option<TensorId>>,
    emb_t: Option<TensorId>,
}

impl<'m> Forward<'m> {
    fn new(model: &'m TransformerModel, trainable: bool) -> Self {
        Self {
            model,
            graph: Graph::new(),
            trainable,
            bound: vec![None; model.params.len()],
            emb_t: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Bind parameter `slot` into the graph. Callers outside the model (the
    /// scorer's projected head, the distillation projections) use this to
    /// pull extra named parameters into the same pass.
    pub fn bind_param(&mut self, slot: usize) -> TensorId {
        self.p(slot)
    }

    /// Bind parameter `slot` into the graph on first use.
    fn p(&mut self, slot: usize) -> TensorId {
        if let Some(id) = self.bound[slot] {
            return id;
        }
        let param = self.model.params.get(slot);
        let id = if self.trainable && param.trainable {
            self.graph
                .param(&param.shape, &param.data, slot)
                .expect("parameter shapes are consistent")
        } else {
            self.graph
                .constant(&param.shape, &param.data)
                .expect("parameter shapes are consistent")
        };
        self.bound[slot] = Some(id);
        id
    }

    /// Transposed token embedding, shared by every tied-head logit
    /// projection in this pass.
    fn emb_transposed(&mut self) -> TensorId {
        if let Some(id) = self.emb_t {
            return id;
        }
        let emb = self.p(self.model.layout.tok_emb);
        let id = self.graph.transpose(emb).expect("embedding is 2-d");
        self.emb_t = Some(id);
        id
    }

    fn layer_norm(&mut self, x: TensorId, slots: LnSlots) -> TensorId {
        let gamma = self.p(slots.gamma);
        let beta = self.p(slots.beta);
        self.graph
            .layer_norm(x, gamma, beta)
            .expect("shapes fixed by layout")
    }

    /// Multi-head attention. `masked_out[q * t_k + k]` hides key `k` from
    /// query `q`.
    fn attention(
        &mut self,
        queries: TensorId,
        keys_values: TensorId,
        slots: AttnSlots,
        masked_out: &[bool],
    ) -> Result<TensorId> {
        let cfg = self.model.config;
        let dh = cfg.head_dim();
        let wq = self.p(slots.wq);
        let wk = self.p(slots.wk);
        let wv = self.p(slots.wv);
        let wo = self.p(slots.wo);
        let q = self.graph.matmul(queries, wq)?;
        let k = self.graph.matmul(keys_values, wk)?;
        let v = self.graph.matmul(keys_values, wv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = self.graph.slice_cols(q, h * dh, dh)?;
            let kh = self.graph.slice_cols(k, h * dh, dh)?;
            let vh = self.graph.slice_cols(v, h * dh, dh)?;
            let kt = self.graph.transpose(kh)?;
            let scores = self.graph.matmul(qh, kt)?;
            let scaled = self.graph.scale(scores, scale);
            let probs = self.graph.softmax_last(scaled, Some(masked_out))?;
            heads.push(self.graph.matmul(probs, vh)?);
        }
        let cat = self.graph.concat_cols(&heads)?;
        self.graph.matmul(cat, wo)}

    fn ff(&mut self, x: TensorId, slots: FfSlots) -> Result<TensorId> {
        let w1 = self.p(slots.w1);
        let b1 = self.p(slots.b1);
        let w2 = self.p(slots.w2);
        let b2 = self.p(slots.b2);
        let h = self.graph.matmul(x, w1)?;
        let h = self.graph.add_row_vec(h, b1)?;
        let h = self.graph.gelu(h);
        let h = self.graph.matmul(h, w2)?;
        self.graph.add_row_vec(h, b2)
    }

    /// Encode `input_ids`. All non-pad positions attend to each other; the
    /// bottleneck, if any, is applied later in cross-attention.
    pub fn encode(&mut self, input_ids: &[TokenId], segment: &[Segment]) -> Result<EncoderOutput> {
        let cfg = self.model.config;
        let t = input_ids.len();
        if t == 0 {
            return Err(Error::SeqLen("encoder input is empty".into()));
        }
        if t != segment.len() {
            return Err(Error::Alignment(format!(
                "{} input ids vs {} segment tags",
                t,
                segment.len()
            )));
        }
        if t > cfg.max_seq_len {
            return Err(Error::SeqLen(format!(
                "encoder input length {t} exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        // Task-input positions first, then rationale, then padding.
        let rank = |s: &Segment| match s {
            Segment::TaskInput => 0,
            Segment::Ftr => 1,
            Segment::Pad => 2,
        };
        if segment.windows(2).any(|w| rank(&w[0]) > rank(&w[1])) {
            return Err(Error::Data(
                "segment tags must be ordered task-input, rationale, pad".into(),
            ));
        }
        let n_x = segment.iter().filter(|s| **s == Segment::TaskInput).count();
        let n_r = segment.iter().filter(|s| **s == Segment::Ftr).count();

        let emb = self.p(self.model.layout.tok_emb);
        let tok = self.graph.embed_rows(emb, input_ids)?;
        let pos_table = self.p(self.model.layout.enc_pos);
        let pos = self.graph.slice_rows(pos_table, 0, t)?;
        let mut h = self.graph.add(tok, pos)?;

        // Keys at pad positions are hidden from every query.
        let mut masked_out = vec![false; t * t];
        for q in 0..t {
            for k in 0..t {
                masked_out[q * t + k] = segment[k] == Segment::Pad;
            }
        }
        let layers = self.model.layout.enc.clone();
        for layer in &layers {
            let x1 = self.layer_norm(h, layer.ln1);
            let attn = self.attention(x1, x1, layer.attn, &masked_out)?;
            h = self.graph.add(h, attn)?;
            let x2 = self.layer_norm(h, layer.ln2);
            let ff = self.ff(x2, layer.ff)?;
            h = self.graph.add(h, ff)?;
        }
        let states = self.layer_norm(h, self.model.layout.enc_final);
        Ok(EncoderOutput {
            states,
            segment: segment.to_vec(),
            n_x,
            n_r,
        })
    }

    /// Replace an encoder output's states with externally supplied values
    /// (used by perturbation probes). The injected states take no gradient.
    pub fn inject_encoder_states(
        &mut self,
        values: &[f64],
        segment: &[Segment],
    ) -> Result<EncoderOutput> {
        let d = self.model.config.d_model;
        if values.len() != segment.len() * d {
            return Err(Error::Dim(format!(
                "injected states have {} values, expected {} x {}",
                values.len(),
                segment.len(),
                d
            )));
        }
        let states = self.graph.constant(&[segment.len(), d], values)?;
        let n_x = segment.iter().filter(|s| **s == Segment::TaskInput).count();
        let n_r = segment.iter().filter(|s| **s == Segment::Ftr).count();
        Ok(EncoderOutput {
            states,
            segment: segment.to_vec(),
            n_x,
            n_r,
        })
    }

    /// Teacher-forced decode. Causal self-attention over `target_ids`,
    /// cross-attention restricted to `mask`-visible encoder positions.
    pub fn decode(
        &mut self,
        target_ids: &[TokenId],
        enc: &EncoderOutput,
        mask: &CrossAttnMask,
    ) -> Result<DecoderOutput> {
        let cfg = self.model.config;
        let t = target_ids.len();
        let te = enc.segment.len();
        if t == 0 {
            return Err(Error::SeqLen("decoder input is empty".into()));
        }
        if t > cfg.max_seq_len {
            return Err(Error::SeqLen(format!(
                "decoder input length {t} exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        if mask.visible.len() != te {
            return Err(Error::Dim(format!(
                "cross-attention mask covers {} positions, encoder has {te}",
                mask.visible.len()
            )));
        }
        if !mask.visible.iter().any(|&v| v) {
            return Err(Error::DegenerateMask(
                "no encoder position is visible".into(),
            ));
        }

        let emb = self.p(self.model.layout.tok_emb);
        let tok = self.graph.embed_rows(emb, target_ids)?;
        let pos_table = self.p(self.model.layout.dec_pos);
        let pos = self.graph.slice_rows(pos_table, 0, t)?;
        let mut h = self.graph.add(tok, pos)?;

        let mut causal = vec![false; t * t];
        for q in 0..t {
            for k in 0..t {
                causal[q * t + k] = k > q;
            }
        }
        let mut cross = vec![false; t * te];
        for q in 0..t {
            for k in 0..te {
                cross[q * te + k] = !mask.visible[k];
            }
        }
        let layers = self.model.layout.dec.clone();
        for layer in &layers {
            let x1 = self.layer_norm(h, layer.ln1);
            let self_attn = self.attention(x1, x1, layer.self_attn, &causal)?;
            h = self.graph.add(h, self_attn)?;
            let x2 = self.layer_norm(h, layer.ln2);
            let cross_attn = self.attention(x2, enc.states, layer.cross_attn, &cross)?;
            h = self.graph.add(h, cross_attn)?;
            let x3 = self.layer_norm(h, layer.ln3);
            let ff = self.ff(x3, layer.ff)?;
            h = self.graph.add(h, ff)?;
        }
        let states = self.layer_norm(h, self.model.layout.dec_final);
        let emb_t = self.emb_transposed();
        let logits = self.graph.matmul(states, emb_t)?;
        Ok(DecoderOutput { states, logits })
    }

    /// Greedy autoregressive decoding: append the argmax token until the end
    /// token appears or `max_len` tokens have been produced. Only the
    /// generation-mode baselines use this.
    pub fn greedy_decode(
        &mut self,
        enc: &EncoderOutput,
        mask: &CrossAttnMask,
        start: TokenId,
        max_len: usize,
    ) -> Result<Vec<TokenId>> {
        let cap = max_len.min(self.model.config.max_seq_len.saturating_sub(1));
        let mut out: Vec<TokenId> = Vec::new();
        loop {
            let mut input = Vec::with_capacity(out.len() + 1);
            input.push(start);
            input.extend_from_slice(&out);
            let dec = self.decode(&input, enc, mask)?;
            let vocab = self.model.config.vocab_size;
            let logits = self.graph.value(dec.logits);
            let last = &logits[(input.len() - 1) * vocab..input.len() * vocab];
            let mut best = 0;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            out.push(best);
            if best == END_ID || out.len() >= cap {
                return Ok(out);
            }
        }
    }
}
