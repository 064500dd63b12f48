//! Post-norm transformer encoder whose attention sublayers are individually
//! selectable between fuzzy attention and scaled dot-product attention.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::{FuzzyAttentionLayer, DEFAULT_RULES};
use crate::init;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Fuzzy,
    Dot,
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fuzzy" => Ok(Self::Fuzzy),
            "dot" => Ok(Self::Dot),
            other => Err(Error::Contract(format!("unknown attention kind {other:?}"))),
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fuzzy => "fuzzy",
            Self::Dot => "dot",
        })
    }
}

/// Orientation of an epoch before it is tokenized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Tokens are channels; token features are timepoints.
    ChannelFirst,
    /// Tokens are timepoints; token features are channels.
    TimeFirst,
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "channel-first" => Ok(Self::ChannelFirst),
            "time-first" => Ok(Self::TimeFirst),
            other => Err(Error::Contract(format!("unknown structure {other:?}"))),
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ChannelFirst => "channel-first",
            Self::TimeFirst => "time-first",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub d_model: usize,
    pub ffn_hidden: usize,
    pub attention_kinds: Vec<AttentionKind>,
    pub rules: usize,
    pub structure: Structure,
    /// Maximum number of tokens (rows of the positional table).
    pub max_tokens: usize,
    /// Features per token of the oriented raw input.
    pub token_features: usize,
}

impl EncoderConfig {
    /// Defaults (depth 3, d_model 64, ffn 128, all-fuzzy, 10 rules) for the
    /// given token geometry.
    pub fn new(structure: Structure, max_tokens: usize, token_features: usize) -> Self {
        Self {
            depth: 3,
            d_model: 64,
            ffn_hidden: 128,
            attention_kinds: vec![AttentionKind::Fuzzy; 3],
            rules: DEFAULT_RULES,
            structure,
            max_tokens,
            token_features,
        }
    }

    /// Sets the depth with a uniform attention kind.
    pub fn with_uniform(mut self, depth: usize, kind: AttentionKind) -> Self {
        self.depth = depth;
        self.attention_kinds = vec![kind; depth];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Contract("encoder depth must be at least 1".into()));
        }
        if self.attention_kinds.len() != self.depth {
            return Err(Error::Contract(format!(
                "{} attention kinds for depth {}",
                self.attention_kinds.len(),
                self.depth
            )));
        }
        if self.d_model == 0 || self.ffn_hidden == 0 || self.rules == 0 {
            return Err(Error::Contract(
                "d_model, ffn_hidden and rules must be positive".into(),
            ));
        }
        if self.max_tokens == 0 || self.token_features == 0 {
            return Err(Error::Contract("token geometry must be positive".into()));
        }
        Ok(())
    }

    pub fn fuzzy_layer_count(&self) -> usize {
        self.attention_kinds
            .iter()
            .filter(|k| **k == AttentionKind::Fuzzy)
            .count()
    }
}

/// Every non-empty subset of `depth` layers made fuzzy (the rest dot), in
/// order of subset size, then lexicographically.
pub fn replacement_grid(depth: usize) -> Vec<Vec<AttentionKind>> {
    let mut masks: Vec<u32> = (1..(1u32 << depth)).collect();
    masks.sort_by_key(|m| {
        let bits: Vec<usize> = (0..depth).filter(|i| m & (1 << i) != 0).collect();
        (bits.len(), bits)
    });
    masks
        .into_iter()
        .map(|m| {
            (0..depth)
                .map(|i| {
                    if m & (1 << i) != 0 {
                        AttentionKind::Fuzzy
                    } else {
                        AttentionKind::Dot
                    }
                })
                .collect()
        })
        .collect()
}

/// Single-head scaled dot-product self-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct DotAttention {
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
}

impl DotAttention {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, d: usize) -> Self {
        let mut proj = |name: &str| {
            let w = store.add(format!("{prefix}.w_{name}"), init::xavier_uniform(rng, d, d), true);
            let b = store.add(format!("{prefix}.b_{name}"), Tensor::zeros(&[d]), false);
            (w, b)
        };
        let (w_q, b_q) = proj("q");
        let (w_k, b_k) = proj("k");
        let (w_v, b_v) = proj("v");
        Self {
            w_q,
            b_q,
            w_k,
            b_k,
            w_v,
            b_v,
        }
    }

    /// Returns `(out [S, d], attention [S, S])`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let affine = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<Var> {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let y = tape.matmul(x, wv)?;
            tape.add_row(y, bv)
        };
        let q = affine(tape, self.w_q, self.b_q)?;
        let k = affine(tape, self.w_k, self.b_k)?;
        let v = affine(tape, self.w_v, self.b_v)?;
        let d_k = tape.value(k).cols() as f64;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, 1.0 / d_k.sqrt());
        let attn = tape.softmax(scaled, 1)?;
        let out = tape.matmul(attn, v)?;
        Ok((out, attn))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttentionSublayer {
    Fuzzy(FuzzyAttentionLayer),
    Dot(DotAttention),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub attention: AttentionSublayer,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

/// Output of one block: the new hidden state and, for fuzzy sublayers, the
/// firing strengths.
pub struct BlockOutput {
    pub hidden: Var,
    pub firing: Option<Var>,
}

impl EncoderBlock {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        kind: AttentionKind,
        cfg: &EncoderConfig,
    ) -> Self {
        let d = cfg.d_model;
        let attention = match kind {
            AttentionKind::Fuzzy => AttentionSublayer::Fuzzy(FuzzyAttentionLayer::init(
                store,
                rng,
                &format!("{prefix}.fuzzy"),
                d,
                d,
                d,
                cfg.rules,
            )),
            AttentionKind::Dot => {
                AttentionSublayer::Dot(DotAttention::init(store, rng, &format!("{prefix}.dot"), d))
            }
        };
        let ln1_gamma = store.add(format!("{prefix}.ln1.gamma"), Tensor::filled(&[d], 1.0), false);
        let ln1_beta = store.add(format!("{prefix}.ln1.beta"), Tensor::zeros(&[d]), false);
        let ffn_w1 = store.add(
            format!("{prefix}.ffn.w1"),
            init::xavier_uniform(rng, d, cfg.ffn_hidden),
            true,
        );
        let ffn_b1 = store.add(format!("{prefix}.ffn.b1"), Tensor::zeros(&[cfg.ffn_hidden]), false);
        let ffn_w2 = store.add(
            format!("{prefix}.ffn.w2"),
            init::xavier_uniform(rng, cfg.ffn_hidden, d),
            true,
        );
        let ffn_b2 = store.add(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d]), false);
        let ln2_gamma = store.add(format!("{prefix}.ln2.gamma"), Tensor::filled(&[d], 1.0), false);
        let ln2_beta = store.add(format!("{prefix}.ln2.beta"), Tensor::zeros(&[d]), false);
        Self {
            attention,
            ln1_gamma,
            ln1_beta,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            ln2_gamma,
            ln2_beta,
        }
    }

    pub fn kind(&self) -> AttentionKind {
        match self.attention {
            AttentionSublayer::Fuzzy(_) => AttentionKind::Fuzzy,
            AttentionSublayer::Dot(_) => AttentionKind::Dot,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<BlockOutput> {
        let (attn_out, firing) = match &self.attention {
            AttentionSublayer::Fuzzy(layer) => {
                let (o, fs) = layer.forward(tape, store, x)?;
                (o, Some(fs))
            }
            AttentionSublayer::Dot(layer) => (layer.forward(tape, store, x)?.0, None),
        };
        let res1 = tape.add(x, attn_out)?;
        let g1 = tape.param(store, self.ln1_gamma);
        let b1 = tape.param(store, self.ln1_beta);
        let h = tape.layer_norm(res1, g1, b1, LAYER_NORM_EPS)?;

        let w1 = tape.param(store, self.ffn_w1);
        let fb1 = tape.param(store, self.ffn_b1);
        let w2 = tape.param(store, self.ffn_w2);
        let fb2 = tape.param(store, self.ffn_b2);
        let z = tape.matmul(h, w1)?;
        let z = tape.add_row(z, fb1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        let z = tape.add_row(z, fb2)?;

        let res2 = tape.add(h, z)?;
        let g2 = tape.param(store, self.ln2_gamma);
        let b2 = tape.param(store, self.ln2_beta);
        let hidden = tape.layer_norm(res2, g2, b2, LAYER_NORM_EPS)?;
        Ok(BlockOutput { hidden, firing })
    }
}

/// Per-token affine embedding plus a learned positional table.
#[derive(Clone, Debug, PartialEq)]
pub struct InputEmbedding {
    pub w_e: ParamId,
    pub b_e: ParamId,
    pub positional: ParamId,
}

impl InputEmbedding {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &EncoderConfig) -> Self {
        let w_e = store.add(
            "embed.w",
            init::xavier_uniform(rng, cfg.token_features, cfg.d_model),
            true,
        );
        let b_e = store.add("embed.b", Tensor::zeros(&[cfg.d_model]), false);
        let positional = store.add(
            "embed.positional",
            init::normal(rng, &[cfg.max_tokens, cfg.d_model], 0.02),
            false,
        );
        Self { w_e, b_e, positional }
    }

    /// `raw [S, token_features]` to `[S, d_model]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, raw: Var) -> Result<Var> {
        let t = tape.value(raw);
        let max = store.value(self.positional).rows();
        let w_rows = store.value(self.w_e).rows();
        if t.ndim() != 2 || t.cols() != w_rows {
            return Err(Error::Shape {
                op: "embed_input",
                lhs: t.shape().to_vec(),
                rhs: store.value(self.w_e).shape().to_vec(),
            });
        }
        let s = t.rows();
        if s > max {
            return Err(Error::Contract(format!(
                "sequence of {s} tokens exceeds the configured maximum {max}"
            )));
        }
        let w = tape.param(store, self.w_e);
        let b = tape.param(store, self.b_e);
        let pos = tape.param(store, self.positional);
        let y = tape.matmul(raw, w)?;
        let y = tape.add_row(y, b)?;
        let p = if s == max { pos } else { tape.slice_rows(pos, 0, s)? };
        tape.add(y, p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding: InputEmbedding,
    pub blocks: Vec<EncoderBlock>,
}

/// Tape handles produced by [`Encoder::encode`].
pub struct Encoded {
    pub hidden: Var,
    /// Firing strengths of every fuzzy sublayer, shallowest first.
    pub firing: Vec<Var>,
}

impl Encoder {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let embedding = InputEmbedding::init(store, rng, &config);
        let blocks = config
            .attention_kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| EncoderBlock::init(store, rng, &format!("block{i}"), kind, &config))
            .collect();
        Ok(Self {
            config,
            embedding,
            blocks,
        })
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, raw: Var) -> Result<Encoded> {
        let mut h = self.embedding.forward(tape, store, raw)?;
        let mut firing = Vec::new();
        for block in &self.blocks {
            let out = block.forward(tape, store, h)?;
            h = out.hidden;
            firing.extend(out.firing);
        }
        Ok(Encoded { hidden: h, firing })
    }

    /// Fuzzy sublayers in depth order.
    pub fn fuzzy_layers(&self) -> Vec<&FuzzyAttentionLayer> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.attention {
                AttentionSublayer::Fuzzy(f) => Some(f),
                AttentionSublayer::Dot(_) => None,
            })
            .collect()
    }
}

/// Untracked [`Encoder::encode`] on an oriented `[S, C]` input.
pub fn encode(raw: &Tensor, encoder: &Encoder, store: &ParamStore) -> Result<(Tensor, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let x = tape.constant(raw.clone());
    let enc = encoder.encode(&mut tape, store, x)?;
    let fs = enc.firing.iter().map(|&v| tape.value(v).clone()).collect();
    Ok((tape.value(enc.hidden).clone(), fs))
}
