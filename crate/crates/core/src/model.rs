//! Paired-stream classifier: one shared encoder per participant, mean pooling
//! over tokens, concatenation, and a two-layer MLP head with two logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::init;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self {
            encoder,
            head_hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Architecture (parameter handles) plus the store holding the values.
#[derive(Clone, Debug)]
pub struct PairClassifier {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: ClassifierHead,
    pub store: ParamStore,
}

/// Tape handles for one paired forward pass.
pub struct PairForward {
    pub logits: Var,
    pub pooled: [Var; 2],
    pub firing: [Vec<Var>; 2],
}

impl PairClassifier {
    /// Builds and initializes a model from a seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.head_hidden == 0 {
            return Err(Error::Contract("head_hidden must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, &mut rng, config.encoder.clone())?;
        let d = config.encoder.d_model;
        let h = config.head_hidden;
        let head = ClassifierHead {
            w1: store.add("head.w1", init::xavier_uniform(&mut rng, 2 * d, h), true),
            b1: store.add("head.b1", Tensor::zeros(&[h]), false),
            w2: store.add("head.w2", init::xavier_uniform(&mut rng, h, 2), true),
            b2: store.add("head.b2", Tensor::zeros(&[2]), false),
        };
        Ok(Self {
            config,
            encoder,
            head,
            store,
        })
    }

    /// Mean-pooled encoder output `[d_model]` and fuzzy firing captures.
    pub fn embed_stream(&self, tape: &mut Tape, raw: Var) -> Result<(Var, Vec<Var>)> {
        let enc = self.encoder.encode(tape, &self.store, raw)?;
        let pooled = tape.mean(enc.hidden, 0)?;
        Ok((pooled, enc.firing))
    }

    pub fn head_forward(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let s = &self.store;
        let x = tape.reshape_row(features)?;
        let w1 = tape.param(s, self.head.w1);
        let b1 = tape.param(s, self.head.b1);
        let w2 = tape.param(s, self.head.w2);
        let b2 = tape.param(s, self.head.b2);
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, w2)?;
        let z = tape.add_row(z, b2)?;
        tape.flatten(z)
    }

    /// Records the paired forward pass for oriented inputs `d1`, `d2`.
    pub fn forward_pair(&self, tape: &mut Tape, d1: Var, d2: Var) -> Result<PairForward> {
        let (s1, s2) = (tape.value(d1).shape(), tape.value(d2).shape());
        if s1 != s2 {
            return Err(Error::Contract(format!(
                "paired streams differ in shape: {s1:?} vs {s2:?}"
            )));
        }
        let (e1, f1) = self.embed_stream(tape, d1)?;
        let (e2, f2) = self.embed_stream(tape, d2)?;
        let joint = tape.concat(&[e1, e2])?;
        let logits = self.head_forward(tape, joint)?;
        Ok(PairForward {
            logits,
            pooled: [e1, e2],
            firing: [f1, f2],
        })
    }

    /// Untracked inference: logits `[2]` plus firing captures of both streams.
    pub fn predict(&self, d1: &Tensor, d2: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let a = tape.constant(d1.clone());
        let b = tape.constant(d2.clone());
        let out = self.forward_pair(&mut tape, a, b)?;
        let grab = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        Ok(Prediction {
            logits: tape.value(out.logits).clone(),
            pooled: [
                tape.value(out.pooled[0]).clone(),
                tape.value(out.pooled[1]).clone(),
            ],
            firing: [grab(&out.firing[0]), grab(&out.firing[1])],
        })
    }

    /// Pooled per-participant embeddings used for synchrony analysis.
    pub fn embeddings_for_ibs(&self, d1: &Tensor, d2: &Tensor) -> Result<(Tensor, Tensor)> {
        let [e1, e2] = self.predict(d1, d2)?.pooled;
        Ok((e1, e2))
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Tensor,
    pub pooled: [Tensor; 2],
    pub firing: [Vec<Tensor>; 2],
}

impl Prediction {
    /// Softmax probability of the positive class (label 1).
    pub fn positive_probability(&self) -> f64 {
        let l = self.logits.data();
        crate::tape::sigmoid(l[1] - l[0])
    }

    /// Argmax of the two logits (ties go to class 0).
    pub fn predicted_label(&self) -> u8 {
        let l = self.logits.data();
        u8::from(l[1] > l[0])
    }
}

/// Records `-log softmax(logits)[label]`.
pub fn cross_entropy_var(tape: &mut Tape, logits: Var, label: u8) -> Result<Var> {
    if label > 1 {
        return Err(Error::Contract(format!("label must be 0 or 1, got {label}")));
    }
    let ls = tape.log_softmax(logits, 0)?;
    let pick = tape.index(ls, label as usize)?;
    Ok(tape.scale(pick, -1.0))
}

/// Cross-entropy of two logits against a binary label.
pub fn cross_entropy(logits: &[f64; 2], label: u8) -> Result<f64> {
    if label > 1 {
        return Err(Error::Contract(format!("label must be 0 or 1, got {label}")));
    }
    let max = logits[0].max(logits[1]);
    let lse = max + ((logits[0] - max).exp() + (logits[1] - max).exp()).ln();
    Ok(lse - logits[label as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.0, 0.0], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[30.0, -30.0], 0).unwrap() < 1e-12);
        let expect = (1.0 + (-2f64).exp()).ln();
        assert!((cross_entropy(&[1.0, 3.0], 1).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.126928).abs() < 1e-6);
        assert!(cross_entropy(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn tape_cross_entropy_agrees() {
        let mut tape = Tape::new();
        let l = tape.input(Tensor::vector(vec![1.0, 3.0]));
        let ce = cross_entropy_var(&mut tape, l, 1).unwrap();
        let v = tape.value(ce).item().unwrap();
        assert!((v - cross_entropy(&[1.0, 3.0], 1).unwrap()).abs() < 1e-15);
        let g = tape.backward(ce).unwrap();
        let p1 = crate::tape::sigmoid(2.0);
        let grad = g.get(l).unwrap();
        assert!((grad[0] - (1.0 - p1)).abs() < 1e-15);
        assert!((grad[1] - (p1 - 1.0)).abs() < 1e-15);
    }
}
