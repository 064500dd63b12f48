//! Interpretability: per-sample firing reports, group t-maps over
//! (rule, token) cells, center prototypes and inter-brain synchrony.

use serde::{Deserialize, Serialize};

use crate::encoder::{AttentionSublayer, Structure};
use crate::error::{Error, Result};
use crate::fuzzy::FuzzyAttentionLayer;
use crate::linalg::pinv;
use crate::model::PairClassifier;
use crate::param::ParamStore;
use crate::stats::{mean, pearson};
use crate::synth::{orient, ChannelLayout, Trial, TrialSet, SAMPLE_RATE_HZ};
use crate::tensor::Tensor;

pub use crate::stats::{welch_t, TTest};

/// Position of block `layer_index` among the fuzzy sublayers.
fn fuzzy_ordinal(model: &PairClassifier, layer_index: usize) -> Result<(usize, &FuzzyAttentionLayer)> {
    let blocks = &model.encoder.blocks;
    let block = blocks.get(layer_index).ok_or_else(|| {
        Error::Contract(format!(
            "layer {layer_index} out of range for depth {}",
            blocks.len()
        ))
    })?;
    match &block.attention {
        AttentionSublayer::Fuzzy(layer) => {
            let ordinal = blocks[..layer_index]
                .iter()
                .filter(|b| matches!(b.attention, AttentionSublayer::Fuzzy(_)))
                .count();
            Ok((ordinal, layer))
        }
        AttentionSublayer::Dot(_) => Err(Error::Contract(format!(
            "layer {layer_index} uses dot attention and has no rules"
        ))),
    }
}

/// Deepest fuzzy layer, the default target of explanations.
pub fn default_layer(model: &PairClassifier) -> Option<usize> {
    model
        .encoder
        .blocks
        .iter()
        .rposition(|b| matches!(b.attention, AttentionSublayer::Fuzzy(_)))
}

/// Human-readable name of token `s`: a channel under channel-first, a time
/// stamp under time-first.
pub fn token_label(structure: Structure, layout: &ChannelLayout, s: usize) -> String {
    match structure {
        Structure::ChannelFirst => layout.feature_label(s),
        Structure::TimeFirst => time_label(s),
    }
}

fn time_label(i: usize) -> String {
    format!("t={:.3}s", i as f64 / SAMPLE_RATE_HZ)
}

/// Name of raw input feature `f` inside one token.
pub fn feature_label(structure: Structure, layout: &ChannelLayout, f: usize) -> String {
    match structure {
        Structure::ChannelFirst => time_label(f),
        Structure::TimeFirst => layout.feature_label(f),
    }
}

/// Indices of the `k` largest values, lowest index first among ties.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rule: usize,
    pub strength: f64,
    pub top_tokens: Vec<usize>,
    pub top_labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamExplanation {
    pub participant: usize,
    pub rules: Vec<RuleReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleExplanation {
    pub trial: u32,
    pub label: u8,
    pub layer: usize,
    pub positive_probability: f64,
    pub streams: Vec<StreamExplanation>,
}

/// Rule strengths (column means of `fs`) and top-k tokens per rule.
pub fn explain_firing(fs: &Tensor, k: usize, label: impl Fn(usize) -> String) -> Vec<RuleReport> {
    let (s, r) = (fs.rows(), fs.cols());
    (0..r)
        .map(|rule| {
            let col: Vec<f64> = (0..s).map(|i| fs.at(&[i, rule])).collect();
            let top = top_k(&col, k);
            RuleReport {
                rule,
                strength: mean(&col),
                top_labels: top.iter().map(|&i| label(i)).collect(),
                top_tokens: top,
            }
        })
        .collect()
}

/// Firing report for both participants of one trial.
pub fn explain_sample(
    trial: &Trial,
    model: &PairClassifier,
    layout: &ChannelLayout,
    layer_index: usize,
    k: usize,
) -> Result<SampleExplanation> {
    let (ordinal, _) = fuzzy_ordinal(model, layer_index)?;
    let structure = model.config.encoder.structure;
    let (d1, d2) = orient(trial, structure)?;
    let pred = model.predict(&d1, &d2)?;
    let streams = pred
        .firing
        .iter()
        .enumerate()
        .map(|(p, fs)| StreamExplanation {
            participant: p + 1,
            rules: explain_firing(&fs[ordinal], k, |s| token_label(structure, layout, s)),
        })
        .collect();
    Ok(SampleExplanation {
        trial: trial.meta.trial,
        label: trial.label,
        layer: layer_index,
        positive_probability: pred.positive_probability(),
        streams,
    })
}

/// Welch contrast of firing strength between labels for every (rule, token)
/// cell. Each trial contributes the mean of its two participants' firing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRuleMap {
    pub layer: usize,
    pub structure: Structure,
    pub token_labels: Vec<String>,
    /// `[R][S]`, positive when firing is higher under label 1.
    pub t: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub mean_positive: Vec<Vec<f64>>,
    pub mean_negative: Vec<Vec<f64>>,
}

impl GroupRuleMap {
    pub fn shape(&self) -> (usize, usize) {
        (self.t.len(), self.t.first().map_or(0, Vec::len))
    }

    /// `(rule, token)` of the largest finite `|t|`.
    pub fn argmax_abs_t(&self) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (r, row) in self.t.iter().enumerate() {
            for (s, &t) in row.iter().enumerate() {
                if t.is_finite() && best.map_or(true, |(b, _, _)| t.abs() > b) {
                    best = Some((t.abs(), r, s));
                }
            }
        }
        best.map(|(_, r, s)| (r, s))
    }

    /// Fraction of cells with `p < alpha`.
    pub fn significant_fraction(&self, alpha: f64) -> f64 {
        let cells: Vec<f64> = self.p.iter().flatten().copied().collect();
        cells.iter().filter(|&&p| p < alpha).count() as f64 / cells.len() as f64
    }
}

/// Per-trial `[S, R]` firing at `layer_index`, averaged over participants.
pub fn trial_firing(set: &TrialSet, model: &PairClassifier, layer_index: usize) -> Result<Vec<Tensor>> {
    let (ordinal, _) = fuzzy_ordinal(model, layer_index)?;
    let structure = model.config.encoder.structure;
    set.trials
        .iter()
        .map(|t| {
            let (d1, d2) = orient(t, structure)?;
            let pred = model.predict(&d1, &d2)?;
            let [a, b] = &pred.firing;
            a[ordinal].zip_with(&b[ordinal], |x, y| 0.5 * (x + y))
        })
        .collect()
}

/// Builds the map from precomputed firing and labels.
pub fn rule_map_from_firing(
    firing: &[Tensor],
    labels: &[u8],
    layer: usize,
    structure: Structure,
    layout: &ChannelLayout,
) -> Result<GroupRuleMap> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::Contract(format!(
            "group contrast needs at least 2 trials per label, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    let (s, r) = (firing[0].rows(), firing[0].cols());
    let mut map = GroupRuleMap {
        layer,
        structure,
        token_labels: (0..s).map(|i| token_label(structure, layout, i)).collect(),
        t: vec![vec![0.0; s]; r],
        p: vec![vec![0.0; s]; r],
        mean_positive: vec![vec![0.0; s]; r],
        mean_negative: vec![vec![0.0; s]; r],
    };
    for rule in 0..r {
        for tok in 0..s {
            let a: Vec<f64> = pos.iter().map(|&i| firing[i].at(&[tok, rule])).collect();
            let b: Vec<f64> = neg.iter().map(|&i| firing[i].at(&[tok, rule])).collect();
            let test = welch_t(&a, &b)?;
            map.t[rule][tok] = test.t;
            map.p[rule][tok] = test.p;
            map.mean_positive[rule][tok] = mean(&a);
            map.mean_negative[rule][tok] = mean(&b);
        }
    }
    Ok(map)
}

pub fn group_rule_map(set: &TrialSet, model: &PairClassifier, layer_index: usize) -> Result<GroupRuleMap> {
    let firing = trial_firing(set, model, layer_index)?;
    rule_map_from_firing(
        &firing,
        &set.labels(),
        layer_index,
        model.config.encoder.structure,
        &set.layout,
    )
}

/// A rule center mapped back through the query projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub rule: usize,
    pub vector: Vec<f64>,
    /// `‖W_q·x̂ + b_q − m‖₂`
    pub residual: f64,
}

/// `x̂_r = (m_r − b_q)·pinv(W_q)`: the minimum-norm least-squares `x` with
/// `x·W_q + b_q ≈ m_r`.
pub fn prototypes_for(w_q: &Tensor, b_q: &Tensor, centers: &Tensor) -> Result<Vec<Prototype>> {
    let w_pinv = pinv(w_q)?;
    let shifted = Tensor::from_rows(
        &(0..centers.rows())
            .map(|r| {
                centers
                    .row(r)
                    .iter()
                    .zip(b_q.data())
                    .map(|(m, b)| m - b)
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>(),
    )?;
    let x = shifted.matmul(&w_pinv)?;
    let back = x.matmul(w_q)?;
    (0..centers.rows())
        .map(|r| {
            let residual = back
                .row(r)
                .iter()
                .zip(shifted.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Ok(Prototype {
                rule: r,
                vector: x.row(r).to_vec(),
                residual,
            })
        })
        .collect()
}

/// Prototypes in the input space of the fuzzy layer at `layer_index`.
pub fn center_prototypes(model: &PairClassifier, layer_index: usize) -> Result<Vec<Prototype>> {
    let (_, layer) = fuzzy_ordinal(model, layer_index)?;
    layer_prototypes(layer, &model.store)
}

pub fn layer_prototypes(layer: &FuzzyAttentionLayer, store: &ParamStore) -> Result<Vec<Prototype>> {
    prototypes_for(
        store.value(layer.w_q),
        store.value(layer.b_q),
        store.value(layer.centers),
    )
}

/// Prototype of a first-layer rule expressed as a raw token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputPrototype {
    pub rule: usize,
    /// Token position whose positional embedding was removed.
    pub token: usize,
    pub values: Vec<f64>,
    pub labels: Vec<String>,
}

/// Chains the first fuzzy layer's prototypes back through the input
/// embedding: rule `r` maps to the preimage of `x̂_r − b_e − pos[tokens[r]]`
/// under `W_e`. Only defined when block 0 is fuzzy.
pub fn input_prototypes(
    model: &PairClassifier,
    layout: &ChannelLayout,
    tokens: &[usize],
) -> Result<Vec<InputPrototype>> {
    let (_, layer) = fuzzy_ordinal(model, 0)?;
    let store = &model.store;
    let emb = &model.encoder.embedding;
    let pos = store.value(emb.positional);
    let hidden = layer_prototypes(layer, store)?;
    if tokens.len() != hidden.len() {
        return Err(Error::Contract(format!(
            "{} token positions for {} rules",
            tokens.len(),
            hidden.len()
        )));
    }
    let w_e = store.value(emb.w_e);
    let structure = model.config.encoder.structure;
    let labels: Vec<String> = (0..w_e.rows())
        .map(|f| feature_label(structure, layout, f))
        .collect();
    hidden
        .into_iter()
        .zip(tokens)
        .map(|(p, &token)| {
            if token >= pos.rows() {
                return Err(Error::Contract(format!(
                    "token {token} outside the {} positional slots",
                    pos.rows()
                )));
            }
            let offset = store.value(emb.b_e).add(&Tensor::vector(pos.row(token).to_vec()))?;
            let target = Tensor::from_rows(&[p.vector])?;
            let raw = prototypes_for(w_e, &offset, &target)?.remove(0);
            Ok(InputPrototype {
                rule: p.rule,
                token,
                values: raw.vector,
                labels: labels.clone(),
            })
        })
        .collect()
}

/// Token at which each rule fires most on average over `firing` (`[S, R]` each).
pub fn peak_tokens(firing: &[Tensor]) -> Vec<usize> {
    let Some(first) = firing.first() else {
        return vec![];
    };
    let (s, r) = (first.rows(), first.cols());
    (0..r)
        .map(|rule| {
            let avg: Vec<f64> = (0..s)
                .map(|tok| firing.iter().map(|f| f.at(&[tok, rule])).sum::<f64>())
                .collect();
            top_k(&avg, 1)[0]
        })
        .collect()
}

/// Similarity of two participants' embeddings. `None` marks an undefined
/// value (zero variance for Pearson, zero norm for cosine).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbsMetrics {
    pub pearson: Option<f64>,
    pub cosine: Option<f64>,
    pub euclidean: f64,
}

pub fn ibs_metrics(e1: &Tensor, e2: &Tensor) -> Result<IbsMetrics> {
    let (a, b) = (e1.data(), e2.data());
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape {
            op: "ibs_metrics",
            lhs: e1.shape().to_vec(),
            rhs: e2.shape().to_vec(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    let cosine = (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb).sqrt()).clamp(-1.0, 1.0));
    let euclidean = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(IbsMetrics {
        pearson: pearson(a, b),
        cosine,
        euclidean,
    })
}

/// Welch contrast (label 1 minus label 0) of each synchrony metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbsGroupTest {
    pub pearson: TTest,
    pub cosine: TTest,
    pub euclidean: TTest,
    pub per_trial: Vec<IbsMetrics>,
    /// Trials dropped from the Pearson / cosine tests as undefined.
    pub undefined: [usize; 2],
}

pub fn ibs_from_metrics(per_trial: Vec<IbsMetrics>, labels: &[u8]) -> Result<IbsGroupTest> {
    let counts = [0u8, 1].map(|c| labels.iter().filter(|&&l| l == c).count());
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Contract(format!(
            "group contrast needs at least 2 trials per label, got {} and {}",
            counts[1], counts[0]
        )));
    }
    let split = |f: &dyn Fn(&IbsMetrics) -> Option<f64>| {
        let mut g = [vec![], vec![]];
        for (m, &l) in per_trial.iter().zip(labels) {
            if let Some(v) = f(m) {
                g[l as usize].push(v);
            }
        }
        g
    };
    let [p0, p1] = split(&|m| m.pearson);
    let [c0, c1] = split(&|m| m.cosine);
    let [e0, e1] = split(&|m| Some(m.euclidean));
    let undefined = [
        labels.len() - p0.len() - p1.len(),
        labels.len() - c0.len() - c1.len(),
    ];
    Ok(IbsGroupTest {
        pearson: welch_t(&p1, &p0)?,
        cosine: welch_t(&c1, &c0)?,
        euclidean: welch_t(&e1, &e0)?,
        per_trial,
        undefined,
    })
}

pub fn ibs_group_test(set: &TrialSet, model: &PairClassifier) -> Result<IbsGroupTest> {
    let structure = model.config.encoder.structure;
    let per_trial = set
        .trials
        .iter()
        .map(|t| {
            let (d1, d2) = orient(t, structure)?;
            let (e1, e2) = model.embeddings_for_ibs(&d1, &d2)?;
            ibs_metrics(&e1, &e2)
        })
        .collect::<Result<Vec<_>>>()?;
    ibs_from_metrics(per_trial, &set.labels())
}

/// Everything `explain` writes, as one JSON document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub layer: usize,
    pub structure: Structure,
    pub samples: Vec<SampleExplanation>,
    pub rule_map: GroupRuleMap,
    pub prototypes: Vec<Prototype>,
    pub input_prototypes: Option<Vec<InputPrototype>>,
    pub ibs: IbsSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IbsSummary {
    pub pearson: TTest,
    pub cosine: TTest,
    pub euclidean: TTest,
    pub undefined: [usize; 2],
}

impl From<&IbsGroupTest> for IbsSummary {
    fn from(g: &IbsGroupTest) -> Self {
        Self {
            pearson: g.pearson,
            cosine: g.cosine,
            euclidean: g.euclidean,
            undefined: g.undefined,
        }
    }
}
