//! AdamW with decoupled weight decay, linear-warmup cosine schedule, and the
//! seeded epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, EvalResult};
use crate::model::{cross_entropy, cross_entropy_var, PairClassifier};
use crate::param::ParamStore;
use crate::synth::{orient, TrialSet};
use crate::tape::Tape;
use crate::tensor::Tensor;

const SPLIT_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_min: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            batch_size: 32,
            max_epochs: 800,
            warmup_epochs: 20,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            lr_min: 0.0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    /// Desk-scale budget: 200 epochs.
    pub fn desk() -> Self {
        Self {
            max_epochs: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr >= 0.0
            && self.batch_size >= 1
            && self.max_epochs >= 1
            && self.warmup_epochs < self.max_epochs
            && self.weight_decay >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.lr_min >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid optimizer config {self:?}")))
        }
    }

    /// Peak learning rate scaled linearly with batch size:
    /// `base_lr · (batch_size · 2) / 256`.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * (self.batch_size * 2) as f64 / 256.0
    }

    /// Learning rate at a (possibly fractional) epoch position in
    /// `[0, max_epochs]`: linear warmup from 0 to the peak, then cosine decay
    /// to `lr_min`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let peak = self.effective_lr();
        let warm = self.warmup_epochs as f64;
        let total = self.max_epochs as f64;
        let e = epoch.clamp(0.0, total);
        if e < warm {
            return peak * e / warm;
        }
        let progress = if total > warm { (e - warm) / (total - warm) } else { 1.0 };
        self.lr_min + (peak - self.lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// First/second moment buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update using the gradients held in `store`. Parameters flagged
/// `decay = false` are never decayed. Any NaN gradient aborts the step
/// before anything is modified.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, cfg: &OptimConfig, lr: f64) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::Contract("learning rate must be non-negative".into()));
    }
    if state.m.len() != store.len() {
        return Err(Error::Contract("optimizer state does not match parameters".into()));
    }
    for (_, p) in store.iter() {
        if p.grad.data().iter().any(|g| g.is_nan()) {
            return Err(Error::Numeric(format!("NaN gradient in {}", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in store.iter_mut().enumerate() {
        let decay = if p.decay { lr * cfg.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let grad = p.grad.data().to_vec();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            *w -= decay * *w;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            *w -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Trial indices for each partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Label-stratified 70/15/15 split, shuffled by `seed`.
pub fn split_trials(labels: &[u8], seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    let mut split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = (n as f64 * 0.15).round() as usize;
        let n_test = (n as f64 * 0.15).round() as usize;
        let n_train = n - n_val - n_test;
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

/// Per-epoch log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy over the epoch's minibatches, before each update.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val: EvalResult,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub split: Split,
}

/// Oriented `(d1, d2, label)` triples ready for the model.
pub type Oriented = Vec<(Tensor, Tensor, u8)>;

pub fn orient_all(trials: &TrialSet, model: &PairClassifier) -> Result<Oriented> {
    let structure = model.config.encoder.structure;
    trials
        .trials
        .iter()
        .map(|t| orient(t, structure).map(|(a, b)| (a, b, t.label)))
        .collect()
}

/// Positive-class scores, labels and mean loss over `items`.
pub fn score(model: &PairClassifier, items: &[&(Tensor, Tensor, u8)]) -> Result<(Vec<f64>, Vec<u8>, f64)> {
    let mut scores = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    let mut loss = 0.0;
    for (d1, d2, y) in items.iter().copied() {
        let p = model.predict(d1, d2)?;
        let l = p.logits.data();
        loss += cross_entropy(&[l[0], l[1]], *y)?;
        scores.push(p.positive_probability());
        labels.push(*y);
    }
    Ok((scores, labels, loss / items.len().max(1) as f64))
}

/// Accumulates the mean cross-entropy gradient of a minibatch into
/// `model.store`. Returns the mean loss and the number of correct predictions.
pub fn accumulate_batch(model: &mut PairClassifier, batch: &[&(Tensor, Tensor, u8)]) -> Result<(f64, usize)> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut correct = 0;
    for (d1, d2, y) in batch.iter().copied() {
        let mut tape = Tape::new();
        let a = tape.constant(d1.clone());
        let b = tape.constant(d2.clone());
        let fwd = model.forward_pair(&mut tape, a, b)?;
        let ce = cross_entropy_var(&mut tape, fwd.logits, *y)?;
        let l = tape.value(ce).item()?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {l}")));
        }
        total += l;
        let z = tape.value(fwd.logits).data();
        correct += usize::from((z[1] > z[0]) == (*y == 1));
        let scaled = tape.scale(ce, scale);
        tape.backward_into(scaled, &mut model.store)?;
    }
    Ok((total * scale, correct))
}

/// Trains with a per-epoch observer; see [`train`].
pub fn train_with(
    model: &mut PairClassifier,
    trials: &TrialSet,
    cfg: &OptimConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    let split = split_trials(&trials.labels(), cfg.seed);
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Contract(format!(
            "empty split: {} train / {} validation trials",
            split.train.len(),
            split.val.len()
        )));
    }
    let data = orient_all(trials, model)?;
    let val: Vec<_> = split.val.iter().map(|&i| &data[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut state = OptimizerState::new(&model.store);
    let mut order = split.train.clone();
    let steps = order.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, f64, usize, Vec<f64>)> = None;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0;
        let mut lr = 0.0;
        for (s, chunk) in order.chunks(cfg.batch_size).enumerate() {
            lr = cfg.lr_at(epoch as f64 + (s as f64 + 0.5) / steps as f64);
            let batch: Vec<_> = chunk.iter().map(|&i| &data[i]).collect();
            model.store.zero_grad();
            let (loss, hits) = accumulate_batch(model, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            correct += hits;
            adamw_step(&mut model.store, &mut state, cfg, lr)?;
        }
        let (scores, labels, val_loss) = score(model, &val)?;
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: epoch_loss / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            val: classification_metrics(&scores, &labels, 0.5)?,
        };
        observer(&rec);
        let pr = rec.val.pr_auc.unwrap_or(0.0);
        let better = match &best {
            None => true,
            Some((bp, bl, _, _)) => pr > *bp || (pr == *bp && val_loss < *bl),
        };
        if better {
            best = Some((pr, val_loss, epoch, model.store.flatten()));
        }
        history.push(rec);
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch");
    model.store.load_flat(&params)?;
    Ok(TrainReport {
        history,
        best_epoch,
        split,
    })
}

/// Trains `model` in place and leaves the best-validation-PR-AUC parameters
/// loaded.
pub fn train(model: &mut PairClassifier, trials: &TrialSet, cfg: &OptimConfig) -> Result<TrainReport> {
    train_with(model, trials, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn effective_lr_scaling() {
        let mut c = OptimConfig::default();
        for (batch, expect) in [(128, 1e-3), (64, 5e-4), (256, 2e-3)] {
            c.batch_size = batch;
            assert!((c.effective_lr() - expect).abs() < 1e-18);
        }
    }

    #[test]
    fn schedule_endpoints_and_continuity() {
        let c = OptimConfig {
            warmup_epochs: 10,
            max_epochs: 100,
            batch_size: 128,
            ..OptimConfig::default()
        };
        assert_eq!(c.lr_at(0.0), 0.0);
        assert_eq!(c.lr_at(10.0), c.effective_lr());
        assert!(c.lr_at(100.0).abs() < 1e-18);
        let left = c.lr_at(10.0 - 1e-9);
        let right = c.lr_at(10.0 + 1e-9);
        assert!((left - right).abs() < 1e-12);
    }

    fn one_param(value: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![value]), decay);
        s
    }

    #[test]
    fn zero_gradient_fixed_point_and_pure_decay() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut s = one_param(2.0, true);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &cfg, 0.1).unwrap();
        assert_eq!(s.value(crate::ParamId(0)).data(), &[2.0]);

        let cfg = OptimConfig::default();
        let mut s = one_param(2.0, true);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &cfg, 0.1).unwrap();
        assert!((s.value(crate::ParamId(0)).data()[0] - 2.0 * 0.995).abs() < 1e-15);

        let mut s = one_param(2.0, false);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &cfg, 0.1).unwrap();
        assert_eq!(s.value(crate::ParamId(0)).data(), &[2.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut s = one_param(0.0, true);
        s.get_mut(crate::ParamId(0)).grad = Tensor::vector(vec![1.0]);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &cfg, 0.1).unwrap();
        // m̂ = 1, v̂ = 1, so the update is lr / (1 + eps).
        let w = s.value(crate::ParamId(0)).data()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let cfg = OptimConfig::default();
        let mut s = one_param(1.0, true);
        s.get_mut(crate::ParamId(0)).grad = Tensor::vector(vec![f64::NAN]);
        let mut st = OptimizerState::new(&s);
        assert!(matches!(adamw_step(&mut s, &mut st, &cfg, 0.1), Err(Error::Numeric(_))));
        assert_eq!(s.value(crate::ParamId(0)).data(), &[1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let s = split_trials(&labels, 7);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 40);
        assert_eq!(s.val.iter().filter(|&&i| labels[i] == 1).count(), 3);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_eq!(s, split_trials(&labels, 7));
    }
}
