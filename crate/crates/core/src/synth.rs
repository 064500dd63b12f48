//! Synthetic paired hemodynamic recordings.
//!
//! Each trial carries two participants' 40-feature epochs (20 measurement
//! sites × {HbO, HbR}). Active sites respond with a canonical double-gamma
//! HRF; HbR mirrors HbO with opposite sign. In the coupled condition (label
//! 1) the two participants' response jitter and slow latent fluctuation are
//! more strongly correlated and the response amplitude is shifted.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::Structure;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE_HZ: f64 = 7.8125;
pub const N_SITES: usize = 20;
pub const N_FEATURES: usize = 2 * N_SITES;
pub const DEFAULT_WINDOW_S: f64 = 11.0;

const FTRIAL_MAGIC: &[u8; 8] = b"FTRIAL01";

/// Unnormalized SPM double gamma: `t⁵e⁻ᵗ/5! − (1/6)·t¹⁵e⁻ᵗ/15!`.
fn double_gamma(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    const GAMMA_6: f64 = 120.0;
    const GAMMA_16: f64 = 1_307_674_368_000.0;
    let e = (-t).exp();
    t.powi(5) * e / GAMMA_6 - t.powi(15) * e / GAMMA_16 / 6.0
}

fn hrf_peak() -> f64 {
    static PEAK: OnceLock<f64> = OnceLock::new();
    *PEAK.get_or_init(|| {
        // Coarse grid, then golden-section refinement around the maximum.
        let (mut best_t, mut best) = (0.0, 0.0);
        for i in 0..=3200 {
            let t = i as f64 * 0.01;
            let v = double_gamma(t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        let (mut a, mut b) = (best_t - 0.01, best_t + 0.01);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if double_gamma(c) > double_gamma(d) {
                b = d;
            } else {
                a = c;
            }
        }
        double_gamma((a + b) / 2.0)
    })
}

/// Canonical double-gamma HRF at `t` seconds after onset, peak-normalized
/// to 1. Zero for `t ≤ 0`.
pub fn canonical_hrf(t: f64) -> f64 {
    double_gamma(t) / hrf_peak()
}

/// Number of samples in a window, rounding half up.
pub fn samples_for_window(window_s: f64) -> usize {
    (window_s * SAMPLE_RATE_HZ + 0.5).floor() as usize
}

/// HRF sampled at the acquisition rate, shifted by `onset_s`.
pub fn hrf_template(n_samples: usize, onset_s: f64) -> Vec<f64> {
    (0..n_samples)
        .map(|i| canonical_hrf(i as f64 / SAMPLE_RATE_HZ - onset_s))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chromophore {
    HbO,
    HbR,
}

/// 20 sites × 2 chromophores. Feature `i < 20` is HbO of site `i + 1`;
/// feature `i ≥ 20` is HbR of site `i − 19`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelLayout {
    /// Region name per site, index 0 is site 1.
    pub regions: Vec<String>,
}

impl Default for ChannelLayout {
    fn default() -> Self {
        let half = ["lPFC", "lPFC", "dlPFC", "dlPFC", "vmPFC", "vmPFC", "FPA", "FPA", "FPA", "FPA"];
        let regions = ["left", "right"]
            .iter()
            .flat_map(|side| half.iter().map(move |r| format!("{side} {r}")))
            .collect();
        Self { regions }
    }
}

impl ChannelLayout {
    pub fn n_features(&self) -> usize {
        2 * self.regions.len()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site == 0 || site > self.regions.len() {
            return Err(Error::Contract(format!(
                "site {site} outside 1..={}",
                self.regions.len()
            )));
        }
        Ok(())
    }

    pub fn hbo_feature(&self, site: usize) -> Result<usize> {
        self.check_site(site)?;
        Ok(site - 1)
    }

    pub fn hbr_feature(&self, site: usize) -> Result<usize> {
        self.check_site(site)?;
        Ok(site - 1 + self.regions.len())
    }

    /// `(site, chromophore)` of a feature index.
    pub fn feature_site(&self, feature: usize) -> (usize, Chromophore) {
        let n = self.regions.len();
        if feature < n {
            (feature + 1, Chromophore::HbO)
        } else {
            (feature - n + 1, Chromophore::HbR)
        }
    }

    pub fn region(&self, feature: usize) -> &str {
        &self.regions[self.feature_site(feature).0 - 1]
    }

    /// Human-readable label, e.g. `CH4 HbO site 5 (left vmPFC)`.
    pub fn feature_label(&self, feature: usize) -> String {
        let (site, chrom) = self.feature_site(feature);
        let c = match chrom {
            Chromophore::HbO => "HbO",
            Chromophore::HbR => "HbR",
        };
        format!("CH{feature} {c} site {site} ({})", self.region(feature))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageType {
    Negative,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relationship {
    Friend,
    Stranger,
}

impl fmt::Display for ImageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
        })
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Friend => "friend",
            Self::Stranger => "stranger",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub dyad: u32,
    pub trial: u32,
    pub image_type: ImageType,
    pub relationship: Relationship,
}

/// One paired epoch. `d1`, `d2` are `[40, T]`, feature-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub d1: Tensor,
    pub d2: Tensor,
    pub label: u8,
    pub meta: TrialMeta,
}

/// Generator knobs. Sites are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Sites carrying the evoked response (and the condition effect).
    pub active_sites: Vec<usize>,
    /// Peak HbO response amplitude `a`.
    pub amplitude: f64,
    /// HbR response as a (negated) fraction of HbO.
    pub hbr_ratio: f64,
    /// Inter-participant correlation of the shared response components,
    /// indexed by label.
    pub coupling: [f64; 2],
    /// Relative amplitude increase on active sites under label 1.
    pub coupling_shift: f64,
    /// Std of the relative per-participant amplitude jitter (clipped at 3σ).
    pub jitter_std: f64,
    /// Std of the slow latent fluctuation added to active sites.
    pub latent_std: f64,
    /// White measurement noise std (clipped at 5σ).
    pub noise_std: f64,
    /// Amplitude of the slowest drift sinusoid; the others are 1/2 and 1/3 of it.
    pub drift_amplitude: f64,
    /// Stimulus onset within the epoch, seconds.
    pub onset_s: f64,
    pub window_s: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            active_sites: vec![5, 11],
            amplitude: 1.0,
            hbr_ratio: 0.5,
            coupling: [0.2, 0.7],
            coupling_shift: 0.6,
            jitter_std: 0.2,
            latent_std: 0.3,
            noise_std: 0.3,
            drift_amplitude: 0.1,
            onset_s: 0.0,
            window_s: DEFAULT_WINDOW_S,
        }
    }
}

impl GenConfig {
    /// All stochastic components switched off.
    pub fn noise_free(mut self) -> Self {
        self.jitter_std = 0.0;
        self.latent_std = 0.0;
        self.noise_std = 0.0;
        self.drift_amplitude = 0.0;
        self
    }

    pub fn n_samples(&self) -> usize {
        samples_for_window(self.window_s)
    }

    pub fn validate(&self, layout: &ChannelLayout) -> Result<()> {
        for &s in &self.active_sites {
            layout.check_site(s)?;
        }
        let non_neg = [
            ("amplitude", self.amplitude),
            ("hbr_ratio", self.hbr_ratio),
            ("jitter_std", self.jitter_std),
            ("latent_std", self.latent_std),
            ("noise_std", self.noise_std),
            ("drift_amplitude", self.drift_amplitude),
            ("onset_s", self.onset_s),
        ];
        for (name, v) in non_neg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Contract(format!("{name} must be finite and non-negative")));
            }
        }
        if self.coupling.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Contract("coupling must lie in [0, 1]".into()));
        }
        if !(self.coupling_shift.is_finite() && self.coupling_shift > -1.0) {
            return Err(Error::Contract("coupling_shift must exceed -1".into()));
        }
        if !(self.window_s > 0.0) || self.n_samples() == 0 {
            return Err(Error::Contract("window must contain at least one sample".into()));
        }
        Ok(())
    }

    /// Upper bound on `|value|` implied by the clipping of every component.
    pub fn amplitude_bound(&self) -> f64 {
        let shift = self.coupling_shift.max(0.0);
        let response = self.amplitude * (1.0 + shift + 3.0 * self.jitter_std);
        let latent = self.latent_std * 6f64.sqrt() * 2f64.sqrt();
        let drift = self.drift_amplitude * (1.0 + 0.5 + 1.0 / 3.0);
        response + latent + drift + 5.0 * self.noise_std
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn clipped_normal(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= limit {
            return z;
        }
    }
}

/// Unit-variance sum of three random sinusoids in `[f_lo, f_hi]` Hz.
fn slow_wave(rng: &mut ChaCha8Rng, n: usize, f_lo: f64, f_hi: f64) -> Vec<f64> {
    let comps: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(f_lo..f_hi), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let scale = (2.0f64 / 3.0).sqrt();
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE_HZ;
            comps
                .iter()
                .map(|(f, p)| scale * (2.0 * PI * f * t + p).sin())
                .sum()
        })
        .collect()
}

/// Generates one paired trial from an already-positioned random stream.
pub fn generate_dyad_trial(
    rng: &mut ChaCha8Rng,
    label: u8,
    cfg: &GenConfig,
    layout: &ChannelLayout,
    meta: TrialMeta,
) -> Result<Trial> {
    if label > 1 {
        return Err(Error::Contract(format!("label must be 0 or 1, got {label}")));
    }
    cfg.validate(layout)?;
    let n = cfg.n_samples();
    let nf = layout.n_features();
    let rho = cfg.coupling[label as usize];
    let (w_shared, w_own) = (rho.sqrt(), (1.0 - rho).sqrt());
    let template = hrf_template(n, cfg.onset_s);
    let shift = if label == 1 { cfg.coupling_shift } else { 0.0 };

    // Shared components first so both participants draw them identically.
    let shared_jitter = clipped_normal(rng, 3.0);
    let shared_latent = slow_wave(rng, n, 0.1, 0.4);

    let mut streams = Vec::with_capacity(2);
    for _ in 0..2 {
        let own_jitter = clipped_normal(rng, 3.0);
        // Clip the mixture, not just its parts, to keep the stated bound.
        let z = (w_shared * shared_jitter + w_own * own_jitter).clamp(-3.0, 3.0);
        let gain = cfg.amplitude * (1.0 + shift + cfg.jitter_std * z);
        let own_latent = slow_wave(rng, n, 0.1, 0.4);
        let response: Vec<f64> = (0..n)
            .map(|i| {
                gain * template[i]
                    + cfg.latent_std * (w_shared * shared_latent[i] + w_own * own_latent[i])
            })
            .collect();

        let mut data = vec![0.0; nf * n];
        for &site in &cfg.active_sites {
            let o = layout.hbo_feature(site)?;
            let r = layout.hbr_feature(site)?;
            for i in 0..n {
                data[o * n + i] += response[i];
                data[r * n + i] -= cfg.hbr_ratio * response[i];
            }
        }
        for f in 0..nf {
            let row = &mut data[f * n..(f + 1) * n];
            if cfg.drift_amplitude > 0.0 {
                for (k, band) in [(0.01, 0.03), (0.03, 0.06), (0.06, 0.1)].iter().enumerate() {
                    let amp = cfg.drift_amplitude / (k + 1) as f64;
                    let f0 = rng.gen_range(band.0..band.1);
                    let ph = rng.gen_range(0.0..2.0 * PI);
                    for (i, v) in row.iter_mut().enumerate() {
                        *v += amp * (2.0 * PI * f0 * i as f64 / SAMPLE_RATE_HZ + ph).sin();
                    }
                }
            }
            if cfg.noise_std > 0.0 {
                for v in row.iter_mut() {
                    *v += cfg.noise_std * clipped_normal(rng, 5.0);
                }
            }
        }
        streams.push(Tensor::new(vec![nf, n], data)?);
    }
    let d2 = streams.pop().unwrap();
    let d1 = streams.pop().unwrap();
    Ok(Trial {
        d1,
        d2,
        label,
        meta,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub layout: ChannelLayout,
    pub sample_rate_hz: f64,
    pub window_s: f64,
    pub gen_config: GenConfig,
    pub seed: u64,
}

/// Random stream for one trial: the seed picks the key, the trial id the stream.
pub fn trial_rng(seed: u64, trial_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id);
    rng
}

/// Balanced corpus: for every dyad, `per_condition` trials of each label.
pub fn build_dataset(seed: u64, n_dyads: usize, per_condition: usize, cfg: &GenConfig) -> Result<TrialSet> {
    if n_dyads == 0 || per_condition == 0 {
        return Err(Error::Contract("dyad and per-condition counts must be at least 1".into()));
    }
    let layout = ChannelLayout::default();
    cfg.validate(&layout)?;
    let mut trials = Vec::with_capacity(n_dyads * per_condition * 2);
    let mut id = 0u32;
    for dyad in 0..n_dyads {
        let relationship = if dyad % 2 == 0 {
            Relationship::Friend
        } else {
            Relationship::Stranger
        };
        for j in 0..per_condition {
            let image_type = if j % 2 == 0 {
                ImageType::Negative
            } else {
                ImageType::Neutral
            };
            for label in [0u8, 1] {
                let meta = TrialMeta {
                    dyad: dyad as u32,
                    trial: id,
                    image_type,
                    relationship,
                };
                let mut rng = trial_rng(seed, id as u64);
                trials.push(generate_dyad_trial(&mut rng, label, cfg, &layout, meta)?);
                id += 1;
            }
        }
    }
    Ok(TrialSet {
        trials,
        layout,
        sample_rate_hz: SAMPLE_RATE_HZ,
        window_s: cfg.window_s,
        gen_config: cfg.clone(),
        seed,
    })
}

/// Orients both streams: channel-first `[40, T]`, time-first `[T, 40]`.
pub fn orient(trial: &Trial, structure: Structure) -> Result<(Tensor, Tensor)> {
    match structure {
        Structure::ChannelFirst => Ok((trial.d1.clone(), trial.d2.clone())),
        Structure::TimeFirst => Ok((trial.d1.t()?, trial.d2.t()?)),
    }
}

/// `(tokens, features per token)` for an orientation.
pub fn token_geometry(n_features: usize, n_samples: usize, structure: Structure) -> (usize, usize) {
    match structure {
        Structure::ChannelFirst => (n_features, n_samples),
        Structure::TimeFirst => (n_samples, n_features),
    }
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.trials.first().map_or(0, |t| t.d1.cols())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.trials.iter().map(|t| t.label).collect()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let ones = self.trials.iter().filter(|t| t.label == 1).count();
        [self.len() - ones, ones]
    }

    /// Subset by index, keeping metadata.
    pub fn subset(&self, idx: &[usize]) -> TrialSet {
        TrialSet {
            trials: idx.iter().map(|&i| self.trials[i].clone()).collect(),
            layout: self.layout.clone(),
            sample_rate_hz: self.sample_rate_hz,
            window_s: self.window_s,
            gen_config: self.gen_config.clone(),
            seed: self.seed,
        }
    }

    /// Serializes to the FTRIAL v1 container.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let nf = self.layout.n_features();
        let t = self.n_samples();
        for tr in &self.trials {
            if tr.d1.shape() != [nf, t] || tr.d2.shape() != [nf, t] {
                return Err(Error::Contract("all trials must share one shape".into()));
            }
        }
        let per_trial = 2 * nf * t * 4;
        let manifest: Vec<TrialRecord> = self
            .trials
            .iter()
            .enumerate()
            .map(|(i, tr)| TrialRecord {
                dyad: tr.meta.dyad,
                trial: tr.meta.trial,
                label: tr.label,
                image_type: tr.meta.image_type,
                relationship: tr.meta.relationship,
                offset: (i * per_trial) as u64,
            })
            .collect();
        let header = FtrialHeader {
            format: "FTRIAL".into(),
            version: 1,
            layout: self.layout.clone(),
            sample_rate_hz: self.sample_rate_hz,
            window_s: self.window_s,
            n_features: nf,
            n_samples: t,
            gen_config: self.gen_config.clone(),
            seed: self.seed,
            trials: manifest,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + per_trial * self.len());
        out.extend_from_slice(FTRIAL_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for tr in &self.trials {
            for v in tr.d1.data().iter().chain(tr.d2.data()) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrialSet> {
        if bytes.len() < 12 || &bytes[..8] != FTRIAL_MAGIC {
            return Err(Error::Format("missing FTRIAL01 magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if 12 + hlen > bytes.len() {
            return Err(Error::Format(format!(
                "header length {hlen} exceeds file size {}",
                bytes.len()
            )));
        }
        let header: FtrialHeader = serde_json::from_slice(&bytes[12..12 + hlen])?;
        if header.format != "FTRIAL" || header.version != 1 {
            return Err(Error::Format(format!(
                "unsupported container {} v{}",
                header.format, header.version
            )));
        }
        if header.n_features != header.layout.n_features() {
            return Err(Error::Format("feature count disagrees with layout".into()));
        }
        let body = &bytes[12 + hlen..];
        let (nf, t) = (header.n_features, header.n_samples);
        let per_stream = nf * t * 4;
        let mut trials = Vec::with_capacity(header.trials.len());
        for rec in &header.trials {
            let start = rec.offset as usize;
            let end = start + 2 * per_stream;
            if end > body.len() {
                return Err(Error::Format(format!("trial {} payload truncated", rec.trial)));
            }
            if rec.label > 1 {
                return Err(Error::Format(format!("trial {} has label {}", rec.trial, rec.label)));
            }
            let decode = |chunk: &[u8]| -> Result<Tensor> {
                let data = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect();
                Tensor::new(vec![nf, t], data)
            };
            trials.push(Trial {
                d1: decode(&body[start..start + per_stream])?,
                d2: decode(&body[start + per_stream..end])?,
                label: rec.label,
                meta: TrialMeta {
                    dyad: rec.dyad,
                    trial: rec.trial,
                    image_type: rec.image_type,
                    relationship: rec.relationship,
                },
            });
        }
        Ok(TrialSet {
            trials,
            layout: header.layout,
            sample_rate_hz: header.sample_rate_hz,
            window_s: header.window_s,
            gen_config: header.gen_config,
            seed: header.seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<TrialSet> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Rounds every sample through `f32`, matching what a file round trip yields.
    pub fn quantized(mut self) -> TrialSet {
        for tr in &mut self.trials {
            for t in [&mut tr.d1, &mut tr.d2] {
                t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct TrialRecord {
    dyad: u32,
    trial: u32,
    label: u8,
    image_type: ImageType,
    relationship: Relationship,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct FtrialHeader {
    format: String,
    version: u32,
    layout: ChannelLayout,
    sample_rate_hz: f64,
    window_s: f64,
    n_features: usize,
    n_samples: usize,
    gen_config: GenConfig,
    seed: u64,
    trials: Vec<TrialRecord>,
}

/// Held-out accuracy of a one-feature logistic regression on the mean
/// active-site HbO level (averaged over both participants). Fitted on even
/// trial pairs, scored on odd ones.
pub fn probe_accuracy(set: &TrialSet) -> Result<f64> {
    let feats: Vec<usize> = set
        .gen_config
        .active_sites
        .iter()
        .map(|&s| set.layout.hbo_feature(s))
        .collect::<Result<_>>()?;
    if feats.is_empty() || set.len() < 4 {
        return Err(Error::Contract("probe needs active sites and at least 4 trials".into()));
    }
    let x: Vec<f64> = set
        .trials
        .iter()
        .map(|tr| {
            let mut acc = 0.0;
            for d in [&tr.d1, &tr.d2] {
                for &f in &feats {
                    acc += d.row(f).iter().sum::<f64>() / d.cols() as f64;
                }
            }
            acc / (2 * feats.len()) as f64
        })
        .collect();
    let y = set.labels();
    // Labels alternate within each (label 0, label 1) pair, so split by pair.
    let train: Vec<usize> = (0..x.len()).filter(|i| (i / 2) % 2 == 0).collect();
    let test: Vec<usize> = (0..x.len()).filter(|i| (i / 2) % 2 == 1).collect();

    let mean = train.iter().map(|&i| x[i]).sum::<f64>() / train.len() as f64;
    let sd = (train.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / train.len() as f64)
        .sqrt()
        .max(1e-12);
    let z = |i: usize| (x[i] - mean) / sd;

    // Newton–Raphson on the (lightly ridge-regularized) log-likelihood.
    let (mut w0, mut w1) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 1e-6, 0.0, 1e-6);
        for &i in &train {
            let p = crate::tape::sigmoid(w0 + w1 * z(i));
            let r = p - y[i] as f64;
            g0 += r;
            g1 += r * z(i);
            let w = p * (1.0 - p);
            h00 += w;
            h01 += w * z(i);
            h11 += w * z(i) * z(i);
        }
        g0 += 1e-6 * w0;
        g1 += 1e-6 * w1;
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-300 {
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        w0 -= d0;
        w1 -= d1;
        if d0.abs() + d1.abs() < 1e-12 {
            break;
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| u8::from(w0 + w1 * z(i) > 0.0) == y[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}
