//! Fuzzy attention: a first-order TSK rule base used in place of
//! dot-product self-attention.
//!
//! Each token is projected to a query `q = x·W_q + b_q`. Rule `r` has a
//! Gaussian membership with center `m_r` and per-dimension width `σ_r`; the
//! normalized firing strength of rule `r` on token `i` is
//!
//! ```text
//! f[i, r] = softmax_r( -Σ_d (q[i,d] - m[r,d])² / (2 σ[r,d]²) )
//! ```
//!
//! which equals the product of per-dimension Gaussian memberships divided by
//! its sum over rules, but never underflows. The layer output mixes the rule
//! consequents: `out = f · u`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::param::{ParamId, ParamStore};
use crate::tape::{gaussian_logits, softplus, Tape, Var};
use crate::tensor::Tensor;

/// Lower bound on every rule width; widths are stored as `σ_min + softplus(ρ)`.
pub const SIGMA_MIN: f64 = 1e-3;

/// Default number of rules per fuzzy layer.
pub const DEFAULT_RULES: usize = 10;

/// Concrete rule parameters (widths already positive).
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyRuleBank {
    /// `[R, D]` rule centers in query space.
    pub centers: Tensor,
    /// `[R, D]` strictly positive widths.
    pub widths: Tensor,
    /// `[R, C_out]` per-rule output vectors.
    pub consequents: Tensor,
}

impl FuzzyRuleBank {
    pub fn new(centers: Tensor, widths: Tensor, consequents: Tensor) -> Result<Self> {
        if centers.ndim() != 2 || widths.shape() != centers.shape() {
            return Err(Error::Shape {
                op: "rule bank",
                lhs: centers.shape().to_vec(),
                rhs: widths.shape().to_vec(),
            });
        }
        if consequents.ndim() != 2 || consequents.rows() != centers.rows() {
            return Err(Error::Shape {
                op: "rule bank",
                lhs: centers.shape().to_vec(),
                rhs: consequents.shape().to_vec(),
            });
        }
        if widths.data().iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Contract("rule widths must be positive".into()));
        }
        Ok(Self {
            centers,
            widths,
            consequents,
        })
    }

    pub fn n_rules(&self) -> usize {
        self.centers.rows()
    }

    pub fn query_dim(&self) -> usize {
        self.centers.cols()
    }

    /// Reorders rules (centers, widths and consequents together).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let pick = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&r| t.row(r).to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        Self::new(pick(&self.centers)?, pick(&self.widths)?, pick(&self.consequents)?)
    }
}

fn check_query(q: &Tensor, rules: &FuzzyRuleBank) -> Result<()> {
    if q.ndim() != 2 || q.cols() != rules.query_dim() {
        return Err(Error::Shape {
            op: "firing_strengths",
            lhs: q.shape().to_vec(),
            rhs: rules.centers.shape().to_vec(),
        });
    }
    Ok(())
}

/// Normalized firing strengths `[S, R]` for queries `q: [S, D]`.
pub fn firing_strengths(q: &Tensor, rules: &FuzzyRuleBank) -> Result<Tensor> {
    check_query(q, rules)?;
    gaussian_logits(q, &rules.centers, &rules.widths).softmax(1)
}

/// Firing strengths evaluated the textbook TSK way: multiply Gaussian
/// memberships, then divide by their sum over rules.
///
/// Kept as an independent cross-check of [`firing_strengths`]. Fails with a
/// numeric error when every membership of some token underflows to zero.
pub fn firing_strengths_product_form(q: &Tensor, rules: &FuzzyRuleBank) -> Result<Tensor> {
    check_query(q, rules)?;
    let (s, d) = (q.rows(), q.cols());
    let r = rules.n_rules();
    let mut out = Tensor::zeros(&[s, r]);
    for i in 0..s {
        let mut total = 0.0;
        for k in 0..r {
            let mut mu = 1.0;
            for j in 0..d {
                let diff = q.at(&[i, j]) - rules.centers.at(&[k, j]);
                let w = rules.widths.at(&[k, j]);
                mu *= (-(diff * diff) / (2.0 * w * w)).exp();
            }
            out.set(&[i, k], mu);
            total += mu;
        }
        if total == 0.0 {
            return Err(Error::Numeric(format!(
                "all rule memberships underflow to zero for token {i}"
            )));
        }
        for k in 0..r {
            out.set(&[i, k], out.at(&[i, k]) / total);
        }
    }
    Ok(out)
}

/// Parameter handles of one fuzzy attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyAttentionLayer {
    /// `[C_in, D]`
    pub w_q: ParamId,
    /// `[D]`
    pub b_q: ParamId,
    /// `[R, D]`
    pub centers: ParamId,
    /// `[R, D]` unconstrained width parameter `ρ`, with `σ = σ_min + softplus(ρ)`.
    pub width_raw: ParamId,
    /// `[R, C_out]`
    pub consequents: ParamId,
}

/// Inverse of `σ_min + softplus(ρ)`.
pub fn width_to_raw(sigma: f64) -> f64 {
    let s = sigma - SIGMA_MIN;
    assert!(s > 0.0, "width must exceed SIGMA_MIN");
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

impl FuzzyAttentionLayer {
    /// Registers a freshly initialized layer in `store` under `prefix`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        c_in: usize,
        query_dim: usize,
        c_out: usize,
        rules: usize,
    ) -> Self {
        let w_q = store.add(
            format!("{prefix}.w_q"),
            init::xavier_uniform(rng, c_in, query_dim),
            true,
        );
        let b_q = store.add(format!("{prefix}.b_q"), Tensor::zeros(&[query_dim]), false);
        let centers = store.add(
            format!("{prefix}.centers"),
            init::normal(rng, &[rules, query_dim], 1.0),
            false,
        );
        let width_raw = store.add(
            format!("{prefix}.width_raw"),
            Tensor::filled(&[rules, query_dim], width_to_raw(1.0)),
            false,
        );
        let consequents = store.add(
            format!("{prefix}.consequents"),
            init::normal(rng, &[rules, c_out], 0.02),
            true,
        );
        Self {
            w_q,
            b_q,
            centers,
            width_raw,
            consequents,
        }
    }

    pub fn n_rules(&self, store: &ParamStore) -> usize {
        store.value(self.centers).rows()
    }

    /// Snapshot of the rule parameters with widths materialized.
    pub fn rule_bank(&self, store: &ParamStore) -> FuzzyRuleBank {
        FuzzyRuleBank {
            centers: store.value(self.centers).clone(),
            widths: store.value(self.width_raw).map(|r| SIGMA_MIN + softplus(r)),
            consequents: store.value(self.consequents).clone(),
        }
    }

    /// Records the layer on `tape`; returns `(out [S, C_out], fs [S, R])`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        let w_q = tape.param(store, self.w_q);
        let b_q = tape.param(store, self.b_q);
        let centers = tape.param(store, self.centers);
        let raw = tape.param(store, self.width_raw);
        let u = tape.param(store, self.consequents);

        let xw = tape.matmul(x, w_q)?;
        let q = tape.add_row(xw, b_q)?;
        let sp = tape.softplus(raw);
        let widths = tape.add_scalar(sp, SIGMA_MIN);
        let logits = tape.gaussian_logits(q, centers, widths)?;
        let fs = tape.softmax(logits, 1)?;
        let out = tape.matmul(fs, u)?;
        Ok((out, fs))
    }
}

/// Untracked forward pass: `(out, fs)` for `x: [S, C_in]`.
pub fn fuzzy_attention_forward(
    x: &Tensor,
    layer: &FuzzyAttentionLayer,
    store: &ParamStore,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (out, fs) = layer.forward(&mut tape, store, xv)?;
    Ok((tape.value(out).clone(), tape.value(fs).clone()))
}
