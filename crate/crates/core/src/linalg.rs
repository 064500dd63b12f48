//! Singular value decomposition (one-sided Jacobi) and the Moore–Penrose
//! pseudoinverse built on it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default relative cutoff below which singular values count as zero.
pub const DEFAULT_RCOND: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A = U · diag(s) · Vᵀ` of an `m × n` matrix, `k = min(m, n)`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `m × k`, orthonormal columns for nonzero singular values.
    pub u: Tensor,
    /// Non-increasing singular values, length `k`.
    pub s: Vec<f64>,
    /// `n × k`, orthonormal columns.
    pub v: Tensor,
}

pub fn svd(a: &Tensor) -> Result<Svd> {
    if a.ndim() != 2 {
        return Err(Error::Contract(format!("svd expects a matrix, got {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Numeric("svd input is not finite".into()));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if m >= n {
        jacobi_tall(a.data(), m, n)
    } else {
        let at = a.t()?;
        let Svd { u, s, v } = jacobi_tall(at.data(), n, m)?;
        Ok(Svd { u: v, s, v: u })
    }
}

/// Hestenes one-sided Jacobi on a tall (`m ≥ n`) row-major matrix.
fn jacobi_tall(a: &[f64], m: usize, n: usize) -> Result<Svd> {
    // Column-major working copies make the column rotations contiguous.
    let mut u = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            u[j * m + i] = a[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    let tol = f64::EPSILON * m as f64;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (cp, cq) = (&u[p * m..(p + 1) * m], &u[q * m..(q + 1) * m]);
                let alpha: f64 = cp.iter().map(|x| x * x).sum();
                let beta: f64 = cq.iter().map(|x| x * x).sum();
                let gamma: f64 = cp.iter().zip(cq).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, m, p, q, c, s);
                rotate(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut sv: Vec<(f64, usize)> = (0..n)
        .map(|j| (u[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut uo = Tensor::zeros(&[m, n]);
    let mut vo = Tensor::zeros(&[n, n]);
    let mut s = Vec::with_capacity(n);
    for (k, &(sigma, j)) in sv.iter().enumerate() {
        s.push(sigma);
        for i in 0..m {
            let val = if sigma > 0.0 { u[j * m + i] / sigma } else { 0.0 };
            uo.set(&[i, k], val);
        }
        for i in 0..n {
            vo.set(&[i, k], v[j * n + i]);
        }
    }
    Ok(Svd { u: uo, s, v: vo })
}

fn rotate(cols: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q * len);
    let cp = &mut lo[p * len..(p + 1) * len];
    let cq = &mut hi[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Moore–Penrose pseudoinverse `W⁺ = V Σ⁺ Uᵀ` with the default cutoff.
pub fn pinv(w: &Tensor) -> Result<Tensor> {
    pinv_rcond(w, DEFAULT_RCOND)
}

/// Pseudoinverse treating singular values below `rcond · σ_max` as zero.
pub fn pinv_rcond(w: &Tensor, rcond: f64) -> Result<Tensor> {
    let Svd { u, s, v } = svd(w)?;
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let k = s.len();
    let cutoff = rcond * s.first().copied().unwrap_or(0.0);
    let mut out = Tensor::zeros(&[n, m]);
    for (idx, &sigma) in s.iter().enumerate().take(k) {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        for i in 0..n {
            let vi = v.at(&[i, idx]) * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..m {
                let cur = out.at(&[i, j]);
                out.set(&[i, j], cur + vi * u.at(&[j, idx]));
            }
        }
    }
    Ok(out)
}
