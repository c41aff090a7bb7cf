//! Latent factor estimation for one covariate group.
//!
//! The group matrix `X` (n x p_m) is column-centred and decomposed as
//! `X = F B' + U` with `F'F/n = I_k` and `B'B` diagonal. The solution comes
//! from the top-`k` eigenvectors of the `n x n` Gram matrix `XX'`, which stays
//! small when `p_m >> n`. The number of factors is picked by the largest
//! ratio of consecutive Gram eigenvalues.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{FadsError, Result};
use crate::linalg::sym_eigen_desc;

pub const DEFAULT_K_BAR: usize = 15;

/// Eigenvalues below this fraction of the largest count as zero in the ratio.
const ZERO_EIG_REL: f64 = 1e-12;
/// Relative eigen-gap below which factors are rotation-indeterminate.
const TIED_EIG_REL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct FactorDecomposition {
    pub k: usize,
    /// `F`, n x k, scaled so that `F'F/n = I`.
    #[serde(skip)]
    pub factors: DMatrix<f64>,
    /// `B = X'F/n`, p_m x k.
    #[serde(skip)]
    pub loadings: DMatrix<f64>,
    /// `U = X - F B'`, n x p_m (of the centred `X`).
    #[serde(skip)]
    pub idiosyncratic: DMatrix<f64>,
    /// Leading Gram eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FactorDecomposition {
    /// Share of the total variation of the centred `X` carried by each factor.
    pub fn variance_explained(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let total = center_columns(x).norm_squared();
        self.eigenvalues
            .iter()
            .take(self.k)
            .map(|l| if total > 0.0 { l / total } else { 0.0 })
            .collect()
    }
}

pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// Eigen-decomposition of `XX'` for a centred `X`, descending, with tiny
/// negative round-off clamped to zero.
fn gram_eigen(xc: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let gram = xc * xc.transpose();
    let (mut vals, vecs) = sym_eigen_desc(&gram);
    vals.apply(|v| *v = v.max(0.0));
    (vals, vecs)
}

/// Ratio-method rank from a descending eigenvalue profile: the
/// `k in 1..=k_bar` maximising `lambda_k / lambda_{k+1}`, smallest `k` on ties.
/// A `lambda_{k+1}` below `1e-12 lambda_1` counts as an infinite ratio.
pub fn ratio_rank(eigenvalues: &[f64], k_bar: usize) -> Result<usize> {
    if k_bar == 0 || eigenvalues.len() < k_bar + 1 {
        return Err(FadsError::InvalidInput(format!(
            "ratio method needs {} eigenvalues for k_bar = {k_bar}, have {}",
            k_bar + 1,
            eigenvalues.len()
        )));
    }
    let top = eigenvalues[0];
    if !(top > 0.0) {
        return Err(FadsError::InvalidInput("covariate block has no variation".into()));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=k_bar {
        let next = eigenvalues[k];
        if next < ZERO_EIG_REL * top {
            return Ok(k);
        }
        let r = eigenvalues[k - 1] / next;
        if r > best.1 {
            best = (k, r);
        }
    }
    Ok(best.0)
}

/// Ratio estimate of the number of factors of `x` (centred internally).
pub fn estimate_num_factors(x: &DMatrix<f64>, k_bar: usize) -> Result<usize> {
    check_rank_arg(x, k_bar, "k_bar")?;
    let (vals, _) = gram_eigen(&center_columns(x));
    ratio_rank(vals.as_slice(), k_bar)
}

fn check_rank_arg(x: &DMatrix<f64>, k: usize, name: &str) -> Result<()> {
    let limit = x.nrows().min(x.ncols());
    if k == 0 || k >= limit {
        return Err(FadsError::InvalidInput(format!(
            "{name} = {k} must satisfy 1 <= {name} < min(n, p_m) = {limit}"
        )));
    }
    Ok(())
}

/// PCA fit of a `k`-factor model to `x` (centred internally).
pub fn fit_factors(x: &DMatrix<f64>, k: usize) -> Result<FactorDecomposition> {
    check_rank_arg(x, k, "k")?;
    let xc = center_columns(x);
    let (vals, vecs) = gram_eigen(&xc);
    decompose(&xc, k, &vals, &vecs, k + 1)
}

/// Picks `k` with the ratio method, then fits. Keeps `k_bar + 1` eigenvalues.
pub fn fit_factors_auto(x: &DMatrix<f64>, k_bar: usize) -> Result<FactorDecomposition> {
    check_rank_arg(x, k_bar, "k_bar")?;
    let xc = center_columns(x);
    let (vals, vecs) = gram_eigen(&xc);
    let k = ratio_rank(vals.as_slice(), k_bar)?;
    decompose(&xc, k, &vals, &vecs, k_bar + 1)
}

fn decompose(
    xc: &DMatrix<f64>,
    k: usize,
    vals: &DVector<f64>,
    vecs: &DMatrix<f64>,
    keep: usize,
) -> Result<FactorDecomposition> {
    let n = xc.nrows() as f64;
    let mut warnings = Vec::new();
    let top = vals[0];
    for j in 0..k.min(vals.len() - 1) {
        if top > 0.0 && (vals[j] - vals[j + 1]) < TIED_EIG_REL * top {
            let msg = format!(
                "eigenvalues {} and {} coincide (relative gap < {TIED_EIG_REL:e}); \
                 factors are only identified up to rotation",
                j + 1,
                j + 2
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut factors = vecs.columns(0, k).into_owned() * n.sqrt();
    let mut loadings = xc.tr_mul(&factors) / n;
    for j in 0..k {
        let col = loadings.column(j);
        let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            factors.column_mut(j).neg_mut();
            loadings.column_mut(j).neg_mut();
        }
    }
    let idiosyncratic = xc - &factors * loadings.transpose();
    Ok(FactorDecomposition {
        k,
        factors,
        loadings,
        idiosyncratic,
        eigenvalues: vals.iter().take(keep).copied().collect(),
        warnings,
    })
}

/// `X'X/n` of the column-centred `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 {
        return Err(FadsError::InvalidInput("sample covariance needs n >= 2".into()));
    }
    let xc = center_columns(x);
    let s = xc.tr_mul(&xc) / x.nrows() as f64;
    // Gram products are symmetric only up to summation order
    Ok((&s + s.transpose()) * 0.5)
}
