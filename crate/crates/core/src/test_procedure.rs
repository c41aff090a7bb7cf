//! The factor-adjusted decorrelated score test for one covariate group.
//!
//! With `F` the estimated factors of the tested group and `X` the nuisance
//! covariates (the tested group's idiosyncratic part `U`, then every other
//! group), the pipeline is
//!
//! 1. fit `(beta, gamma)` by LASSO on `[F | X]`, leaving `gamma` unpenalised;
//! 2. take the Hessian blocks `H_bb`, `H_bg`, `H_gg` at `(beta, gamma)`;
//! 3. solve the Dantzig problems for `W`, giving `xi = F - X W`;
//! 4. evaluate the score of `xi` at `(beta, 0)`, i.e. with risk weights
//!    `exp(X beta)` only;
//! 5. `Sigma = H_gg - 2 sym(W' H_bg) + W' H_bb W`, the Hessian of the
//!    likelihood along `xi`, then `T = sqrt(n) Sigma^{-1/2} S`, and compare
//!    `||T||^2` with a chi-squared on `K` degrees of freedom.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chisq::chi_square_sf;
use crate::dantzig::{estimate_projection, lambda2_rate, ProjectionMatrix, DEFAULT_LAMBDA2_SCALE};
use crate::error::{FadsError, Result, Stage, StageExt};
use crate::factor::{fit_factors, fit_factors_auto, DEFAULT_K_BAR};
use crate::linalg::{inverse_sqrt_psd, min_eigenvalue, symmetrize, DEFAULT_MIN_EIG};
use crate::penalized::{
    cross_validate_lambda1, fit_lasso_with, lambda1_rate, LassoOptions, DEFAULT_LAMBDA1_SCALE,
};
use crate::survival::{FeatureAssembly, PartialLikelihood, SurvivalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lambda1Choice {
    Value { value: f64 },
    Rate { scale: f64 },
    CrossValidate { folds: usize, path_length: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lambda2Choice {
    Value { value: f64 },
    Rate { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorCount {
    Fixed { k: usize },
    Ratio { k_bar: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct FadsConfig {
    pub lambda1: Lambda1Choice,
    pub lambda2: Lambda2Choice,
    pub factors: FactorCount,
    /// Levels reported in [`TestResult::rejections`].
    pub alphas: Vec<f64>,
    #[serde(skip)]
    pub lasso: LassoOptions,
    pub dantzig_tol: f64,
    pub min_eig: f64,
}

impl Default for FadsConfig {
    fn default() -> Self {
        FadsConfig {
            lambda1: Lambda1Choice::Rate {
                scale: DEFAULT_LAMBDA1_SCALE,
            },
            lambda2: Lambda2Choice::Rate {
                scale: DEFAULT_LAMBDA2_SCALE,
            },
            factors: FactorCount::Ratio { k_bar: DEFAULT_K_BAR },
            alphas: vec![0.05],
            lasso: LassoOptions::default(),
            dantzig_tol: crate::dantzig::DEFAULT_TOL,
            min_eig: DEFAULT_MIN_EIG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rejection {
    pub alpha: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub lambda1: Option<f64>,
    pub lambda2: f64,
    pub kkt_residual: Option<f64>,
    pub lasso_converged: Option<bool>,
    pub lasso_iterations: Option<usize>,
    pub dantzig_feasibility: Vec<f64>,
    pub dantzig_l1_norms: Vec<f64>,
    pub sigma_min_eig: f64,
    pub factor_eigenvalues: Vec<f64>,
    pub nonzero_beta: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub group: String,
    pub score: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
    /// Absent when `sigma_hat` is degenerate.
    pub t_n: Option<Vec<f64>>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: Option<f64>,
    pub rejections: Vec<Rejection>,
    pub degenerate: bool,
    pub diagnostics: Diagnostics,
}

impl TestResult {
    pub fn k_hat(&self) -> usize {
        self.df
    }

    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.p_value.map(|p| p <= alpha)
    }
}

/// Decorrelated factor score at `(beta_hat, 0)`:
/// `-(1/n) sum_events [xi_i - risk-set mean of xi under exp(X beta_hat)]`.
pub fn decorrelated_score(
    data: &SurvivalDataset,
    nuisance: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    f_hat: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let xi = projected_factors(nuisance, f_hat, w)?;
    if beta_hat.len() != nuisance.ncols() {
        return Err(FadsError::Dimension(format!(
            "beta has {} entries for {} nuisance columns",
            beta_hat.len(),
            nuisance.ncols()
        )));
    }
    let offset = nuisance * beta_hat;
    let pl = PartialLikelihood::new(data, &FeatureAssembly::covariates(xi)?)?.with_offset(offset)?;
    pl.gradient(&DVector::zeros(f_hat.ncols()))
}

/// `xi = F - X W`.
pub fn projected_factors(
    nuisance: &DMatrix<f64>,
    f_hat: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if nuisance.nrows() != f_hat.nrows() || w.nrows() != nuisance.ncols() || w.ncols() != f_hat.ncols() {
        return Err(FadsError::Dimension(format!(
            "X is {}x{}, F is {}x{}, W is {}x{}",
            nuisance.nrows(),
            nuisance.ncols(),
            f_hat.nrows(),
            f_hat.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    if w.nrows() == 0 {
        return Ok(f_hat.clone());
    }
    Ok(f_hat - nuisance * w)
}

/// `(I, -W') H (I, -W')'` = `H_gg - W' H_bg - H_bg' W + W' H_bb W`.
///
/// Equals `H_gg - W' H_bg` when `H_bb W = H_bg` holds exactly; with the
/// Dantzig slack the extra terms keep it the variance of the projected score.
pub fn information_estimate(
    h_bb: &DMatrix<f64>,
    h_bg: &DMatrix<f64>,
    h_gg: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if h_bg.shape() != w.shape()
        || h_gg.nrows() != w.ncols()
        || !h_gg.is_square()
        || h_bb.nrows() != w.nrows()
        || !h_bb.is_square()
    {
        return Err(FadsError::Dimension(format!(
            "H_bb {:?}, H_gg {:?}, H_bg {:?}, W {:?}",
            h_bb.shape(),
            h_gg.shape(),
            h_bg.shape(),
            w.shape()
        )));
    }
    let cross = w.tr_mul(h_bg);
    Ok(symmetrize(&(h_gg - &cross - cross.transpose() + w.tr_mul(&(h_bb * w)))))
}

/// Hessian blocks `(H_bb, H_bg, H_gg)` of the partial likelihood on
/// `[F | X]` at `(gamma_hat, beta_hat)`.
pub fn hessian_blocks(
    data: &SurvivalDataset,
    nuisance: &DMatrix<f64>,
    f_hat: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    gamma_hat: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let k = f_hat.ncols();
    let r = nuisance.ncols();
    let features = FeatureAssembly::factor_adjusted(f_hat, nuisance)?;
    let pl = PartialLikelihood::new(data, &features)?;
    let mut coefs = DVector::zeros(k + r);
    coefs.rows_mut(0, k).copy_from(gamma_hat);
    coefs.rows_mut(k, r).copy_from(beta_hat);
    let h = pl.hessian(&coefs)?;
    Ok((
        h.view((k, k), (r, r)).into_owned(),
        h.view((k, 0), (r, k)).into_owned(),
        h.view((0, 0), (k, k)).into_owned(),
    ))
}

/// Inputs the test statistic needs once factors and nuisance estimates exist.
pub struct TestComponents<'a> {
    pub data: &'a SurvivalDataset,
    pub group: &'a str,
    pub factors: &'a DMatrix<f64>,
    pub nuisance: &'a DMatrix<f64>,
    pub beta_hat: &'a DVector<f64>,
    pub gamma_hat: &'a DVector<f64>,
    pub lambda2: f64,
}

/// Steps 2-5 of the pipeline for given factors and nuisance estimates.
/// Supplying the true factors and coefficients gives the oracle version.
pub fn test_from_components(c: &TestComponents<'_>, config: &FadsConfig) -> Result<TestResult> {
    let k = c.factors.ncols();
    let n = c.data.n() as f64;
    let (h_bb, h_bg, h_gg) =
        hessian_blocks(c.data, c.nuisance, c.factors, c.beta_hat, c.gamma_hat).stage(Stage::Projection)?;
    let projection = if c.nuisance.ncols() == 0 {
        ProjectionMatrix::zeros(0, k, c.lambda2)
    } else {
        estimate_projection(&h_bb, &h_bg, c.lambda2, config.dantzig_tol).stage(Stage::Projection)?
    };
    let score = decorrelated_score(c.data, c.nuisance, c.beta_hat, c.factors, &projection.w)
        .stage(Stage::Score)?;
    let sigma = information_estimate(&h_bb, &h_bg, &h_gg, &projection.w).stage(Stage::Information)?;
    let sigma_min_eig = min_eigenvalue(&sigma);

    let mut diagnostics = Diagnostics {
        lambda2: c.lambda2,
        dantzig_feasibility: projection.feasibility.clone(),
        dantzig_l1_norms: projection.l1_norms.clone(),
        sigma_min_eig,
        ..Diagnostics::default()
    };

    let (t_n, statistic, p_value, degenerate) = match inverse_sqrt_psd(&sigma, config.min_eig) {
        Ok(root) => {
            let t = root * &score * n.sqrt();
            let stat = t.norm_squared();
            (Some(t.iter().copied().collect::<Vec<_>>()), stat, Some(chi_square_sf(stat, k as u32)), false)
        }
        Err(FadsError::Degenerate { min_eig, threshold }) => {
            let msg = format!(
                "information estimate is degenerate (min eigenvalue {min_eig:.3e} < {threshold:.3e})"
            );
            warn!("{msg}");
            diagnostics.warnings.push(msg);
            if score.amax() == 0.0 {
                // no score, no evidence against the null
                (None, 0.0, Some(1.0), true)
            } else {
                (None, f64::NAN, None, true)
            }
        }
        Err(e) => return Err(e.at(Stage::Information)),
    };
    let rejections = config
        .alphas
        .iter()
        .filter_map(|&alpha| p_value.map(|p| Rejection { alpha, reject: p <= alpha }))
        .collect();
    Ok(TestResult {
        group: c.group.to_string(),
        score: score.iter().copied().collect(),
        sigma_hat: sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
        t_n,
        statistic,
        df: k,
        p_value,
        rejections,
        degenerate,
        diagnostics,
    })
}

/// The full test of `H0: beta_m = 0` for group `target_group`.
pub fn run_fads_test(data: &SurvivalDataset, target_group: &str, config: &FadsConfig) -> Result<TestResult> {
    let x_m = data.group_matrix(target_group).stage(Stage::Ingest)?;
    if x_m.ncols() < 2 {
        return Err(FadsError::InvalidInput(format!(
            "group `{target_group}` needs at least 2 columns, has {}",
            x_m.ncols()
        )));
    }
    if data.n() < 20 {
        return Err(FadsError::InvalidInput(format!("need n >= 20, have {}", data.n())));
    }
    let (n, p_m) = (data.n(), x_m.ncols());
    let limit = n.min(p_m) - 1;
    let decomposition = match config.factors {
        FactorCount::Fixed { k } => fit_factors(&x_m, k),
        FactorCount::Ratio { k_bar } => fit_factors_auto(&x_m, k_bar.min(limit)),
    }
    .stage(Stage::Factors)?;
    let f_hat = &decomposition.factors;
    let k = decomposition.k;

    // Nuisance covariates: the target group's idiosyncratic part, then every other group.
    let rest = data.complement_matrix(target_group)?;
    let mut nuisance = DMatrix::zeros(n, p_m + rest.ncols());
    nuisance.columns_mut(0, p_m).copy_from(&decomposition.idiosyncratic);
    nuisance.columns_mut(p_m, rest.ncols()).copy_from(&rest);
    let p_rest = nuisance.ncols();

    let features = FeatureAssembly::factor_adjusted(f_hat, &nuisance).stage(Stage::PenalizedFit)?;
    let weights = features.default_penalty_weights();
    let lambda1 = match config.lambda1 {
        Lambda1Choice::Value { value } => value,
        Lambda1Choice::Rate { scale } => lambda1_rate(n, p_m, p_rest.max(1), scale),
        Lambda1Choice::CrossValidate { folds, path_length, seed } => {
            cross_validate_lambda1(data, &features, &weights, folds, path_length, seed)
                .stage(Stage::PenalizedFit)?
                .selected_lambda
        }
    };
    let pl = PartialLikelihood::new(data, &features).stage(Stage::PenalizedFit)?;
    let fit = fit_lasso_with(
        &pl,
        features.labels(),
        &weights,
        lambda1,
        &DVector::zeros(features.ncols()),
        config.lasso,
    )
    .stage(Stage::PenalizedFit)?;
    if !fit.converged {
        warn!(
            "penalized fit stopped after {} iterations with KKT residual {:.3e}",
            fit.iterations, fit.kkt_residual
        );
    }

    let lambda2 = match config.lambda2 {
        Lambda2Choice::Value { value } => value,
        Lambda2Choice::Rate { scale } => lambda2_rate(n, p_m, p_rest.max(2), scale),
    };
    let mut result = test_from_components(
        &TestComponents {
            data,
            group: target_group,
            factors: f_hat,
            nuisance: &nuisance,
            beta_hat: &fit.beta_minus_m,
            gamma_hat: &fit.gamma_m,
            lambda2,
        },
        config,
    )?;
    debug_assert_eq!(result.df, k);
    let d = &mut result.diagnostics;
    d.lambda1 = Some(lambda1);
    d.kkt_residual = Some(fit.kkt_residual);
    d.lasso_converged = Some(fit.converged);
    d.lasso_iterations = Some(fit.iterations);
    d.factor_eigenvalues = decomposition.eigenvalues.clone();
    d.nonzero_beta = fit.beta_minus_m.iter().filter(|b| **b != 0.0).count();
    d.warnings.extend(decomposition.warnings.iter().cloned());
    if !fit.converged {
        d.warnings.push(format!(
            "penalized fit did not converge (KKT residual {:.3e})",
            fit.kkt_residual
        ));
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> (SurvivalDataset, DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 5 + j * 3) as f64 * 0.613).sin());
        let f = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j) as f64 * 0.291).cos());
        let times: Vec<f64> = (0..n).map(|i| 0.5 + ((i * 11) % n) as f64 + 0.01 * i as f64).collect();
        let events: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let data = SurvivalDataset::ungrouped(times, events, x.clone()).unwrap();
        (data, x, f)
    }

    #[test]
    fn zero_projection_score_is_factor_block_of_plain_score() {
        let (data, x, f) = toy(15);
        let beta = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let s = decorrelated_score(&data, &x, &beta, &f, &DMatrix::zeros(3, 2)).unwrap();
        let features = FeatureAssembly::factor_adjusted(&f, &x).unwrap();
        let mut coefs = DVector::zeros(5);
        coefs.rows_mut(2, 3).copy_from(&beta);
        let full = crate::survival::score(&data, &features, &coefs).unwrap();
        assert!((s - full.rows(0, 2)).amax() < 1e-15);
    }

    #[test]
    fn constant_xi_gives_zero_score() {
        let (data, x, _) = toy(12);
        let f = DMatrix::from_element(12, 1, 2.5);
        let s = decorrelated_score(&data, &x, &DVector::zeros(3), &f, &DMatrix::zeros(3, 1)).unwrap();
        assert!(s[0].abs() < 1e-15);
    }

    #[test]
    fn information_without_projection_is_h_gg() {
        let h_bb = DMatrix::identity(3, 3);
        let h_gg = nalgebra::dmatrix![2.0, 0.5; 0.5, 1.0];
        let h_bg = DMatrix::from_element(3, 2, 0.3);
        let out = information_estimate(&h_bb, &h_bg, &h_gg, &DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(out, h_gg);
        let w = DMatrix::from_element(3, 2, 0.1);
        let out = information_estimate(&h_bb, &h_bg, &h_gg, &w).unwrap();
        assert!((out[(0, 0)] - (2.0 - 0.18 + 0.03)).abs() < 1e-15);
    }

    #[test]
    fn information_with_exact_projection_is_schur_complement() {
        let h_bb = nalgebra::dmatrix![2.0, 0.3; 0.3, 1.0];
        let h_bg = nalgebra::dmatrix![0.4; -0.2];
        let h_gg = nalgebra::dmatrix![1.5];
        let w = h_bb.clone().lu().solve(&h_bg).unwrap();
        let out = information_estimate(&h_bb, &h_bg, &h_gg, &w).unwrap();
        assert!((out[(0, 0)] - (h_gg - w.tr_mul(&h_bg))[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn constant_factors_are_degenerate_with_unit_p_value() {
        let (data, x, _) = toy(25);
        let f = DMatrix::from_element(25, 2, 1.0);
        let r = test_from_components(
            &TestComponents {
                data: &data,
                group: "all",
                factors: &f,
                nuisance: &x,
                beta_hat: &DVector::zeros(3),
                gamma_hat: &DVector::zeros(2),
                lambda2: 0.1,
            },
            &FadsConfig::default(),
        )
        .unwrap();
        assert!(r.degenerate);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(1.0));
        assert!(r.t_n.is_none());
    }

    #[test]
    fn duplicated_factor_is_degenerate() {
        let (data, x, f) = toy(25);
        let mut dup = DMatrix::zeros(25, 2);
        dup.set_column(0, &f.column(0));
        dup.set_column(1, &f.column(0));
        let r = test_from_components(
            &TestComponents {
                data: &data,
                group: "all",
                factors: &dup,
                nuisance: &x,
                beta_hat: &DVector::zeros(3),
                gamma_hat: &DVector::zeros(2),
                lambda2: 10.0,
            },
            &FadsConfig::default(),
        )
        .unwrap();
        assert!(r.degenerate);
        assert!(r.p_value.is_none());
        assert!(r.diagnostics.sigma_min_eig.abs() < 1e-12);
    }
}
