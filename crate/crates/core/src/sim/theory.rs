use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::design::{generate_covariates, simulate_survival, assemble};
use super::SimConfig;
use crate::chisq::{chi_square_sf_nc, chi_square_upper_quantile};
use crate::error::{FadsError, Result};
use crate::linalg::symmetrize;
use crate::test_procedure::hessian_blocks;

/// Local power `P(chi2(K, h) > chi2_K(alpha))` with `h = n c' Sigma c`.
pub fn theoretical_power(c: &DVector<f64>, sigma_star: &DMatrix<f64>, n: usize, alpha: f64) -> Result<f64> {
    let k = c.len();
    if k == 0 || sigma_star.shape() != (k, k) {
        return Err(FadsError::Dimension(format!(
            "c has {k} entries, sigma is {}x{}",
            sigma_star.nrows(),
            sigma_star.ncols()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FadsError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let h = n as f64 * c.dot(&(sigma_star * c));
    Ok(power_at_noncentrality(h, k as u32, alpha))
}

pub fn power_at_noncentrality(h: f64, k: u32, alpha: f64) -> f64 {
    if h == 0.0 {
        return alpha;
    }
    chi_square_sf_nc(chi_square_upper_quantile(alpha, k), k, h)
}

/// Large-sample stand-in for the population information of the group-1
/// factor coefficients given the group-2 coefficients, under the factor
/// design with no group-1 effect. `cfg.n` is ignored in favour of `big_n`.
pub fn oracle_sigma_star<R: Rng + ?Sized>(
    cfg: &SimConfig,
    c_max: f64,
    big_n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let cfg = SimConfig { n: big_n, ..cfg.clone() };
    cfg.validate()?;
    let cov = generate_covariates(&cfg, rng);
    let Some([g1, _]) = &cov.truth else {
        return Err(FadsError::InvalidInput("oracle information needs the factor design".into()));
    };
    let (_, beta2) = super::design::coefficients(&cfg, 0.0);
    let eta = &cov.x2 * &beta2;
    let (times, events) = simulate_survival(&eta, c_max, rng);
    let data = assemble(times, events, &cov.x1, &cov.x2)?;
    let k = g1.factors.ncols();
    let (nuisance, beta) = oracle_nuisance(&g1.idiosyncratic, &cov.x2, &beta2);
    let (h_bb, h_bg, h_gg) = hessian_blocks(&data, &nuisance, &g1.factors, &beta, &DVector::zeros(k))?;
    let chol = h_bb
        .cholesky()
        .ok_or_else(|| FadsError::InvalidInput("nuisance information is not positive definite".into()))?;
    let w = chol.solve(&h_bg);
    Ok(symmetrize(&(h_gg - h_bg.tr_mul(&w))))
}

/// `[U1 | X2]` with coefficients `(0, beta2)`: the nuisance block of the
/// factor design under the null.
pub fn oracle_nuisance(
    u1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    beta2: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (a, b) = (u1.ncols(), x2.ncols());
    let mut z = DMatrix::zeros(x2.nrows(), a + b);
    z.columns_mut(0, a).copy_from(u1);
    z.columns_mut(a, b).copy_from(x2);
    let mut beta = DVector::zeros(a + b);
    beta.rows_mut(a, b).copy_from(beta2);
    (z, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_case_is_alpha() {
        let s = DMatrix::identity(2, 2);
        assert_eq!(theoretical_power(&DVector::zeros(2), &s, 200, 0.05).unwrap(), 0.05);
    }

    #[test]
    fn large_noncentrality_has_full_power() {
        assert!(power_at_noncentrality(100.0, 2, 0.05) >= 0.999);
        let s = DMatrix::identity(2, 2) * 2.0;
        let c = DVector::from_vec(vec![0.5, 0.0]);
        // h = 100 * 0.25 * 2 = 50
        let direct = power_at_noncentrality(50.0, 2, 0.05);
        assert_eq!(theoretical_power(&c, &s, 100, 0.05).unwrap(), direct);
    }

    #[test]
    fn power_increases_with_h() {
        let p: Vec<f64> = [0.5, 1.0, 5.0, 10.0].iter().map(|h| power_at_noncentrality(*h, 2, 0.05)).collect();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(p[0] > 0.05);
    }
}
