use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use super::{Alternative, Case, SimConfig};
use crate::error::{FadsError, Result};
use crate::survival::{Group, SurvivalDataset};

pub const AR_RHO: f64 = 0.5;
/// `Q` in the cross-group design is `Q_ROWS x Q_COLS` with every entry 0.5.
pub const Q_ROWS: usize = 5;
pub const Q_COLS: usize = 10;
const Q_VALUE: f64 = 0.5;
const BRACKET: (f64, f64) = (1e-3, 1e3);

/// Latent structure of group 1 (and 2) in the factor design.
#[derive(Debug, Clone)]
pub struct FactorTruth {
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub idiosyncratic: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Covariates {
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    /// `[group 1, group 2]`, present in the factor design only.
    pub truth: Option<[FactorTruth; 2]>,
}

#[derive(Debug, Clone)]
pub struct Truth {
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
    pub eta: DVector<f64>,
    pub factors: Option<[FactorTruth; 2]>,
}

#[derive(Debug, Clone)]
pub struct SimSample {
    pub data: SurvivalDataset,
    pub truth: Truth,
    pub censoring_c: f64,
}

/// `n` rows of a stationary AR(1) vector with unit variance and lag-one
/// correlation `rho`.
pub fn ar1_rows<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        if p > 0 {
            x[(i, 0)] = prev;
        }
        for j in 1..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * z;
            x[(i, j)] = prev;
        }
    }
    x
}

fn factor_group<R: Rng + ?Sized>(n: usize, p: usize, k: usize, rng: &mut R) -> FactorTruth {
    let factors = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let loadings = DMatrix::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
    let idiosyncratic = ar1_rows(n, p, AR_RHO, rng);
    FactorTruth {
        factors,
        loadings,
        idiosyncratic,
    }
}

impl FactorTruth {
    pub fn covariates(&self) -> DMatrix<f64> {
        &self.factors * self.loadings.transpose() + &self.idiosyncratic
    }
}

/// The `p2 x p1` matrix with `Q'` in the last `Q_COLS` rows, at the first
/// and last `Q_ROWS` columns, and zeros elsewhere.
pub fn cross_group_map(p1: usize, p2: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(p2, p1);
    for i in p2 - Q_COLS..p2 {
        for j in (0..Q_ROWS).chain(p1 - Q_ROWS..p1) {
            p[(i, j)] = Q_VALUE;
        }
    }
    p
}

pub fn generate_covariates<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Covariates {
    let (n, p1, p2) = (cfg.n, cfg.p1(), cfg.p2());
    match cfg.case {
        Case::One => {
            let g1 = factor_group(n, p1, cfg.k_true, rng);
            let g2 = factor_group(n, p2, cfg.k_true, rng);
            Covariates {
                x1: g1.covariates(),
                x2: g2.covariates(),
                truth: Some([g1, g2]),
            }
        }
        Case::Two => Covariates {
            x1: ar1_rows(n, p1, AR_RHO, rng),
            x2: ar1_rows(n, p2, AR_RHO, rng),
            truth: None,
        },
        Case::Three => {
            let x2 = ar1_rows(n, p2, AR_RHO, rng);
            let eps = ar1_rows(n, p1, AR_RHO, rng);
            let x1 = &x2 * cross_group_map(p1, p2) + eps;
            Covariates { x1, x2, truth: None }
        }
    }
}

/// `(beta1, beta2)` at signal level `b0`.
pub fn coefficients(cfg: &SimConfig, b0: f64) -> (DVector<f64>, DVector<f64>) {
    let p1 = cfg.p1();
    let beta1 = match cfg.alternative {
        Alternative::Sparse => DVector::from_fn(p1, |j, _| if j < 5 { b0 } else { 0.0 }),
        Alternative::Dense => DVector::from_element(p1, b0),
    };
    let beta2 = DVector::from_fn(cfg.p2(), |j, _| if j < 2 { cfg.beta2_signal } else { 0.0 });
    (beta1, beta2)
}

/// Exponential event times with rate `exp(eta)` and uniform `(0, c_max)`
/// censoring. Event-time collisions are re-drawn.
pub fn simulate_survival<R: Rng + ?Sized>(
    eta: &DVector<f64>,
    c_max: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<bool>) {
    let n = eta.len();
    let mut times = vec![0.0; n];
    let mut events = vec![false; n];
    let draw = |i: usize, rng: &mut R, times: &mut [f64], events: &mut [bool]| {
        let u: f64 = rng.sample(Open01);
        let t = -u.ln() / eta[i].exp();
        let c = if c_max.is_finite() {
            c_max * rng.sample::<f64, _>(Open01)
        } else {
            f64::INFINITY
        };
        times[i] = t.min(c);
        events[i] = t <= c;
    };
    for i in 0..n {
        draw(i, rng, &mut times, &mut events);
    }
    loop {
        let mut idx: Vec<usize> = (0..n).filter(|&i| events[i]).collect();
        idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let clash: Vec<usize> = idx
            .windows(2)
            .filter(|w| times[w[0]] == times[w[1]])
            .map(|w| w[1])
            .collect();
        if clash.is_empty() {
            break;
        }
        for i in clash {
            draw(i, rng, &mut times, &mut events);
        }
    }
    (times, events)
}

pub fn generate_dataset<R: Rng + ?Sized>(
    cfg: &SimConfig,
    b0: f64,
    c_max: f64,
    rng: &mut R,
) -> Result<SimSample> {
    cfg.validate()?;
    let cov = generate_covariates(cfg, rng);
    let (beta1, beta2) = coefficients(cfg, b0);
    let eta = &cov.x1 * &beta1 + &cov.x2 * &beta2;
    let (times, events) = simulate_survival(&eta, c_max, rng);
    let data = assemble(times, events, &cov.x1, &cov.x2)?;
    Ok(SimSample {
        data,
        truth: Truth {
            beta1,
            beta2,
            eta,
            factors: cov.truth,
        },
        censoring_c: c_max,
    })
}

/// Dataset with groups `x1` and `x2` side by side.
pub fn assemble(
    times: Vec<f64>,
    events: Vec<bool>,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
) -> Result<SurvivalDataset> {
    let (p1, p2) = (x1.ncols(), x2.ncols());
    let mut x = DMatrix::zeros(x1.nrows(), p1 + p2);
    x.columns_mut(0, p1).copy_from(x1);
    x.columns_mut(p1, p2).copy_from(x2);
    SurvivalDataset::new(
        times,
        events,
        x,
        vec![Group::new("x1", 0..p1), Group::new("x2", p1..p1 + p2)],
    )
}

/// Upper bound `c` of the uniform censoring law giving censoring rate
/// `cfg.target_censoring` at signal `b0`, from `mc_size` simulated subjects.
///
/// The same draws are reused for every trial `c`, so the estimated rate is
/// monotone in `c` and bisection is exact up to the Monte Carlo sample.
pub fn calibrate_censoring<R: Rng + ?Sized>(
    cfg: &SimConfig,
    b0: f64,
    rng: &mut R,
    mc_size: usize,
) -> Result<f64> {
    cfg.validate()?;
    if mc_size < 10_000 {
        return Err(FadsError::Calibration(format!(
            "mc_size must be at least 10000, got {mc_size}"
        )));
    }
    let target = cfg.target_censoring;
    if target == 0.0 {
        warn!("target censoring 0 is only reached as c grows without bound; using c = {}", BRACKET.1);
        return Ok(BRACKET.1);
    }
    let (beta1, beta2) = coefficients(cfg, b0);
    let mut t = Vec::with_capacity(mc_size);
    while t.len() < mc_size {
        let cov = generate_covariates(cfg, rng);
        let eta = &cov.x1 * &beta1 + &cov.x2 * &beta2;
        for e in eta.iter() {
            let u: f64 = rng.sample(Open01);
            t.push(-u.ln() / e.exp());
        }
    }
    let v: Vec<f64> = (0..t.len()).map(|_| rng.sample(Open01)).collect();
    let rate = |c: f64| t.iter().zip(&v).filter(|(ti, vi)| c * **vi < **ti).count() as f64 / t.len() as f64;

    let (mut lo, mut hi) = (BRACKET.0.ln(), BRACKET.1.ln());
    let (r_lo, r_hi) = (rate(BRACKET.0), rate(BRACKET.1));
    if r_hi > target + 0.01 || r_lo < target - 0.01 {
        return Err(FadsError::Calibration(format!(
            "target censoring {target} outside [{r_hi:.3}, {r_lo:.3}] reachable for c in [{}, {}]",
            BRACKET.0, BRACKET.1
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if rate(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = (0.5 * (lo + hi)).exp();
    let achieved = rate(c);
    if (achieved - target).abs() > 0.01 {
        return Err(FadsError::Calibration(format!(
            "closest censoring rate {achieved:.4} misses target {target}"
        )));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(case: Case) -> SimConfig {
        SimConfig {
            case,
            n: 40,
            p: 40,
            ..SimConfig::ci()
        }
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ar1_rows(100_000, 2, AR_RHO, &mut rng);
        let (a, b) = (x.column(0), x.column(1));
        let r = a.dot(&b) / (a.norm() * b.norm());
        assert!((r - 0.5).abs() < 0.01, "{r}");
    }

    #[test]
    fn noiseless_factor_group_has_rank_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = factor_group(30, 20, 2, &mut rng);
        g.idiosyncratic.fill(0.0);
        let sv = g.covariates().singular_values();
        assert!(sv[1] > 1e-6 && sv[2] < 1e-10 * sv[0]);
    }

    #[test]
    fn cross_group_map_layout() {
        let p = cross_group_map(20, 20);
        assert_eq!(p.iter().filter(|v| **v == 0.5).count(), 2 * Q_ROWS * Q_COLS);
        assert_eq!(p[(10, 0)], 0.5);
        assert_eq!(p[(19, 19)], 0.5);
        assert_eq!(p[(9, 0)], 0.0);
        assert_eq!(p[(15, 5)], 0.0);
    }

    #[test]
    fn case_three_without_noise_is_linear_map() {
        let cfg = small(Case::Three);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = generate_covariates(&cfg, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x2 = ar1_rows(cfg.n, cfg.p2(), AR_RHO, &mut rng);
        let eps = ar1_rows(cfg.n, cfg.p1(), AR_RHO, &mut rng);
        assert_eq!(cov.x2, x2);
        let map = cross_group_map(cfg.p1(), cfg.p2());
        assert!((&cov.x1 - eps - x2 * map).amax() < 1e-14);
    }

    #[test]
    fn exponential_mean_without_censoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, d) = simulate_survival(&DVector::zeros(100_000), f64::INFINITY, &mut rng);
        assert!(d.iter().all(|e| *e));
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn uniform_censoring_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, d) = simulate_survival(&DVector::zeros(100_000), 2.23, &mut rng);
        let rate = d.iter().filter(|e| !**e).count() as f64 / d.len() as f64;
        assert!((rate - 0.4).abs() < 0.01, "{rate}");
    }

    #[test]
    fn zero_censoring_window_rejected_by_dataset() {
        let times = vec![0.0; 5];
        let x = DMatrix::zeros(5, 2);
        assert!(SurvivalDataset::ungrouped(times, vec![false; 5], x).is_err());
    }

    #[test]
    fn calibration_for_null_linear_predictor() {
        let cfg = SimConfig {
            beta2_signal: 0.0,
            ..small(Case::Two)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = calibrate_censoring(&cfg, 0.0, &mut rng, 40_000).unwrap();
        assert!((c - 2.23).abs() < 0.05, "{c}");
    }

    #[test]
    fn calibration_monotone_in_target() {
        let base = small(Case::One);
        let at = |target: f64| {
            let cfg = SimConfig {
                target_censoring: target,
                ..base.clone()
            };
            calibrate_censoring(&cfg, 0.0, &mut ChaCha8Rng::seed_from_u64(7), 10_000).unwrap()
        };
        assert!(at(0.3) > at(0.4));
        assert!(at(0.4) > at(0.5));
        assert_eq!(at(0.0), BRACKET.1);
    }
}
