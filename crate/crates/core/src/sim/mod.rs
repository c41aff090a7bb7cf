//! Monte Carlo size and power studies for the two-group Cox design.
//!
//! Group `x1` is tested, group `x2` carries the nuisance signal
//! `beta2 = (s, s, 0, ..., 0)`. Event times are exponential with rate
//! `exp(eta)` and censoring is uniform on `(0, c)` with `c` calibrated to the
//! target censoring rate.

mod design;
mod theory;

use std::time::Instant;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FadsError, Result};
use crate::test_procedure::{run_fads_test, FadsConfig};

pub use design::{
    ar1_rows, assemble, calibrate_censoring, coefficients, cross_group_map, generate_covariates,
    generate_dataset, simulate_survival, Covariates, FactorTruth, SimSample, Truth, AR_RHO, Q_COLS,
    Q_ROWS,
};
pub use theory::{oracle_nuisance, oracle_sigma_star, power_at_noncentrality, theoretical_power};

pub const SCHEMA_VERSION: u32 = 1;
/// Replicate failure share above which a report is flagged invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.05;
pub const DEFAULT_CALIBRATION_SIZE: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Case {
    /// Pervasive factor model in both groups.
    One,
    /// AR(0.5) covariates, no exact factor structure.
    Two,
    /// `x1` depends linearly on `x2`.
    Three,
}

impl std::str::FromStr for Case {
    type Err = FadsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Case::One),
            "2" | "two" => Ok(Case::Two),
            "3" | "three" => Ok(Case::Three),
            _ => Err(FadsError::InvalidInput(format!("unknown case `{s}`, expected 1, 2 or 3"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// First five coefficients of `x1` equal `b0`.
    Sparse,
    /// Every coefficient of `x1` equals `b0`.
    Dense,
}

impl std::str::FromStr for Alternative {
    type Err = FadsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Alternative::Sparse),
            "dense" => Ok(Alternative::Dense),
            _ => Err(FadsError::InvalidInput(format!(
                "unknown alternative `{s}`, expected sparse or dense"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub case: Case,
    pub n: usize,
    /// Total dimension, split evenly between the two groups.
    pub p: usize,
    pub k_true: usize,
    pub beta2_signal: f64,
    pub alternative: Alternative,
    pub b0_grid: Vec<f64>,
    pub target_censoring: f64,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub threads: usize,
    pub calibration_size: usize,
    pub test: FadsConfig,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl SimConfig {
    /// `(n, p, replicates) = (150, 300, 200)`.
    pub fn ci() -> Self {
        SimConfig {
            case: Case::One,
            n: 150,
            p: 300,
            k_true: 2,
            beta2_signal: 1.0,
            alternative: Alternative::Sparse,
            b0_grid: vec![0.0, 0.25, 0.5],
            target_censoring: 0.40,
            replicates: 200,
            alpha: 0.05,
            seed: 20_240_601,
            threads: default_threads(),
            calibration_size: DEFAULT_CALIBRATION_SIZE,
            test: FadsConfig::default(),
        }
    }

    /// `(n, p, replicates) = (200, 600, 500)` over the full sparse grid.
    pub fn paper() -> Self {
        SimConfig {
            n: 200,
            p: 600,
            replicates: 500,
            b0_grid: (0..=10).map(|i| 0.05 * i as f64).collect(),
            ..SimConfig::ci()
        }
    }

    pub fn p1(&self) -> usize {
        self.p / 2
    }

    pub fn p2(&self) -> usize {
        self.p - self.p / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FadsError::InvalidInput(msg));
        if self.p % 2 != 0 || self.p < 4 {
            return bad(format!("p must be even and at least 4, got {}", self.p));
        }
        if self.case == Case::Three && (self.p1() < 2 * Q_ROWS || self.p2() < Q_COLS) {
            return bad(format!("the cross-group design needs p/2 >= {}", (2 * Q_ROWS).max(Q_COLS)));
        }
        if self.case == Case::One && (self.k_true == 0 || self.k_true >= self.p1().min(self.n)) {
            return bad(format!("k_true = {} out of range", self.k_true));
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.b0_grid.iter().any(|b| !(*b >= 0.0)) || self.b0_grid.windows(2).any(|w| w[0] > w[1]) {
            return bad("b0_grid must be nonnegative and ascending".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.target_censoring) {
            return bad(format!("target censoring must lie in [0, 1), got {}", self.target_censoring));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// RNG for replicate `r` at grid point `i`.
    pub fn replicate_rng(&self, i: usize, r: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((i as u64) << 32) | r as u64);
        rng
    }

    /// RNG for the censoring calibration at grid point `i`.
    pub fn calibration_rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((i as u64) << 32) | u32::MAX as u64);
        rng
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PowerRow {
    pub b0: f64,
    pub censoring_c: f64,
    pub rejection_rate: f64,
    pub mc_std_error: f64,
    pub replicates_used: usize,
    pub failures: usize,
    pub censoring_rate_observed: f64,
    pub mean_k_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub config: SimConfig,
    pub rows: Vec<PowerRow>,
    pub censoring_rate_observed: f64,
    /// False when more than 5% of replicates failed at some grid point.
    pub valid: bool,
    pub runtime_secs: f64,
    pub failure_messages: Vec<String>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tab-separated `b0`, `rejection_rate`, `mc_se`, one row per grid point.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("b0\trejection_rate\tmc_se\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\n", r.b0, r.rejection_rate, r.mc_std_error));
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:>8} {:>10} {:>8} {:>6} {:>6} {:>8}\n",
            "b0", "reject", "mc_se", "used", "fail", "censor"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>8.3} {:>10.4} {:>8.4} {:>6} {:>6} {:>8.3}\n",
                r.b0, r.rejection_rate, r.mc_std_error, r.replicates_used, r.failures, r.censoring_rate_observed
            ));
        }
        out
    }
}

struct Replicate {
    reject: bool,
    censoring: f64,
    k_hat: usize,
}

fn one_replicate(cfg: &SimConfig, i: usize, r: usize, b0: f64, c: f64) -> Result<Replicate> {
    let mut rng = cfg.replicate_rng(i, r);
    let sample = generate_dataset(cfg, b0, c, &mut rng)?;
    let result = run_fads_test(&sample.data, "x1", &cfg.test)?;
    let p = result.p_value.ok_or(FadsError::Degenerate {
        min_eig: result.diagnostics.sigma_min_eig,
        threshold: cfg.test.min_eig,
    })?;
    Ok(Replicate {
        reject: p <= cfg.alpha,
        censoring: sample.data.censoring_rate(),
        k_hat: result.df,
    })
}

/// Rejection rates of the test of `x1` across `cfg.b0_grid`.
pub fn run_power_study(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    if cfg.b0_grid.is_empty() {
        return Err(FadsError::InvalidInput("b0_grid is empty".into()));
    }
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| FadsError::InvalidInput(format!("thread pool: {e}")))?;

    let mut rows = Vec::with_capacity(cfg.b0_grid.len());
    let mut failure_messages = Vec::new();
    let mut valid = true;
    let (mut censored_sum, mut censored_count) = (0.0, 0usize);
    for (i, &b0) in cfg.b0_grid.iter().enumerate() {
        let c = calibrate_censoring(cfg, b0, &mut cfg.calibration_rng(i), cfg.calibration_size)?;
        let outcomes: Vec<Result<Replicate>> = pool.install(|| {
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| one_replicate(cfg, i, r, b0, c))
                .collect()
        });
        let mut ok = Vec::with_capacity(outcomes.len());
        for (r, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(rep) => ok.push(rep),
                Err(e) => failure_messages.push(format!("b0 = {b0}, replicate {r}: {e}")),
            }
        }
        let failures = cfg.replicates - ok.len();
        if failures as f64 > MAX_FAILURE_SHARE * cfg.replicates as f64 {
            warn!("{failures} of {} replicates failed at b0 = {b0}", cfg.replicates);
            valid = false;
        }
        let used = ok.len();
        let (rate, se, censoring, k_mean) = if used == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let rate = ok.iter().filter(|r| r.reject).count() as f64 / used as f64;
            let censoring = ok.iter().map(|r| r.censoring).sum::<f64>() / used as f64;
            censored_sum += censoring * used as f64;
            censored_count += used;
            (
                rate,
                (rate * (1.0 - rate) / used as f64).sqrt(),
                censoring,
                ok.iter().map(|r| r.k_hat as f64).sum::<f64>() / used as f64,
            )
        };
        rows.push(PowerRow {
            b0,
            censoring_c: c,
            rejection_rate: rate,
            mc_std_error: se,
            replicates_used: used,
            failures,
            censoring_rate_observed: censoring,
            mean_k_hat: k_mean,
        });
    }
    Ok(SimReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        rows,
        censoring_rate_observed: censored_sum / censored_count.max(1) as f64,
        valid,
        runtime_secs: start.elapsed().as_secs_f64(),
        failure_messages,
    })
}
