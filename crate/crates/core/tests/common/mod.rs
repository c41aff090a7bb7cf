#![allow(dead_code)]

use std::path::Path;

use fads::survival::{ColumnKind, FeatureAssembly, SurvivalDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic and p-value against `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}

pub fn normal_matrix<R: Rng>(n: usize, q: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(rng))
}

/// Survival data with distinct times, roughly a third censored.
pub fn random_dataset<R: Rng>(n: usize, q: usize, rng: &mut R) -> SurvivalDataset {
    let x = normal_matrix(n, q, rng);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
    times.iter_mut().enumerate().for_each(|(i, t)| *t += 1e-7 * i as f64);
    let events = (0..n).map(|_| rng.random::<f64>() < 0.65).collect();
    SurvivalDataset::ungrouped(times, events, x).unwrap()
}

pub fn random_coefs<R: Rng>(q: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(q, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn covariate_features(data: &SurvivalDataset) -> FeatureAssembly {
    FeatureAssembly::new(
        data.covariates().clone(),
        vec![ColumnKind::Covariate; data.p()],
    )
    .unwrap()
}

pub fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();
}

/// A 100-row, two-group dataset written as the three CLI input files.
pub fn write_two_group_files(dir: &Path, seed: u64) -> [std::path::PathBuf; 3] {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (n, p1, p2) = (100, 30, 20);
    let f = normal_matrix(n, 2, &mut rng);
    let b = normal_matrix(p1 + p2, 2, &mut rng);
    let x = &f * b.transpose() + normal_matrix(n, p1 + p2, &mut rng);
    let names: Vec<String> = (0..p1)
        .map(|j| format!("gene_{j}"))
        .chain((0..p2).map(|j| format!("cnv_{j}")))
        .collect();
    let cov = dir.join("covariates.csv");
    write_csv(
        &cov,
        &names,
        (0..n).map(|i| x.row(i).iter().map(|v| format!("{v:.6}")).collect()),
    );
    let surv = dir.join("survival.csv");
    write_csv(
        &surv,
        &["time".into(), "status".into()],
        (0..n).map(|i| {
            let t = -rng.random::<f64>().ln() / (0.3 * x[(i, 0)]).exp() + 1e-6 * i as f64;
            let status = if rng.random::<f64>() < 0.7 { "1" } else { "0" };
            vec![format!("{t:.9}"), status.to_string()]
        }),
    );
    let groups = dir.join("groups.csv");
    write_csv(
        &groups,
        &["column_name".into(), "group_id".into()],
        names.iter().enumerate().map(|(j, c)| {
            vec![c.clone(), if j < p1 { "expression" } else { "copy_number" }.to_string()]
        }),
    );
    [cov, surv, groups]
}
