//! Chi-squared tail probabilities, central and noncentral.

use statrs::function::gamma::{gamma_ur, ln_gamma};

/// `P(X > x)` for `X ~ chi2(k)`, via the regularized upper incomplete gamma
/// function `Q(k/2, x/2)`.
pub fn chi_square_sf(x: f64, k: u32) -> f64 {
    assert!(k > 0, "degrees of freedom must be positive");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(0.5 * k as f64, 0.5 * x).clamp(0.0, 1.0)
}

/// `P(X > x)` for `X ~ chi2(k, h)` with noncentrality `h`.
///
/// Poisson mixture `sum_j Pois(j; h/2) Q(k/2 + j, x/2)`, summed outward from
/// the Poisson mode until the weights drop below `1e-14`.
pub fn chi_square_sf_nc(x: f64, k: u32, h: f64) -> f64 {
    assert!(h >= 0.0, "noncentrality must be nonnegative");
    if h == 0.0 {
        return chi_square_sf(x, k);
    }
    if x <= 0.0 {
        return 1.0;
    }
    const CUTOFF: f64 = 1e-14;
    let mean = 0.5 * h;
    let weight = |j: f64| (-mean + j * mean.ln() - ln_gamma(j + 1.0)).exp();
    let term = |j: f64| gamma_ur(0.5 * k as f64 + j, 0.5 * x);
    let mode = mean.floor();

    let mut total = 0.0;
    let mut j = mode;
    loop {
        let w = weight(j);
        total += w * term(j);
        if w < CUTOFF && j > mode {
            break;
        }
        j += 1.0;
    }
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let w = weight(j);
        total += w * term(j);
        if w < CUTOFF {
            break;
        }
        j -= 1.0;
    }
    total.clamp(0.0, 1.0)
}

/// Upper `alpha` quantile: the `x` with `chi_square_sf(x, k) = alpha`.
pub fn chi_square_upper_quantile(alpha: f64, k: u32) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let mut lo = 0.0;
    let mut hi = k as f64 + 10.0;
    while chi_square_sf(hi, k) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_sf(mid, k) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
