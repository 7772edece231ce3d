//! Small fitting and test-statistic helpers shared across modules.

use serde::{Deserialize, Serialize};

/// Result of fitting `y(n) ≈ C·e^(-rate·n)` to a decaying sequence.
///
/// Values at or below the floor are treated as exact zeros of the
/// discretized dynamics and excluded from the fit; if fewer than two
/// points survive, the sequence is reported as superexponential at the
/// working resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RateFit {
    Fit {
        rate: f64,
        log_c: f64,
        /// Max absolute residual of `log y` against the fitted line.
        residual: f64,
        points: usize,
        /// First and last abscissa that survived the censoring.
        x_range: (f64, f64),
    },
    /// Everything below `floor` from the first step on.
    Superexponential { floor: f64 },
}

impl RateFit {
    /// Decay rate; `+∞` for the superexponential case.
    pub fn rate(&self) -> f64 {
        match self {
            RateFit::Fit { rate, .. } => *rate,
            RateFit::Superexponential { .. } => f64::INFINITY,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match self {
            RateFit::Fit { log_c, .. } => log_c.exp(),
            RateFit::Superexponential { .. } => 0.0,
        }
    }
}

/// Least-squares line through `(n, log y)` for the points with `y > floor`.
pub fn fit_exponential_decay(points: &[(f64, f64)], floor: f64) -> RateFit {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, y)| *y > floor)
        .map(|&(n, y)| (n, y.ln()))
        .collect();
    if kept.len() < 2 {
        return RateFit::Superexponential { floor };
    }
    let n = kept.len() as f64;
    let sx: f64 = kept.iter().map(|p| p.0).sum();
    let sy: f64 = kept.iter().map(|p| p.1).sum();
    let sxx: f64 = kept.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = kept.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = kept
        .iter()
        .map(|&(x, ly)| (ly - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    RateFit::Fit {
        rate: -slope,
        log_c: intercept,
        residual,
        points: kept.len(),
        x_range: (kept[0].0, kept[kept.len() - 1].0),
    }
}

/// Weighted least squares slope of `y = s·x` through the origin.
pub fn slope_through_origin(points: &[(f64, f64)]) -> f64 {
    let num: f64 = points.iter().map(|(x, y)| x * y).sum();
    let den: f64 = points.iter().map(|(x, _)| x * x).sum();
    num / den
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
    let n = samples.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let c = cdf(x);
        sup = sup.max((i as f64 / n - c).abs());
        sup = sup.max(((i + 1) as f64 / n - c).abs());
    }
    sup
}

/// Asymptotic p-value for the KS statistic: the Kolmogorov survival
/// function evaluated at `√n·D` with the usual small-sample correction.
///
/// The alternating series converges only for moderate arguments; below
/// the crossover the theta-transformed series for the CDF is used.
pub fn kolmogorov_p_value(statistic: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * statistic;
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let f = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for j in 0..50 {
            let m = f64::from(2 * j + 1);
            let term = (-m * m * f).exp();
            cdf += term;
            if term < 1e-18 {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let t = f64::from(j) * lambda;
        let term = sign * (-2.0 * t * t).exp();
        sum += term;
        sign = -sign;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
