//! Asymptotic covariance via the Green-Kubo series, finite-time
//! covariance growth, and uniform correlation-decay envelopes.
//!
//! The series `Σ² = ∫g² dμ + 2Σ_(n≥1) ∫g(g∘τ^n) dμ` integrates over both
//! the fiber and the base; the base integral is realized as a Birkhoff
//! average over a window of consecutive fibers, and each correlation
//! term is an operator chain `ℒ_ω^n(g_ω·h_ω)` paired with the observable
//! `n` fibers ahead. Matrices are assembled from scalar runs by
//! polarization, so symmetry is exact by construction.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{fit_exponential_decay, RateFit};
use crate::observable::CenteredObservable;
use crate::transfer::norms::bv_norm;
use crate::transfer::{Cocycle, DecayEstimate, DensityFamily, TransferError};

/// Below this eigenvalue the covariance is reported degenerate: grid
/// noise sits well under it while genuine coboundary directions fall
/// under it on moderate grids.
pub const DEGENERACY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CovarianceError {
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("direction has dimension {0}, observable has dimension {1}")]
    DimensionMismatch(usize, usize),
    #[error("correlation envelope does not decay: fitted r = {0} >= 1")]
    NoDecay(f64),
}

/// Green-Kubo variance of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSigma {
    pub k: usize,
    pub sigma2: f64,
    /// Truncated series value (equals `sigma2`).
    pub partial_sum: f64,
    /// Geometric bound on the dropped tail; infinite when no decay
    /// estimate certifies it.
    pub tail_bound: f64,
    pub truncation_n: usize,
    /// Number of consecutive base fibers averaged.
    pub window: usize,
}

/// Green-Kubo variance of the scalar projection `v·g`.
///
/// The correlation terms are `ℒ_ω^n(g_ω h_ω)` paired with `g_(σ^n ω)`,
/// averaged over `window` consecutive base fibers starting at
/// `fiber_index`. Centering makes `g_ω h_ω` mean-zero, so the summands
/// decay at the verified rate and the dropped tail is geometric; without
/// a decay estimate the partial sum is returned with an infinite tail
/// flag rather than a fake certificate.
pub fn sigma_scalar(
    coc: &Cocycle,
    densities: &DensityFamily,
    g: &CenteredObservable,
    direction: &[f64],
    fiber_index: i64,
    n_max: usize,
    window: usize,
    decay: Option<&DecayEstimate>,
) -> Result<ScalarSigma, CovarianceError> {
    if direction.len() != g.dim() {
        return Err(CovarianceError::DimensionMismatch(direction.len(), g.dim()));
    }
    let k = coc.k();
    let (fam, sys) = (coc.family(), coc.driving());

    // directional grids on every fiber the chains touch
    let total = window + n_max;
    let grids: Vec<Vec<f64>> = (0..=total)
        .map(|off| g.directional_grid(fam, sys, fiber_index + off as i64, k, direction))
        .collect::<Result<_, _>>()?;
    densities.at(fiber_index)?;
    densities.at(fiber_index + window as i64 - 1)?;

    struct WindowTerm {
        series: f64,
        gh_bv: f64,
        sup_g: f64,
    }

    let terms: Vec<WindowTerm> = (0..window)
        .into_par_iter()
        .map(|w| {
            let h = densities.at(fiber_index + w as i64).expect("range checked");
            let gw = &grids[w];
            let e_g2 = h.expect(&gw.iter().map(|x| x * x).collect::<Vec<f64>>());
            let mut u: Vec<f64> = gw.iter().zip(&h.values).map(|(g, h)| g * h).collect();
            let gh_bv = bv_norm(&u);
            let mut corr = 0.0;
            for n in 1..=n_max {
                u = coc.op_at(fiber_index + (w + n) as i64 - 1).apply(&u);
                let gn = &grids[w + n];
                let c = u.iter().zip(gn).map(|(a, b)| a * b).sum::<f64>() / k as f64;
                corr += c;
            }
            let sup_g = grids[w..=w + n_max]
                .iter()
                .flat_map(|row| row.iter())
                .fold(0.0f64, |m, x| m.max(x.abs()));
            WindowTerm {
                series: e_g2 + 2.0 * corr,
                gh_bv,
                sup_g,
            }
        })
        .collect();

    let partial = terms.iter().map(|t| t.series).sum::<f64>() / window as f64;
    let max_gh = terms.iter().map(|t| t.gh_bv).fold(0.0, f64::max);
    let max_sup = terms.iter().map(|t| t.sup_g).fold(0.0, f64::max);
    let tail_bound = match decay {
        Some(est) if est.lambda > 0.0 => 2.0 * est.geometric_tail(n_max) * max_gh * max_sup,
        _ => f64::INFINITY,
    };

    Ok(ScalarSigma {
        k,
        sigma2: partial,
        partial_sum: partial,
        tail_bound,
        truncation_n: n_max,
        window,
    })
}

/// One direction's entry in the covariance report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSigma {
    pub direction: Vec<f64>,
    pub sigma2: f64,
    pub tail_bound: f64,
}

/// The asymptotic covariance matrix with its degeneracy diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub k: usize,
    pub d: usize,
    /// Row-major symmetric `d×d` matrix.
    pub sigma2: Vec<Vec<f64>>,
    pub truncation_n: usize,
    /// Max combined tail over the polarization runs.
    pub tail_bound: f64,
    pub min_eigenvalue: f64,
    /// Unit eigenvector of the smallest eigenvalue when it falls under
    /// the degeneracy threshold: the candidate coboundary direction.
    pub degenerate_direction: Option<Vec<f64>>,
    /// Scalar variances of the unit directions used in the assembly.
    pub per_direction: Vec<DirectionSigma>,
    pub window: usize,
}

impl CovarianceReport {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate_direction.is_some()
    }

    /// `vᵀ Σ² v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.sigma2.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                acc += v[i] * s * v[j];
            }
        }
        acc
    }
}

/// Assemble `Σ²` by polarization from scalar runs on `e_i`, `e_j` and
/// `e_i + e_j`: `Σ²_(i,j) = (Σ²_(e_i+e_j) - Σ²_(e_i) - Σ²_(e_j))/2`.
pub fn sigma_matrix(
    coc: &Cocycle,
    densities: &DensityFamily,
    g: &CenteredObservable,
    fiber_index: i64,
    n_max: usize,
    window: usize,
    decay: Option<&DecayEstimate>,
) -> Result<CovarianceReport, CovarianceError> {
    let d = g.dim();
    let run = |v: &[f64]| -> Result<ScalarSigma, CovarianceError> {
        sigma_scalar(coc, densities, g, v, fiber_index, n_max, window, decay)
    };

    let mut axis = Vec::with_capacity(d);
    for i in 0..d {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        axis.push(run(&v)?);
    }
    let mut matrix = vec![vec![0.0; d]; d];
    let mut tail = 0.0f64;
    let mut per_direction = Vec::new();
    for i in 0..d {
        matrix[i][i] = axis[i].sigma2;
        tail = tail.max(axis[i].tail_bound);
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        per_direction.push(DirectionSigma {
            direction: v,
            sigma2: axis[i].sigma2,
            tail_bound: axis[i].tail_bound,
        });
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v[j] = 1.0;
            let s = run(&v)?;
            let off = 0.5 * (s.sigma2 - axis[i].sigma2 - axis[j].sigma2);
            matrix[i][j] = off;
            matrix[j][i] = off;
            let combined = 0.5 * (s.tail_bound + axis[i].tail_bound + axis[j].tail_bound);
            tail = tail.max(combined);
            let inv = std::f64::consts::FRAC_1_SQRT_2;
            per_direction.push(DirectionSigma {
                direction: {
                    let mut u = vec![0.0; d];
                    u[i] = inv;
                    u[j] = inv;
                    u
                },
                // Σ² is quadratic: the unit diagonal direction carries half
                sigma2: 0.5 * s.sigma2,
                tail_bound: 0.5 * s.tail_bound,
            });
        }
    }

    let sym = DMatrix::from_fn(d, d, |i, j| matrix[i][j]);
    let eig = sym.symmetric_eigen();
    let mut min_eigenvalue = f64::INFINITY;
    let mut min_idx = 0;
    for (idx, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < min_eigenvalue {
            min_eigenvalue = ev;
            min_idx = idx;
        }
    }
    let degenerate_direction = if min_eigenvalue < DEGENERACY_THRESHOLD {
        let col = eig.eigenvectors.column(min_idx);
        let mut v: Vec<f64> = col.iter().copied().collect();
        // sign convention: first nonzero component positive
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
        }
        Some(v)
    } else {
        None
    };

    Ok(CovarianceReport {
        k: coc.k(),
        d,
        sigma2: matrix,
        truncation_n: n_max,
        tail_bound: tail,
        min_eigenvalue,
        degenerate_direction,
        per_direction,
        window,
    })
}

/// Exact (grid-level) covariance matrices of the partial sums `S_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteNReport {
    pub k: usize,
    /// `(n, Cov(S_n))` for each requested `n`.
    pub per_n: Vec<(usize, Vec<Vec<f64>>)>,
    /// `min_n min-eigenvalue(Cov(S_n))/n`: the linear-growth constant.
    pub c1_estimate: f64,
    pub lag_cutoff: Option<usize>,
}

/// Covariance of `S_n` under the quenched law at `fiber_index`, expanded
/// through operator chains: `E[A_i^a A_(i+ℓ)^b]` is the `ℓ`-step chain
/// from `g_i h_i` paired with `g_(i+ℓ)`, no sampling involved.
///
/// `lag_cutoff` truncates the inter-term lag; `None` expands every pair.
pub fn finite_n_covariance(
    coc: &Cocycle,
    densities: &DensityFamily,
    g: &CenteredObservable,
    fiber_index: i64,
    n_list: &[usize],
    lag_cutoff: Option<usize>,
) -> Result<FiniteNReport, CovarianceError> {
    let d = g.dim();
    let k = coc.k();
    let (fam, sys) = (coc.family(), coc.driving());
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    let cutoff = lag_cutoff.unwrap_or(max_n).min(max_n);

    let grids: Vec<Vec<Vec<f64>>> = (0..max_n)
        .map(|off| g.fiber_grid(fam, sys, fiber_index + off as i64, k))
        .collect::<Result<_, _>>()?;
    if max_n > 0 {
        densities.at(fiber_index)?;
        densities.at(fiber_index + max_n as i64 - 1)?;
    }

    // lag-0 moments and the chained cross terms
    struct StartTerms {
        zero: Vec<Vec<f64>>,
        /// `cross[ℓ-1][a][b] = E[A_i^a A_(i+ℓ)^b]`
        cross: Vec<Vec<Vec<f64>>>,
    }
    let per_start: Vec<StartTerms> = (0..max_n)
        .into_par_iter()
        .map(|i| {
            let h = densities.at(fiber_index + i as i64).expect("range checked");
            let gi = &grids[i];
            let mut zero = vec![vec![0.0; d]; d];
            for a in 0..d {
                for b in 0..d {
                    let prod: Vec<f64> = gi[a].iter().zip(&gi[b]).map(|(x, y)| x * y).collect();
                    zero[a][b] = h.expect(&prod);
                }
            }
            let lags = cutoff.min(max_n - 1 - i);
            let mut cross = vec![vec![vec![0.0; d]; d]; lags];
            let mut chains: Vec<Vec<f64>> = (0..d)
                .map(|a| gi[a].iter().zip(&h.values).map(|(g, h)| g * h).collect())
                .collect();
            for ell in 1..=lags {
                let op = coc.op_at(fiber_index + (i + ell) as i64 - 1);
                for a in 0..d {
                    chains[a] = op.apply(&chains[a]);
                    let gb = &grids[i + ell];
                    for b in 0..d {
                        cross[ell - 1][a][b] = chains[a]
                            .iter()
                            .zip(&gb[b])
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            / k as f64;
                    }
                }
            }
            StartTerms { zero, cross }
        })
        .collect();

    let mut sorted: Vec<usize> = n_list.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut acc = vec![vec![0.0; d]; d];
    let mut per_n = Vec::with_capacity(sorted.len());
    let mut next = sorted.iter().peekable();
    for n in 1..=max_n {
        // new summand A_(n-1): its own moment plus cross terms with
        // earlier starts within the cutoff
        let i = n - 1;
        for a in 0..d {
            for b in 0..d {
                acc[a][b] += per_start[i].zero[a][b];
            }
        }
        for ell in 1..=cutoff.min(i) {
            let start = i - ell;
            let c = &per_start[start].cross[ell - 1];
            for a in 0..d {
                for b in 0..d {
                    acc[a][b] += c[a][b] + c[b][a];
                }
            }
        }
        if let Some(&&want) = next.peek() {
            if want == n {
                per_n.push((n, acc.clone()));
                next.next();
            }
        }
    }

    let mut c1 = f64::INFINITY;
    for (n, m) in &per_n {
        let sym = DMatrix::from_fn(d, d, |i, j| m[i][j]);
        let min_ev = sym
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &x| a.min(x));
        c1 = c1.min(min_ev / *n as f64);
    }

    Ok(FiniteNReport {
        k,
        per_n,
        c1_estimate: c1,
        lag_cutoff,
    })
}

/// Envelope constants for the uniform correlation decay
/// `|Cov(A_n·v, A_(n+ℓ)·v)| ≤ C₀·r^ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrDecayReport {
    pub k: usize,
    pub c0: f64,
    pub r: f64,
    /// Per-lag envelope `max_(n,v) |Cov|`, lags `1..=max_lag`.
    pub envelope: Vec<f64>,
}

/// Fit `(C₀, r)` over starts `0..window_n`, lags `1..=max_lag` and a
/// fixed direction net (axes and diagonal pairs).
pub fn uniform_corr_decay(
    coc: &Cocycle,
    densities: &DensityFamily,
    g: &CenteredObservable,
    fiber_index: i64,
    window_n: usize,
    max_lag: usize,
) -> Result<CorrDecayReport, CovarianceError> {
    let d = g.dim();
    let k = coc.k();
    let (fam, sys) = (coc.family(), coc.driving());

    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        directions.push(v);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            for sign in [1.0, -1.0] {
                let mut v = vec![0.0; d];
                v[i] = std::f64::consts::FRAC_1_SQRT_2;
                v[j] = sign * std::f64::consts::FRAC_1_SQRT_2;
                directions.push(v);
            }
        }
    }

    let mut envelope = vec![0.0f64; max_lag];
    for v in &directions {
        let grids: Vec<Vec<f64>> = (0..window_n + max_lag)
            .map(|off| g.directional_grid(fam, sys, fiber_index + off as i64, k, v))
            .collect::<Result<_, _>>()?;
        for n in 0..window_n {
            let h = densities.at(fiber_index + n as i64)?;
            let mut u: Vec<f64> = grids[n].iter().zip(&h.values).map(|(g, h)| g * h).collect();
            for (ell, env) in envelope.iter_mut().enumerate().take(max_lag) {
                u = coc.op_at(fiber_index + (n + ell) as i64).apply(&u);
                let c = u
                    .iter()
                    .zip(&grids[n + ell + 1])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / k as f64;
                *env = env.max(c.abs());
            }
        }
    }

    let points: Vec<(f64, f64)> = envelope
        .iter()
        .enumerate()
        .map(|(i, &y)| ((i + 1) as f64, y))
        .collect();
    match fit_exponential_decay(&points, 1e-13) {
        RateFit::Superexponential { .. } => Ok(CorrDecayReport {
            k,
            c0: envelope.iter().fold(0.0f64, |a, &x| a.max(x)),
            r: 0.0,
            envelope,
        }),
        RateFit::Fit { rate, log_c, .. } => {
            let r = (-rate).exp();
            if r >= 1.0 {
                return Err(CovarianceError::NoDecay(r));
            }
            Ok(CorrDecayReport {
                k,
                c0: log_c.exp(),
                r,
                envelope,
            })
        }
    }
}
