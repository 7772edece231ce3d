//! Monte Carlo orbits under the quenched law, block sums and
//! distributional diagnostics.
//!
//! Orbits iterate the true maps (not the Ulam matrices); initial points
//! are inverse-CDF samples of the equivariant density, and per-path
//! randomness comes from counter-based streams keyed by `(seed, path)`,
//! so ensembles are bit-identical at any degree of parallelism. For
//! purely dyadic affine families a uniform jitter at the last floating
//! bits keeps long orbits from collapsing onto 0; the amplitude is
//! recorded in the ensemble.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::blocks::{BlockDecomposition, IntervalKind};
use crate::covariance::CovarianceReport;
use crate::driving::DrivingSystem;
use crate::fit::{kolmogorov_p_value, ks_statistic, slope_through_origin};
use crate::maps::MapFamily;
use crate::observable::CenteredObservable;
use crate::rng::CounterStream;
use crate::transfer::{FiberDensity, TransferError};

const TAG_INITIAL: u64 = 0x1417;
const TAG_JITTER: u64 = 0x717e;

/// Jitter injected after every map application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum JitterPolicy {
    /// 1e-15 for purely dyadic affine families, none otherwise.
    Auto,
    None,
    Fixed { amplitude: f64 },
}

impl JitterPolicy {
    fn amplitude(&self, fam: &MapFamily) -> f64 {
        match self {
            JitterPolicy::Auto => {
                if fam.alphabet().iter().all(|p| p.is_dyadic_affine()) {
                    1e-15
                } else {
                    0.0
                }
            }
            JitterPolicy::None => 0.0,
            JitterPolicy::Fixed { amplitude } => *amplitude,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("paths of {have} steps cannot cover checkpoint {want}")]
    InsufficientPathLength { want: u64, have: u64 },
    #[error("block boundary {0} is not among the recorded checkpoints")]
    MissingCheckpoint(u64),
    #[error("{0} paths give no statistical power (need at least 100)")]
    TooFewPaths(usize),
    #[error("covariance report has dimension {0}, ensemble has {1}")]
    DimensionMismatch(usize, usize),
    #[error("checkpoints must be strictly increasing")]
    BadCheckpoints,
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams {
    pub n_steps: u64,
    pub n_paths: usize,
    /// Positions `m` at which `S_m` is recorded; strictly increasing.
    pub checkpoints: Vec<u64>,
    pub seed: u64,
    pub jitter: JitterPolicy,
}

/// Birkhoff sums of an ensemble at the recorded checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub n_steps: u64,
    pub n_paths: usize,
    pub d: usize,
    pub checkpoints: Vec<u64>,
    /// `sums[path][checkpoint][coordinate]`.
    pub sums: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub fiber_index: i64,
    pub jitter_amplitude: f64,
}

impl PathEnsemble {
    fn checkpoint_index(&self, position: u64) -> Result<usize, SimulateError> {
        self.checkpoints
            .binary_search(&position)
            .map_err(|_| SimulateError::MissingCheckpoint(position))
    }

    /// `S_m·v` over all paths at checkpoint position `m`.
    pub fn directional_sums(&self, position: u64, v: &[f64]) -> Result<Vec<f64>, SimulateError> {
        let idx = self.checkpoint_index(position)?;
        Ok(self
            .sums
            .iter()
            .map(|path| path[idx].iter().zip(v).map(|(s, c)| s * c).sum())
            .collect())
    }
}

/// Inverse-CDF samples of a piecewise-constant density; pure in
/// `(seed, index)`.
pub fn sample_initial(density: &FiberDensity, count: usize, seed: u64) -> Vec<f64> {
    let stream = CounterStream::new(seed, TAG_INITIAL);
    let k = density.k;
    let mut cdf = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for v in &density.values {
        acc += v / k as f64;
        cdf.push(acc);
    }
    let total = cdf[k];
    (0..count)
        .map(|p| {
            let u = stream.unit_f64(p as u64) * total;
            let cell = cdf.partition_point(|&c| c <= u).saturating_sub(1).min(k - 1);
            let dens = density.values[cell];
            let frac = if dens > 0.0 {
                (u - cdf[cell]) / (dens / k as f64)
            } else {
                0.0
            };
            (cell as f64 + frac.clamp(0.0, 1.0)) / k as f64
        })
        .collect()
}

/// Iterate the ensemble from explicit initial points.
pub fn paths_from_points(
    fam: &MapFamily,
    sys: &DrivingSystem,
    g: &CenteredObservable,
    fiber_index: i64,
    initials: &[f64],
    params: &SimulationParams,
) -> Result<PathEnsemble, SimulateError> {
    if params.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimulateError::BadCheckpoints);
    }
    if let Some(&last) = params.checkpoints.last() {
        if last > params.n_steps {
            return Err(SimulateError::InsufficientPathLength {
                want: last,
                have: params.n_steps,
            });
        }
    }
    let d = g.dim();
    // prefetch per-step data so the hot loop stays allocation-free
    let n = params.n_steps as usize;
    let maps: Vec<&crate::maps::MapParameter> =
        (0..n).map(|s| fam.map_at(sys, fiber_index + s as i64)).collect();
    let mut means = Vec::with_capacity(n);
    for s in 0..n {
        means.push(g.mean_at(fiber_index + s as i64)?.clone());
    }
    let amp = params.jitter.amplitude(fam);

    let sums: Vec<Vec<Vec<f64>>> = initials
        .par_iter()
        .enumerate()
        .map(|(path, &x0)| {
            let jitter = CounterStream::new(params.seed ^ path as u64, TAG_JITTER);
            let mut x = x0;
            let mut acc = vec![0.0f64; d];
            let mut out = Vec::with_capacity(params.checkpoints.len());
            let mut next_ck = 0usize;
            if next_ck < params.checkpoints.len() && params.checkpoints[next_ck] == 0 {
                out.push(acc.clone());
                next_ck += 1;
            }
            for step in 0..n {
                let vals = g.inner().eval_point(fam, sys, fiber_index + step as i64, x);
                for (a, (v, m)) in acc.iter_mut().zip(vals.iter().zip(&means[step])) {
                    *a += v - m;
                }
                x = maps[step].eval_clamped(x);
                if amp > 0.0 {
                    x = (x + amp * jitter.symmetric_f64(step as u64)).clamp(0.0, 1.0);
                }
                let pos = step as u64 + 1;
                if next_ck < params.checkpoints.len() && params.checkpoints[next_ck] == pos {
                    out.push(acc.clone());
                    next_ck += 1;
                }
            }
            out
        })
        .collect();

    Ok(PathEnsemble {
        n_steps: params.n_steps,
        n_paths: initials.len(),
        d,
        checkpoints: params.checkpoints.clone(),
        sums,
        seed: params.seed,
        fiber_index,
        jitter_amplitude: amp,
    })
}

/// Sample the quenched law at the density's fiber and iterate.
pub fn birkhoff_paths(
    fam: &MapFamily,
    sys: &DrivingSystem,
    g: &CenteredObservable,
    density: &FiberDensity,
    params: &SimulationParams,
) -> Result<PathEnsemble, SimulateError> {
    let initials = sample_initial(density, params.n_paths, params.seed);
    paths_from_points(fam, sys, g, density.fiber_index, initials.as_slice(), params)
}

/// Checkpoint positions block extraction needs: `start-1` and
/// `start+len-1` for every interval of every level.
pub fn required_checkpoints(decomps: &[BlockDecomposition]) -> Vec<u64> {
    let mut out: Vec<u64> = decomps
        .iter()
        .flat_map(|d| {
            d.intervals
                .iter()
                .flat_map(|iv| [iv.start - 1, iv.start + iv.len - 1])
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Per-path sums over one interval of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSums {
    pub kind: IntervalKind,
    pub j: u32,
    pub start: u64,
    pub len: u64,
    /// `sums[path][coordinate]`.
    pub sums: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSums {
    pub level: u32,
    pub intervals: Vec<IntervalSums>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSums {
    pub levels: Vec<LevelSums>,
}

impl BlockSums {
    /// Per-path cumulative sum of all summation-block sums over levels up
    /// to and including `level`.
    pub fn cumulative_block_sums(&self, level: u32, d: usize, n_paths: usize) -> Vec<Vec<f64>> {
        let mut acc = vec![vec![0.0; d]; n_paths];
        for lv in self.levels.iter().filter(|l| l.level <= level) {
            for iv in lv
                .intervals
                .iter()
                .filter(|iv| iv.kind == IntervalKind::Block)
            {
                for (a, s) in acc.iter_mut().zip(&iv.sums) {
                    for (x, y) in a.iter_mut().zip(s) {
                        *x += y;
                    }
                }
            }
        }
        acc
    }
}

/// Slice the recorded prefix sums into per-interval block and gap sums:
/// `X_(n,j) = S_(end-1) - S_(start-1)` over each interval `[start, end)`.
pub fn block_sums(
    paths: &PathEnsemble,
    decomps: &[BlockDecomposition],
) -> Result<BlockSums, SimulateError> {
    let mut levels = Vec::with_capacity(decomps.len());
    for d in decomps {
        if (1u64 << (d.n + 1)) - 1 > paths.n_steps {
            return Err(SimulateError::InsufficientPathLength {
                want: (1u64 << (d.n + 1)) - 1,
                have: paths.n_steps,
            });
        }
        let mut intervals = Vec::with_capacity(d.intervals.len());
        for iv in &d.intervals {
            let lo = paths.checkpoint_index(iv.start - 1)?;
            let hi = paths.checkpoint_index(iv.start + iv.len - 1)?;
            let sums: Vec<Vec<f64>> = paths
                .sums
                .iter()
                .map(|p| {
                    p[hi].iter()
                        .zip(&p[lo])
                        .map(|(a, b)| a - b)
                        .collect()
                })
                .collect();
            intervals.push(IntervalSums {
                kind: iv.kind,
                j: iv.j,
                start: iv.start,
                len: iv.len,
                sums,
            });
        }
        levels.push(LevelSums {
            level: d.n,
            intervals,
        });
    }
    Ok(BlockSums { levels })
}

/// Distributional diagnostics of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDiagnostics {
    pub direction: Vec<f64>,
    pub sigma2_v: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Through-origin slope of `Var(S_n·v)` against `n`.
    pub variance_slope: f64,
    /// `variance_slope / sigma2_v`.
    pub slope_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCovariance {
    pub level: u32,
    /// Smallest eigenvalue of the covariance of the cumulative block sums
    /// over levels up to this one.
    pub min_eigenvalue: f64,
    /// `min_eigenvalue / 2^level`.
    pub per_two_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCorrelation {
    pub level: u32,
    pub gap_len: u64,
    /// Max over directions of `|corr(X_(n,j), X_(n,j+1))|` across the gap.
    pub max_abs_corr: f64,
}

/// Operator-level mixing envelope `C·e^(-c·gap)` fitted to the
/// characteristic-functional gaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingFit {
    pub c_const: f64,
    pub rate: f64,
    /// Gap values vanished below the fit floor from the first gap on.
    pub superexponential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub p: f64,
    pub delta: f64,
    /// `a_p = p/(4(p-1))`.
    pub a_p: f64,
    /// Claimed pathwise error exponent `a_p + δ`.
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticsMode {
    Full,
    /// Covariance degenerate: only variance boundedness along the
    /// degenerate direction is meaningful.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateDiagnostics {
    pub direction: Vec<f64>,
    /// `(checkpoint, Var(S_n·v))` along the degenerate direction.
    pub variance_by_checkpoint: Vec<(u64, f64)>,
    /// Variance at the last checkpoint stays within twice its value at
    /// the first checkpoint ≥ 64.
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub mode: DiagnosticsMode,
    pub directions: Vec<DirectionDiagnostics>,
    pub block_covariance: Vec<LevelCovariance>,
    pub gap_correlations: Vec<GapCorrelation>,
    /// Exponential rate fitted to the gap-correlation envelope, when the
    /// correlations sit above the sampling noise floor.
    pub gap_corr_rate: Option<f64>,
    pub gap_corr_noise_floor: f64,
    /// Correlations decay or drown in sampling noise.
    pub gap_corr_consistent: bool,
    /// Envelope fitted to the operator-level mixing gaps, when supplied.
    pub mixing_fit: Option<MixingFit>,
    pub degenerate: Option<DegenerateDiagnostics>,
    pub rate_table: Vec<RateEntry>,
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn covariance_pair(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / n
}

/// Pathwise approximation rate exponent for L^p-bounded summands.
pub fn rate_exponent(p: f64) -> f64 {
    p / (4.0 * (p - 1.0))
}

/// Statistical consequences of the invariance principle on a path
/// ensemble: per-direction normality at the deepest checkpoint, linear
/// variance growth against `Σ²`, cumulative block-sum covariance per
/// level, gap correlations, and the rate table.
pub fn asip_diagnostics(
    paths: &PathEnsemble,
    blocks: Option<&BlockSums>,
    sigma: &CovarianceReport,
    mixing_fit: Option<MixingFit>,
    p: f64,
    delta_grid: &[f64],
) -> Result<DiagnosticsReport, SimulateError> {
    if paths.n_paths < 100 {
        return Err(SimulateError::TooFewPaths(paths.n_paths));
    }
    if sigma.d != paths.d {
        return Err(SimulateError::DimensionMismatch(sigma.d, paths.d));
    }
    let degenerate = sigma.is_degenerate();
    let mode = if degenerate {
        DiagnosticsMode::Degenerate
    } else {
        DiagnosticsMode::Full
    };

    let slope_checkpoints: Vec<u64> = {
        let big: Vec<u64> = paths.checkpoints.iter().copied().filter(|&c| c >= 64).collect();
        if big.is_empty() {
            paths.checkpoints.clone()
        } else {
            big
        }
    };
    let last = *paths.checkpoints.last().expect("checkpoints nonempty");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut directions = Vec::new();
    if !degenerate {
        for ds in &sigma.per_direction {
            let v = &ds.direction;
            let s2 = sigma.quadratic_form(v);
            let mut zs = paths.directional_sums(last, v)?;
            let scale = (last as f64 * s2).sqrt();
            for z in &mut zs {
                *z /= scale;
            }
            let stat = ks_statistic(&mut zs, |x| normal.cdf(x));
            let p_value = kolmogorov_p_value(stat, paths.n_paths);

            let pts: Vec<(f64, f64)> = slope_checkpoints
                .iter()
                .map(|&c| {
                    let s = paths.directional_sums(c, v)?;
                    Ok((c as f64, variance(&s)))
                })
                .collect::<Result<_, SimulateError>>()?;
            let slope = slope_through_origin(&pts);
            directions.push(DirectionDiagnostics {
                direction: v.clone(),
                sigma2_v: s2,
                ks_statistic: stat,
                ks_p_value: p_value,
                variance_slope: slope,
                slope_ratio: slope / s2,
            });
        }
    }

    let mut block_covariance = Vec::new();
    let mut gap_correlations = Vec::new();
    if let Some(bs) = blocks {
        for lv in &bs.levels {
            let cum = bs.cumulative_block_sums(lv.level, paths.d, paths.n_paths);
            // covariance matrix of the cumulative block sums
            let mut min_ev = f64::INFINITY;
            {
                let d = paths.d;
                let mut m = vec![vec![0.0; d]; d];
                for a in 0..d {
                    let xa: Vec<f64> = cum.iter().map(|row| row[a]).collect();
                    for b in a..d {
                        let xb: Vec<f64> = cum.iter().map(|row| row[b]).collect();
                        let c = covariance_pair(&xa, &xb);
                        m[a][b] = c;
                        m[b][a] = c;
                    }
                }
                let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| m[i][j]);
                for &ev in sym.symmetric_eigen().eigenvalues.iter() {
                    min_ev = min_ev.min(ev);
                }
            }
            block_covariance.push(LevelCovariance {
                level: lv.level,
                min_eigenvalue: min_ev,
                per_two_n: min_ev / (1u64 << lv.level) as f64,
            });

            // adjacent block sums across their separating gap
            let blocks_only: Vec<&IntervalSums> = lv
                .intervals
                .iter()
                .filter(|iv| iv.kind == IntervalKind::Block)
                .collect();
            let gaps_only: Vec<&IntervalSums> = lv
                .intervals
                .iter()
                .filter(|iv| iv.kind == IntervalKind::Gap)
                .collect();
            for w in blocks_only.windows(2) {
                let gap_len = gaps_only
                    .iter()
                    .find(|g| g.start == w[0].start + w[0].len)
                    .map(|g| g.len)
                    .unwrap_or(0);
                let mut max_corr = 0.0f64;
                for a in 0..paths.d {
                    let xa: Vec<f64> = w[0].sums.iter().map(|s| s[a]).collect();
                    let xb: Vec<f64> = w[1].sums.iter().map(|s| s[a]).collect();
                    let c = covariance_pair(&xa, &xb);
                    let denom = (variance(&xa) * variance(&xb)).sqrt();
                    if denom > 0.0 {
                        max_corr = max_corr.max((c / denom).abs());
                    }
                }
                gap_correlations.push(GapCorrelation {
                    level: lv.level,
                    gap_len,
                    max_abs_corr: max_corr,
                });
            }
        }
    }

    let noise_floor = 3.0 / (paths.n_paths as f64).sqrt();
    let above: Vec<(f64, f64)> = gap_correlations
        .iter()
        .filter(|g| g.max_abs_corr > noise_floor)
        .map(|g| (g.gap_len as f64, g.max_abs_corr))
        .collect();
    let gap_corr_rate = match crate::fit::fit_exponential_decay(&above, 0.0) {
        crate::fit::RateFit::Fit { rate, .. } => Some(rate),
        crate::fit::RateFit::Superexponential { .. } => None,
    };
    let gap_corr_consistent = match gap_corr_rate {
        Some(rate) => rate > 0.0,
        // everything at the noise floor: nothing contradicts mixing
        None => true,
    };

    let degenerate_diag = if degenerate {
        let v = sigma
            .degenerate_direction
            .clone()
            .expect("degenerate mode has a direction");
        let variance_by_checkpoint: Vec<(u64, f64)> = paths
            .checkpoints
            .iter()
            .map(|&c| {
                let s = paths.directional_sums(c, &v)?;
                Ok((c, variance(&s)))
            })
            .collect::<Result<_, SimulateError>>()?;
        let reference = variance_by_checkpoint
            .iter()
            .find(|(c, _)| *c >= 64)
            .or_else(|| variance_by_checkpoint.first())
            .map(|(_, v)| *v)
            .unwrap_or(0.0);
        let last_var = variance_by_checkpoint.last().map(|(_, v)| *v).unwrap_or(0.0);
        let bounded = last_var <= 2.0 * reference.max(1e-12);
        Some(DegenerateDiagnostics {
            direction: v,
            variance_by_checkpoint,
            bounded,
        })
    } else {
        None
    };

    let a_p = rate_exponent(p);
    let rate_table = delta_grid
        .iter()
        .map(|&delta| RateEntry {
            p,
            delta,
            a_p,
            exponent: a_p + delta,
        })
        .collect();

    Ok(DiagnosticsReport {
        mode,
        directions,
        block_covariance,
        gap_correlations,
        gap_corr_rate,
        gap_corr_noise_floor: noise_floor,
        gap_corr_consistent,
        mixing_fit,
        degenerate: degenerate_diag,
        rate_table,
    })
}
