//! Big/small block decomposition of dyadic time ranges.
//!
//! Level `n` tiles the integer range `[2^n, 2^(n+1))` with `F = 2^f`
//! summation intervals `I_{n,j}` separated by `F` gaps `J_{n,j}`, where
//! `f = ⌊βn⌋`. Gap lengths follow the 2-adic valuation of `j`; all
//! summation intervals share one length. Block sums over the `I`
//! intervals are nearly independent because the gaps grow with the
//! level, which is what the downstream diagnostics exploit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error("beta {0} outside (0, 1)")]
    BadBeta(f64),
    #[error("eps {eps} outside (0, 1 - beta) for beta {beta}")]
    BadEps { beta: f64, eps: f64 },
    #[error(
        "level {n}: summation length 2^(n-f) - (f+2)·2^(⌊εn⌋-1) = {ideal} not positive \
         (2^n = {range} leaves {left} for {f_count} intervals after gaps)"
    )]
    NonpositiveBlockLength {
        n: u32,
        ideal: f64,
        range: u64,
        left: i128,
        f_count: u64,
    },
    #[error("level {0} too large (positions overflow u64)")]
    LevelTooLarge(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalKind {
    /// Summation interval `I_{n,j}`.
    Block,
    /// Gap `J_{n,j}`.
    Gap,
}

/// One interval of the tiling. `start` is an absolute position on the
/// 1-based time axis of the summands `A_ℓ`; the interval covers
/// `start .. start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInterval {
    pub kind: IntervalKind,
    pub j: u32,
    pub start: u64,
    pub len: u64,
}

/// The exact tiling of `[2^n, 2^(n+1))` at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub n: u32,
    pub beta: f64,
    pub eps: f64,
    /// `f = ⌊βn⌋`.
    pub f: u32,
    /// `F = 2^f`, the number of summation intervals (and of gaps).
    pub count: u64,
    /// Alternating `J_{n,0}, I_{n,0}, …, J_{n,F-1}, I_{n,F-1}`.
    pub intervals: Vec<BlockInterval>,
    /// Slack absorbed into the last summation interval when the ideal
    /// length is not an integer. Zero whenever the closed form divides.
    pub remainder_absorbed: u64,
}

impl BlockDecomposition {
    pub fn gaps(&self) -> impl Iterator<Item = &BlockInterval> {
        self.intervals
            .iter()
            .filter(|iv| iv.kind == IntervalKind::Gap)
    }

    pub fn summation_blocks(&self) -> impl Iterator<Item = &BlockInterval> {
        self.intervals
            .iter()
            .filter(|iv| iv.kind == IntervalKind::Block)
    }

    pub fn block(&self, j: u32) -> &BlockInterval {
        &self.intervals[2 * j as usize + 1]
    }

    pub fn total_gap_len(&self) -> u64 {
        self.gaps().map(|iv| iv.len).sum()
    }

    /// Closed form for the total gap length: `2^⌊εn⌋ · 2^(f-1) · (f+2)`,
    /// from the valuation identity Σ_{j=1}^{2^f - 1} 2^(ν₂(j)) = f·2^(f-1).
    pub fn gap_len_closed_form(&self) -> u64 {
        let e = eps_exponent(self.n, self.eps);
        if self.f == 0 {
            // single gap J_{n,0} of length 2^e · 2^0
            return 1u64 << e;
        }
        (1u64 << e) * (1u64 << (self.f - 1)) * (u64::from(self.f) + 2)
    }

    /// True iff the intervals are consecutive, disjoint and cover exactly
    /// `[2^n, 2^(n+1))`.
    pub fn tiles_exactly(&self) -> bool {
        let mut pos = 1u64 << self.n;
        for iv in &self.intervals {
            if iv.start != pos || iv.len == 0 {
                return false;
            }
            pos += iv.len;
        }
        pos == 1u64 << (self.n + 1)
    }
}

fn eps_exponent(n: u32, eps: f64) -> u32 {
    (eps * f64::from(n)).floor() as u32
}

/// Smallest `r` with bit `r` of `j` set (`j ≥ 1`).
fn two_adic_valuation(j: u64) -> u32 {
    j.trailing_zeros()
}

fn validate_params(beta: f64, eps: f64) -> Result<(), BlockError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(BlockError::BadBeta(beta));
    }
    if !(eps > 0.0 && eps < 1.0 - beta) {
        return Err(BlockError::BadEps { beta, eps });
    }
    Ok(())
}

/// Build the level-`n` decomposition.
///
/// Gap lengths: `|J_{n,0}| = 2^⌊εn⌋·2^f` and `|J_{n,j}| = 2^⌊εn⌋·2^(ν₂(j))`
/// for `1 ≤ j < F`. The ideal common summation length is
/// `2^(n-f) - (f+2)·2^(⌊εn⌋-1)`; when that is not an integer the floor is
/// used and the remainder (< F) is absorbed into `I_{n,F-1}`, preserving
/// the exact tiling.
pub fn build_blocks(n: u32, beta: f64, eps: f64) -> Result<BlockDecomposition, BlockError> {
    validate_params(beta, eps)?;
    if n >= 62 {
        return Err(BlockError::LevelTooLarge(n));
    }
    let f = (beta * f64::from(n)).floor() as u32;
    let count = 1u64 << f;
    let e = eps_exponent(n, eps);

    let gap_len = |j: u64| -> u64 {
        if j == 0 {
            (1u64 << e) << f
        } else {
            (1u64 << e) << two_adic_valuation(j)
        }
    };
    let total_gaps: u64 = (0..count).map(gap_len).sum();

    let range = 1u64 << n;
    let left = i128::from(range) - i128::from(total_gaps);
    let block_len = if left > 0 { left as u64 / count } else { 0 };
    let ideal = f64::from(n - f).exp2() - (f64::from(f) + 2.0) * (f64::from(e) - 1.0).exp2();
    if block_len == 0 {
        return Err(BlockError::NonpositiveBlockLength {
            n,
            ideal,
            range,
            left,
            f_count: count,
        });
    }
    let remainder = left as u64 - block_len * count;

    let mut intervals = Vec::with_capacity(2 * count as usize);
    let mut pos = range;
    for j in 0..count {
        let jl = gap_len(j);
        intervals.push(BlockInterval {
            kind: IntervalKind::Gap,
            j: j as u32,
            start: pos,
            len: jl,
        });
        pos += jl;
        let il = if j == count - 1 {
            block_len + remainder
        } else {
            block_len
        };
        intervals.push(BlockInterval {
            kind: IntervalKind::Block,
            j: j as u32,
            start: pos,
            len: il,
        });
        pos += il;
    }
    debug_assert_eq!(pos, 1u64 << (n + 1));

    Ok(BlockDecomposition {
        n,
        beta,
        eps,
        f,
        count,
        intervals,
        remainder_absorbed: remainder,
    })
}

/// Partial order on block labels: `(n, j) ≺ (n', j')` iff `I_{n,j}` lies
/// to the left of `I_{n',j'}`. Both levels must use the same `(β, ε)`.
pub fn precedes(a: (u32, u32), b: (u32, u32), beta: f64, eps: f64) -> Result<bool, BlockError> {
    let da = build_blocks(a.0, beta, eps)?;
    let db = build_blocks(b.0, beta, eps)?;
    Ok(da.block(a.1).start < db.block(b.1).start)
}

/// Gap census up to `2^(N+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCensus {
    /// Exact number of integers lying in gaps of valid levels `≤ N`.
    pub count: u64,
    /// Reference envelope `2^(ε(N+1)) · 2^(βN) · (εN + 2)` with unit constant.
    pub envelope_bound: f64,
    /// Levels whose parameters give a nonpositive summation length; their
    /// ranges carry no decomposition and are excluded from the count.
    pub skipped_levels: Vec<u32>,
}

/// Count the integers covered by gaps over levels `1..=n_max`.
pub fn gap_census(n_max: u32, beta: f64, eps: f64) -> Result<GapCensus, BlockError> {
    validate_params(beta, eps)?;
    let mut count = 0u64;
    let mut skipped = Vec::new();
    for n in 1..=n_max {
        match build_blocks(n, beta, eps) {
            Ok(d) => count += d.total_gap_len(),
            Err(BlockError::NonpositiveBlockLength { .. }) => skipped.push(n),
            Err(e) => return Err(e),
        }
    }
    let nf = f64::from(n_max);
    let envelope_bound = (eps * (nf + 1.0)).exp2() * (beta * nf).exp2() * (eps * nf + 2.0);
    Ok(GapCensus {
        count,
        envelope_bound,
        skipped_levels: skipped,
    })
}
