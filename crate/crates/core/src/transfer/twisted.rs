//! Twisted transfer operators and characteristic functionals.
//!
//! The twist multiplies a density by `e^(θ·g_ω)` before the transfer
//! step, so chains of twisted and plain operators paired against the
//! equivariant density realize joint characteristic functions of block
//! sums of the process `A_ℓ = g_(σ^ℓ ω) ∘ T_ω^ℓ`. Replacing the plain
//! chain across a gap by the rank-one projection factorizes the
//! functional exactly, which is what the mixing-gap diagnostic measures.

use num_complex::Complex64;

use crate::maps::MapParameter;
use crate::observable::Observable;
use crate::transfer::density::DensityFamily;
use crate::transfer::norms::{bv_norm, mass_complex};
use crate::transfer::ulam::{ulam_matrix, Cocycle, UlamOperator};
use crate::transfer::TransferError;

/// Twist weights `e^(θ·g)` per cell from the fiber grids of `g`.
fn twist_weights(g_fiber: &[Vec<f64>], theta: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut w = vec![Complex64::new(0.0, 0.0); k];
    for (coef, row) in theta.iter().zip(g_fiber) {
        for (acc, &gv) in w.iter_mut().zip(row) {
            *acc += coef * gv;
        }
    }
    w.into_iter().map(|z| z.exp()).collect()
}

fn check_theta(theta: &[Complex64]) -> Result<(), TransferError> {
    let norm = theta.iter().map(|t| t.norm_sqr()).sum::<f64>().sqrt();
    if norm > 1.0 + 1e-12 {
        return Err(TransferError::TwistTooLarge(norm));
    }
    Ok(())
}

/// The matrix of `ℒ_ω^θ h = ℒ_ω(e^(θ·g_ω) h)`: multiply, then transfer.
/// At `θ = 0` this is the plain Ulam matrix. `|θ| ≤ 1` enforced.
pub fn twisted_ulam(
    p: &MapParameter,
    g_fiber: &[Vec<f64>],
    theta: &[Complex64],
    k: usize,
) -> Result<UlamOperator<Complex64>, TransferError> {
    check_theta(theta)?;
    let base = ulam_matrix(p, k)?;
    let weights = twist_weights(g_fiber, theta, k);
    Ok(base.scale_rows_complex(&weights))
}

/// One block of twisted steps: times `start..end` (offsets from the
/// anchor fiber) twisted by `i·t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub start: u64,
    pub end: u64,
    pub t: Vec<f64>,
}

impl BlockSpec {
    pub fn new(start: u64, end: u64, t: Vec<f64>) -> Self {
        BlockSpec { start, end, t }
    }

    fn theta(&self) -> Vec<Complex64> {
        self.t.iter().map(|&x| Complex64::new(0.0, x)).collect()
    }
}

fn check_blocks(blocks: &[BlockSpec]) -> Result<(), TransferError> {
    for w in blocks.windows(2) {
        if w[0].end > w[1].start {
            return Err(TransferError::OverlappingBlocks {
                s0: w[0].start,
                e0: w[0].end,
                s1: w[1].start,
                e1: w[1].end,
            });
        }
    }
    for b in blocks {
        let norm = b.t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1.0 + 1e-12 {
            return Err(TransferError::TwistTooLarge(norm));
        }
    }
    Ok(())
}

/// The joint characteristic functional
/// `E_ω[exp(i Σ_j t_j · Σ_(ℓ in block j) A_ℓ)]`:
/// thread the equivariant density through twisted steps on blocks and
/// plain steps on gaps, then integrate.
///
/// `q_gaps` lists inter-block gap indices (gap `j` separates blocks `j`
/// and `j+1`) whose plain chain is replaced by the rank-one projection
/// `Q^gap h = ⟨ξ,h⟩·h⁰`; with a gap projected the functional factorizes
/// exactly into the product of the two sides' functionals.
pub fn char_functional(
    coc: &Cocycle,
    densities: &DensityFamily,
    g: &Observable,
    fiber_index: i64,
    blocks: &[BlockSpec],
    q_gaps: &[usize],
) -> Result<Complex64, TransferError> {
    check_blocks(blocks)?;
    if blocks.is_empty() {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let k = coc.k();
    let (fam, sys) = (coc.family(), coc.driving());

    // plain steps before the first block fix the mass and can be skipped
    // by starting from the equivariant density at the first block
    let start_time = blocks[0].start;
    let h0 = densities.at(fiber_index + start_time as i64)?;
    let mut u: Vec<Complex64> = h0.values.iter().map(|&x| Complex64::new(x, 0.0)).collect();

    let mut time = start_time;
    for (bi, block) in blocks.iter().enumerate() {
        // gap before this block
        if block.start > time {
            if bi > 0 && q_gaps.contains(&(bi - 1)) {
                let m = mass_complex(&u);
                let h = densities.at(fiber_index + block.start as i64)?;
                u = h.values.iter().map(|&x| m * x).collect();
            } else {
                for step in time..block.start {
                    let fiber = fiber_index + step as i64;
                    u = coc.op_at(fiber).apply_complex(&u);
                }
            }
            time = block.start;
        }
        let theta = block.theta();
        for step in block.start..block.end {
            let fiber = fiber_index + step as i64;
            let grids = g.fiber_grid(fam, sys, fiber, k);
            let weights = twist_weights(&grids, &theta, k);
            u = coc.op_at(fiber).apply_weighted(&u, &weights);
            time = step + 1;
        }
    }
    // trailing plain steps preserve the pairing with 1
    Ok(mass_complex(&u))
}

/// Mixing-gap diagnostic between two block groups separated by a plain
/// gap of length `gap_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingGapReport {
    pub gap_k: usize,
    /// `|E[joint] - E[left]·E[right]|`.
    pub value: f64,
    pub joint: Complex64,
    pub factored: Complex64,
    /// Strong norms of the real and imaginary parts of the state entering
    /// the gap; together with the projection defect at `gap_k` they bound
    /// `value` from above.
    pub entry_bv_real: f64,
    pub entry_bv_imag: f64,
}

/// Compute `|E_ω[joint] - E_ω[left]·E_ω[shifted right]|`, the quantity
/// whose exponential decay in `gap_k` the spectral mixing condition
/// asserts. The factored term is the same chain with the gap replaced by
/// the rank-one projection.
pub fn mixing_gap(
    coc: &Cocycle,
    densities: &DensityFamily,
    g: &Observable,
    fiber_index: i64,
    left: &[BlockSpec],
    right: &[BlockSpec],
    gap_k: usize,
) -> Result<MixingGapReport, TransferError> {
    check_blocks(left)?;
    check_blocks(right)?;
    let left_end = left.iter().map(|b| b.end).max().unwrap_or(0);
    let mut all = left.to_vec();
    for b in right {
        all.push(BlockSpec::new(
            left_end + gap_k as u64 + b.start,
            left_end + gap_k as u64 + b.end,
            b.t.clone(),
        ));
    }
    let joint = char_functional(coc, densities, g, fiber_index, &all, &[])?;
    let factored = char_functional(
        coc,
        densities,
        g,
        fiber_index,
        &all,
        &[left.len().saturating_sub(1)],
    )?;

    // state entering the gap: the left chain applied to the equivariant
    // density (for the defect-based envelope)
    let entry = {
        let k = coc.k();
        let h0 = densities.at(fiber_index + left.first().map_or(0, |b| b.start) as i64)?;
        let mut u: Vec<Complex64> = h0.values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut time = left.first().map_or(0, |b| b.start);
        for block in left {
            for step in time..block.start {
                u = coc.op_at(fiber_index + step as i64).apply_complex(&u);
            }
            let theta = block.theta();
            for step in block.start..block.end {
                let fiber = fiber_index + step as i64;
                let grids = g.fiber_grid(coc.family(), coc.driving(), fiber, k);
                let weights = twist_weights(&grids, &theta, k);
                u = coc.op_at(fiber).apply_weighted(&u, &weights);
            }
            time = block.end;
        }
        u
    };
    let re: Vec<f64> = entry.iter().map(|z| z.re).collect();
    let im: Vec<f64> = entry.iter().map(|z| z.im).collect();

    Ok(MixingGapReport {
        gap_k,
        value: (joint - factored).norm(),
        joint,
        factored,
        entry_bv_real: bv_norm(&re),
        entry_bv_imag: bv_norm(&im),
    })
}
