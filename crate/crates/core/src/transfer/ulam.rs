//! Sparse Ulam matrices and the transfer cocycle.

use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::driving::DrivingSystem;
use crate::maps::{MapFamily, MapParameter};
use crate::transfer::TransferError;

/// Row-compressed `k×k` Ulam matrix with entries
/// `P(i,j) = m(A_i ∩ T⁻¹A_j) / m(A_i)` over the uniform grid cells
/// `A_i = [i/k, (i+1)/k)`.
///
/// The density action is the left product `u = vᵀP`: on the uniform grid
/// all cells have equal measure, so the row-stochastic matrix transforms
/// cell values of densities directly and uniform maps to uniform exactly
/// when the map preserves Lebesgue measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamOperator<S> {
    k: usize,
    rows: Vec<Vec<(u32, S)>>,
}

impl<S: Copy + Zero + std::ops::Mul<Output = S> + std::ops::AddAssign> UlamOperator<S> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entry(&self, i: usize, j: usize) -> S {
        let mut acc = S::zero();
        for &(col, w) in &self.rows[i] {
            if col as usize == j {
                acc += w;
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<Vec<S>> {
        let mut dense = vec![vec![S::zero(); self.k]; self.k];
        for (i, row) in self.rows.iter().enumerate() {
            for &(col, w) in row {
                dense[i][col as usize] += w;
            }
        }
        dense
    }

    /// Transfer action on a density vector: `u_j = Σ_i v_i P(i,j)`.
    pub fn apply(&self, v: &[S]) -> Vec<S> {
        debug_assert_eq!(v.len(), self.k);
        let mut out = vec![S::zero(); self.k];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            for &(col, w) in row {
                out[col as usize] += vi * w;
            }
        }
        out
    }

    /// Matrix of the composition `self` then `later` (cocycle order:
    /// `apply(compose) = later.apply(self.apply(·))`).
    pub fn compose(&self, later: &UlamOperator<S>) -> UlamOperator<S> {
        assert_eq!(self.k, later.k);
        let mut rows = Vec::with_capacity(self.k);
        let mut scratch: Vec<S> = vec![S::zero(); self.k];
        let mut touched: Vec<u32> = Vec::new();
        for row in &self.rows {
            for &(mid, w1) in row {
                for &(col, w2) in &later.rows[mid as usize] {
                    let c = col as usize;
                    if scratch[c].is_zero() {
                        touched.push(col);
                    }
                    scratch[c] += w1 * w2;
                }
            }
            touched.sort_unstable();
            let mut new_row = Vec::with_capacity(touched.len());
            for &c in &touched {
                new_row.push((c, scratch[c as usize]));
                scratch[c as usize] = S::zero();
            }
            touched.clear();
            rows.push(new_row);
        }
        UlamOperator { k: self.k, rows }
    }
}

impl<S: Copy + Zero + std::ops::Mul<Output = S> + std::ops::AddAssign + std::fmt::Display>
    UlamOperator<S>
{
    /// Dense CSV export: a metadata header row `(k, fiber_index, twist)`
    /// followed by one row of entries per grid cell.
    pub fn to_csv(&self, fiber_index: i64, twist: &str) -> String {
        let mut out = format!("k={},fiber_index={},twist={}\n", self.k, fiber_index, twist);
        for row in self.to_dense() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                let _ = std::fmt::Write::write_fmt(&mut out, format_args!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

impl UlamOperator<f64> {
    pub fn identity(k: usize) -> Self {
        UlamOperator {
            k,
            rows: (0..k).map(|i| vec![(i as u32, 1.0)]).collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    /// Row-scale by unit-modulus or general complex weights (used by the
    /// twisted operators: multiply by `e^(θ·g)` on each cell, then
    /// transfer).
    pub(crate) fn scale_rows_complex(&self, weights: &[Complex64]) -> UlamOperator<Complex64> {
        UlamOperator {
            k: self.k,
            rows: self
                .rows
                .iter()
                .enumerate()
                .map(|(i, row)| row.iter().map(|&(c, w)| (c, weights[i] * w)).collect())
            .collect(),
        }
    }

    /// Plain transfer step on a complex state.
    pub(crate) fn apply_complex(&self, v: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.k);
        let mut out = vec![Complex64::zero(); self.k];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i];
            for &(col, w) in row {
                out[col as usize] += vi * w;
            }
        }
        out
    }

    /// Apply with on-the-fly row weights, without materializing the
    /// twisted matrix.
    pub(crate) fn apply_weighted(&self, v: &[Complex64], weights: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.k);
        let mut out = vec![Complex64::zero(); self.k];
        for (i, row) in self.rows.iter().enumerate() {
            let vi = v[i] * weights[i];
            for &(col, w) in row {
                out[col as usize] += vi * w;
            }
        }
        out
    }
}

/// Exact (affine) or root-resolved (sine-perturbed) Ulam matrix of one
/// map at grid size `k`.
///
/// Cell transition measures are interval lengths between branchwise
/// preimages of the grid lines; for affine branches these are closed
/// form, for sine branches the monotone inverse is bisected to machine
/// precision, well inside the 1e-12 contract.
pub fn ulam_matrix(p: &MapParameter, k: usize) -> Result<UlamOperator<f64>, TransferError> {
    if k < 2 {
        return Err(TransferError::InvalidGrid(k));
    }
    let kf = k as f64;
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); k];
    for br in p.branches() {
        let increasing = br.eval(br.lo) <= br.eval(br.hi);
        // cells overlapping the branch domain
        let i_lo = (br.lo * kf).floor() as usize;
        let i_hi = ((br.hi * kf).ceil() as usize).min(k);
        for i in i_lo..i_hi {
            let a = (i as f64 / kf).max(br.lo);
            let b = (((i + 1) as f64) / kf).min(br.hi);
            if a >= b {
                continue;
            }
            let (y_lo, y_hi) = br.image(a, b);
            let j_lo = ((y_lo * kf).floor() as usize).min(k - 1);
            let j_hi = ((y_hi * kf).ceil() as usize).clamp(j_lo + 1, k);
            for j in j_lo..j_hi {
                let c_lo = (j as f64 / kf).max(y_lo);
                let c_hi = (((j + 1) as f64) / kf).min(y_hi);
                if c_lo >= c_hi {
                    continue;
                }
                // preimage of [c_lo, c_hi] inside [a, b]
                let (x0, x1) = if increasing {
                    (br.invert(c_lo, a, b), br.invert(c_hi, a, b))
                } else {
                    (br.invert(c_hi, a, b), br.invert(c_lo, a, b))
                };
                let len = (x1 - x0).max(0.0);
                if len > 0.0 {
                    rows[i].push((j as u32, len * kf));
                }
            }
        }
    }
    for row in &mut rows {
        row.sort_unstable_by_key(|&(c, _)| c);
        // merge duplicate columns from adjacent branch pieces
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
        for &(c, w) in row.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += w,
                _ => merged.push((c, w)),
            }
        }
        *row = merged;
    }
    Ok(UlamOperator { k, rows })
}

/// The transfer-operator cocycle over one driving orbit at a fixed grid:
/// per-alphabet Ulam matrices plus the fiber lookup.
#[derive(Debug, Clone)]
pub struct Cocycle {
    fam: MapFamily,
    sys: DrivingSystem,
    k: usize,
    ops: Vec<UlamOperator<f64>>,
}

impl Cocycle {
    pub fn new(fam: MapFamily, sys: DrivingSystem, k: usize) -> Result<Self, TransferError> {
        let ops = fam
            .alphabet()
            .iter()
            .map(|p| ulam_matrix(p, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Cocycle { fam, sys, k, ops })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn family(&self) -> &MapFamily {
        &self.fam
    }

    pub fn driving(&self) -> &DrivingSystem {
        &self.sys
    }

    /// The single-step operator acting at fiber `i`.
    pub fn op_at(&self, i: i64) -> &UlamOperator<f64> {
        &self.ops[self.sys.parameter_at(i) % self.ops.len()]
    }

    pub fn map_at(&self, i: i64) -> &MapParameter {
        self.fam.map_at(&self.sys, i)
    }

    /// `ℒ_(σ^start ω)^n v`: apply `n` single-step operators starting at
    /// fiber `start`, later fibers applied last.
    pub fn apply_window(&self, v: &[f64], start: i64, n: usize) -> Vec<f64> {
        let mut u = v.to_vec();
        for step in 0..n {
            u = self.op_at(start + step as i64).apply(&u);
        }
        u
    }

    /// Explicit matrix of the `n`-step cocycle starting at `start`.
    pub fn compose(&self, start: i64, n: usize) -> UlamOperator<f64> {
        let mut acc = UlamOperator::identity(self.k);
        for step in 0..n {
            acc = acc.compose(self.op_at(start + step as i64));
        }
        acc
    }
}
