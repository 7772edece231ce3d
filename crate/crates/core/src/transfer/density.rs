//! Equivariant fiber densities.
//!
//! The density at fiber `ω` is the pull-back limit
//! `h_ω = lim_n ℒ_(σ^(-n)ω)^n 1`: start from the uniform density `n`
//! steps in the past and push forward to the present. Uniform-norm decay
//! on mean-zero vectors makes the limit exist and makes the family
//! equivariant: `ℒ_ω h_ω = h_(σω)`.

use serde::{Deserialize, Serialize};

use crate::transfer::norms::l1_norm;
use crate::transfer::{Cocycle, TransferError};

/// A piecewise-constant probability density on the `k`-cell grid:
/// `(1/k)·Σ values = 1`, values nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberDensity {
    pub k: usize,
    pub values: Vec<f64>,
    pub fiber_index: i64,
    /// L¹ distance between the last two pull-back iterates.
    pub convergence_residual: f64,
}

impl FiberDensity {
    pub fn uniform(k: usize, fiber_index: i64) -> Self {
        FiberDensity {
            k,
            values: vec![1.0; k],
            fiber_index,
            convergence_residual: 0.0,
        }
    }

    /// Expectation of a grid function under this density.
    pub fn expect(&self, g: &[f64]) -> f64 {
        debug_assert_eq!(g.len(), self.k);
        self.values
            .iter()
            .zip(g)
            .map(|(h, gi)| h * gi)
            .sum::<f64>()
            / self.k as f64
    }

    fn renormalize(&mut self) {
        let m = self.values.iter().sum::<f64>() / self.k as f64;
        if m > 0.0 {
            for v in &mut self.values {
                *v /= m;
            }
        }
    }
}

/// Pull-back computation of the equivariant density at one fiber.
///
/// Iterates `n ↦ ℒ_(σ^(-n)ω)^n 1` until two successive iterates differ by
/// less than `tol` in L¹, renormalizes, and records the residual. Fails
/// with the residual trace when `n_max` pull-backs are not enough, which
/// signals that uniform decay does not hold at this resolution.
pub fn fiber_density(
    coc: &Cocycle,
    fiber_index: i64,
    tol: f64,
    n_max: usize,
) -> Result<FiberDensity, TransferError> {
    let k = coc.k();
    let uniform = vec![1.0; k];
    let mut prev = uniform.clone();
    let mut trace: Vec<f64> = Vec::new();
    for n in 1..=n_max {
        // chain from fiber_index - n forward to fiber_index
        let cur = coc.apply_window(&uniform, fiber_index - n as i64, n);
        let diff: f64 = l1_norm(
            &cur.iter()
                .zip(&prev)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        trace.push(diff);
        if diff < tol {
            let mut d = FiberDensity {
                k,
                values: cur,
                fiber_index,
                convergence_residual: diff,
            };
            d.renormalize();
            return Ok(d);
        }
        prev = cur;
    }
    let tail = trace.split_off(trace.len().saturating_sub(8));
    Err(TransferError::NonConvergence {
        tol,
        n_max,
        trace: tail,
    })
}

/// Equivariant densities over a contiguous fiber window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFamily {
    start: i64,
    densities: Vec<FiberDensity>,
}

impl DensityFamily {
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.densities.len() as i64
    }

    pub fn at(&self, fiber: i64) -> Result<&FiberDensity, TransferError> {
        if fiber < self.start || fiber >= self.end() {
            return Err(TransferError::FiberOutOfRange(
                fiber,
                self.start,
                self.end(),
            ));
        }
        Ok(&self.densities[(fiber - self.start) as usize])
    }

    pub fn iter(&self) -> impl Iterator<Item = &FiberDensity> {
        self.densities.iter()
    }
}

/// Densities on fibers `start..start+len`: one pull-back at the left end,
/// then push-forwards along the orbit (mass is conserved exactly, so the
/// push-forward of the limit *is* the next fiber's limit up to the
/// recorded residual).
pub fn density_family(
    coc: &Cocycle,
    start: i64,
    len: usize,
    tol: f64,
    n_max: usize,
) -> Result<DensityFamily, TransferError> {
    let first = fiber_density(coc, start, tol, n_max)?;
    let residual = first.convergence_residual;
    let mut densities = Vec::with_capacity(len);
    densities.push(first);
    for step in 1..len {
        let fiber = start + step as i64;
        let prev = &densities[step - 1];
        let mut next = FiberDensity {
            k: coc.k(),
            values: coc.op_at(fiber - 1).apply(&prev.values),
            fiber_index: fiber,
            convergence_residual: residual,
        };
        next.renormalize();
        densities.push(next);
    }
    Ok(DensityFamily { start, densities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driving::{DrivingKind, DrivingSystem};
    use crate::maps::{Branch, MapFamily, MapParameter};

    fn constant_cocycle(p: MapParameter, k: usize) -> Cocycle {
        let fam = MapFamily::new(vec![p]).unwrap();
        let sys = DrivingSystem::new(DrivingKind::FinitePeriodic { period: 1 }, 0, 1).unwrap();
        Cocycle::new(fam, sys, k).unwrap()
    }

    #[test]
    fn doubling_density_uniform_first_step() {
        let coc = constant_cocycle(MapParameter::doubling(), 64);
        let d = fiber_density(&coc, 0, 1e-10, 200).unwrap();
        assert_eq!(d.convergence_residual, 0.0);
        for v in &d.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn beta_alphabet_density_uniform() {
        // every m·x mod 1 preserves Lebesgue, so the pull-back of 1 is 1
        // under any driving
        let fam = MapFamily::new(vec![
            MapParameter::linear_mod_one(2),
            MapParameter::linear_mod_one(3),
        ])
        .unwrap();
        let sys = DrivingSystem::new(DrivingKind::IidBernoulli, 42, 2).unwrap();
        let coc = Cocycle::new(fam, sys, 128).unwrap();
        let d = fiber_density(&coc, 17, 1e-10, 200).unwrap();
        for v in &d.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    fn three_branch() -> MapParameter {
        MapParameter::new(
            "three-branch",
            vec![
                Branch::affine(0.0, 0.5, 2.0, 0.0),
                Branch::affine(0.5, 0.75, 2.0, 0.0),
                Branch::affine(0.75, 1.0, 2.0, 0.0),
            ],
        )
        .unwrap()
    }

    /// Independent oracle: the exact invariant density of the three-branch
    /// map is piecewise constant on halves, solving the 2-cell
    /// stationarity system c1 = c1/2 + c2, c2 = c1/2 with (c1+c2)/2 = 1.
    fn three_branch_exact() -> (f64, f64) {
        // c1 = 2 c2 and c1 + c2 = 2  =>  c2 = 2/3, c1 = 4/3
        (4.0 / 3.0, 2.0 / 3.0)
    }

    #[test]
    fn three_branch_density_on_halves() {
        let (c1, c2) = three_branch_exact();
        for k in [2usize, 64, 1024] {
            let coc = constant_cocycle(three_branch(), k);
            let d = fiber_density(&coc, 0, 1e-12, 200).unwrap();
            for (i, v) in d.values.iter().enumerate() {
                let expect = if i < k / 2 { c1 } else { c2 };
                assert!((v - expect).abs() < 1e-8, "k={k} cell {i}: {v}");
            }
        }
    }

    #[test]
    fn family_is_equivariant() {
        let fam = MapFamily::new(vec![
            MapParameter::linear_mod_one(2),
            three_branch(),
        ])
        .unwrap();
        let sys = DrivingSystem::new(DrivingKind::IidBernoulli, 3, 2).unwrap();
        let coc = Cocycle::new(fam, sys, 256).unwrap();
        let family = density_family(&coc, -5, 30, 1e-12, 200).unwrap();
        for fiber in -5..24 {
            let pushed = coc.op_at(fiber).apply(&family.at(fiber).unwrap().values);
            let next = &family.at(fiber + 1).unwrap().values;
            let diff: Vec<f64> = pushed.iter().zip(next).map(|(a, b)| a - b).collect();
            assert!(l1_norm(&diff) < 1e-10, "fiber {fiber}");
        }
        // push-forward family matches independent pull-backs
        for fiber in [-5i64, 3, 15, 23] {
            let indep = fiber_density(&coc, fiber, 1e-12, 200).unwrap();
            let diff: Vec<f64> = indep
                .values
                .iter()
                .zip(&family.at(fiber).unwrap().values)
                .map(|(a, b)| a - b)
                .collect();
            assert!(l1_norm(&diff) < 1e-9, "fiber {fiber}");
        }
    }

    #[test]
    fn non_convergence_reported() {
        // a contracting asymmetric seesaw: mass concentrates on a
        // rotating periodic cycle with unequal phase masses, so
        // successive pull-back iterates oscillate at order one in L¹
        let seesaw = MapParameter::new(
            "seesaw",
            vec![
                Branch::affine(0.0, 0.6, 0.5, 0.5),
                Branch::affine(0.6, 1.0, 0.5, 0.0),
            ],
        )
        .unwrap();
        let coc = constant_cocycle(seesaw, 64);
        let err = fiber_density(&coc, 0, 1e-12, 40);
        assert!(matches!(err, Err(TransferError::NonConvergence { .. })));
    }

    #[test]
    fn expectation_under_density() {
        let d = FiberDensity {
            k: 2,
            values: vec![4.0 / 3.0, 2.0 / 3.0],
            fiber_index: 0,
            convergence_residual: 0.0,
        };
        // h([0, 1/2)) = (4/3)·(1/2) = 2/3
        assert!((d.expect(&[1.0, 0.0]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
