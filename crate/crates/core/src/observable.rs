//! Vector-valued observables on the product of base and fiber.
//!
//! An observable assigns to every fiber a `d`-vector of functions on
//! `[0,1]`. Grid representations sample at cell midpoints, which keeps
//! the classical trigonometric identities exact on dyadic grids; orbit
//! simulations evaluate the same functions pointwise.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::driving::DrivingSystem;
use crate::maps::MapFamily;
use crate::transfer::{DensityFamily, TransferError};

/// A fixed scalar function on the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pointwise {
    /// `cos(2πx)`
    Cos,
    /// `sin(2πx)`
    Sin,
    /// `x`
    Linear,
    /// Indicator of `[lo, hi)`.
    Indicator { lo: f64, hi: f64 },
    /// Piecewise-constant table over a uniform grid of its own length.
    GridTable(Vec<f64>),
}

impl Pointwise {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Pointwise::Cos => (2.0 * std::f64::consts::PI * x).cos(),
            Pointwise::Sin => (2.0 * std::f64::consts::PI * x).sin(),
            Pointwise::Linear => x,
            Pointwise::Indicator { lo, hi } => {
                if x >= *lo && x < *hi {
                    1.0
                } else {
                    0.0
                }
            }
            Pointwise::GridTable(t) => {
                let idx = ((x * t.len() as f64) as usize).min(t.len() - 1);
                t[idx]
            }
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            Pointwise::Cos | Pointwise::Sin | Pointwise::Linear => 1.0,
            Pointwise::Indicator { .. } => 1.0,
            Pointwise::GridTable(t) => t.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        }
    }
}

/// One coordinate of an observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Component {
    /// Fiber-independent function.
    Fixed(Pointwise),
    /// `q - q∘T_ω`: a coboundary of the skew product, fiber-dependent
    /// through the map acting at the fiber. Birkhoff sums of this
    /// component telescope, so its asymptotic variance vanishes.
    Coboundary { q: Pointwise },
}

/// A `d`-dimensional observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    components: Vec<Component>,
}

impl Observable {
    pub fn new(components: Vec<Component>) -> Self {
        assert!(!components.is_empty(), "observable needs at least one coordinate");
        Observable { components }
    }

    pub fn scalar(c: Component) -> Self {
        Observable::new(vec![c])
    }

    pub fn cos() -> Self {
        Observable::scalar(Component::Fixed(Pointwise::Cos))
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Pointwise evaluation of all coordinates at `(fiber, x)`.
    pub fn eval_point(&self, fam: &MapFamily, sys: &DrivingSystem, fiber: i64, x: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| match c {
                Component::Fixed(p) => p.eval(x),
                Component::Coboundary { q } => {
                    q.eval(x) - q.eval(fam.map_at(sys, fiber).eval_clamped(x))
                }
            })
            .collect()
    }

    /// Midpoint grid values: `d` rows of `k` cell values at the fiber.
    pub fn fiber_grid(
        &self,
        fam: &MapFamily,
        sys: &DrivingSystem,
        fiber: i64,
        k: usize,
    ) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                (0..k)
                    .map(|i| {
                        let x = (i as f64 + 0.5) / k as f64;
                        match c {
                            Component::Fixed(p) => p.eval(x),
                            Component::Coboundary { q } => {
                                q.eval(x) - q.eval(fam.map_at(sys, fiber).eval_clamped(x))
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// `max_i esssup ‖g^i‖_∞` over the analytic bounds of the components.
    pub fn sup_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|c| match c {
                Component::Fixed(p) => p.sup_bound(),
                Component::Coboundary { q } => 2.0 * q.sup_bound(),
            })
            .fold(0.0, f64::max)
    }
}

/// An observable with its fiberwise means (under the equivariant
/// densities) subtracted: `g'_ω = g_ω - h_ω(g_ω)` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredObservable {
    inner: Observable,
    means: BTreeMap<i64, Vec<f64>>,
}

/// Center fiberwise over the density family's range. The subtracted
/// means are grid expectations, so the output fiber means vanish to
/// rounding on the same grid.
pub fn center_observable(
    g: &Observable,
    fam: &MapFamily,
    sys: &DrivingSystem,
    densities: &DensityFamily,
) -> CenteredObservable {
    let mut means = BTreeMap::new();
    for d in densities.iter() {
        let grids = g.fiber_grid(fam, sys, d.fiber_index, d.k);
        let m: Vec<f64> = grids.iter().map(|row| d.expect(row)).collect();
        means.insert(d.fiber_index, m);
    }
    CenteredObservable {
        inner: g.clone(),
        means,
    }
}

/// Streaming variant of [`center_observable`]: pulls the density back
/// once at `start`, then pushes it forward across `len` fibers keeping
/// only the running means. Memory stays `O(d·len)` instead of holding a
/// full density family, which matters when centering along long orbits.
pub fn center_observable_over(
    g: &Observable,
    coc: &crate::transfer::Cocycle,
    start: i64,
    len: usize,
    tol: f64,
    n_max: usize,
) -> Result<CenteredObservable, TransferError> {
    let (fam, sys) = (coc.family(), coc.driving());
    let k = coc.k();
    let first = crate::transfer::fiber_density(coc, start, tol, n_max)?;
    let mut means = BTreeMap::new();
    let mut values = first.values;
    for step in 0..len {
        let fiber = start + step as i64;
        let grids = g.fiber_grid(fam, sys, fiber, k);
        let m: Vec<f64> = grids
            .iter()
            .map(|row| {
                row.iter().zip(&values).map(|(g, h)| g * h).sum::<f64>() / k as f64
            })
            .collect();
        means.insert(fiber, m);
        if step + 1 < len {
            values = coc.op_at(fiber).apply(&values);
            let mass = values.iter().sum::<f64>() / k as f64;
            if mass > 0.0 {
                for v in &mut values {
                    *v /= mass;
                }
            }
        }
    }
    Ok(CenteredObservable {
        inner: g.clone(),
        means,
    })
}

impl CenteredObservable {
    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn inner(&self) -> &Observable {
        &self.inner
    }

    pub fn mean_at(&self, fiber: i64) -> Result<&Vec<f64>, TransferError> {
        self.means
            .get(&fiber)
            .ok_or_else(|| self.out_of_range(fiber))
    }

    fn out_of_range(&self, fiber: i64) -> TransferError {
        let lo = self.means.keys().next().copied().unwrap_or(0);
        let hi = self.means.keys().next_back().copied().unwrap_or(0);
        TransferError::FiberOutOfRange(fiber, lo, hi + 1)
    }

    pub fn fiber_grid(
        &self,
        fam: &MapFamily,
        sys: &DrivingSystem,
        fiber: i64,
        k: usize,
    ) -> Result<Vec<Vec<f64>>, TransferError> {
        let mean = self.mean_at(fiber)?;
        let mut grids = self.inner.fiber_grid(fam, sys, fiber, k);
        for (row, m) in grids.iter_mut().zip(mean) {
            for v in row.iter_mut() {
                *v -= m;
            }
        }
        Ok(grids)
    }

    pub fn eval_point(
        &self,
        fam: &MapFamily,
        sys: &DrivingSystem,
        fiber: i64,
        x: f64,
    ) -> Result<Vec<f64>, TransferError> {
        let mean = self.mean_at(fiber)?;
        let mut vals = self.inner.eval_point(fam, sys, fiber, x);
        for (v, m) in vals.iter_mut().zip(mean) {
            *v -= m;
        }
        Ok(vals)
    }

    /// Grid of the scalar projection `v·g` at one fiber.
    pub fn directional_grid(
        &self,
        fam: &MapFamily,
        sys: &DrivingSystem,
        fiber: i64,
        k: usize,
        v: &[f64],
    ) -> Result<Vec<f64>, TransferError> {
        let grids = self.fiber_grid(fam, sys, fiber, k)?;
        let mut out = vec![0.0; k];
        for (coef, row) in v.iter().zip(&grids) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += coef * x;
            }
        }
        Ok(out)
    }

    pub fn sup_bound(&self) -> f64 {
        let mean_bound = self
            .means
            .values()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |a, x| a.max(x.abs()));
        self.inner.sup_bound() + mean_bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driving::DrivingKind;
    use crate::maps::MapParameter;
    use crate::transfer::{density_family, Cocycle};

    fn doubling_setup(k: usize) -> (MapFamily, DrivingSystem, Cocycle) {
        let fam = MapFamily::new(vec![MapParameter::doubling()]).unwrap();
        let sys = DrivingSystem::new(DrivingKind::FinitePeriodic { period: 1 }, 0, 1).unwrap();
        let coc = Cocycle::new(fam.clone(), sys.clone(), k).unwrap();
        (fam, sys, coc)
    }

    #[test]
    fn cos_grid_midpoints() {
        let (fam, sys, _) = doubling_setup(4);
        let g = Observable::cos();
        let grid = g.fiber_grid(&fam, &sys, 0, 4);
        let expect: Vec<f64> = (0..4)
            .map(|i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / 4.0).cos())
            .collect();
        assert_eq!(grid[0], expect);
    }

    #[test]
    fn centering_is_exact_on_grid() {
        let (fam, sys, coc) = doubling_setup(64);
        let dens = density_family(&coc, 0, 8, 1e-10, 100).unwrap();
        for g in [
            Observable::cos(),
            Observable::scalar(Component::Fixed(Pointwise::Linear)),
            Observable::scalar(Component::Coboundary { q: Pointwise::Cos }),
        ] {
            let c = center_observable(&g, &fam, &sys, &dens);
            for fiber in 0..8 {
                let grid = c.fiber_grid(&fam, &sys, fiber, 64).unwrap();
                let mean = dens.at(fiber).unwrap().expect(&grid[0]);
                assert!(mean.abs() < 1e-12, "fiber {fiber}: {mean}");
            }
        }
    }

    #[test]
    fn cos_already_centered() {
        // ∫cos = 0 under the uniform density: means vanish, values agree
        let (fam, sys, coc) = doubling_setup(64);
        let dens = density_family(&coc, 0, 4, 1e-10, 100).unwrap();
        let g = Observable::cos();
        let c = center_observable(&g, &fam, &sys, &dens);
        let raw = g.fiber_grid(&fam, &sys, 0, 64);
        let cen = c.fiber_grid(&fam, &sys, 0, 64).unwrap();
        for (a, b) in raw[0].iter().zip(&cen[0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_centered_is_x_minus_half() {
        let (fam, sys, coc) = doubling_setup(64);
        let dens = density_family(&coc, 0, 2, 1e-10, 100).unwrap();
        let g = Observable::scalar(Component::Fixed(Pointwise::Linear));
        let c = center_observable(&g, &fam, &sys, &dens);
        let m = c.mean_at(0).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12, "mean {}", m[0]);
    }

    #[test]
    fn indicator_mean_under_three_branch_density() {
        use crate::maps::Branch;
        let three = MapParameter::new(
            "three-branch",
            vec![
                Branch::affine(0.0, 0.5, 2.0, 0.0),
                Branch::affine(0.5, 0.75, 2.0, 0.0),
                Branch::affine(0.75, 1.0, 2.0, 0.0),
            ],
        )
        .unwrap();
        let fam = MapFamily::new(vec![three]).unwrap();
        let sys = DrivingSystem::new(DrivingKind::FinitePeriodic { period: 1 }, 0, 1).unwrap();
        let coc = Cocycle::new(fam.clone(), sys.clone(), 256).unwrap();
        let dens = density_family(&coc, 0, 2, 1e-12, 200).unwrap();
        let g = Observable::scalar(Component::Fixed(Pointwise::Indicator { lo: 0.0, hi: 0.5 }));
        let c = center_observable(&g, &fam, &sys, &dens);
        // h([0,1/2)) = (4/3)(1/2) = 2/3
        assert!((c.mean_at(0).unwrap()[0] - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn coboundary_evaluates_through_the_fiber_map() {
        let (fam, sys, _) = doubling_setup(8);
        let g = Observable::scalar(Component::Coboundary { q: Pointwise::Cos });
        let vals = g.eval_point(&fam, &sys, 0, 0.3);
        let expect = (2.0 * std::f64::consts::PI * 0.3).cos()
            - (2.0 * std::f64::consts::PI * 0.6).cos();
        assert!((vals[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_fiber_rejected() {
        let (fam, sys, coc) = doubling_setup(16);
        let dens = density_family(&coc, 0, 4, 1e-10, 100).unwrap();
        let c = center_observable(&Observable::cos(), &fam, &sys, &dens);
        assert!(c.fiber_grid(&fam, &sys, 99, 16).is_err());
    }
}
