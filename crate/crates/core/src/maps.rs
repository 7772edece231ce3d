//! Piecewise expanding maps of the unit interval.
//!
//! A map is a finite list of branches over half-open intervals
//! `[c_i, c_(i+1))` (the last branch is closed at 1). Branches are either
//! affine or affine plus a sine perturbation whose derivative bounds are
//! certified in closed form, so the family constants `b`, `δ` and `D`
//! are exact maxima/minima over the alphabet rather than sampled
//! estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driving::{DrivingSystem, ParameterId};

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("point {0} outside the unit interval")]
    DomainError(f64),
    #[error("branch breakpoints must be strictly increasing from 0 to 1")]
    InvalidBreakpoints,
    #[error("branch [{lo}, {hi}) leaves the unit interval (image [{img_lo}, {img_hi}])")]
    BranchEscapes {
        lo: f64,
        hi: f64,
        img_lo: f64,
        img_hi: f64,
    },
    #[error("sine perturbation |amp·freq| = {0} not below |slope| = {1}: branch not monotone")]
    NotMonotone(f64, f64),
    #[error("family not uniformly expanding: essinf |T'| = {0} <= 1")]
    NotExpanding(f64),
    #[error("empty map alphabet")]
    EmptyAlphabet,
    #[error("parameter id {0} outside alphabet of length {1}")]
    UnknownParameter(ParameterId, usize),
    #[error("covering grid resolution {0} too small (need >= 2)")]
    BadResolution(u32),
}

/// Analytic form of one branch on `[lo, hi)`:
/// `T(x) = slope·(x - lo) + offset + amp·sin(freq·(x - lo))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub offset: f64,
    pub amp: f64,
    pub freq: f64,
}

impl Branch {
    pub fn affine(lo: f64, hi: f64, slope: f64, offset: f64) -> Self {
        Branch {
            lo,
            hi,
            slope,
            offset,
            amp: 0.0,
            freq: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = x - self.lo;
        let mut y = self.slope * t + self.offset;
        if self.amp != 0.0 {
            y += self.amp * (self.freq * t).sin();
        }
        y
    }

    /// Certified `essinf |T'|` on the branch: `|slope| - |amp·freq|`.
    pub fn min_derivative(&self) -> f64 {
        self.slope.abs() - (self.amp * self.freq).abs()
    }

    /// Certified `esssup |T''|` on the branch: `|amp|·freq²`.
    pub fn max_second_derivative(&self) -> f64 {
        self.amp.abs() * self.freq * self.freq
    }

    pub fn is_affine(&self) -> bool {
        self.amp == 0.0
    }

    fn is_increasing(&self) -> bool {
        self.slope > 0.0
    }

    /// Image of `[a, b] ⊆ [lo, hi]` (monotone branch, so the endpoints
    /// bound the image).
    pub fn image(&self, a: f64, b: f64) -> (f64, f64) {
        let (ya, yb) = (self.eval(a), self.eval(b));
        if ya <= yb {
            (ya, yb)
        } else {
            (yb, ya)
        }
    }

    /// Preimage of `y` within `[a, b]`; caller guarantees `y` lies in the
    /// image of `[a, b]`. Closed form for affine branches, bisection
    /// (monotone, certified) otherwise.
    pub fn invert(&self, y: f64, a: f64, b: f64) -> f64 {
        if self.is_affine() {
            return (self.lo + (y - self.offset) / self.slope).clamp(a, b);
        }
        let increasing = self.is_increasing();
        let (mut lo, mut hi) = (a, b);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let v = self.eval(mid);
            if (v < y) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// One piecewise expanding map: branch data over a breakpoint partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapParameter {
    pub name: String,
    branches: Vec<Branch>,
}

const EDGE_TOL: f64 = 1e-9;

impl MapParameter {
    /// Validates geometry: breakpoints strictly increasing spanning
    /// `[0, 1]`, each branch monotone and mapping into the unit interval.
    /// Expansion is *not* required here; it is checked at the family
    /// level so that non-expanding maps can still be built for the
    /// diagnostic paths that must detect them.
    pub fn new(name: impl Into<String>, branches: Vec<Branch>) -> Result<Self, MapError> {
        if branches.is_empty() {
            return Err(MapError::InvalidBreakpoints);
        }
        if branches[0].lo != 0.0 || (branches[branches.len() - 1].hi - 1.0).abs() > 1e-12 {
            return Err(MapError::InvalidBreakpoints);
        }
        for w in branches.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(MapError::InvalidBreakpoints);
            }
        }
        for b in &branches {
            if !(b.hi > b.lo) {
                return Err(MapError::InvalidBreakpoints);
            }
            if b.amp != 0.0 && b.min_derivative() <= 0.0 {
                return Err(MapError::NotMonotone((b.amp * b.freq).abs(), b.slope.abs()));
            }
            let (img_lo, img_hi) = b.image(b.lo, b.hi);
            if img_lo < -EDGE_TOL || img_hi > 1.0 + EDGE_TOL {
                return Err(MapError::BranchEscapes {
                    lo: b.lo,
                    hi: b.hi,
                    img_lo,
                    img_hi,
                });
            }
        }
        Ok(MapParameter {
            name: name.into(),
            branches,
        })
    }

    /// The full-branch map `x ↦ m·x mod 1` with `m ≥ 2` branches.
    pub fn linear_mod_one(m: u32) -> Self {
        let mf = f64::from(m);
        let branches = (0..m)
            .map(|i| {
                Branch::affine(
                    f64::from(i) / mf,
                    f64::from(i + 1) / mf,
                    mf,
                    0.0,
                )
            })
            .collect();
        MapParameter::new(format!("linear-mod-one-{m}"), branches).expect("valid by construction")
    }

    pub fn doubling() -> Self {
        Self::linear_mod_one(2)
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut bp: Vec<f64> = self.branches.iter().map(|b| b.lo).collect();
        bp.push(1.0);
        bp
    }

    /// Index of the branch owning `x` under the half-open convention
    /// (last branch closed).
    pub fn branch_index(&self, x: f64) -> usize {
        let idx = self.branches.partition_point(|b| b.hi <= x);
        idx.min(self.branches.len() - 1)
    }

    /// Evaluate `T(x)`; errors outside the unit interval.
    pub fn eval(&self, x: f64) -> Result<f64, MapError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(MapError::DomainError(x));
        }
        Ok(self.eval_clamped(x))
    }

    /// Evaluation for orbit loops: assumes `x ∈ [0,1]`, clamps rounding
    /// spill at branch images back into the unit interval.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        let b = &self.branches[self.branch_index(x)];
        b.eval(x).clamp(0.0, 1.0)
    }

    pub fn min_expansion(&self) -> f64 {
        self.branches
            .iter()
            .map(Branch::min_derivative)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_second_derivative(&self) -> f64 {
        self.branches
            .iter()
            .map(Branch::max_second_derivative)
            .fold(0.0, f64::max)
    }

    /// True for purely affine maps whose slopes are powers of two; orbits
    /// of such maps collapse onto dyadic rationals in binary floating
    /// point, which the simulator counteracts with jitter.
    pub fn is_dyadic_affine(&self) -> bool {
        self.branches.iter().all(|b| {
            b.is_affine() && {
                let s = b.slope.abs();
                s > 0.0 && s.log2().fract() == 0.0
            }
        })
    }
}

/// The map alphabet the driving system draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFamily {
    alphabet: Vec<MapParameter>,
}

impl MapFamily {
    pub fn new(alphabet: Vec<MapParameter>) -> Result<Self, MapError> {
        if alphabet.is_empty() {
            return Err(MapError::EmptyAlphabet);
        }
        Ok(MapFamily { alphabet })
    }

    pub fn alphabet(&self) -> &[MapParameter] {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    pub fn parameter(&self, id: ParameterId) -> Result<&MapParameter, MapError> {
        self.alphabet
            .get(id)
            .ok_or(MapError::UnknownParameter(id, self.alphabet.len()))
    }

    /// The map acting at orbit position `i`.
    pub fn map_at(&self, sys: &DrivingSystem, i: i64) -> &MapParameter {
        &self.alphabet[sys.parameter_at(i) % self.alphabet.len()]
    }
}

/// The standing constants of the family: max branch count, min expansion,
/// max second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub b: usize,
    pub delta: f64,
    pub d_second: f64,
    pub covering_k: Option<u32>,
}

/// Exact family constants over the (finite) alphabet. Fails loudly when
/// the family is not uniformly expanding.
pub fn family_constants(fam: &MapFamily) -> Result<FamilyConstants, MapError> {
    let b = fam.alphabet.iter().map(MapParameter::branch_count).max().unwrap_or(0);
    let delta = fam
        .alphabet
        .iter()
        .map(MapParameter::min_expansion)
        .fold(f64::INFINITY, f64::min);
    let d_second = fam
        .alphabet
        .iter()
        .map(MapParameter::max_second_derivative)
        .fold(0.0, f64::max);
    if delta <= 1.0 {
        return Err(MapError::NotExpanding(delta));
    }
    Ok(FamilyConstants {
        b,
        delta,
        d_second,
        covering_k: None,
    })
}

/// Outcome of the covering check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoveringOutcome {
    /// Every tested subinterval covers `[0,1]` under every parameter word
    /// of length `k`; `k` is the smallest such length.
    Verified { k: u32, resolution: u32 },
    /// No `k ≤ k_max` works at this resolution. Not fatal: recorded in
    /// reports as an unverified hypothesis.
    Unverified { k_max: u32, resolution: u32 },
}

/// Closed subintervals of `[0,1]`, kept sorted and disjoint.
#[derive(Debug, Clone, PartialEq)]
struct IntervalSet {
    parts: Vec<(f64, f64)>,
}

const MERGE_TOL: f64 = 1e-12;

impl IntervalSet {
    fn single(a: f64, b: f64) -> Self {
        IntervalSet {
            parts: vec![(a, b)],
        }
    }

    fn is_full(&self) -> bool {
        self.parts.len() == 1 && self.parts[0].0 <= MERGE_TOL && self.parts[0].1 >= 1.0 - MERGE_TOL
    }

    fn normalize(mut parts: Vec<(f64, f64)>) -> Self {
        parts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(parts.len());
        for (a, b) in parts {
            if let Some(last) = merged.last_mut() {
                if a <= last.1 + MERGE_TOL {
                    last.1 = last.1.max(b);
                    continue;
                }
            }
            merged.push((a, b));
        }
        IntervalSet { parts: merged }
    }

    /// Image under one application of `map`: union over branches of the
    /// branch-images of the intersections.
    fn image(&self, map: &MapParameter) -> Self {
        let mut out = Vec::new();
        for &(a, b) in &self.parts {
            for br in map.branches() {
                let lo = a.max(br.lo);
                let hi = b.min(br.hi);
                if lo < hi {
                    out.push(br.image(lo, hi));
                }
            }
        }
        IntervalSet::normalize(out)
    }

    /// Quantized key for deduplication of propagation states.
    fn key(&self) -> Vec<(u64, u64)> {
        self.parts
            .iter()
            .map(|&(a, b)| ((a / MERGE_TOL) as u64, (b / MERGE_TOL) as u64))
            .collect()
    }
}

/// Checks the covering condition `T_ω^k(J) = [0,1]` for every dyadic cell
/// `J` at the given resolution and every length-`k` word over the
/// alphabet, by exact interval-image propagation. Returns the smallest
/// working `k ≤ k_max`.
///
/// A finite certificate: the tested resolution is recorded in the
/// outcome, not a proof over all subintervals.
pub fn verify_covering(
    fam: &MapFamily,
    grid_resolution: u32,
    k_max: u32,
) -> Result<CoveringOutcome, MapError> {
    if grid_resolution < 2 {
        return Err(MapError::BadResolution(grid_resolution));
    }
    let r = f64::from(grid_resolution);
    // Frontier: distinct coverage states reachable from any start cell by
    // some word. Covering at step k holds iff every state is full.
    let mut frontier: Vec<IntervalSet> = (0..grid_resolution)
        .map(|i| IntervalSet::single(f64::from(i) / r, f64::from(i + 1) / r))
        .collect();
    const STATE_CAP: usize = 8192;
    for k in 1..=k_max {
        let mut next: Vec<IntervalSet> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for state in &frontier {
            for map in fam.alphabet() {
                let img = state.image(map);
                if seen.insert(img.key()) {
                    next.push(img);
                }
            }
            if next.len() > STATE_CAP {
                return Ok(CoveringOutcome::Unverified {
                    k_max,
                    resolution: grid_resolution,
                });
            }
        }
        if next.iter().all(IntervalSet::is_full) {
            return Ok(CoveringOutcome::Verified {
                k,
                resolution: grid_resolution,
            });
        }
        // a covered state stays covered only when every map is onto, so
        // covered states remain in the frontier
        frontier = next;
    }
    Ok(CoveringOutcome::Unverified {
        k_max,
        resolution: grid_resolution,
    })
}
