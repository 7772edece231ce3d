//! Discrete norms on grid densities.
//!
//! Strong norm: `‖v‖ = Var(v) + ‖v‖₁` with the non-periodic variation
//! `Var(v) = Σ|v_(i+1) - v_i|`; weak norm: `‖v‖_w = ‖v‖₁ = (1/k)Σ|v_i|`.
//! Boundary variation terms are omitted throughout; estimates built on
//! these norms carry that constant-factor caveat.

use num_complex::Complex64;

/// `⟨ξ, h⟩ = ∫ h dm`: the mass functional.
pub fn mass(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mass_complex(v: &[Complex64]) -> Complex64 {
    v.iter().sum::<Complex64>() / v.len() as f64
}

/// `(1/k) Σ |v_i|`.
pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

pub fn l1_norm_complex(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm()).sum::<f64>() / v.len() as f64
}

/// Total variation `Σ_(i=1)^(k-1) |v_(i+1) - v_i|`.
pub fn variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn variation_complex(v: &[Complex64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Strong norm `Var + L¹`.
pub fn bv_norm(v: &[f64]) -> f64 {
    variation(v) + l1_norm(v)
}

pub fn bv_norm_complex(v: &[Complex64]) -> f64 {
    variation_complex(v) + l1_norm_complex(v)
}

/// Strong/weak norm pair of one vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormPair {
    pub strong: f64,
    pub weak: f64,
}

pub fn norm_pair(v: &[f64]) -> NormPair {
    NormPair {
        strong: bv_norm(v),
        weak: l1_norm(v),
    }
}
