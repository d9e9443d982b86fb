//! Fourier mode weights `α(|m|) = e^{-π²|m|²/ξ²} / |m|²` and their
//! approximation as a sum of Kronecker products (SKP).
//!
//! Two families of decompositions are provided:
//!
//! * [`nkpa_svd`]: recursive truncated SVD of mode-k unfoldings, independent
//!   of the closed form of `α`.
//! * [`skp_from_quadrature`]: an exponential-sum quadrature of `1/R`, either
//!   the explicit cardinal-sine rule ([`sinc_rule`]) or a tabulated rule
//!   ([`load_tabulated_rule`]). The quadrature reproduces `1` at the zero
//!   mode times `Σ ω`, which the decomposition cancels through its
//!   correction constant.

mod nkpa;
mod quadrature;

pub use nkpa::{nkpa_svd, nkpa_tensor};
pub use quadrature::{
    load_tabulated_rule, optimal_term_lower_bound, parse_tabulated_rule, quadrature_arguments, quadrature_max_error,
    sinc_nodes, sinc_rule, sinc_rule_for_eps, skp_from_quadrature, write_tabulated_rule, QuadratureRule, RuleSource,
    H_CANDIDATES,
};

use std::f64::consts::PI;

use crate::error::{KpmeError, Result};

/// Ewald splitting parameter and mode bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EwaldConfig {
    pub xi: f64,
    pub modes: usize,
}

impl EwaldConfig {
    pub fn new(xi: f64, modes: usize) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(KpmeError::invalid(format!("Ewald parameter must be positive, got {xi}")));
        }
        if modes == 0 {
            return Err(KpmeError::invalid("mode bound must be at least 1"));
        }
        Ok(Self { xi, modes })
    }

    /// `π² / ξ²`, the Gaussian damping rate per squared mode index.
    pub fn damping(&self) -> f64 {
        (PI / self.xi).powi(2)
    }

    /// Number of modes per axis, `2M + 1`.
    pub fn side(&self) -> usize {
        2 * self.modes + 1
    }
}

/// Dense 3-tensor stored lexicographically, axis 0 slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        crate::error::check_len("tensor data", shape.iter().product(), data.len())?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Outer product `a ⊗ b ⊗ c`.
    pub fn outer(a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let mut data = Vec::with_capacity(a.len() * b.len() * c.len());
        for x in a {
            for y in b {
                for z in c {
                    data.push(x * y * z);
                }
            }
        }
        Self {
            shape: [a.len(), b.len(), c.len()],
            data,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: [usize; 3]) -> f64 {
        self.data[(i[0] * self.shape[1] + i[1]) * self.shape[2] + i[2]]
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.shape != other.shape {
            return Err(KpmeError::invalid("tensor shapes differ"));
        }
        Ok(Tensor3 {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}

/// `α_M` over `[-M, M]³`, zero at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector {
    modes: usize,
    tensor: Tensor3,
}

impl AlphaVector {
    /// Wraps an arbitrary tensor over `[-M, M]³`. The caller is responsible
    /// for the sign-flip symmetry when the result feeds [`nkpa_svd`].
    pub fn from_tensor(modes: usize, tensor: Tensor3) -> Result<Self> {
        let side = 2 * modes + 1;
        if tensor.shape() != [side; 3] {
            return Err(KpmeError::invalid(format!(
                "expected a {side}³ tensor, got {:?}",
                tensor.shape()
            )));
        }
        Ok(Self { modes, tensor })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn entries(&self) -> &[f64] {
        self.tensor.data()
    }

    /// Entry at mode `m`, each component in `[-M, M]`.
    pub fn at(&self, m: [i64; 3]) -> f64 {
        let shift = self.modes as i64;
        self.tensor.get(m.map(|c| (c + shift) as usize))
    }

    /// Whether every sign flip of every coordinate leaves the entries fixed.
    pub fn is_sign_symmetric(&self) -> bool {
        let m = self.modes as i64;
        for a in -m..=m {
            for b in -m..=m {
                for c in -m..=m {
                    let v = self.at([a, b, c]);
                    if v != self.at([-a, b, c]) || v != self.at([a, -b, c]) || v != self.at([a, b, -c]) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// `α(|m|)` for a nonzero mode with squared norm `m2`.
#[inline]
pub fn alpha_value(cfg: &EwaldConfig, m2: f64) -> f64 {
    (-cfg.damping() * m2).exp() / m2
}

pub fn assemble_alpha(cfg: &EwaldConfig) -> AlphaVector {
    let m = cfg.modes as i64;
    let side = cfg.side();
    let mut data = Vec::with_capacity(side.pow(3));
    for a in -m..=m {
        for b in -m..=m {
            for c in -m..=m {
                let m2 = (a * a + b * b + c * c) as f64;
                data.push(if m2 == 0.0 { 0.0 } else { alpha_value(cfg, m2) });
            }
        }
    }
    AlphaVector {
        modes: cfg.modes,
        tensor: Tensor3 {
            shape: [side; 3],
            data,
        },
    }
}

/// Which construction produced a decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkpKind {
    Svd,
    Sinc,
    Tabulated,
}

impl std::str::FromStr for SkpKind {
    type Err = KpmeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(SkpKind::Svd),
            "sinc" => Ok(SkpKind::Sinc),
            "tab" | "tabulated" => Ok(SkpKind::Tabulated),
            other => Err(KpmeError::invalid(format!("unknown decomposition kind {other:?}"))),
        }
    }
}

/// One Kronecker term `ω · a₀ ⊗ a₁ ⊗ a₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkpTerm {
    pub weight: f64,
    pub profiles: [Vec<f64>; 3],
}

/// `Σ_λ ω_λ a₀ ⊗ a₁ ⊗ a₂ − c δ₀`.
///
/// For decompositions of `α_M` every profile has length `2M + 1` and is even
/// in `m`, so only the entries for `m ≥ 0` are needed by the Fourier
/// factors (see [`SkpDecomposition::half_profile`]).
#[derive(Clone, Debug, PartialEq)]
pub struct SkpDecomposition {
    pub terms: Vec<SkpTerm>,
    pub correction: f64,
    pub kind: SkpKind,
    /// Certified bound on the approximation error: the Frobenius estimate
    /// from discarded singular values, or the quadrature sup error.
    pub error_bound: f64,
    shape: [usize; 3],
}

impl SkpDecomposition {
    pub(crate) fn new(terms: Vec<SkpTerm>, correction: f64, kind: SkpKind, error_bound: f64, shape: [usize; 3]) -> Self {
        Self {
            terms,
            correction,
            kind,
            error_bound,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Profile lengths per axis.
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Mode bound `M` when the profiles live on `[-M, M]`.
    pub fn modes(&self) -> Option<usize> {
        let s = self.shape[0];
        (self.shape.iter().all(|&n| n == s) && s % 2 == 1).then_some(s / 2)
    }

    /// Entries of a term's profile for `m = 0..=M`.
    pub fn half_profile(&self, term: usize, axis: usize) -> &[f64] {
        let p = &self.terms[term].profiles[axis];
        &p[p.len() / 2..]
    }

    /// Whether every profile is even in `m`, as the A₃ folding requires.
    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|t| {
            t.profiles.iter().all(|p| {
                let n = p.len();
                (0..n / 2).all(|i| {
                    let (a, b) = (p[i], p[n - 1 - i]);
                    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
                })
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_entries() {
        let cfg = EwaldConfig::new(PI, 2).unwrap();
        let a = assemble_alpha(&cfg);
        assert_eq!(a.entries().len(), 125);
        assert_eq!(a.at([0, 0, 0]), 0.0);
        assert_relative_eq!(a.at([1, 0, 0]), (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(a.at([1, 1, 1]), (-3.0f64).exp() / 3.0, max_relative = 1e-15);
        assert_relative_eq!(a.at([0, -1, 0]), 0.36787944117144233, max_relative = 1e-15);
        assert_relative_eq!(a.at([1, 1, 1]), 0.01659568945595465, max_relative = 1e-14);
        assert!(a.is_sign_symmetric());
    }

    #[test]
    fn ordering_is_axis0_slowest() {
        let cfg = EwaldConfig::new(3.0, 1).unwrap();
        let a = assemble_alpha(&cfg);
        // index 1 is m = (-1, -1, 0)
        assert_eq!(a.entries()[1], a.at([-1, -1, 0]));
        assert_eq!(a.entries()[9], a.at([0, -1, -1]));
    }

    #[test]
    fn config_validation() {
        assert!(EwaldConfig::new(0.0, 2).is_err());
        assert!(EwaldConfig::new(1.0, 0).is_err());
        assert_eq!("tab".parse::<SkpKind>().unwrap(), SkpKind::Tabulated);
        assert!("fft".parse::<SkpKind>().is_err());
    }
}
