//! Real Fourier factors compressed by the sign-flip symmetry of the modes.
//!
//! For even mode weights, `Σ_{m ∈ [-M, M]} a(m) e^{2πi m (x - y)}` equals
//! `Σ_{m=0}^{M} a(m) W_m(x)ᵀ W_m(y)` where `W_m(y)` stacks
//! `√(2^{δ(m)}) cos(2πmy)` and `√(2^{δ(m)}) sin(2πmy)`. A term
//! `ω a₀ ⊗ a₁ ⊗ a₂` of a decomposition then gives three real axis operands
//! `A⁽ʲ⁾ = U⁽ʲ⁾ V⁽ʲ⁾` of rank at most `2(M + 1)`:
//!
//! * `V⁽ʲ⁾` (built on the source nodes) has row blocks `∛ω √|a_j(m)| W_m`;
//! * `U⁽ʲ⁾` (built on the target nodes) is `(sgn a_j(m) √|a_j(m)| W_m)ᵀ`.
//!
//! The product over axes carries `(∛ω)³ = ω` exactly once, and sign-carrying
//! profiles (which truncated SVDs may produce) are routed through the target
//! side.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::alphaskp::SkpDecomposition;
use crate::error::{KpmeError, Result};

/// `2 × n` matrix with rows `√(2^{δ(m)}) cos(2πmy)` and `√(2^{δ(m)}) sin(2πmy)`.
pub fn build_w(m: usize, points: &[f64]) -> DMatrix<f64> {
    let s = if m == 0 { 1.0 } else { SQRT_2 };
    let mut w = DMatrix::zeros(2, points.len());
    for (k, &y) in points.iter().enumerate() {
        let (sin, cos) = (2.0 * PI * m as f64 * y).sin_cos();
        w[(0, k)] = s * cos;
        w[(1, k)] = if m == 0 { 0.0 } else { s * sin };
    }
    w
}

/// The two sides of the orbit identity for a nonnegative mode `m`.
#[derive(Clone, Copy, Debug)]
pub struct OrbitSum {
    /// `Σ e^{2πi⟨g·m, x - y⟩}` over the distinct sign flips `g·m`.
    pub direct: Complex64,
    /// `Π_j 2^{δ(m_j)} cos(2π m_j (x_j - y_j))`.
    pub product: f64,
}

impl OrbitSum {
    pub fn discrepancy(&self) -> f64 {
        (self.direct - Complex64::new(self.product, 0.0)).norm()
    }
}

pub fn orbit_sum_check(m: [usize; 3], x: [f64; 3], y: [f64; 3]) -> OrbitSum {
    let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    let mut direct = Complex64::new(0.0, 0.0);
    for flips in 0..8u32 {
        // a flip of a zero coordinate fixes m and is skipped
        if (0..3).any(|j| flips >> j & 1 == 1 && m[j] == 0) {
            continue;
        }
        let phase: f64 = (0..3)
            .map(|j| {
                let sign = if flips >> j & 1 == 1 { -1.0 } else { 1.0 };
                sign * m[j] as f64 * d[j]
            })
            .sum();
        direct += Complex64::from_polar(1.0, 2.0 * PI * phase);
    }
    let product = (0..3)
        .map(|j| {
            let c = (2.0 * PI * m[j] as f64 * d[j]).cos();
            if m[j] == 0 {
                c
            } else {
                2.0 * c
            }
        })
        .product();
    OrbitSum { direct, product }
}

fn term_profile(dec: &SkpDecomposition, term: usize, axis: usize) -> Result<&[f64]> {
    if term >= dec.len() || axis >= 3 {
        return Err(KpmeError::invalid(format!("no term {term} / axis {axis} in decomposition")));
    }
    if dec.modes().is_none() {
        return Err(KpmeError::invalid("decomposition profiles do not span [-M, M]"));
    }
    Ok(dec.half_profile(term, axis))
}

/// Source-side factor `V`: `2(M+1) × n`, row block `m` equal to
/// `∛ω √|a(m)| W_m` over the normalized source `points`.
pub fn build_v(dec: &SkpDecomposition, term: usize, axis: usize, points: &[f64]) -> Result<DMatrix<f64>> {
    let profile = term_profile(dec, term, axis)?;
    let scale = dec.terms[term].weight.cbrt();
    let mut v = DMatrix::zeros(2 * profile.len(), points.len());
    for (m, a) in profile.iter().enumerate() {
        let w = build_w(m, points) * (scale * a.abs().sqrt());
        v.view_mut((2 * m, 0), (2, points.len())).copy_from(&w);
    }
    Ok(v)
}

/// Target-side factor `U`: `n × 2(M+1)`, column block `m` equal to
/// `(sgn a(m) √|a(m)| W_m)ᵀ` over the normalized target `points`.
pub fn build_u(dec: &SkpDecomposition, term: usize, axis: usize, points: &[f64]) -> Result<DMatrix<f64>> {
    let profile = term_profile(dec, term, axis)?;
    let mut u = DMatrix::zeros(points.len(), 2 * profile.len());
    for (m, a) in profile.iter().enumerate() {
        let w = build_w(m, points) * (a.signum() * a.abs().sqrt());
        u.view_mut((0, 2 * m), (points.len(), 2)).copy_from(&w.transpose());
    }
    Ok(u)
}

/// Axis operand `A⁽ʲ⁾ = U V` between target and source points.
pub fn axis_operand(dec: &SkpDecomposition, term: usize, axis: usize, targets: &[f64], sources: &[f64]) -> Result<DMatrix<f64>> {
    Ok(build_u(dec, term, axis, targets)? * build_v(dec, term, axis, sources)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphaskp::{sinc_rule, skp_from_quadrature, EwaldConfig, SkpKind, SkpTerm};
    use rand::{Rng, SeedableRng};

    #[test]
    fn w_entries() {
        let w = build_w(0, &[0.1, 0.7]);
        assert_eq!(w.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(w.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        let w = build_w(1, &[0.25]);
        assert!(w[(0, 0)].abs() < 1e-15);
        assert!((w[(1, 0)] - SQRT_2).abs() < 1e-15);
        let w = build_w(2, &[0.5]);
        assert!((w[(0, 0)] - SQRT_2).abs() < 1e-15);
        assert!(w[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn orbit_examples() {
        let o = orbit_sum_check([0, 0, 0], [0.3, 0.1, 0.2], [0.0; 3]);
        assert!((o.direct - Complex64::new(1.0, 0.0)).norm() < 1e-15 && o.product == 1.0);
        let o = orbit_sum_check([1, 0, 0], [0.5, 0.2, 0.9], [0.0; 3]);
        assert!((o.product + 2.0).abs() < 1e-15);
        assert!(o.discrepancy() < 1e-14);
    }

    #[test]
    fn single_mode_factor() {
        let dec = SkpDecomposition::new(
            vec![SkpTerm {
                weight: 1.0,
                profiles: [vec![1.0], vec![1.0], vec![1.0]],
            }],
            0.0,
            SkpKind::Svd,
            0.0,
            [1; 3],
        );
        let pts = [0.1, 0.2, 0.3];
        assert_eq!(build_v(&dec, 0, 0, &pts).unwrap(), build_w(0, &pts));
    }

    #[test]
    fn operand_matches_direct_mode_sum() {
        let cfg = EwaldConfig::new(2.0, 3).unwrap();
        let dec = skp_from_quadrature(&sinc_rule(6, 3).unwrap(), &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let ys: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for term in [0, 5, 12] {
            let a = axis_operand(&dec, term, 1, &xs, &ys).unwrap();
            let t = &dec.terms[term];
            for (i, x) in xs.iter().enumerate() {
                for (j, y) in ys.iter().enumerate() {
                    let direct: f64 = (-3i64..=3)
                        .map(|m| t.profiles[1][(m + 3) as usize] * (2.0 * PI * m as f64 * (x - y)).cos())
                        .sum();
                    let expected = t.weight.cbrt() * direct;
                    assert!((a[(i, j)] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn negative_profiles_route_through_target_side() {
        let p = vec![-0.5, 2.0, -3.0, 2.0, -0.5];
        let dec = SkpDecomposition::new(
            vec![SkpTerm {
                weight: -8.0,
                profiles: [p.clone(), p.clone(), p.clone()],
            }],
            0.0,
            SkpKind::Svd,
            0.0,
            [5; 3],
        );
        let xs = [0.05, -0.3];
        let a = axis_operand(&dec, 0, 2, &xs, &xs).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let d = xs[i] - xs[j];
                let direct: f64 = (-2i64..=2).map(|m| p[(m + 2) as usize] * (2.0 * PI * m as f64 * d).cos()).sum();
                assert!((a[(i, j)] + 2.0 * direct).abs() < 1e-13);
            }
        }
    }
}
