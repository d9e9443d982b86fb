//! Nearest Kronecker product approximation by two levels of truncated SVD.
//!
//! The outer SVD factors the axis-2 unfolding, `I₂∘(t) = Σ σ_i u_i v_iᵀ`;
//! each right vector is unfolded again along axis 1, `I₁∘(v_i) = Σ σ_ij
//! u_ij v_ijᵀ`, giving terms `σ_i σ_ij · v_ij ⊗ u_ij ⊗ u_i` on axes
//! (0, 1, 2). Truncation keeps `σ_k > tol · σ_0` at each level.

use faer::Mat;
use nalgebra::DMatrix;

use super::{AlphaVector, SkpDecomposition, SkpKind, SkpTerm, Tensor3};
use crate::error::{KpmeError, Result};

struct Truncated {
    values: Vec<f64>,
    /// Left singular vectors of the kept values.
    left: Vec<Vec<f64>>,
    /// Right singular vectors of the kept values.
    right: Vec<Vec<f64>>,
    /// `sqrt(Σ σ_k²)` over the discarded values.
    discarded: f64,
}

// faer rather than nalgebra: nalgebra's SVD loses up to 1e-11 on small
// random matrices, which would swamp tolerances near 1e-14.
fn truncated_svd(m: DMatrix<f64>, tol: f64) -> Result<Truncated> {
    let a = Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = a
        .thin_svd()
        .map_err(|e| KpmeError::Numerical(format!("SVD did not converge: {e:?}")))?;
    let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    if sv.iter().any(|s| !s.is_finite()) {
        return Err(KpmeError::Numerical("SVD produced non-finite singular values".into()));
    }
    let (u, v) = (svd.U(), svd.V());
    let top = sv.iter().copied().fold(0.0, f64::max);
    let mut out = Truncated {
        values: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        discarded: 0.0,
    };
    let mut tail = 0.0;
    for (k, &s) in sv.iter().enumerate() {
        if top > 0.0 && s > tol * top {
            out.values.push(s);
            out.left.push(u.col(k).iter().copied().collect());
            out.right.push(v.col(k).iter().copied().collect());
        } else {
            tail += s * s;
        }
    }
    out.discarded = tail.sqrt();
    Ok(out)
}

/// SKP of an arbitrary 3-tensor. The returned `error_bound` is
/// `sqrt(Σ_{i>r₀} σ_i²) + Σ_{i≤r₀} σ_i sqrt(Σ_{j>r₁} σ_ij²)`.
pub fn nkpa_tensor(t: &Tensor3, tol_outer: f64, tol_inner: f64) -> Result<SkpDecomposition> {
    if !(tol_outer >= 0.0 && tol_inner >= 0.0) {
        return Err(KpmeError::invalid("SVD tolerances must be nonnegative"));
    }
    if tol_inner > tol_outer {
        return Err(KpmeError::invalid(format!(
            "inner tolerance {tol_inner} must not exceed outer tolerance {tol_outer}"
        )));
    }
    let [n0, n1, n2] = t.shape();
    let outer = DMatrix::from_fn(n2, n0 * n1, |i2, c| t.get([c / n1, c % n1, i2]));
    let outer = truncated_svd(outer, tol_outer)?;

    let mut terms = Vec::new();
    let mut bound = outer.discarded;
    for ((sigma, u), v) in outer.values.iter().zip(&outer.left).zip(&outer.right) {
        // I₁∘(v): rows along axis 1, columns along axis 0.
        let inner = DMatrix::from_fn(n1, n0, |i1, i0| v[i0 * n1 + i1]);
        let inner = truncated_svd(inner, tol_inner)?;
        bound += sigma * inner.discarded;
        for ((s, u1), v0) in inner.values.iter().zip(&inner.left).zip(&inner.right) {
            terms.push(SkpTerm {
                weight: sigma * s,
                profiles: [v0.clone(), u1.clone(), u.clone()],
            });
        }
    }
    Ok(SkpDecomposition::new(terms, 0.0, SkpKind::Svd, bound, [n0, n1, n2]))
}

/// SKP of `α_M` by recursive SVD.
///
/// The tensor is sign-symmetric, so the SVD runs on its restriction to
/// `[0, M]³` with weights `1` at `m = 0` and `√2` elsewhere. That map is an
/// isometry onto the even tensors, so the singular values and the Frobenius
/// error are those of the full unfoldings, and every profile comes out even
/// in `m` as the symmetric Fourier factors require.
pub fn nkpa_svd(alpha: &AlphaVector, tol_outer: f64, tol_inner: f64) -> Result<SkpDecomposition> {
    if !alpha.is_sign_symmetric() {
        return Err(KpmeError::invalid("mode weights must be invariant under sign flips"));
    }
    let m = alpha.modes();
    let half = m + 1;
    let scale = |k: usize| if k == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
    let mut data = Vec::with_capacity(half.pow(3));
    for a in 0..half {
        for b in 0..half {
            for c in 0..half {
                data.push(scale(a) * scale(b) * scale(c) * alpha.at([a as i64, b as i64, c as i64]));
            }
        }
    }
    let folded = nkpa_tensor(&Tensor3::new([half; 3], data)?, tol_outer, tol_inner)?;
    let side = 2 * m + 1;
    let unfold = |p: &[f64]| -> Vec<f64> {
        (0..side)
            .map(|i| {
                let k = (i as i64 - m as i64).unsigned_abs() as usize;
                p[k] / scale(k)
            })
            .collect()
    };
    let terms = folded
        .terms
        .iter()
        .map(|t| SkpTerm {
            weight: t.weight,
            profiles: [unfold(&t.profiles[0]), unfold(&t.profiles[1]), unfold(&t.profiles[2])],
        })
        .collect();
    Ok(SkpDecomposition::new(terms, 0.0, SkpKind::Svd, folded.error_bound, [side; 3]))
}
