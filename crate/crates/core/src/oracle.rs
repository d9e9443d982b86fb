//! Brute-force reference evaluators.
//!
//! Nothing here reuses the fast path: the mode weights, phases and
//! reconstructions are recomputed from their definitions with plain loops.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::alphaskp::{AlphaVector, EwaldConfig, SkpDecomposition, Tensor3};
use crate::error::{check_len, KpmeError, Result};
use crate::exec;
use crate::geometry::{ChargeVector, Normalization, PointCloud};

/// Limit on `|X|·|Y|·(2M+1)³` for the direct sums.
pub const DENSE_SUM_LIMIT: u128 = 1_000_000_000;

/// Limit on materialized tensor entries.
pub const DENSE_TENSOR_LIMIT: u128 = 10_000_000;

/// Relative size of the imaginary part tolerated before the sum is rejected.
const IMAG_TOLERANCE: f64 = 1e-12;

fn guard(what: &'static str, size: u128, limit: u128) -> Result<()> {
    if size > limit {
        return Err(KpmeError::GuardExceeded { what, size, limit });
    }
    Ok(())
}

fn weight(xi: f64, m2: i64) -> f64 {
    let m2 = m2 as f64;
    (-PI * PI * m2 / (xi * xi)).exp() / m2
}

/// Nonzero modes of `[-M, M]³` with their weights.
fn weighted_modes(cfg: &EwaldConfig) -> Vec<([i64; 3], f64)> {
    let m = cfg.modes as i64;
    let mut out = Vec::new();
    for a in -m..=m {
        for b in -m..=m {
            for c in -m..=m {
                let m2 = a * a + b * b + c * c;
                if m2 != 0 {
                    out.push(([a, b, c], weight(cfg.xi, m2)));
                }
            }
        }
    }
    out
}

/// `Σ_{m≠0} α(|m|) e^{2πi⟨m, d⟩}` for one normalized separation `d`.
fn kernel_entry(modes: usize, weights: &[f64], d: [f64; 3]) -> Complex64 {
    let m = modes as i64;
    let side = 2 * modes + 1;
    // per-axis phase tables e^{2πi k d_j}, k ∈ [-M, M]
    let tables: Vec<Vec<Complex64>> = d
        .iter()
        .map(|&dj| (-m..=m).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * dj)).collect())
        .collect();
    let mut sum = Complex64::new(0.0, 0.0);
    for a in 0..side {
        for b in 0..side {
            let ab = tables[0][a] * tables[1][b];
            for c in 0..side {
                sum += weights[(a * side + b) * side + c] * ab * tables[2][c];
            }
        }
    }
    sum
}

/// Weights over the full `[-M, M]³` cube, zero at the origin.
fn weight_table(cfg: &EwaldConfig) -> Vec<f64> {
    let side = 2 * cfg.modes + 1;
    let mut w = vec![0.0; side * side * side];
    for (m, a) in weighted_modes(cfg) {
        let idx = m.map(|c| (c + cfg.modes as i64) as usize);
        w[(idx[0] * side + idx[1]) * side + idx[2]] = a;
    }
    w
}

/// Potentials `p(x) = Σ_y H_M(x, y) q_y` by direct summation, together with
/// the largest imaginary part seen relative to `Σ|α| · Σ|q|`.
pub fn dense_reciprocal_apply_with_residue(
    targets: &PointCloud,
    sources: &PointCloud,
    q: &ChargeVector,
    cfg: &EwaldConfig,
    norm: &Normalization,
) -> Result<(Vec<f64>, f64)> {
    check_len("oracle charges", sources.len(), q.len())?;
    let side = (2 * cfg.modes + 1) as u128;
    guard(
        "direct reciprocal sum",
        targets.len() as u128 * sources.len() as u128 * side.pow(3),
        DENSE_SUM_LIMIT,
    )?;
    let weights = weight_table(cfg);
    let ys: Vec<[f64; 3]> = sources.positions().iter().map(|y| norm.apply(y)).collect();
    let sums = exec::map_slice(targets.positions(), |x| {
        let x = norm.apply(x);
        let mut p = Complex64::new(0.0, 0.0);
        for (y, qy) in ys.iter().zip(q.values()) {
            let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
            p += kernel_entry(cfg.modes, &weights, d) * qy;
        }
        p
    });
    let scale = weights.iter().map(|w| w.abs()).sum::<f64>() * q.values().iter().map(|v| v.abs()).sum::<f64>();
    let imag = sums.iter().map(|p| p.im.abs()).fold(0.0, f64::max);
    let residue = if scale > 0.0 { imag / scale } else { imag };
    Ok((sums.into_iter().map(|p| p.re).collect(), residue))
}

/// Direct truncated reciprocal sum, rejecting results whose imaginary
/// residue is not at rounding level.
pub fn dense_reciprocal_apply(
    targets: &PointCloud,
    sources: &PointCloud,
    q: &ChargeVector,
    cfg: &EwaldConfig,
    norm: &Normalization,
) -> Result<Vec<f64>> {
    let (p, residue) = dense_reciprocal_apply_with_residue(targets, sources, q, cfg, norm)?;
    if residue > IMAG_TOLERANCE {
        return Err(KpmeError::Numerical(format!(
            "reciprocal sum has imaginary residue {residue:e}"
        )));
    }
    Ok(p)
}

/// `Σ ω a₀ ⊗ a₁ ⊗ a₂ − c δ`, with `δ` at the center of odd-sized shapes.
pub fn dense_rebuild_skp(dec: &SkpDecomposition) -> Result<Tensor3> {
    let shape = dec.shape();
    guard(
        "dense rebuild",
        shape.iter().map(|&n| n as u128).product(),
        DENSE_TENSOR_LIMIT,
    )?;
    let [n0, n1, n2] = shape;
    let mut data = vec![0.0; n0 * n1 * n2];
    for t in &dec.terms {
        for a in 0..n0 {
            for b in 0..n1 {
                for c in 0..n2 {
                    data[(a * n1 + b) * n2 + c] += t.weight * t.profiles[0][a] * t.profiles[1][b] * t.profiles[2][c];
                }
            }
        }
    }
    if dec.correction != 0.0 {
        if shape.iter().any(|n| n % 2 == 0) {
            return Err(KpmeError::invalid("correction needs a zero mode at the tensor center"));
        }
        data[(n0 / 2 * n1 + n1 / 2) * n2 + n2 / 2] -= dec.correction;
    }
    Tensor3::new(shape, data)
}

/// Rebuild of a decomposition of `α_M` as a mode vector.
pub fn dense_rebuild_alpha(dec: &SkpDecomposition) -> Result<AlphaVector> {
    let modes = dec
        .modes()
        .ok_or_else(|| KpmeError::invalid("decomposition profiles do not span [-M, M]"))?;
    AlphaVector::from_tensor(modes, dense_rebuild_skp(dec)?)
}

/// `H_M` between two product grids, given as physical node coordinates per
/// axis. Rows follow the target grid, columns the source grid, both
/// lexicographic with axis 0 slowest.
pub fn dense_grid_kernel(
    cfg: &EwaldConfig,
    norm: &Normalization,
    target_nodes: &[Vec<f64>; 3],
    source_nodes: &[Vec<f64>; 3],
) -> Result<DMatrix<f64>> {
    let expand = |nodes: &[Vec<f64>; 3]| {
        let mut pts = Vec::new();
        for &a in &nodes[0] {
            for &b in &nodes[1] {
                for &c in &nodes[2] {
                    pts.push(norm.apply(&[a, b, c]));
                }
            }
        }
        pts
    };
    let xs = expand(target_nodes);
    let ys = expand(source_nodes);
    let side = (2 * cfg.modes + 1) as u128;
    guard(
        "dense grid kernel",
        xs.len() as u128 * ys.len() as u128 * side.pow(3),
        DENSE_SUM_LIMIT,
    )?;
    let weights = weight_table(cfg);
    let rows = exec::map_slice(&xs, |x| {
        ys.iter()
            .map(|y| kernel_entry(cfg.modes, &weights, [x[0] - y[0], x[1] - y[1], x[2] - y[2]]).re)
            .collect::<Vec<f64>>()
    });
    Ok(DMatrix::from_fn(xs.len(), ys.len(), |i, j| rows[i][j]))
}
