//! Per-rank kernels: the split Kronecker product and the full operator.

use nalgebra::DMatrix;

use super::Communicator;
use crate::alphaskp::{EwaldConfig, SkpDecomposition};
use crate::error::{check_len, KpmeError, Result};
use crate::exec;
use crate::geometry::{CellGrid, Normalization};
use crate::interpolation::{CellInterpolator, InterpGrid1D};
use crate::kron::{matricize, vectorize};
use crate::symfourier::{build_u, build_v};

/// Factors of one axis operand as seen by one rank: `u` acts on the rank's
/// target cell (`n_out × R`), `v` on its source cell (`R × n_in`).
#[derive(Clone, Debug, PartialEq)]
pub struct AxisFactors {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl AxisFactors {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        check_len("axis factor inner dimension", u.ncols(), v.nrows())?;
        Ok(Self { u, v })
    }
}

fn input_shape(factors: &[AxisFactors; 3]) -> [usize; 3] {
    [0, 1, 2].map(|p| factors[p].v.ncols())
}

/// Split Kronecker product on one rank. For `p = 2, 1, 0` the rank applies
/// its `V` factor to the axis-`p` unfolding, sums the `R × (rest)` block
/// over its axis group, and applies its `U` factor.
pub fn spkmv<C: Communicator>(comm: &C, factors: &[AxisFactors; 3], phi: &[f64]) -> Result<Vec<f64>> {
    let mut shape = input_shape(factors);
    check_len("local grid vector", shape.iter().product(), phi.len())?;
    let mut x = phi.to_vec();
    for p in (0..3).rev() {
        let f = &factors[p];
        let mut t = &f.v * matricize(&x, &shape, p)?;
        comm.axis_allreduce_sum(p, t.as_mut_slice())?;
        shape[p] = f.u.nrows();
        x = vectorize(&(&f.u * t), p, &shape)?;
    }
    Ok(x)
}

/// [`spkmv`] for all terms at once: per axis the blocks of every term are
/// concatenated into a single reduction. Returns the sum over terms.
pub fn spkmv_fused<C: Communicator>(comm: &C, terms: &[[AxisFactors; 3]], phi: &[f64]) -> Result<Vec<f64>> {
    let Some(first) = terms.first() else {
        return Ok(vec![0.0; phi.len()]);
    };
    let mut shape = input_shape(first);
    check_len("local grid vector", shape.iter().product(), phi.len())?;
    if terms.iter().any(|t| input_shape(t) != shape) {
        return Err(KpmeError::invalid("fused terms must share their grid shapes"));
    }
    let mut xs: Vec<Vec<f64>> = vec![phi.to_vec(); terms.len()];
    for p in (0..3).rev() {
        let blocks = exec::map_range(terms.len(), |l| -> Result<DMatrix<f64>> {
            Ok(&terms[l][p].v * matricize(&xs[l], &shape, p)?)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut buf: Vec<f64> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
        comm.axis_allreduce_sum(p, &mut buf)?;
        let out_rows = terms[0][p].u.nrows();
        if terms.iter().any(|t| t[p].u.nrows() != out_rows) {
            return Err(KpmeError::invalid("fused terms must share their grid shapes"));
        }
        let mut next_shape = shape;
        next_shape[p] = out_rows;
        let mut offset = 0;
        let spans: Vec<(usize, usize, usize)> = blocks
            .iter()
            .map(|b| {
                let s = (offset, b.nrows(), b.ncols());
                offset += b.len();
                s
            })
            .collect();
        xs = exec::map_range(terms.len(), |l| -> Result<Vec<f64>> {
            let (start, r, c) = spans[l];
            let t = DMatrix::from_column_slice(r, c, &buf[start..start + r * c]);
            vectorize(&(&terms[l][p].u * t), p, &next_shape)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        shape = next_shape;
    }
    let mut acc = vec![0.0; xs[0].len()];
    for x in &xs {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Problem data shared by every rank.
#[derive(Clone, Debug)]
pub struct KpmeSetup {
    pub cfg: EwaldConfig,
    pub dec: SkpDecomposition,
    pub interp: InterpGrid1D,
    pub norm: Normalization,
    /// Group all terms into one reduction per axis.
    pub fuse_terms: bool,
}

impl KpmeSetup {
    pub fn new(cfg: EwaldConfig, dec: SkpDecomposition, order: usize, norm: Normalization) -> Result<Self> {
        match dec.modes() {
            Some(m) if m == cfg.modes => {}
            _ => {
                return Err(KpmeError::invalid(format!(
                    "decomposition shape {:?} does not match M = {}",
                    dec.shape(),
                    cfg.modes
                )))
            }
        }
        if !dec.is_even() {
            return Err(KpmeError::invalid("decomposition profiles must be even in m"));
        }
        Ok(Self {
            cfg,
            dec,
            interp: InterpGrid1D::new(order)?,
            norm,
            fuse_terms: false,
        })
    }

    pub fn fused(mut self, fuse: bool) -> Self {
        self.fuse_terms = fuse;
        self
    }

    pub fn order(&self) -> usize {
        self.interp.order()
    }

    /// Normalized interpolation nodes of cell index `i` along `axis`.
    pub fn cell_nodes(&self, cells: &CellGrid, axis: usize, i: usize) -> Vec<f64> {
        cells
            .axis_nodes(axis, i, self.order())
            .into_iter()
            .map(|x| self.norm.apply_axis(axis, x))
            .collect()
    }
}

/// Data owned by one rank: the particles of its cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalState {
    /// Global indices of the particles.
    pub indices: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    pub charges: Vec<f64>,
}

/// `(U, V)` per term and axis for a rank whose target and source cell is `cell`.
pub fn build_rank_factors(setup: &KpmeSetup, cells: &CellGrid, cell: [usize; 3]) -> Result<Vec<[AxisFactors; 3]>> {
    let nodes = [0, 1, 2].map(|p| setup.cell_nodes(cells, p, cell[p]));
    exec::map_range(setup.dec.len(), |l| -> Result<[AxisFactors; 3]> {
        let f = |p: usize| -> Result<AxisFactors> {
            AxisFactors::new(build_u(&setup.dec, l, p, &nodes[p])?, build_v(&setup.dec, l, p, &nodes[p])?)
        };
        Ok([f(0)?, f(1)?, f(2)?])
    })
    .into_iter()
    .collect()
}

/// Potentials of the rank's particles: `S* (Σ_λ A_λ) S q − c_Λ Σq`.
pub fn kpme_apply<C: Communicator>(comm: &C, setup: &KpmeSetup, cells: &CellGrid, local: &LocalState) -> Result<Vec<f64>> {
    let grid = comm.grid();
    if grid.dims() != cells.dims() {
        return Err(KpmeError::invalid(format!(
            "rank grid {:?} differs from cell grid {:?}",
            grid.dims(),
            cells.dims()
        )));
    }
    check_len("local charges", local.positions.len(), local.charges.len())?;
    let cell = grid.multi_index(comm.rank());

    let mut total = [local.charges.iter().sum::<f64>()];
    comm.allreduce_sum(&mut total)?;
    let correction = setup.dec.correction * total[0];

    let interp = CellInterpolator::new(&setup.interp, &cells.cell_bounds(cell), &local.positions)?;
    let phi = interp.interpolate(&local.charges)?;
    let factors = build_rank_factors(setup, cells, cell)?;
    let acc = if setup.fuse_terms {
        spkmv_fused(comm, &factors, &phi)?
    } else {
        let mut acc = vec![0.0; phi.len()];
        for f in &factors {
            for (a, v) in acc.iter_mut().zip(spkmv(comm, f, &phi)?) {
                *a += v;
            }
        }
        acc
    };
    let psi = interp.anterpolate(&acc)?;
    Ok(psi.into_iter().map(|v| v - correction).collect())
}
