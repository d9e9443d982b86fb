//! Scatter/gather around the per-rank kernels, and a sequential reference
//! that applies the same operator globally with the shuffle product.

use nalgebra::DMatrix;

use super::spkmv::{kpme_apply, KpmeSetup, LocalState};
use super::{Communicator, LedgerEntry, Recording, SimWorld};
use crate::error::{check_len, KpmeError, Result};
use crate::exec;
use crate::geometry::{assign_particles, CellGrid, ChargeVector, PointCloud};
use crate::interpolation::CellInterpolator;
use crate::kron::{kron_matvec_shuffle, KronFactor, KronOperand};
use crate::symfourier::{build_u, build_v};

/// Gathered potentials (in input particle order) and every rank's ledger.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub potentials: Vec<f64>,
    pub ledger: Vec<LedgerEntry>,
}

/// Splits the particles by cell; entry `r` belongs to rank (and cell) `r`.
pub fn split_local(cells: &CellGrid, cloud: &PointCloud, q: &ChargeVector) -> Result<Vec<LocalState>> {
    check_len("charges", cloud.len(), q.len())?;
    let partition = assign_particles(cells, cloud)?;
    Ok(partition
        .cells()
        .iter()
        .map(|idx| LocalState {
            indices: idx.clone(),
            positions: idx.iter().map(|&i| cloud.positions()[i]).collect(),
            charges: idx.iter().map(|&i| q.values()[i]).collect(),
        })
        .collect())
}

/// Runs the operator on a simulated world whose grid matches `cells`.
pub fn run_distributed(
    world: &SimWorld,
    cells: &CellGrid,
    setup: &KpmeSetup,
    cloud: &PointCloud,
    q: &ChargeVector,
) -> Result<RunOutput> {
    if world.grid().dims() != cells.dims() {
        return Err(KpmeError::invalid(format!(
            "rank grid {:?} differs from cell grid {:?}",
            world.grid().dims(),
            cells.dims()
        )));
    }
    let locals = split_local(cells, cloud, q)?;
    let per_rank = world.run(|comm| {
        let rec = Recording::new(comm);
        let z = kpme_apply(&rec, setup, cells, &locals[comm.rank()])?;
        Ok((z, rec.into_entries()))
    })?;
    let mut potentials = vec![0.0; cloud.len()];
    let mut ledger = Vec::new();
    for (local, (z, entries)) in locals.iter().zip(per_rank) {
        for (&i, v) in local.indices.iter().zip(z) {
            potentials[i] = v;
        }
        ledger.extend(entries);
    }
    Ok(RunOutput { potentials, ledger })
}

/// Same operator, evaluated on one thread of control: per axis the cell
/// factors are stacked into global `U` (rows over all cells) and `V`
/// (columns over all cells), and each term is one shuffle product on the
/// global grid vector.
pub fn kpme_sequential(cells: &CellGrid, setup: &KpmeSetup, cloud: &PointCloud, q: &ChargeVector) -> Result<Vec<f64>> {
    let locals = split_local(cells, cloud, q)?;
    let l = setup.order();
    let dims = cells.dims();
    let interps = exec::map_range(cells.num_cells(), |c| {
        CellInterpolator::new(&setup.interp, &cells.cell_bounds(cells.multi_index(c)), &locals[c].positions)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let gshape = dims.map(|k| k * l);
    let global_index = |cell: [usize; 3], node: [usize; 3]| {
        let g = [0, 1, 2].map(|p| cell[p] * l + node[p]);
        (g[0] * gshape[1] + g[1]) * gshape[2] + g[2]
    };
    let mut phi = vec![0.0; gshape.iter().product()];
    for (c, interp) in interps.iter().enumerate() {
        let cell = cells.multi_index(c);
        for (k, v) in interp.interpolate(&locals[c].charges)?.into_iter().enumerate() {
            phi[global_index(cell, [k / (l * l), k / l % l, k % l])] = v;
        }
    }

    let nodes: [Vec<Vec<f64>>; 3] = [0, 1, 2].map(|p| (0..dims[p]).map(|i| setup.cell_nodes(cells, p, i)).collect());
    let terms = exec::map_range(setup.dec.len(), |t| -> Result<Vec<f64>> {
        let factor = |p: usize| -> Result<KronFactor> {
            let us = nodes[p].iter().map(|n| build_u(&setup.dec, t, p, n)).collect::<Result<Vec<_>>>()?;
            let vs = nodes[p].iter().map(|n| build_v(&setup.dec, t, p, n)).collect::<Result<Vec<_>>>()?;
            let r = vs[0].nrows();
            let u = DMatrix::from_fn(dims[p] * l, r, |i, j| us[i / l][(i % l, j)]);
            let v = DMatrix::from_fn(r, dims[p] * l, |i, j| vs[j / l][(i, j % l)]);
            KronFactor::factored(u, v)
        };
        kron_matvec_shuffle(&KronOperand::new(vec![factor(0)?, factor(1)?, factor(2)?])?, &phi)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; phi.len()];
    for t in &terms {
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }

    let correction = setup.dec.correction * q.values().iter().sum::<f64>();
    let mut out = vec![0.0; cloud.len()];
    for (c, interp) in interps.iter().enumerate() {
        let cell = cells.multi_index(c);
        let local: Vec<f64> = (0..l * l * l)
            .map(|k| acc[global_index(cell, [k / (l * l), k / l % l, k % l])])
            .collect();
        for (&i, v) in locals[c].indices.iter().zip(interp.anterpolate(&local)?) {
            out[i] = v - correction;
        }
    }
    Ok(out)
}
