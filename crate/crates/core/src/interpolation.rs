//! Equispaced Lagrange interpolation of particles onto per-cell product grids
//! (`interpolate`) and its transpose (`anterpolate`).
//!
//! The 1-D basis is the plain product form. It loses accuracy to rounding
//! for orders above roughly 10 on equispaced nodes; that is accepted here.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{check_len, KpmeError, Result};
use crate::exec;
use crate::geometry::{CellGrid, ChargeVector, Partition, PointCloud};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 16;
/// Orders above this are expected to hit the rounding floor early.
pub const STABLE_ORDER: usize = 10;

/// `order` equispaced points on `[-1, 1]`, endpoints included.
pub fn reference_nodes(order: usize) -> Vec<f64> {
    assert!(order >= MIN_ORDER, "interpolation order must be at least 2");
    let last = (order - 1) as f64;
    (0..order)
        .map(|k| {
            if k + 1 == order {
                1.0
            } else {
                -1.0 + 2.0 * k as f64 / last
            }
        })
        .collect()
}

/// Equispaced reference grid of a given order.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpGrid1D {
    nodes: Vec<f64>,
}

impl InterpGrid1D {
    pub fn new(order: usize) -> Result<Self> {
        if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
            return Err(KpmeError::invalid(format!(
                "interpolation order must lie in [{MIN_ORDER}, {MAX_ORDER}], got {order}"
            )));
        }
        if order > STABLE_ORDER {
            log::warn!("interpolation order {order} > {STABLE_ORDER}: equispaced nodes may be unstable");
        }
        Ok(Self {
            nodes: reference_nodes(order),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn weights_reference(&self, t: f64, out: &mut [f64]) {
        let nodes = &self.nodes;
        for (k, w) in out.iter_mut().enumerate() {
            let hk = nodes[k];
            let mut prod = 1.0;
            for (j, &hj) in nodes.iter().enumerate() {
                if j != k {
                    prod *= (t - hj) / (hk - hj);
                }
            }
            *w = prod;
        }
    }
}

/// Affine map of `[a, b]` onto `[-1, 1]`.
#[inline]
fn to_reference(a: f64, b: f64, y: f64) -> f64 {
    (y - 0.5 * (b + a)) / (0.5 * (b - a))
}

fn check_inside(a: f64, b: f64, y: f64) -> Result<()> {
    let slack = 1e-12 * (b - a).abs().max(a.abs().max(b.abs()));
    if y < a - slack || y > b + slack || y.is_nan() {
        return Err(KpmeError::invalid(format!("point {y} lies outside [{a}, {b}]")));
    }
    Ok(())
}

/// Lagrange basis values at `y` for the grid mapped onto `[a, b]`.
pub fn lagrange_weights_1d(grid: &InterpGrid1D, interval: (f64, f64), y: f64) -> Result<Vec<f64>> {
    let (a, b) = interval;
    if !(b > a) {
        return Err(KpmeError::invalid(format!("degenerate interval [{a}, {b}]")));
    }
    check_inside(a, b, y)?;
    let mut w = vec![0.0; grid.order()];
    grid.weights_reference(to_reference(a, b, y), &mut w);
    Ok(w)
}

/// Tensor-product weights of `y` on the `L³` grid of a cell, ordered
/// lexicographically with axis 0 slowest.
pub fn tensor_weights(grid: &InterpGrid1D, cell: &[(f64, f64); 3], y: &[f64; 3]) -> Result<Vec<f64>> {
    let axes = [0, 1, 2]
        .map(|j| lagrange_weights_1d(grid, cell[j], y[j]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let l = grid.order();
    let mut out = Vec::with_capacity(l * l * l);
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                out.push(a * b * c);
            }
        }
    }
    Ok(out)
}

/// Interpolation operator restricted to one cell.
///
/// Stores the three 1-D weight vectors of each particle rather than the
/// `L³` tensor, and expands them when applied.
#[derive(Clone, Debug)]
pub struct CellInterpolator {
    order: usize,
    /// `3 * order` weights per particle: axis 0, then axis 1, then axis 2.
    weights: Vec<f64>,
}

impl CellInterpolator {
    pub fn new(grid: &InterpGrid1D, cell: &[(f64, f64); 3], positions: &[[f64; 3]]) -> Result<Self> {
        let l = grid.order();
        let mut weights = vec![0.0; 3 * l * positions.len()];
        for (p, chunk) in positions.iter().zip(weights.chunks_mut(3 * l)) {
            for j in 0..3 {
                let (a, b) = cell[j];
                if !(b > a) {
                    return Err(KpmeError::invalid(format!("degenerate interval [{a}, {b}]")));
                }
                check_inside(a, b, p[j])?;
                grid.weights_reference(to_reference(a, b, p[j]), &mut chunk[j * l..(j + 1) * l]);
            }
        }
        Ok(Self { order: l, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_particles(&self) -> usize {
        self.weights.len() / (3 * self.order)
    }

    pub fn grid_len(&self) -> usize {
        self.order.pow(3)
    }

    /// Grid vector `Σ_p q_p w_p` of length `L³`.
    pub fn interpolate(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_len("cell charges", self.num_particles(), q.len())?;
        let l = self.order;
        let mut grid = vec![0.0; l * l * l];
        let mut plane = vec![0.0; l * l];
        for (w, &qp) in self.weights.chunks(3 * l).zip(q) {
            let (w0, rest) = w.split_at(l);
            let (w1, w2) = rest.split_at(l);
            for (b, &wb) in w1.iter().enumerate() {
                for (c, &wc) in w2.iter().enumerate() {
                    plane[b * l + c] = qp * wb * wc;
                }
            }
            for (a, &wa) in w0.iter().enumerate() {
                let dst = &mut grid[a * l * l..(a + 1) * l * l];
                for (d, &s) in dst.iter_mut().zip(&plane) {
                    *d += wa * s;
                }
            }
        }
        Ok(grid)
    }

    /// Per-particle values `⟨w_p, g⟩`.
    pub fn anterpolate(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let l = self.order;
        check_len("cell grid vector", l * l * l, grid.len())?;
        let mut plane = vec![0.0; l * l];
        Ok(self
            .weights
            .chunks(3 * l)
            .map(|w| {
                let (w0, rest) = w.split_at(l);
                let (w1, w2) = rest.split_at(l);
                plane.iter_mut().for_each(|v| *v = 0.0);
                for (a, &wa) in w0.iter().enumerate() {
                    let src = &grid[a * l * l..(a + 1) * l * l];
                    for (d, &s) in plane.iter_mut().zip(src) {
                        *d += wa * s;
                    }
                }
                let mut acc = 0.0;
                for (b, &wb) in w1.iter().enumerate() {
                    let row = &plane[b * l..(b + 1) * l];
                    let dot: f64 = row.iter().zip(w2).map(|(x, y)| x * y).sum();
                    acc += wb * dot;
                }
                acc
            })
            .collect())
    }
}

/// Block-diagonal interpolation operator over every cell of a grid.
#[derive(Clone, Debug)]
pub struct InterpOperator {
    num_particles: usize,
    cells: Vec<(Vec<usize>, CellInterpolator)>,
}

impl InterpOperator {
    pub fn new(grid: &InterpGrid1D, cells: &CellGrid, partition: &Partition, cloud: &PointCloud) -> Result<Self> {
        check_len("partition", cloud.len(), partition.num_particles())?;
        let built = exec::map_range(cells.num_cells(), |l| {
            let ids = partition.cell(l).to_vec();
            let positions: Vec<[f64; 3]> = ids.iter().map(|&i| cloud.positions()[i]).collect();
            let bounds = cells.cell_bounds(cells.multi_index(l));
            CellInterpolator::new(grid, &bounds, &positions).map(|op| (ids, op))
        });
        Ok(Self {
            num_particles: cloud.len(),
            cells: built.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_particles(&self) -> usize {
        self.num_particles
    }

    pub fn cell(&self, linear: usize) -> (&[usize], &CellInterpolator) {
        let (ids, op) = &self.cells[linear];
        (ids, op)
    }

    /// Applies the interpolation operator: one `L³` grid vector per cell.
    pub fn interpolate(&self, q: &ChargeVector) -> Result<Vec<Vec<f64>>> {
        check_len("charges", self.num_particles, q.len())?;
        exec::map_slice(&self.cells, |(ids, op)| {
            let local: Vec<f64> = ids.iter().map(|&i| q.values()[i]).collect();
            op.interpolate(&local)
        })
        .into_iter()
        .collect()
    }

    /// Applies the transpose: per-particle values in global particle order.
    pub fn anterpolate(&self, grids: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_len("cell grid vectors", self.cells.len(), grids.len())?;
        let locals: Vec<Vec<f64>> = exec::map_range(self.cells.len(), |l| self.cells[l].1.anterpolate(&grids[l]))
            .into_iter()
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.num_particles];
        for ((ids, _), vals) in self.cells.iter().zip(locals) {
            for (&i, v) in ids.iter().zip(vals) {
                out[i] = v;
            }
        }
        Ok(out)
    }
}

/// Sup error of interpolating `y ↦ e^{-2πi⟨m, y⟩}` on the cell
/// `[-r_c, r_c]³` with order `L`, measured at `samples` random points.
pub fn interp_error_probe_mode(mode: [i64; 3], cell_radius: f64, order: usize, samples: usize, seed: u64) -> Result<f64> {
    let grid = InterpGrid1D::new(order)?;
    let cell = [(-cell_radius, cell_radius); 3];
    let nodes: Vec<f64> = grid.nodes().iter().map(|h| h * cell_radius).collect();
    let f = |y: [f64; 3]| {
        let phase: f64 = (0..3).map(|j| mode[j] as f64 * y[j]).sum();
        Complex64::from_polar(1.0, -2.0 * PI * phase)
    };
    let l = order;
    let mut nodal = Vec::with_capacity(l * l * l);
    for &a in &nodes {
        for &b in &nodes {
            for &c in &nodes {
                nodal.push(f([a, b, c]));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let y = [0; 3].map(|_| rng.gen_range(-cell_radius..=cell_radius));
        let w = tensor_weights(&grid, &cell, &y)?;
        let approx: Complex64 = w.iter().zip(&nodal).map(|(wi, fi)| fi * wi).sum();
        worst = worst.max((approx - f(y)).norm());
    }
    Ok(worst)
}

/// Worst-mode probe: `m = (M, M, M)`.
pub fn interp_error_probe(modes: usize, cell_radius: f64, order: usize) -> Result<f64> {
    let m = modes as i64;
    interp_error_probe_mode([m, m, m], cell_radius, order, 2000, 0x5eed)
}
