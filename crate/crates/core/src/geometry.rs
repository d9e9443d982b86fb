//! Periodic box, cell grid decomposition and particle sorting.
//!
//! All multi-indices are ordered lexicographically with axis 0 slowest; the
//! linear index of cell `(i0, i1, i2)` in a `(k0, k1, k2)` grid is
//! `(i0 * k1 + i1) * k2 + i2`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, KpmeError, Result};

/// Cubic box given by its center and radius (half edge length).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    center: [f64; 3],
    radius: f64,
}

impl Box3 {
    pub fn new(center: [f64; 3], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(KpmeError::invalid(format!("box radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(KpmeError::invalid("box center must be finite"));
        }
        Ok(Self { center, radius })
    }

    /// Builds a box from lower and upper corners. Only cubes are accepted.
    pub fn from_bounds(lower: [f64; 3], upper: [f64; 3]) -> Result<Self> {
        let edges: Vec<f64> = (0..3).map(|j| upper[j] - lower[j]).collect();
        let edge = edges[0];
        let tol = 1e-12 * edge.abs().max(1.0);
        if edges.iter().any(|e| (e - edge).abs() > tol) {
            return Err(KpmeError::invalid(format!(
                "only cubic boxes are supported, got edges {edges:?}"
            )));
        }
        let center = [0, 1, 2].map(|j| 0.5 * (lower[j] + upper[j]));
        Self::new(center, 0.5 * edge)
    }

    /// Smallest cube centered on the bounding box of `cloud` that contains it.
    pub fn enclosing(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Self::new([0.0; 3], 0.5);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in cloud.positions() {
            for j in 0..3 {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        let center = [0, 1, 2].map(|j| 0.5 * (lo[j] + hi[j]));
        let mut radius = (0..3)
            .map(|j| (hi[j] - center[j]).max(center[j] - lo[j]))
            .fold(0.0, f64::max);
        if radius == 0.0 {
            radius = 0.5;
        }
        Self::new(center, radius)
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|j| (p[j] - self.center[j]).abs() <= self.radius)
    }
}

/// Particle positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>) -> Self {
        Self { positions }
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Uniform sample of `n` points in `bbox`, reproducible from `seed`.
    pub fn uniform(bbox: &Box3, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = bbox.center();
        let r = bbox.radius();
        let positions = (0..n)
            .map(|_| [0, 1, 2].map(|j| c[j] + r * rng.gen_range(-1.0..=1.0)))
            .collect();
        Self { positions }
    }

    /// Every position translated by `shift`.
    pub fn translated(&self, shift: [f64; 3]) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
        }
    }
}

/// One source weight per particle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChargeVector {
    values: Vec<f64>,
}

impl ChargeVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    /// Charges drawn uniformly from `[-1, 1]`.
    pub fn uniform(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Self {
            values: (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            values: indices.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

/// Maps physical positions to phases with unit period: `x ↦ (x - c) / period`.
///
/// The oracle and the fast path must share one instance so that both see the
/// same lattice of modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: [f64; 3],
    pub period: f64,
}

impl Normalization {
    /// Positions are used as phases directly (relative to `center`).
    pub fn unit(center: [f64; 3]) -> Self {
        Self { center, period: 1.0 }
    }

    /// The box edge `2 r_B` is taken as the period.
    pub fn box_period(bbox: &Box3) -> Self {
        Self {
            center: bbox.center(),
            period: 2.0 * bbox.radius(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|j| (p[j] - self.center[j]) / self.period)
    }

    #[inline]
    pub fn apply_axis(&self, axis: usize, x: f64) -> f64 {
        (x - self.center[axis]) / self.period
    }
}

/// Regular decomposition of a box into `k0 × k1 × k2` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    bbox: Box3,
    dims: [usize; 3],
    /// Per axis, the `k + 1` cell boundaries.
    bounds: [Vec<f64>; 3],
}

/// Builds a `K × K × K` cell grid.
pub fn build_cell_grid(bbox: Box3, k: usize) -> Result<CellGrid> {
    CellGrid::new(bbox, [k, k, k])
}

impl CellGrid {
    /// Cell grid with possibly different numbers of cells per axis.
    pub fn new(bbox: Box3, dims: [usize; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(KpmeError::invalid(format!("cell counts must be positive, got {dims:?}")));
        }
        let c = bbox.center();
        let r = bbox.radius();
        let bounds = [0, 1, 2].map(|j| {
            let k = dims[j];
            (0..=k)
                .map(|i| {
                    if i == k {
                        c[j] + r
                    } else {
                        c[j] - r + 2.0 * r * i as f64 / k as f64
                    }
                })
                .collect::<Vec<_>>()
        });
        Ok(Self { bbox, dims, bounds })
    }

    pub fn bbox(&self) -> &Box3 {
        &self.bbox
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Cell radius along `axis`.
    pub fn cell_radius(&self, axis: usize) -> f64 {
        self.bbox.radius() / self.dims[axis] as f64
    }

    /// Largest cell radius over the three axes.
    pub fn max_cell_radius(&self) -> f64 {
        (0..3).map(|j| self.cell_radius(j)).fold(0.0, f64::max)
    }

    /// Interval `[lo, hi]` of cell `index` along `axis`.
    pub fn interval(&self, axis: usize, index: usize) -> (f64, f64) {
        (self.bounds[axis][index], self.bounds[axis][index + 1])
    }

    pub fn cell_bounds(&self, cell: [usize; 3]) -> [(f64, f64); 3] {
        [0, 1, 2].map(|j| self.interval(j, cell[j]))
    }

    pub fn linear_index(&self, cell: [usize; 3]) -> usize {
        (cell[0] * self.dims[1] + cell[1]) * self.dims[2] + cell[2]
    }

    pub fn multi_index(&self, linear: usize) -> [usize; 3] {
        let i2 = linear % self.dims[2];
        let rest = linear / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], i2]
    }

    /// Physical positions of `order` equispaced nodes spanning the cell
    /// interval along `axis`, endpoints included.
    pub fn axis_nodes(&self, axis: usize, index: usize, order: usize) -> Vec<f64> {
        let (lo, hi) = self.interval(axis, index);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        crate::interpolation::reference_nodes(order)
            .into_iter()
            .map(|h| mid + half * h)
            .collect()
    }

    fn axis_cell(&self, axis: usize, x: f64) -> usize {
        // Number of interior boundaries strictly below x: a particle on a
        // shared face goes to the lower cell.
        let interior = &self.bounds[axis][1..self.dims[axis]];
        interior.partition_point(|&b| b < x)
    }

    /// Cell containing `p`, with ties on faces resolved toward the lower index.
    pub fn locate(&self, p: &[f64; 3]) -> Option<[usize; 3]> {
        if !self.bbox.contains(p) {
            return None;
        }
        Some([0, 1, 2].map(|j| self.axis_cell(j, p[j])))
    }
}

/// Per-cell particle index lists, indexed by linear cell index.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    cells: Vec<Vec<usize>>,
}

impl Partition {
    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn cell(&self, linear: usize) -> &[usize] {
        &self.cells[linear]
    }

    pub fn num_particles(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }
}

/// Sorts particles into the cells of `grid`.
pub fn assign_particles(grid: &CellGrid, cloud: &PointCloud) -> Result<Partition> {
    let mut cells = vec![Vec::new(); grid.num_cells()];
    for (index, p) in cloud.positions().iter().enumerate() {
        let cell = grid.locate(p).ok_or(KpmeError::OutsideBox {
            index,
            position: *p,
        })?;
        cells[grid.linear_index(cell)].push(index);
    }
    Ok(Partition { cells })
}

/// Result of the interpolation convergence check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceCheck {
    pub nu: f64,
    pub pass: bool,
}

/// `ν = π M r_c / period` for the largest cell radius; passes when `ν < 1`.
///
/// Under the unit-period normalization this is `π M r_c`.
pub fn check_convergence_ratio(grid: &CellGrid, modes: usize, norm: &Normalization) -> ConvergenceCheck {
    let nu = PI * modes as f64 * grid.max_cell_radius() / norm.period;
    ConvergenceCheck { nu, pass: nu < 1.0 }
}

/// Reads the point-cloud text format: a count line, then `x y z q` lines.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<(PointCloud, ChargeVector)> {
    let file = std::fs::File::open(path)?;
    parse_point_cloud(std::io::BufReader::new(file))
}

pub fn parse_point_cloud(reader: impl BufRead) -> Result<(PointCloud, ChargeVector)> {
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let (_, first) = lines.next().ok_or(KpmeError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let n: usize = first?.trim().parse().map_err(|e| KpmeError::Parse {
        line: 1,
        message: format!("bad particle count: {e}"),
    })?;
    let mut positions = Vec::with_capacity(n);
    let mut charges = Vec::with_capacity(n);
    for (lineno, line) in lines.by_ref().take(n) {
        let line = line?;
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| KpmeError::Parse {
                line: lineno + 1,
                message: format!("{e}"),
            })?;
        if fields.len() != 4 {
            return Err(KpmeError::Parse {
                line: lineno + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        positions.push([fields[0], fields[1], fields[2]]);
        charges.push(fields[3]);
    }
    check_len("point cloud file", n, positions.len())?;
    Ok((PointCloud::new(positions), ChargeVector::new(charges)))
}

pub fn write_point_cloud(
    mut out: impl Write,
    cloud: &PointCloud,
    charges: &ChargeVector,
) -> Result<()> {
    check_len("charges", cloud.len(), charges.len())?;
    writeln!(out, "{}", cloud.len())?;
    for (p, q) in cloud.positions().iter().zip(charges.values()) {
        writeln!(out, "{:e} {:e} {:e} {:e}", p[0], p[1], p[2], q)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_box() -> Box3 {
        Box3::new([0.0; 3], 1.0).unwrap()
    }

    #[test]
    fn single_cell_is_the_box() {
        let g = build_cell_grid(Box3::new([0.0; 3], 0.5).unwrap(), 1).unwrap();
        assert_eq!(g.num_cells(), 1);
        for j in 0..3 {
            assert_eq!(g.interval(j, 0), (-0.5, 0.5));
        }
    }

    #[test]
    fn bisection_and_thirds() {
        let g = build_cell_grid(unit_box(), 2).unwrap();
        assert_eq!(g.num_cells(), 8);
        assert_eq!(g.cell_radius(0), 0.5);
        assert_eq!(g.interval(1, 1), (0.0, 1.0));

        let g = build_cell_grid(unit_box(), 3).unwrap();
        assert_eq!(g.num_cells(), 27);
        let (lo, hi) = g.interval(0, 0);
        assert_eq!(lo, -1.0);
        assert_relative_eq!(hi, -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn cell_volumes_tile_the_box() {
        for k in 1..7 {
            let g = build_cell_grid(Box3::new([0.3, -2.0, 5.0], 1.7).unwrap(), k).unwrap();
            let total: f64 = (0..g.num_cells())
                .map(|l| {
                    let b = g.cell_bounds(g.multi_index(l));
                    b.iter().map(|(lo, hi)| hi - lo).product::<f64>()
                })
                .sum();
            assert_relative_eq!(total, 3.4f64.powi(3), max_relative = 1e-13);
        }
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(Box3::new([0.0; 3], 0.0).is_err());
        assert!(Box3::from_bounds([0.0; 3], [1.0, 1.0, 2.0]).is_err());
        assert!(Box3::from_bounds([0.0; 3], [2.0; 3]).is_ok());
        assert!(CellGrid::new(unit_box(), [1, 0, 1]).is_err());
    }

    #[test]
    fn center_goes_to_lowest_cell() {
        let g = build_cell_grid(unit_box(), 2).unwrap();
        let part = assign_particles(&g, &PointCloud::new(vec![[0.0; 3]])).unwrap();
        assert_eq!(part.cell(0), &[0]);
    }

    #[test]
    fn faces_and_corners_go_low() {
        let g = build_cell_grid(unit_box(), 3).unwrap();
        let (_, b) = g.interval(0, 0);
        assert_eq!(g.locate(&[b, b, b]), Some([0, 0, 0]));
        assert_eq!(g.locate(&[1.0, 1.0, 1.0]), Some([2, 2, 2]));
        assert_eq!(g.locate(&[-1.0, -1.0, -1.0]), Some([0, 0, 0]));
    }

    #[test]
    fn one_cell_holds_everything() {
        let b = unit_box();
        let g = build_cell_grid(b, 1).unwrap();
        let cloud = PointCloud::uniform(&b, 100, 3);
        let part = assign_particles(&g, &cloud).unwrap();
        assert_eq!(part.cell(0).len(), 100);
    }

    #[test]
    fn partition_is_a_permutation() {
        let b = unit_box();
        let g = build_cell_grid(b, 2).unwrap();
        let cloud = PointCloud::uniform(&b, 1000, 11);
        let part = assign_particles(&g, &cloud).unwrap();
        let mut all: Vec<usize> = part.cells().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        // each particle really lies in its cell
        for (l, ids) in part.cells().iter().enumerate() {
            let bounds = g.cell_bounds(g.multi_index(l));
            for &i in ids {
                let p = cloud.positions()[i];
                for j in 0..3 {
                    assert!(p[j] >= bounds[j].0 && p[j] <= bounds[j].1);
                }
            }
        }
        assert_eq!(part, assign_particles(&g, &cloud).unwrap());
    }

    #[test]
    fn outside_particle_is_reported() {
        let g = build_cell_grid(unit_box(), 2).unwrap();
        let cloud = PointCloud::new(vec![[0.0; 3], [0.1, 1.5, 0.0]]);
        match assign_particles(&g, &cloud) {
            Err(KpmeError::OutsideBox { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn convergence_ratio() {
        let norm = Normalization::unit([0.0; 3]);
        let g = build_cell_grid(unit_box(), 13).unwrap();
        let c = check_convergence_ratio(&g, 4, &norm);
        assert_relative_eq!(c.nu, 4.0 * PI / 13.0, max_relative = 1e-15);
        assert!(c.pass);
        let c = check_convergence_ratio(&build_cell_grid(unit_box(), 12).unwrap(), 4, &norm);
        assert_relative_eq!(c.nu, PI / 3.0, max_relative = 1e-15);
        assert!(!c.pass);
        for m in 1..6 {
            let k = 3;
            let r = k as f64 / (2.0 * PI * m as f64);
            let g = build_cell_grid(Box3::new([0.0; 3], r).unwrap(), k).unwrap();
            assert_relative_eq!(check_convergence_ratio(&g, m, &norm).nu, 0.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn text_format_round_trip() {
        let b = unit_box();
        let cloud = PointCloud::uniform(&b, 5, 1);
        let q = ChargeVector::uniform(5, 1);
        let mut buf = Vec::new();
        write_point_cloud(&mut buf, &cloud, &q).unwrap();
        let (c2, q2) = parse_point_cloud(buf.as_slice()).unwrap();
        assert_eq!(c2, cloud);
        assert_eq!(q2, q);
        assert!(parse_point_cloud("2\n0 0 0 1\n".as_bytes()).is_err());
        assert!(parse_point_cloud("1\n0 0 x 1\n".as_bytes()).is_err());
    }
}
