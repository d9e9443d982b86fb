//! Distributed application of the factored operator over a grid of ranks.
//!
//! Rank `j = (j₀, j₁, j₂)` owns cell `j` of a [`CellGrid`](crate::geometry::CellGrid)
//! of the same shape. All per-rank code is written against the
//! [`Communicator`] trait; [`SimWorld`] runs it with one thread per rank and
//! in-process mailboxes.

mod comm;
mod driver;
mod spkmv;

pub use comm::{SelfComm, SimComm, SimWorld, THREADS_ENV};
pub use driver::{kpme_sequential, run_distributed, split_local, RunOutput};
pub use spkmv::{build_rank_factors, kpme_apply, spkmv, spkmv_fused, AxisFactors, KpmeSetup, LocalState};

use std::cell::RefCell;
use std::fmt;
use std::io::Write;

use crate::error::{KpmeError, Result};

/// Logical `K₀ × K₁ × K₂` grid of ranks, numbered lexicographically with
/// axis 0 slowest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankGrid {
    dims: [usize; 3],
}

impl RankGrid {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(KpmeError::invalid(format!("rank grid {dims:?} has an empty axis")));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn multi_index(&self, rank: usize) -> [usize; 3] {
        let [_, k1, k2] = self.dims;
        [rank / (k1 * k2), rank / k2 % k1, rank % k2]
    }

    pub fn rank_of(&self, j: [usize; 3]) -> usize {
        (j[0] * self.dims[1] + j[1]) * self.dims[2] + j[2]
    }

    /// Members of the axis group `J_p` containing `rank`, ascending.
    pub fn group(&self, rank: usize, axis: usize) -> Vec<usize> {
        let j = self.multi_index(rank);
        (0..self.dims[axis])
            .map(|k| {
                let mut g = j;
                g[axis] = k;
                self.rank_of(g)
            })
            .collect()
    }

    /// Identifier of the axis-`p` group of `rank` among the groups of that axis.
    pub fn group_id(&self, rank: usize, axis: usize) -> usize {
        let mut j = self.multi_index(rank);
        j[axis] = 0;
        self.rank_of(j)
    }
}

/// Collective operations available to a rank.
///
/// Implementations must sum contributions in ascending rank order so that
/// every member of a group receives bit-identical results.
pub trait Communicator {
    fn rank(&self) -> usize;
    fn grid(&self) -> RankGrid;
    /// Sum `buf` elementwise over the axis group `J_axis` of this rank.
    fn axis_allreduce_sum(&self, axis: usize, buf: &mut [f64]) -> Result<()>;
    /// Sum `buf` elementwise over all ranks.
    fn allreduce_sum(&self, buf: &mut [f64]) -> Result<()>;
}

impl<C: Communicator + ?Sized> Communicator for &C {
    fn rank(&self) -> usize {
        (**self).rank()
    }

    fn grid(&self) -> RankGrid {
        (**self).grid()
    }

    fn axis_allreduce_sum(&self, axis: usize, buf: &mut [f64]) -> Result<()> {
        (**self).axis_allreduce_sum(axis, buf)
    }

    fn allreduce_sum(&self, buf: &mut [f64]) -> Result<()> {
        (**self).allreduce_sum(buf)
    }
}

/// Group addressed by a collective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupAxis {
    Axis(usize),
    All,
}

impl fmt::Display for GroupAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupAxis::Axis(p) => write!(f, "{p}"),
            GroupAxis::All => f.write_str("all"),
        }
    }
}

/// One collective issued by one rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub rank: usize,
    pub step: usize,
    pub group_axis: GroupAxis,
    pub payload_count: usize,
}

/// Wraps a communicator and records every collective it forwards.
pub struct Recording<C> {
    inner: C,
    entries: RefCell<Vec<LedgerEntry>>,
}

impl<C: Communicator> Recording<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            entries: RefCell::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.borrow().clone()
    }

    pub fn into_entries(self) -> Vec<LedgerEntry> {
        self.entries.into_inner()
    }

    fn record(&self, group_axis: GroupAxis, payload_count: usize) {
        let mut e = self.entries.borrow_mut();
        let step = e.len();
        e.push(LedgerEntry {
            rank: self.inner.rank(),
            step,
            group_axis,
            payload_count,
        });
    }
}

impl<C: Communicator> Communicator for Recording<C> {
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn grid(&self) -> RankGrid {
        self.inner.grid()
    }

    fn axis_allreduce_sum(&self, axis: usize, buf: &mut [f64]) -> Result<()> {
        self.record(GroupAxis::Axis(axis), buf.len());
        self.inner.axis_allreduce_sum(axis, buf)
    }

    fn allreduce_sum(&self, buf: &mut [f64]) -> Result<()> {
        self.record(GroupAxis::All, buf.len());
        self.inner.allreduce_sum(buf)
    }
}

/// Writes `rank,step,group_axis,payload_count` rows.
pub fn write_ledger_csv(out: impl Write, entries: &[LedgerEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "step", "group_axis", "payload_count"])
        .map_err(csv_error)?;
    for e in entries {
        w.write_record([
            e.rank.to_string(),
            e.step.to_string(),
            e.group_axis.to_string(),
            e.payload_count.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> KpmeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => KpmeError::Io(io),
        other => KpmeError::Numerical(format!("csv: {other:?}")),
    }
}

/// Per-rank summary of a ledger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LedgerSummary {
    pub axis_reductions: usize,
    pub global_reductions: usize,
    pub payload_total: usize,
}

pub fn summarize_ledger(entries: &[LedgerEntry], ranks: usize) -> Vec<LedgerSummary> {
    let mut out = vec![LedgerSummary::default(); ranks];
    for e in entries {
        let s = &mut out[e.rank];
        match e.group_axis {
            GroupAxis::Axis(_) => s.axis_reductions += 1,
            GroupAxis::All => s.global_reductions += 1,
        }
        s.payload_total += e.payload_count;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_partition_the_grid() {
        for dims in [[2, 2, 2], [3, 1, 2], [4, 2, 1]] {
            let g = RankGrid::new(dims).unwrap();
            for axis in 0..3 {
                let mut seen = vec![0; g.size()];
                let mut ids = std::collections::BTreeSet::new();
                for r in 0..g.size() {
                    let members = g.group(r, axis);
                    assert_eq!(members.len(), dims[axis]);
                    assert!(members.contains(&r));
                    assert!(members.windows(2).all(|w| w[0] < w[1]));
                    if ids.insert(g.group_id(r, axis)) {
                        for m in members {
                            seen[m] += 1;
                        }
                    }
                }
                assert!(seen.iter().all(|&c| c == 1));
                assert_eq!(ids.len(), g.size() / dims[axis]);
            }
            for r in 0..g.size() {
                assert_eq!(g.rank_of(g.multi_index(r)), r);
            }
        }
        assert!(RankGrid::new([2, 0, 1]).is_err());
    }

    #[test]
    fn ledger_csv_columns() {
        let entries = [
            LedgerEntry {
                rank: 0,
                step: 0,
                group_axis: GroupAxis::All,
                payload_count: 1,
            },
            LedgerEntry {
                rank: 0,
                step: 1,
                group_axis: GroupAxis::Axis(2),
                payload_count: 96,
            },
        ];
        let mut buf = Vec::new();
        write_ledger_csv(&mut buf, &entries).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "rank,step,group_axis,payload_count\n0,0,all,1\n0,1,2,96\n"
        );
        let s = summarize_ledger(&entries, 1);
        assert_eq!(s[0].axis_reductions, 1);
        assert_eq!(s[0].payload_total, 97);
    }
}
