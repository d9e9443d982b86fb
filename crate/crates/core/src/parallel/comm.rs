//! Communicator backends: a single-rank no-op and the threaded simulation.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};

use super::{Communicator, RankGrid};
use crate::error::{KpmeError, Result};

/// Environment variable capping how many simulated ranks compute at once.
pub const THREADS_ENV: &str = "KPME_THREADS";

/// The trivial communicator of a `1 × 1 × 1` grid.
#[derive(Clone, Copy, Debug, Default)]
pub struct SelfComm;

impl Communicator for SelfComm {
    fn rank(&self) -> usize {
        0
    }

    fn grid(&self) -> RankGrid {
        RankGrid::new([1, 1, 1]).expect("nonempty grid")
    }

    fn axis_allreduce_sum(&self, _axis: usize, _buf: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn allreduce_sum(&self, _buf: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut p = lock(&self.permits);
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
    }

    fn release(&self) {
        *lock(&self.permits) += 1;
        self.cv.notify_one();
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Default)]
struct MailState {
    slots: Vec<Option<Vec<f64>>>,
    arrived: usize,
    /// Members that still have to copy out the last result.
    readers: usize,
    generation: u64,
    result: Vec<f64>,
}

/// Rendezvous point for one group; sums in slot (ascending rank) order.
struct Mailbox {
    size: usize,
    state: Mutex<MailState>,
    cv: Condvar,
}

impl Mailbox {
    fn new(size: usize) -> Self {
        Self {
            size,
            state: Mutex::new(MailState {
                slots: vec![None; size],
                ..MailState::default()
            }),
            cv: Condvar::new(),
        }
    }

    fn wait<'a>(&self, g: MutexGuard<'a, MailState>, abort: &AtomicBool) -> Result<MutexGuard<'a, MailState>> {
        if abort.load(Ordering::SeqCst) {
            return Err(aborted());
        }
        Ok(self.cv.wait(g).unwrap_or_else(|e| e.into_inner()))
    }

    fn reduce(&self, slot: usize, buf: &mut [f64], abort: &AtomicBool) -> Result<()> {
        let mut g = lock(&self.state);
        while g.readers > 0 {
            g = self.wait(g, abort)?;
        }
        if g.slots[slot].is_some() {
            return Err(KpmeError::Communicator("rank entered a collective twice".into()));
        }
        g.slots[slot] = Some(buf.to_vec());
        g.arrived += 1;
        if g.arrived == self.size {
            let len = buf.len();
            let mut sum = vec![0.0; len];
            let mut mismatch = false;
            for s in g.slots.iter_mut() {
                let v = s.take().expect("all slots filled");
                if v.len() != len {
                    mismatch = true;
                    continue;
                }
                for (acc, x) in sum.iter_mut().zip(&v) {
                    *acc += x;
                }
            }
            if mismatch {
                abort.store(true, Ordering::SeqCst);
                self.cv.notify_all();
                return Err(KpmeError::Communicator("buffer lengths differ within a group".into()));
            }
            g.result = sum;
            g.arrived = 0;
            g.readers = self.size;
            g.generation = g.generation.wrapping_add(1);
            self.cv.notify_all();
        } else {
            let gen = g.generation;
            while g.generation == gen {
                g = self.wait(g, abort)?;
            }
        }
        buf.copy_from_slice(&g.result);
        g.readers -= 1;
        if g.readers == 0 {
            self.cv.notify_all();
        }
        Ok(())
    }

    fn wake(&self) {
        let _g = lock(&self.state);
        self.cv.notify_all();
    }
}

fn aborted() -> KpmeError {
    KpmeError::Communicator("another rank aborted".into())
}

struct Shared {
    grid: RankGrid,
    /// `axes[p][group_id]`; only entries at group ids are populated.
    axes: [Vec<Option<Mailbox>>; 3],
    global: Mailbox,
    abort: AtomicBool,
    compute: Semaphore,
}

impl Shared {
    fn abort_all(&self) {
        self.abort.store(true, Ordering::SeqCst);
        for mb in self.axes.iter().flatten().flatten() {
            mb.wake();
        }
        self.global.wake();
    }
}

/// Handle given to each simulated rank.
pub struct SimComm<'w> {
    rank: usize,
    shared: &'w Shared,
}

impl SimComm<'_> {
    fn collective(&self, mb: &Mailbox, slot: usize, buf: &mut [f64]) -> Result<()> {
        // other ranks may compute while this one waits
        self.shared.compute.release();
        let r = mb.reduce(slot, buf, &self.shared.abort);
        self.shared.compute.acquire();
        if r.is_err() {
            self.shared.abort_all();
        }
        r
    }
}

impl Communicator for SimComm<'_> {
    fn rank(&self) -> usize {
        self.rank
    }

    fn grid(&self) -> RankGrid {
        self.shared.grid
    }

    fn axis_allreduce_sum(&self, axis: usize, buf: &mut [f64]) -> Result<()> {
        if axis >= 3 {
            return Err(KpmeError::Communicator(format!("no axis {axis}")));
        }
        let grid = self.shared.grid;
        let mb = self.shared.axes[axis][grid.group_id(self.rank, axis)]
            .as_ref()
            .expect("group mailbox exists");
        self.collective(mb, grid.multi_index(self.rank)[axis], buf)
    }

    fn allreduce_sum(&self, buf: &mut [f64]) -> Result<()> {
        self.collective(&self.shared.global, self.rank, buf)
    }
}

/// In-process world of `K₀ K₁ K₂` ranks, each run on its own thread.
#[derive(Clone, Debug)]
pub struct SimWorld {
    grid: RankGrid,
    max_active: usize,
}

impl SimWorld {
    /// All ranks may compute concurrently.
    pub fn new(grid: RankGrid) -> Self {
        Self {
            grid,
            max_active: grid.size(),
        }
    }

    /// At most `n` ranks compute at once; ranks blocked in a collective do
    /// not count.
    pub fn with_thread_cap(grid: RankGrid, n: usize) -> Self {
        Self {
            grid,
            max_active: n.clamp(1, grid.size()),
        }
    }

    /// Cap from [`THREADS_ENV`] when set, else unlimited.
    pub fn from_env(grid: RankGrid) -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => {
                let n: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| KpmeError::invalid(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
                if n == 0 {
                    return Err(KpmeError::invalid(format!("{THREADS_ENV} must be positive")));
                }
                Ok(Self::with_thread_cap(grid, n))
            }
            Err(_) => Ok(Self::new(grid)),
        }
    }

    pub fn grid(&self) -> RankGrid {
        self.grid
    }

    pub fn max_active(&self) -> usize {
        self.max_active
    }

    /// Runs `f` on every rank and returns the per-rank results in rank
    /// order. When ranks fail, the first error not caused by another rank's
    /// abort is returned.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&SimComm<'_>) -> Result<T> + Sync,
    {
        let grid = self.grid;
        let axes = [0, 1, 2].map(|axis| {
            let mut v: Vec<Option<Mailbox>> = (0..grid.size()).map(|_| None).collect();
            for r in 0..grid.size() {
                let id = grid.group_id(r, axis);
                if v[id].is_none() {
                    v[id] = Some(Mailbox::new(grid.dims()[axis]));
                }
            }
            v
        });
        let shared = Shared {
            grid,
            axes,
            global: Mailbox::new(grid.size()),
            abort: AtomicBool::new(false),
            compute: Semaphore::new(self.max_active),
        };
        let outcomes: Vec<std::thread::Result<Result<T>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..grid.size())
                .map(|rank| {
                    let shared = &shared;
                    let f = &f;
                    std::thread::Builder::new()
                        .name(format!("rank-{rank}"))
                        .spawn_scoped(s, move || {
                            shared.compute.acquire();
                            let comm = SimComm { rank, shared };
                            let out = catch_unwind(AssertUnwindSafe(|| f(&comm)));
                            if !matches!(out, Ok(Ok(_))) {
                                shared.abort_all();
                            }
                            shared.compute.release();
                            out
                        })
                        .expect("spawn rank thread")
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(Err)).collect()
        });
        let mut results = Vec::with_capacity(outcomes.len());
        let mut first_err: Option<KpmeError> = None;
        for o in outcomes {
            match o {
                Err(panic) => resume_unwind(panic),
                Ok(Ok(v)) => results.push(v),
                Ok(Err(e)) => {
                    let secondary = matches!(&e, KpmeError::Communicator(m) if m == "another rank aborted");
                    if first_err.is_none() || (!secondary && matches!(&first_err, Some(KpmeError::Communicator(m)) if m == "another rank aborted")) {
                        first_err = Some(e);
                    }
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(results),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_sums_in_rank_order() {
        let grid = RankGrid::new([2, 3, 2]).unwrap();
        let world = SimWorld::new(grid);
        let out = world
            .run(|c| {
                let mut per_axis = Vec::new();
                for axis in 0..3 {
                    let mut buf = vec![c.rank() as f64, 1.0];
                    c.axis_allreduce_sum(axis, &mut buf)?;
                    per_axis.push(buf);
                }
                let mut all = [1.0];
                c.allreduce_sum(&mut all)?;
                Ok((per_axis, all[0]))
            })
            .unwrap();
        for (r, (per_axis, all)) in out.iter().enumerate() {
            assert_eq!(*all, 12.0);
            for axis in 0..3 {
                let members = grid.group(r, axis);
                let expected: f64 = members.iter().map(|&m| m as f64).sum();
                assert_eq!(per_axis[axis], vec![expected, grid.dims()[axis] as f64]);
            }
        }
    }

    #[test]
    fn repeated_collectives_with_a_cap_of_one() {
        let grid = RankGrid::new([3, 3, 1]).unwrap();
        let world = SimWorld::with_thread_cap(grid, 1);
        let out = world
            .run(|c| {
                let mut acc = 0.0;
                for step in 0..20 {
                    let mut buf = [(c.rank() * step) as f64];
                    c.axis_allreduce_sum(step % 2, &mut buf)?;
                    acc += buf[0];
                }
                Ok(acc)
            })
            .unwrap();
        assert_eq!(out.len(), 9);
    }

    #[test]
    fn failing_rank_does_not_hang_the_others() {
        let grid = RankGrid::new([2, 2, 1]).unwrap();
        let err = SimWorld::new(grid)
            .run(|c| {
                if c.rank() == 3 {
                    return Err(KpmeError::invalid("boom"));
                }
                let mut buf = [1.0];
                c.allreduce_sum(&mut buf)?;
                Ok(())
            })
            .unwrap_err();
        assert!(matches!(err, KpmeError::Invalid(_)));
    }

    #[test]
    fn mismatched_lengths_are_reported() {
        let grid = RankGrid::new([2, 1, 1]).unwrap();
        let err = SimWorld::new(grid)
            .run(|c| {
                let mut buf = vec![0.0; 1 + c.rank()];
                c.axis_allreduce_sum(0, &mut buf)
            })
            .unwrap_err();
        assert!(matches!(err, KpmeError::Communicator(_)));
    }
}
