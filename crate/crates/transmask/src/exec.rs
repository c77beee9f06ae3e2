//! Execution context for inference parallelism and sequential-step tallies.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Counts the longest chain of inherently ordered recurrence steps executed
/// by a forward pass. Parallel branches of equal depth record once.
#[derive(Clone, Default)]
pub struct StepTally {
    steps: Arc<AtomicU64>,
}

impl StepTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, steps: u64) {
        self.steps.fetch_add(steps, Ordering::Relaxed);
    }

    pub fn total(&self) -> u64 {
        self.steps.load(Ordering::Relaxed)
    }
}

/// How a forward pass runs: worker count for the independence points of the
/// separator, plus an optional recurrence-step tally.
#[derive(Clone, Default)]
pub struct ExecCtx {
    workers: usize,
    pub tally: Option<StepTally>,
}

impl ExecCtx {
    /// Single-worker, untallied context; the deterministic default.
    pub fn serial() -> Self {
        ExecCtx {
            workers: 1,
            tally: None,
        }
    }

    pub fn with_workers(workers: usize) -> Self {
        ExecCtx {
            workers: workers.max(1),
            tally: None,
        }
    }

    pub fn with_tally(mut self, tally: StepTally) -> Self {
        self.tally = Some(tally);
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn record_steps(&self, steps: u64) {
        if let Some(t) = &self.tally {
            t.add(steps);
        }
    }
}

/// Splits `0..n` into at most `workers` contiguous ranges.
pub fn shard_ranges(n: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.max(1).min(n.max(1));
    let base = n / workers;
    let extra = n % workers;
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for i in 0..workers {
        let len = base + usize::from(i < extra);
        if len == 0 {
            continue;
        }
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Applies `f` to each shard of `0..n`, on scoped threads when the context
/// asks for more than one worker. Results come back in shard order, so the
/// output is identical to the single-worker path.
pub fn shard_map<T, F>(ctx: &ExecCtx, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let ranges = shard_ranges(n, ctx.workers);
    if ranges.len() <= 1 {
        return ranges.into_iter().map(f).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges.into_iter().map(|r| scope.spawn(|| f(r))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_cover_range_in_order() {
        for n in 0..20 {
            for w in 1..6 {
                let ranges = shard_ranges(n, w);
                let mut expect = 0;
                for r in &ranges {
                    assert_eq!(r.start, expect);
                    expect = r.end;
                }
                assert_eq!(expect, n);
            }
        }
    }

    #[test]
    fn shard_map_matches_serial() {
        let serial = shard_map(&ExecCtx::serial(), 13, |r| r.sum::<usize>());
        let parallel = shard_map(&ExecCtx::with_workers(4), 13, |r| r.sum::<usize>());
        assert_eq!(serial.iter().sum::<usize>(), parallel.iter().sum::<usize>());
    }
}
