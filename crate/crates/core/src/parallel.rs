//! Scoped fan-out over contiguous index ranges.
//!
//! Results come back in range order, and each index is processed by exactly
//! the same code whatever the worker count, so anything built on top is
//! bitwise independent of `workers`.

use std::ops::Range;
use std::thread;

/// Splits `0..len` into at most `workers` contiguous ranges.
pub fn partition(len: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.max(1).min(len.max(1));
    let chunk = len.div_ceil(workers);
    (0..workers)
        .map(|w| (w * chunk).min(len)..((w + 1) * chunk).min(len))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Runs `f` on each range of `partition(len, workers)`, one scoped thread per
/// range beyond the first, and returns the results in range order.
pub fn map_ranges<T, F>(len: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let ranges = partition(len, workers);
    if ranges.len() <= 1 {
        return ranges.into_iter().map(&f).collect();
    }
    thread::scope(|s| {
        let f = &f;
        let mut iter = ranges.into_iter();
        let first = iter.next().expect("at least two ranges");
        let handles: Vec<_> = iter.map(|r| s.spawn(move || f(r))).collect();
        let mut out = Vec::with_capacity(handles.len() + 1);
        out.push(f(first));
        for h in handles {
            out.push(h.join().expect("worker panicked"));
        }
        out
    })
}
