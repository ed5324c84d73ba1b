//! Slice geometry: how a length-`T` sequence is cut into `n` parts, `k`
//! times over, and the resulting `k + 1` layers of short recurrences.
//!
//! Everything here is 0-based. Layer `p` has `s_p = n^(k−p)` subsequences;
//! layer 0 subsequences have length `l0 = T / n^k` and every higher layer
//! runs over `n` child states. Subsequence `j` of layer `p ≥ 1` consumes the
//! last states of layer-`(p−1)` subsequences `j·n .. (j+1)·n`. Minimum
//! subsequence `i` covers tokens `i·l0 .. (i+1)·l0`, which is `x_{i·l0+1}`
//! through `x_{(i+1)·l0}` in 1-based notation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrnnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub seq_len: usize,
    pub slices: usize,
    pub depth: usize,
}

impl SliceConfig {
    pub fn new(seq_len: usize, slices: usize, depth: usize) -> Self {
        SliceConfig {
            seq_len,
            slices,
            depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceLayer {
    pub index: usize,
    pub count: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePlan {
    pub seq_len: usize,
    pub slices: usize,
    pub depth: usize,
    pub min_len: usize,
    pub layers: Vec<SliceLayer>,
}

/// `n^k`, or `None` on overflow.
pub fn block_size(n: usize, k: usize) -> Option<usize> {
    n.checked_pow(u32::try_from(k).ok()?)
}

/// Smallest multiple of `n^k` that is `≥ t`.
pub fn padded_len(t: usize, n: usize, k: usize) -> Option<usize> {
    let b = block_size(n, k)?;
    t.div_ceil(b).checked_mul(b)
}

pub fn build_plan(cfg: SliceConfig) -> Result<SlicePlan> {
    let SliceConfig {
        seq_len: t,
        slices: n,
        depth: k,
    } = cfg;
    if t == 0 {
        return Err(SrnnError::Argument("sequence length T must be ≥ 1".into()));
    }
    if n < 2 {
        return Err(SrnnError::Argument(format!("slice number n must be ≥ 2, got {n}")));
    }
    let block = block_size(n, k)
        .ok_or_else(|| SrnnError::Argument(format!("n^k = {n}^{k} overflows")))?;
    if t % block != 0 {
        return Err(SrnnError::Divisibility {
            t,
            n,
            k,
            block,
            padded: padded_len(t, n, k).unwrap_or(usize::MAX),
        });
    }
    let min_len = t / block;
    let mut layers = Vec::with_capacity(k + 1);
    layers.push(SliceLayer {
        index: 0,
        count: block,
        len: min_len,
    });
    for p in 1..=k {
        layers.push(SliceLayer {
            index: p,
            count: block_size(n, k - p).expect("smaller than n^k"),
            len: n,
        });
    }
    Ok(SlicePlan {
        seq_len: t,
        slices: n,
        depth: k,
        min_len,
        layers,
    })
}

impl SlicePlan {
    pub fn config(&self) -> SliceConfig {
        SliceConfig::new(self.seq_len, self.slices, self.depth)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `s_0`, the number of minimum subsequences.
    pub fn min_count(&self) -> usize {
        self.layers[0].count
    }

    /// Sequential steps along the longest dependency chain: `l0 + n·k`.
    pub fn critical_steps(&self) -> usize {
        self.min_len + self.slices * self.depth
    }

    /// Total recurrent steps over all subsequences of all layers.
    pub fn total_steps(&self) -> usize {
        self.layers.iter().map(|l| l.count * l.len).sum()
    }

    /// Which layer-`(p−1)` outputs feed subsequence `j` of layer `p`.
    pub fn child_range(&self, p: usize, j: usize) -> Result<Range<usize>> {
        if p == 0 || p > self.depth {
            return Err(SrnnError::Index(format!(
                "layer {p} has no children (valid layers 1..={})",
                self.depth
            )));
        }
        let count = self.layers[p].count;
        if j >= count {
            return Err(SrnnError::Index(format!(
                "subsequence {j} out of range for layer {p} with {count} subsequences"
            )));
        }
        Ok(j * self.slices..(j + 1) * self.slices)
    }

    /// Token range of minimum subsequence `i`.
    pub fn min_range(&self, i: usize) -> Result<Range<usize>> {
        if i >= self.min_count() {
            return Err(SrnnError::Index(format!(
                "minimum subsequence {i} out of range (s0 = {})",
                self.min_count()
            )));
        }
        Ok(i * self.min_len..(i + 1) * self.min_len)
    }
}

pub fn child_range(plan: &SlicePlan, p: usize, j: usize) -> Result<Range<usize>> {
    plan.child_range(p, j)
}

pub fn min_subsequence<'a, T>(tokens: &'a [T], plan: &SlicePlan, i: usize) -> Result<&'a [T]> {
    if tokens.len() != plan.seq_len {
        return Err(SrnnError::dim(
            "min_subsequence",
            format!("plan T = {}", plan.seq_len),
            format!("sequence of length {}", tokens.len()),
        ));
    }
    Ok(&tokens[plan.min_range(i)?])
}
