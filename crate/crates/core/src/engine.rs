//! The sliced network: embedding, one GRU per layer, hierarchical forward and
//! its reverse pass, plus the plain sequential RNN it generalizes.
//!
//! Rows are the unit of parallelism. A batch of `B` documents becomes
//! `B · s_p` independent short recurrences on layer `p`; row `b·s_p + j` is
//! subsequence `j` of document `b`. Because `s_{p−1} = n · s_p`, the last
//! states of layer `p − 1` laid out row by row are already the `[row][step]`
//! input of layer `p`, and the embedded batch `[doc][position]` is already
//! the input of layer 0. Every recurrence starts from `h₀ = 0` and child
//! states feed their parent untransformed.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cell::{
    gru_backward_row, gru_forward_row, gru_step, gru_step_backward, GateClamp, GruParams,
    GruStepCache, RecurrentCell, StepView,
};
use crate::error::{Result, SrnnError};
use crate::parallel::map_ranges;
use crate::slice::SlicePlan;
use crate::tensor::{Matrix, SeededRng};
use crate::training::ClassifierHead;

/// `rows` independent sequences of `len` steps of `dim`-vectors, stored
/// `[row][step][dim]`.
#[derive(Clone, Copy, Debug)]
pub struct SeqBatch<'a> {
    data: &'a [f64],
    rows: usize,
    len: usize,
    dim: usize,
}

impl<'a> SeqBatch<'a> {
    pub fn new(data: &'a [f64], rows: usize, len: usize, dim: usize) -> Result<Self> {
        if data.len() != rows * len * dim || rows == 0 || len == 0 {
            return Err(SrnnError::dim(
                "SeqBatch",
                format!("{rows} rows x {len} steps x {dim}"),
                format!("buffer of {}", data.len()),
            ));
        }
        Ok(SeqBatch {
            data,
            rows,
            len,
            dim,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn step(&self, row: usize, t: usize) -> &'a [f64] {
        let at = (row * self.len + t) * self.dim;
        &self.data[at..at + self.dim]
    }
}

/// Last states of one layer plus, per row, the length of the longest chain
/// of sequential steps that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutput {
    pub last: Vec<f64>,
    pub depth: Vec<usize>,
}

fn check_cell_input(cell: &impl RecurrentCell, inputs: &SeqBatch<'_>) -> Result<()> {
    if cell.input_dim() != inputs.dim {
        return Err(SrnnError::dim(
            "layer forward",
            format!("cell input_dim {}", cell.input_dim()),
            format!("inputs of dim {}", inputs.dim),
        ));
    }
    Ok(())
}

/// Runs every row of `inputs` through `cell` from a zero state.
///
/// `in_depth` gives the dependency depth of each input step (`[row][step]`);
/// `None` means the inputs are leaves.
pub fn run_layer<C: RecurrentCell>(
    cell: &C,
    inputs: SeqBatch<'_>,
    in_depth: Option<&[usize]>,
    workers: usize,
) -> Result<LayerOutput> {
    check_cell_input(cell, &inputs)?;
    if let Some(d) = in_depth {
        if d.len() != inputs.rows * inputs.len {
            return Err(SrnnError::dim(
                "run_layer",
                format!("{} input steps", inputs.rows * inputs.len),
                format!("{} depths", d.len()),
            ));
        }
    }
    let m = cell.hidden_dim();
    let parts = map_ranges(inputs.rows, workers, |range: Range<usize>| {
        let mut last = vec![0.0; range.len() * m];
        let mut depth = vec![0usize; range.len()];
        let mut scratch = vec![0.0; cell.scratch_len()];
        let mut h = vec![0.0; m];
        let mut next = vec![0.0; m];
        for (ri, row) in range.enumerate() {
            h.iter_mut().for_each(|v| *v = 0.0);
            let mut d = 0usize;
            for t in 0..inputs.len {
                cell.step_into(inputs.step(row, t), &h, &mut next, &mut scratch);
                std::mem::swap(&mut h, &mut next);
                let input_depth = in_depth.map_or(0, |dd| dd[row * inputs.len + t]);
                d = d.max(input_depth) + 1;
            }
            last[ri * m..(ri + 1) * m].copy_from_slice(&h);
            depth[ri] = d;
        }
        (last, depth)
    });
    let mut out = LayerOutput {
        last: Vec::with_capacity(inputs.rows * m),
        depth: Vec::with_capacity(inputs.rows),
    };
    for (last, depth) in parts {
        out.last.extend(last);
        out.depth.extend(depth);
    }
    Ok(out)
}

/// Last states of `s` subsequences of length `l`, computed by `workers`
/// threads. Output is identical for every worker count.
pub fn layer_forward_parallel(
    cell: &GruParams,
    inputs: SeqBatch<'_>,
    workers: usize,
) -> Result<Vec<f64>> {
    Ok(run_layer(cell, inputs, None, workers)?.last)
}

/// Runs the hierarchy for any cell type. `embedded` is `[doc][position][dim]`
/// for `batch` documents of length `plan.seq_len`.
pub fn hierarchical_forward<C: RecurrentCell>(
    cells: &[C],
    plan: &SlicePlan,
    embedded: &[f64],
    batch: usize,
    workers: usize,
) -> Result<LayerOutput> {
    if cells.len() != plan.num_layers() {
        return Err(SrnnError::dim(
            "hierarchical_forward",
            format!("{} layers in plan", plan.num_layers()),
            format!("{} cells", cells.len()),
        ));
    }
    let dim = cells[0].input_dim();
    let inputs = SeqBatch::new(embedded, batch * plan.min_count(), plan.min_len, dim)?;
    let mut out = run_layer(&cells[0], inputs, None, workers)?;
    for (p, cell) in cells.iter().enumerate().skip(1) {
        let rows = batch * plan.layers[p].count;
        let inputs = SeqBatch::new(&out.last, rows, plan.slices, cells[p - 1].hidden_dim())?;
        out = run_layer(cell, inputs, Some(&out.depth), workers)?;
    }
    Ok(out)
}

/// Per-step activations of one layer, `[row][step][m]`.
#[derive(Clone, Debug)]
pub struct LayerCache {
    rows: usize,
    len: usize,
    m: usize,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    h_tilde: Vec<f64>,
}

impl LayerCache {
    #[inline]
    fn at(&self, row: usize, t: usize) -> Range<usize> {
        let at = (row * self.len + t) * self.m;
        at..at + self.m
    }

    fn view(&self, row: usize, t: usize) -> StepView<'_> {
        let s = self.at(row, t);
        StepView {
            h_prev: &self.h_prev[s.clone()],
            r: &self.r[s.clone()],
            z: &self.z[s.clone()],
            h_tilde: &self.h_tilde[s],
        }
    }
}

fn gru_layer_forward_cached(
    cell: &GruParams,
    inputs: SeqBatch<'_>,
    in_depth: Option<&[usize]>,
    workers: usize,
) -> Result<(LayerOutput, LayerCache)> {
    check_cell_input(cell, &inputs)?;
    let m = cell.hidden_dim();
    let len = inputs.len;
    let parts = map_ranges(inputs.rows, workers, |range: Range<usize>| {
        let n = range.len() * len * m;
        let (mut hp, mut r, mut z, mut ht) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut last = vec![0.0; range.len() * m];
        let mut depth = vec![0usize; range.len()];
        let mut h = vec![0.0; m];
        let mut next = vec![0.0; m];
        for (ri, row) in range.enumerate() {
            h.iter_mut().for_each(|v| *v = 0.0);
            let mut d = 0usize;
            for t in 0..len {
                let s = (ri * len + t) * m..(ri * len + t + 1) * m;
                hp[s.clone()].copy_from_slice(&h);
                gru_forward_row(
                    cell,
                    inputs.step(row, t),
                    &h,
                    &mut r[s.clone()],
                    &mut z[s.clone()],
                    &mut ht[s],
                    &mut next,
                    GateClamp::NONE,
                );
                std::mem::swap(&mut h, &mut next);
                d = d.max(in_depth.map_or(0, |dd| dd[row * len + t])) + 1;
            }
            last[ri * m..(ri + 1) * m].copy_from_slice(&h);
            depth[ri] = d;
        }
        (last, depth, hp, r, z, ht)
    });
    let mut out = LayerOutput {
        last: Vec::new(),
        depth: Vec::new(),
    };
    let mut cache = LayerCache {
        rows: inputs.rows,
        len,
        m,
        h_prev: Vec::new(),
        r: Vec::new(),
        z: Vec::new(),
        h_tilde: Vec::new(),
    };
    for (last, depth, hp, r, z, ht) in parts {
        out.last.extend(last);
        out.depth.extend(depth);
        cache.h_prev.extend(hp);
        cache.r.extend(r);
        cache.z.extend(z);
        cache.h_tilde.extend(ht);
    }
    Ok((out, cache))
}

/// Reverse pass over one layer. Returns the gradient with respect to every
/// input step (`[row][step][dim]`) and the cell's parameter gradients.
///
/// Per-row recurrences are independent and run in parallel. Each parameter
/// entry is then reduced over `(row, step)` in ascending order by whichever
/// worker owns that hidden unit, so the result never depends on `workers`.
fn gru_layer_backward(
    cell: &GruParams,
    inputs: SeqBatch<'_>,
    cache: &LayerCache,
    d_last: &[f64],
    workers: usize,
) -> Result<(Vec<f64>, GruParams)> {
    let (m, d, len, rows) = (cell.hidden_dim(), cell.input_dim(), inputs.len, inputs.rows);
    if cache.rows != rows || cache.len != len || cache.m != m || d_last.len() != rows * m {
        return Err(SrnnError::Consistency(format!(
            "layer cache {}x{}x{} vs inputs {}x{} and upstream gradient of {}",
            cache.rows,
            cache.len,
            cache.m,
            rows,
            len,
            d_last.len()
        )));
    }

    let parts = map_ranges(rows, workers, |range: Range<usize>| {
        let mut da = vec![0.0; range.len() * len * 3 * m];
        let mut dx = vec![0.0; range.len() * len * d];
        let mut dh = vec![0.0; m];
        let mut dh_prev = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        for (ri, row) in range.enumerate() {
            dh.copy_from_slice(&d_last[row * m..(row + 1) * m]);
            for t in (0..len).rev() {
                let slot = ri * len + t;
                gru_backward_row(
                    cell,
                    cache.view(row, t),
                    &dh,
                    GateClamp::NONE,
                    &mut da[slot * 3 * m..(slot + 1) * 3 * m],
                    &mut dx[slot * d..(slot + 1) * d],
                    &mut dh_prev,
                    &mut tmp,
                );
                std::mem::swap(&mut dh, &mut dh_prev);
            }
        }
        (da, dx)
    });
    let mut da = Vec::with_capacity(rows * len * 3 * m);
    let mut d_inputs = Vec::with_capacity(rows * len * d);
    for (a, x) in parts {
        da.extend(a);
        d_inputs.extend(x);
    }

    let blocks = map_ranges(m, workers, |units: Range<usize>| {
        let k = units.len();
        let mut g = UnitGrads::new(k, d, m);
        let mut rh = vec![0.0; m];
        for row in 0..rows {
            for t in 0..len {
                let x = inputs.step(row, t);
                let s = cache.at(row, t);
                let (hp, r) = (&cache.h_prev[s.clone()], &cache.r[s]);
                for j in 0..m {
                    rh[j] = r[j] * hp[j];
                }
                let a = &da[(row * len + t) * 3 * m..(row * len + t + 1) * 3 * m];
                for (u, i) in units.clone().enumerate() {
                    let (ar, az, ah) = (a[i], a[m + i], a[2 * m + i]);
                    acc(&mut g.w_r[u * d..(u + 1) * d], ar, x);
                    acc(&mut g.u_r[u * m..(u + 1) * m], ar, hp);
                    g.b_r[u] += ar;
                    acc(&mut g.w_z[u * d..(u + 1) * d], az, x);
                    acc(&mut g.u_z[u * m..(u + 1) * m], az, hp);
                    g.b_z[u] += az;
                    acc(&mut g.w_h[u * d..(u + 1) * d], ah, x);
                    acc(&mut g.u_h[u * m..(u + 1) * m], ah, &rh);
                    g.b_h[u] += ah;
                }
            }
        }
        (units, g)
    });
    let mut grads = GruParams::zeros(d, m);
    for (units, g) in blocks {
        for (u, i) in units.enumerate() {
            grads.w_r.row_mut(i).copy_from_slice(&g.w_r[u * d..(u + 1) * d]);
            grads.u_r.row_mut(i).copy_from_slice(&g.u_r[u * m..(u + 1) * m]);
            grads.b_r[i] = g.b_r[u];
            grads.w_z.row_mut(i).copy_from_slice(&g.w_z[u * d..(u + 1) * d]);
            grads.u_z.row_mut(i).copy_from_slice(&g.u_z[u * m..(u + 1) * m]);
            grads.b_z[i] = g.b_z[u];
            grads.w_h.row_mut(i).copy_from_slice(&g.w_h[u * d..(u + 1) * d]);
            grads.u_h.row_mut(i).copy_from_slice(&g.u_h[u * m..(u + 1) * m]);
            grads.b_h[i] = g.b_h[u];
        }
    }
    Ok((d_inputs, grads))
}

/// Parameter-gradient rows for a contiguous range of hidden units.
struct UnitGrads {
    w_r: Vec<f64>,
    u_r: Vec<f64>,
    b_r: Vec<f64>,
    w_z: Vec<f64>,
    u_z: Vec<f64>,
    b_z: Vec<f64>,
    w_h: Vec<f64>,
    u_h: Vec<f64>,
    b_h: Vec<f64>,
}

impl UnitGrads {
    fn new(units: usize, d: usize, m: usize) -> Self {
        UnitGrads {
            w_r: vec![0.0; units * d],
            u_r: vec![0.0; units * m],
            b_r: vec![0.0; units],
            w_z: vec![0.0; units * d],
            u_z: vec![0.0; units * m],
            b_z: vec![0.0; units],
            w_h: vec![0.0; units * d],
            u_h: vec![0.0; units * m],
            b_h: vec![0.0; units],
        }
    }
}

#[inline]
fn acc(row: &mut [f64], a: f64, v: &[f64]) {
    for (o, &x) in row.iter_mut().zip(v) {
        *o += a * x;
    }
}

/// Embedding table, one GRU per layer, and the classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrnnModel {
    pub plan: SlicePlan,
    pub embed: Matrix,
    pub cells: Vec<GruParams>,
    pub head: ClassifierHead,
}

/// Dimensions needed to build a fresh model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

/// Range of the uniform draw for embedding rows without a pretrained vector.
pub const EMBED_INIT_RANGE: f64 = 0.05;

/// Reserved padding id; its embedding row is kept at zero.
pub const PAD_ID: usize = 0;

impl SrnnModel {
    /// Random embeddings, `±1/√fan_in` cells, zero head.
    pub fn new(plan: SlicePlan, dims: ModelDims, rng: &mut SeededRng) -> Result<Self> {
        let embed = random_embeddings(dims.vocab_size, dims.embed_dim, rng);
        Self::with_embeddings(plan, embed, dims.hidden_dim, dims.classes, rng)
    }

    pub fn with_embeddings(
        plan: SlicePlan,
        embed: Matrix,
        hidden_dim: usize,
        classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(SrnnError::Argument(format!("need at least 2 classes, got {classes}")));
        }
        let mut cells = Vec::with_capacity(plan.num_layers());
        cells.push(GruParams::init(embed.cols(), hidden_dim, rng));
        for _ in 1..plan.num_layers() {
            cells.push(GruParams::init(hidden_dim, hidden_dim, rng));
        }
        let model = SrnnModel {
            plan,
            embed,
            cells,
            head: ClassifierHead::zeros(classes, hidden_dim),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.plan.num_layers() {
            return Err(SrnnError::dim(
                "SrnnModel",
                format!("{} layers in plan", self.plan.num_layers()),
                format!("{} cells", self.cells.len()),
            ));
        }
        for (p, cell) in self.cells.iter().enumerate() {
            cell.validate()?;
            let want = if p == 0 {
                self.embed.cols()
            } else {
                self.cells[p - 1].hidden_dim()
            };
            if cell.input_dim() != want {
                return Err(SrnnError::dim(
                    "SrnnModel",
                    format!("cell {p} input_dim {}", cell.input_dim()),
                    format!("expected {want}"),
                ));
            }
        }
        self.head.validate(self.hidden_dim())
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.cells[self.cells.len() - 1].hidden_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.vocab_size(),
            embed_dim: self.embed_dim(),
            hidden_dim: self.hidden_dim(),
            classes: self.classes(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.embed.data().len()
            + self.cells.iter().map(GruParams::param_count).sum::<usize>()
            + self.head.param_count()
    }

    /// Looks up each document into one `[doc][position][e]` buffer.
    pub fn embed_batch<D: AsRef<[usize]>>(&self, docs: &[D]) -> Result<Vec<f64>> {
        if docs.is_empty() {
            return Err(SrnnError::Argument("empty batch".into()));
        }
        let (t, e, v) = (self.plan.seq_len, self.embed_dim(), self.vocab_size());
        let mut out = Vec::with_capacity(docs.len() * t * e);
        for doc in docs {
            let ids = doc.as_ref();
            if ids.len() != t {
                return Err(SrnnError::dim(
                    "srnn_forward",
                    format!("plan T = {t}"),
                    format!("sequence of length {}", ids.len()),
                ));
            }
            for &id in ids {
                if id >= v {
                    return Err(SrnnError::Vocabulary { id, size: v });
                }
                out.extend_from_slice(self.embed.row(id));
            }
        }
        Ok(out)
    }

    /// Parameter blocks in a fixed order: embedding, cells by layer, head.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.data_mut()];
        for c in &mut self.cells {
            out.extend(c.blocks_mut());
        }
        out.push(self.head.w.data_mut());
        out.push(&mut self.head.b);
        out
    }
}

/// `vocab_size × dim` table uniform in `±EMBED_INIT_RANGE`, padding row zero.
pub fn random_embeddings(vocab_size: usize, dim: usize, rng: &mut SeededRng) -> Matrix {
    let mut embed = Matrix::uniform(vocab_size, dim, -EMBED_INIT_RANGE, EMBED_INIT_RANGE, rng);
    if vocab_size > PAD_ID {
        embed.row_mut(PAD_ID).iter_mut().for_each(|v| *v = 0.0);
    }
    embed
}

/// Gradients shaped like an [`SrnnModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub embed: Matrix,
    pub cells: Vec<GruParams>,
    pub head: ClassifierHead,
}

impl ModelGradients {
    pub fn zeros_like(model: &SrnnModel) -> Self {
        ModelGradients {
            embed: Matrix::zeros(model.vocab_size(), model.embed_dim()),
            cells: model
                .cells
                .iter()
                .map(|c| GruParams::zeros(c.input_dim(), c.hidden_dim()))
                .collect(),
            head: ClassifierHead::zeros(model.classes(), model.hidden_dim()),
        }
    }

    /// Same order as [`SrnnModel::param_blocks_mut`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embed.data()];
        for c in &self.cells {
            out.extend(c.blocks());
        }
        out.push(self.head.w.data());
        out.push(&self.head.b);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.data_mut()];
        for c in &mut self.cells {
            out.extend(c.blocks_mut());
        }
        out.push(self.head.w.data_mut());
        out.push(&mut self.head.b);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|b| crate::tensor::max_abs(b))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
struct LayerTrace {
    out: LayerOutput,
    cache: LayerCache,
}

/// Everything the reverse pass needs from one batched forward.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    batch: usize,
    tokens: Vec<usize>,
    embedded: Vec<f64>,
    layers: Vec<LayerTrace>,
    plan: SlicePlan,
    /// Longest chain of sequential steps behind the final state.
    pub critical_steps: usize,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of subsequences per document on layer `p`.
    pub fn subsequences(&self, p: usize) -> usize {
        self.plan.layers[p].count
    }

    /// Last hidden state of subsequence `j` of document `doc` on layer `p`.
    pub fn last_state(&self, p: usize, doc: usize, j: usize) -> &[f64] {
        let m = self.layers[p].cache.m;
        let row = doc * self.plan.layers[p].count + j;
        &self.layers[p].out.last[row * m..(row + 1) * m]
    }

    /// Step `t` of subsequence `j` of document `doc` on layer `p`.
    pub fn step_cache(&self, p: usize, doc: usize, j: usize, t: usize) -> GruStepCache {
        let layer = &self.layers[p];
        let row = doc * self.plan.layers[p].count + j;
        let x = if p == 0 {
            let e = self.embedded.len() / (self.batch * self.plan.seq_len);
            let pos = (row * layer.cache.len + t) * e;
            self.embedded[pos..pos + e].to_vec()
        } else {
            let m = self.layers[p - 1].cache.m;
            let child = row * layer.cache.len + t;
            self.layers[p - 1].out.last[child * m..(child + 1) * m].to_vec()
        };
        let s = layer.cache.at(row, t);
        GruStepCache {
            x,
            h_prev: layer.cache.h_prev[s.clone()].to_vec(),
            r: layer.cache.r[s.clone()].to_vec(),
            z: layer.cache.z[s.clone()].to_vec(),
            h_tilde: layer.cache.h_tilde[s].to_vec(),
            clamp: GateClamp::NONE,
        }
    }
}

/// Batched forward keeping everything needed for [`srnn_backward`]. Returns
/// the final states `F` as a `batch × m` matrix.
pub fn srnn_forward_batch<D: AsRef<[usize]>>(
    model: &SrnnModel,
    docs: &[D],
    workers: usize,
) -> Result<(Matrix, ForwardTrace)> {
    let embedded = model.embed_batch(docs)?;
    let batch = docs.len();
    let plan = &model.plan;
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(plan.num_layers());
    for (p, cell) in model.cells.iter().enumerate() {
        let rows = batch * plan.layers[p].count;
        let (out, cache) = if p == 0 {
            let inputs = SeqBatch::new(&embedded, rows, plan.min_len, model.embed_dim())?;
            gru_layer_forward_cached(cell, inputs, None, workers)?
        } else {
            let below = &layers[p - 1].out;
            let inputs = SeqBatch::new(&below.last, rows, plan.slices, cell.input_dim())?;
            gru_layer_forward_cached(cell, inputs, Some(&below.depth), workers)?
        };
        layers.push(LayerTrace { out, cache });
    }
    let top = &layers[layers.len() - 1].out;
    let f = Matrix::from_vec(batch, model.hidden_dim(), top.last.clone())?;
    let critical_steps = top.depth.iter().copied().max().unwrap_or(0);
    let tokens = docs.iter().flat_map(|d| d.as_ref().iter().copied()).collect();
    Ok((
        f,
        ForwardTrace {
            batch,
            tokens,
            embedded,
            layers,
            plan: plan.clone(),
            critical_steps,
        },
    ))
}

/// Single-document forward: the final state `F` and the trace.
pub fn srnn_forward(model: &SrnnModel, token_ids: &[usize]) -> Result<(Vec<f64>, ForwardTrace)> {
    let (f, trace) = srnn_forward_batch(model, &[token_ids], 1)?;
    Ok((f.into_vec(), trace))
}

/// Forward without keeping activations; also reports the critical path.
pub fn srnn_infer<D: AsRef<[usize]>>(
    model: &SrnnModel,
    docs: &[D],
    workers: usize,
) -> Result<(Matrix, usize)> {
    let embedded = model.embed_batch(docs)?;
    let out = hierarchical_forward(&model.cells, &model.plan, &embedded, docs.len(), workers)?;
    let steps = out.depth.iter().copied().max().unwrap_or(0);
    Ok((Matrix::from_vec(docs.len(), model.hidden_dim(), out.last)?, steps))
}

/// Reverse pass through the slice tree for upstream gradient `d_final`
/// (`batch × m`). The head gradient is left at zero.
pub fn srnn_backward(
    model: &SrnnModel,
    trace: &ForwardTrace,
    d_final: &Matrix,
    workers: usize,
) -> Result<ModelGradients> {
    if trace.layers.len() != model.cells.len() || trace.plan != model.plan {
        return Err(SrnnError::Consistency(format!(
            "trace has {} layers, model has {}",
            trace.layers.len(),
            model.cells.len()
        )));
    }
    if d_final.shape() != (trace.batch, model.hidden_dim()) {
        return Err(SrnnError::dim(
            "srnn_backward",
            format!("batch {} x hidden {}", trace.batch, model.hidden_dim()),
            format!("dF {}x{}", d_final.rows(), d_final.cols()),
        ));
    }
    let plan = &model.plan;
    let mut grads = ModelGradients::zeros_like(model);
    let mut d_last = d_final.data().to_vec();
    for p in (0..model.cells.len()).rev() {
        let cell = &model.cells[p];
        let layer = &trace.layers[p];
        let rows = trace.batch * plan.layers[p].count;
        let inputs = if p == 0 {
            SeqBatch::new(&trace.embedded, rows, plan.min_len, model.embed_dim())?
        } else {
            SeqBatch::new(&trace.layers[p - 1].out.last, rows, plan.slices, cell.input_dim())?
        };
        let (d_inputs, g) = gru_layer_backward(cell, inputs, &layer.cache, &d_last, workers)?;
        grads.cells[p] = g;
        d_last = d_inputs;
    }
    // d_last is now [doc][position][e], matching trace.tokens.
    let e = model.embed_dim();
    for (pos, &tok) in trace.tokens.iter().enumerate() {
        let row = grads.embed.row_mut(tok);
        for (g, &d) in row.iter_mut().zip(&d_last[pos * e..(pos + 1) * e]) {
            *g += d;
        }
    }
    Ok(grads)
}

/// The standard recurrence: `T` sequential GRU steps from `h₀ = 0` over the
/// rows of `embedded`, keeping every step for BPTT.
pub fn standard_forward(cell: &GruParams, embedded: &Matrix) -> Result<(Vec<f64>, Vec<GruStepCache>)> {
    if embedded.rows() == 0 {
        return Err(SrnnError::Argument("standard_forward on an empty sequence".into()));
    }
    let mut h = vec![0.0; cell.hidden_dim()];
    let mut trace = Vec::with_capacity(embedded.rows());
    for t in 0..embedded.rows() {
        let (next, cache) = gru_step(cell, embedded.row(t), &h)?;
        trace.push(cache);
        h = next;
    }
    Ok((h, trace))
}

/// Plain BPTT over a [`standard_forward`] trace: per-step input gradients
/// (`T × d`) and the cell gradient, summed over steps in ascending order.
pub fn standard_backward(
    cell: &GruParams,
    trace: &[GruStepCache],
    d_final: &[f64],
) -> Result<(Matrix, GruParams)> {
    let mut dh = d_final.to_vec();
    let mut dxs = Matrix::zeros(trace.len(), cell.input_dim());
    let mut per_step = Vec::with_capacity(trace.len());
    for (t, cache) in trace.iter().enumerate().rev() {
        let g = gru_step_backward(cell, cache, &dh)?;
        dxs.row_mut(t).copy_from_slice(&g.dx);
        per_step.push(g.dp);
        dh = g.dh_prev;
    }
    let mut total = GruParams::zeros(cell.input_dim(), cell.hidden_dim());
    for dp in per_step.iter().rev() {
        total.add_assign(dp);
    }
    Ok((dxs, total))
}
