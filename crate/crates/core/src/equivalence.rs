//! Numerical check that a sliced network of linear cells reproduces a plain
//! linear recurrence exactly.
//!
//! For `T = n^(k+1)` the sliced network gets `U_0 = U`, `U_p = I` for `p ≥ 1`
//! and `W_p = W^(n^p)` for every layer. Its final state is compared against
//! the sequential fold and against the expansion
//! `h_T = Σ_i W^(T−i) U x_i`.

use serde::{Deserialize, Serialize};

use crate::cell::{linear_step, LinearRnnParams};
use crate::engine::{hierarchical_forward, run_layer, SeqBatch};
use crate::error::{Result, SrnnError};
use crate::slice::{block_size, build_plan, SliceConfig, SlicePlan};
use crate::tensor::{matrix_power, relative_error, Matrix, SeededRng};

/// Slice shapes and dimensions swept by [`default_suite`].
pub const SUITE_SHAPES: [(usize, usize); 5] = [(2, 1), (2, 2), (3, 1), (4, 1), (2, 3)];
pub const SUITE_DIMS: [usize; 3] = [1, 3, 5];
pub const SUITE_CASES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceCase {
    pub n: usize,
    pub k: usize,
    pub u: Matrix,
    pub w: Matrix,
    /// `T × d`, one input per row.
    pub inputs: Matrix,
}

impl EquivalenceCase {
    pub fn new(n: usize, k: usize, u: Matrix, w: Matrix, inputs: Matrix) -> Result<Self> {
        if n < 2 || k < 1 {
            return Err(SrnnError::Argument(format!("need n ≥ 2 and k ≥ 1, got n={n} k={k}")));
        }
        let t = block_size(n, k + 1).ok_or_else(|| SrnnError::Argument(format!("{n}^{} overflows", k + 1)))?;
        if inputs.rows() != t {
            return Err(SrnnError::dim(
                "EquivalenceCase",
                format!("T = n^(k+1) = {t}"),
                format!("{} inputs", inputs.rows()),
            ));
        }
        if w.rows() != w.cols() {
            return Err(SrnnError::dim(
                "EquivalenceCase",
                "square W",
                format!("W {}x{}", w.rows(), w.cols()),
            ));
        }
        if u.rows() != w.rows() || u.cols() != inputs.cols() {
            return Err(SrnnError::dim(
                "EquivalenceCase",
                format!("U {}x{}", u.rows(), u.cols()),
                format!("W {}x{}, inputs of dim {}", w.rows(), w.cols(), inputs.cols()),
            ));
        }
        Ok(EquivalenceCase { n, k, u, w, inputs })
    }

    /// `U` and inputs uniform in `(−0.9, 0.9)`, `W` the same scaled by `1/m`
    /// so `W^(T−1)` stays well inside double range.
    pub fn random(n: usize, k: usize, d: usize, m: usize, rng: &mut SeededRng) -> Result<Self> {
        let t = block_size(n, k + 1).ok_or_else(|| SrnnError::Argument(format!("{n}^{} overflows", k + 1)))?;
        let u = Matrix::uniform(m, d, -0.9, 0.9, rng);
        let w = Matrix::uniform(m, m, -0.9, 0.9, rng).map(|v| v / m as f64);
        let inputs = Matrix::uniform(t, d, -0.9, 0.9, rng);
        Self::new(n, k, u, w, inputs)
    }

    /// `U = 1`, `W = 2`, `n = 2`, `k = 1`, four unit inputs.
    pub fn scalar_demo() -> Self {
        let one = Matrix::from_vec(1, 1, vec![1.0]).expect("1x1");
        let two = Matrix::from_vec(1, 1, vec![2.0]).expect("1x1");
        let inputs = Matrix::from_vec(4, 1, vec![1.0; 4]).expect("4x1");
        Self::new(2, 1, one, two, inputs).expect("valid scalar case")
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn plan(&self) -> Result<SlicePlan> {
        build_plan(SliceConfig::new(self.seq_len(), self.n, self.k))
    }

    fn sequential_cell(&self) -> Result<LinearRnnParams> {
        LinearRnnParams::new(self.u.clone(), self.w.clone())
    }
}

/// 50 cases cycling through [`SUITE_SHAPES`], hidden and input sizes from
/// [`SUITE_DIMS`].
pub fn default_suite(seed: u64) -> Result<Vec<EquivalenceCase>> {
    suite(seed, SUITE_CASES, None)
}

/// `count` random cases. Shapes cycle through [`SUITE_SHAPES`] unless one
/// `(n, k)` is given; hidden size cycles fastest through [`SUITE_DIMS`], then
/// input size.
pub fn suite(seed: u64, count: usize, shape: Option<(usize, usize)>) -> Result<Vec<EquivalenceCase>> {
    let mut rng = SeededRng::new(seed);
    let shapes: Vec<(usize, usize)> = shape.map_or(SUITE_SHAPES.to_vec(), |s| vec![s]);
    (0..count)
        .map(|i| {
            let (n, k) = shapes[i % shapes.len()];
            let m = SUITE_DIMS[(i / shapes.len()) % SUITE_DIMS.len()];
            let d = SUITE_DIMS[(i / (shapes.len() * SUITE_DIMS.len())) % SUITE_DIMS.len()];
            EquivalenceCase::random(n, k, d, m, &mut rng)
        })
        .collect()
}

/// Folds `linear_step` over all `T` inputs from `h_0 = 0`.
pub fn sequential_state(case: &EquivalenceCase) -> Result<Vec<f64>> {
    let cell = case.sequential_cell()?;
    let mut h = vec![0.0; case.hidden_dim()];
    for t in 0..case.seq_len() {
        h = linear_step(&cell, case.inputs.row(t), &h)?;
    }
    Ok(h)
}

/// `Σ_{i=1..T} W^(T−i) U x_i`, each power computed directly.
pub fn expand_closed_form(case: &EquivalenceCase) -> Result<Vec<f64>> {
    let t = case.seq_len();
    let mut h = vec![0.0; case.hidden_dim()];
    for i in 0..t {
        let ux = case.u.matvec(case.inputs.row(i))?;
        let term = matrix_power(&case.w, t - 1 - i)?.matvec(&ux)?;
        h.iter_mut().zip(term).for_each(|(a, b)| *a += b);
    }
    Ok(h)
}

/// One zero-bias linear cell per layer: `(U, W)`, then `(I, W^(n^p))`.
pub fn construct_equivalent_srnn(case: &EquivalenceCase) -> Result<Vec<LinearRnnParams>> {
    let m = case.hidden_dim();
    let mut cells = Vec::with_capacity(case.k + 1);
    let mut w_p = case.w.clone();
    for p in 0..=case.k {
        if p > 0 {
            w_p = matrix_power(&w_p, case.n)?;
        }
        let u_p = if p == 0 { case.u.clone() } else { Matrix::identity(m) };
        cells.push(LinearRnnParams::new(u_p, w_p.clone())?);
    }
    Ok(cells)
}

/// Adds `delta` to entry `(row, col)` of layer `layer`'s recurrent matrix.
pub fn perturb(cells: &mut [LinearRnnParams], layer: usize, row: usize, col: usize, delta: f64) -> Result<()> {
    let cell = cells
        .get_mut(layer)
        .ok_or_else(|| SrnnError::Index(format!("layer {layer} out of range")))?;
    if row >= cell.w.rows() || col >= cell.w.cols() {
        return Err(SrnnError::Index(format!(
            "entry ({row}, {col}) outside {}x{} W",
            cell.w.rows(),
            cell.w.cols()
        )));
    }
    let v = cell.w.get(row, col);
    cell.w.set(row, col, v + delta);
    Ok(())
}

/// Last states of the `n^k` layer-0 blocks under `cells[0]`.
pub fn layer0_states(case: &EquivalenceCase, cells: &[LinearRnnParams]) -> Result<Vec<Vec<f64>>> {
    let plan = case.plan()?;
    let inputs = SeqBatch::new(case.inputs.data(), plan.min_count(), plan.min_len, case.input_dim())?;
    let out = run_layer(&cells[0], inputs, None, 1)?;
    Ok(out.last.chunks(case.hidden_dim()).map(<[f64]>::to_vec).collect())
}

/// The `n`-term expansion of each layer-0 block,
/// `Σ_{i<n} W^(n−1−i) U x_{j·n+i}`.
pub fn layer0_expansions(case: &EquivalenceCase) -> Result<Vec<Vec<f64>>> {
    let plan = case.plan()?;
    let l0 = plan.min_len;
    (0..plan.min_count())
        .map(|j| {
            let mut h = vec![0.0; case.hidden_dim()];
            for i in 0..l0 {
                let ux = case.u.matvec(case.inputs.row(j * l0 + i))?;
                let term = matrix_power(&case.w, l0 - 1 - i)?.matvec(&ux)?;
                h.iter_mut().zip(term).for_each(|(a, b)| *a += b);
            }
            Ok(h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n: usize,
    pub k: usize,
    pub seq_len: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub sequential: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub srnn: Vec<f64>,
    pub err_sequential_closed: f64,
    pub err_sequential_srnn: f64,
    pub err_closed_srnn: f64,
    /// Worst layer-0 block against its `n`-term expansion.
    pub layer0_err: f64,
    pub tol: f64,
}

impl EquivalenceReport {
    pub fn max_rel_err(&self) -> f64 {
        self.err_sequential_closed
            .max(self.err_sequential_srnn)
            .max(self.err_closed_srnn)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tol
    }

    /// `n k T dims max_rel_err PASS|FAIL`, tab-separated; dims as `dxm`.
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}x{}\t{:.3e}\t{}",
            self.n,
            self.k,
            self.seq_len,
            self.input_dim,
            self.hidden_dim,
            self.max_rel_err(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn verify_equivalence(case: &EquivalenceCase, tol: f64) -> Result<EquivalenceReport> {
    let cells = construct_equivalent_srnn(case)?;
    verify_with_cells(case, &cells, tol)
}

/// Like [`verify_equivalence`] but with caller-supplied (possibly perturbed)
/// layer cells.
pub fn verify_with_cells(case: &EquivalenceCase, cells: &[LinearRnnParams], tol: f64) -> Result<EquivalenceReport> {
    let plan = case.plan()?;
    let sequential = sequential_state(case)?;
    let closed_form = expand_closed_form(case)?;
    let srnn = hierarchical_forward(cells, &plan, case.inputs.data(), 1, 1)?.last;
    let layer0_err = layer0_states(case, cells)?
        .iter()
        .zip(layer0_expansions(case)?)
        .map(|(a, b)| relative_error(a, &b))
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        n: case.n,
        k: case.k,
        seq_len: case.seq_len(),
        input_dim: case.input_dim(),
        hidden_dim: case.hidden_dim(),
        err_sequential_closed: relative_error(&sequential, &closed_form),
        err_sequential_srnn: relative_error(&sequential, &srnn),
        err_closed_srnn: relative_error(&closed_form, &srnn),
        sequential,
        closed_form,
        srnn,
        layer0_err,
        tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDemo {
    pub layer0: Vec<f64>,
    pub srnn: f64,
    pub sequential: f64,
    pub closed_form: f64,
}

/// The two-block scalar example: layer-0 states `(3, 3)` and `F = 3 + 4·3`.
pub fn scalar_demo() -> Result<ScalarDemo> {
    let case = EquivalenceCase::scalar_demo();
    let cells = construct_equivalent_srnn(&case)?;
    let report = verify_with_cells(&case, &cells, 0.0)?;
    Ok(ScalarDemo {
        layer0: layer0_states(&case, &cells)?.into_iter().flatten().collect(),
        srnn: report.srnn[0],
        sequential: report.sequential[0],
        closed_form: report.closed_form[0],
    })
}
