//! Recurrent cells: the GRU with its exact reverse-mode step, and the
//! bias-free linear cell `h_t = U x_t + W h_{t−1} + b`.
//!
//! GRU forward, per step:
//!
//! ```text
//! r  = σ(W_r x + U_r h_prev + b_r)
//! z  = σ(W_z x + U_z h_prev + b_z)
//! h̃  = tanh(W_h x + U_h (r ∘ h_prev) + b_h)
//! h  = z ∘ h_prev + (1 − z) ∘ h̃
//! ```
//!
//! The backward derivation is written out in `docs/gru_backward.md`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Result, SrnnError};
use crate::tensor::{dot, matvec_into, matvec_t_acc, sigmoid, Matrix, SeededRng};

/// One step of a recurrence over `f64` rows, used by the layer runners.
pub trait RecurrentCell: Sync {
    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    /// Length of the scratch buffer `step_into` needs.
    fn scratch_len(&self) -> usize;
    /// `h_out = cell(x, h_prev)`. Shapes are the caller's responsibility.
    fn step_into(&self, x: &[f64], h_prev: &[f64], h_out: &mut [f64], scratch: &mut [f64]);
}

/// The nine GRU parameter blocks. `W_*` are `m×d`, `U_*` are `m×m`, biases
/// have length `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
}

const GRU_MAGIC: &[u8; 8] = b"SRNNGRU1";

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let (d, m) = (input_dim, hidden_dim);
        GruParams {
            w_r: Matrix::zeros(m, d),
            u_r: Matrix::zeros(m, m),
            b_r: vec![0.0; m],
            w_z: Matrix::zeros(m, d),
            u_z: Matrix::zeros(m, m),
            b_z: vec![0.0; m],
            w_h: Matrix::zeros(m, d),
            u_h: Matrix::zeros(m, m),
            b_h: vec![0.0; m],
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let (d, m) = (input_dim, hidden_dim);
        let sw = 1.0 / (d.max(1) as f64).sqrt();
        let su = 1.0 / (m.max(1) as f64).sqrt();
        let mut p = GruParams::zeros(d, m);
        p.w_r = Matrix::uniform(m, d, -sw, sw, rng);
        p.u_r = Matrix::uniform(m, m, -su, su, rng);
        p.w_z = Matrix::uniform(m, d, -sw, sw, rng);
        p.u_z = Matrix::uniform(m, m, -su, su, rng);
        p.w_h = Matrix::uniform(m, d, -sw, sw, rng);
        p.u_h = Matrix::uniform(m, m, -su, su, rng);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.rows()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Blocks in serialization order `(W_r, U_r, b_r, W_z, U_z, b_z, W_h, U_h, b_h)`.
    pub fn blocks(&self) -> [&[f64]; 9] {
        [
            self.w_r.data(),
            self.u_r.data(),
            &self.b_r,
            self.w_z.data(),
            self.u_z.data(),
            &self.b_z,
            self.w_h.data(),
            self.u_h.data(),
            &self.b_h,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_r.data_mut(),
            self.u_r.data_mut(),
            &mut self.b_r,
            self.w_z.data_mut(),
            self.u_z.data_mut(),
            &mut self.b_z,
            self.w_h.data_mut(),
            self.u_h.data_mut(),
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.input_dim(), self.hidden_dim());
        let checks = [
            ("W_r", self.w_r.shape(), (m, d)),
            ("U_r", self.u_r.shape(), (m, m)),
            ("b_r", (self.b_r.len(), 1), (m, 1)),
            ("W_z", self.w_z.shape(), (m, d)),
            ("U_z", self.u_z.shape(), (m, m)),
            ("b_z", (self.b_z.len(), 1), (m, 1)),
            ("W_h", self.w_h.shape(), (m, d)),
            ("U_h", self.u_h.shape(), (m, m)),
            ("b_h", (self.b_h.len(), 1), (m, 1)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(SrnnError::dim(
                    "GruParams",
                    format!("{name} is {}x{}", got.0, got.1),
                    format!("expected {}x{}", want.0, want.1),
                ));
            }
        }
        if self.blocks().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(SrnnError::Argument("GRU parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &GruParams) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(GRU_MAGIC)?;
        codec::write_u64(w, self.input_dim() as u64)?;
        codec::write_u64(w, self.hidden_dim() as u64)?;
        for block in self.blocks() {
            codec::write_f64s(w, block)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        codec::expect_magic(r, GRU_MAGIC)?;
        let d = codec::read_usize(r, "input_dim")?;
        let m = codec::read_usize(r, "hidden_dim")?;
        let mut p = GruParams::zeros(d, m);
        for block in p.blocks_mut() {
            let vals = codec::read_f64s(r, block.len())?;
            block.copy_from_slice(&vals);
        }
        Ok(p)
    }

    fn check_step(&self, x: &[f64], h_prev: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(SrnnError::dim(
                "gru_step",
                format!("input_dim {}", self.input_dim()),
                format!("x of length {}", x.len()),
            ));
        }
        if h_prev.len() != self.hidden_dim() {
            return Err(SrnnError::dim(
                "gru_step",
                format!("hidden_dim {}", self.hidden_dim()),
                format!("h_prev of length {}", h_prev.len()),
            ));
        }
        Ok(())
    }
}

/// Test hook: pin a gate to a constant instead of computing it. A clamped
/// gate is a constant, so no gradient flows through its pre-activation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GateClamp {
    pub reset: Option<f64>,
    pub update: Option<f64>,
}

impl GateClamp {
    pub const NONE: GateClamp = GateClamp {
        reset: None,
        update: None,
    };
}

/// Everything one GRU step needs to be differentiated.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub clamp: GateClamp,
}

/// Gradients of one step.
#[derive(Clone, Debug)]
pub struct GruStepGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dp: GruParams,
}

pub fn gru_step(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
    gru_step_clamped(p, x, h_prev, GateClamp::NONE)
}

pub fn gru_step_clamped(
    p: &GruParams,
    x: &[f64],
    h_prev: &[f64],
    clamp: GateClamp,
) -> Result<(Vec<f64>, GruStepCache)> {
    p.check_step(x, h_prev)?;
    let m = p.hidden_dim();
    let mut r = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut h_tilde = vec![0.0; m];
    let mut h = vec![0.0; m];
    gru_forward_row(p, x, h_prev, &mut r, &mut z, &mut h_tilde, &mut h, clamp);
    let cache = GruStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        r,
        z,
        h_tilde,
        clamp,
    };
    Ok((h, cache))
}

pub fn gru_step_backward(p: &GruParams, cache: &GruStepCache, dh: &[f64]) -> Result<GruStepGrads> {
    p.check_step(&cache.x, &cache.h_prev)?;
    let m = p.hidden_dim();
    if dh.len() != m || cache.r.len() != m || cache.z.len() != m || cache.h_tilde.len() != m {
        return Err(SrnnError::dim(
            "gru_step_backward",
            format!("hidden_dim {m}"),
            format!("dh of length {} / cache gates of length {}", dh.len(), cache.r.len()),
        ));
    }
    let mut da = vec![0.0; 3 * m];
    let mut dx = vec![0.0; p.input_dim()];
    let mut dh_prev = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    gru_backward_row(
        p,
        StepView {
            h_prev: &cache.h_prev,
            r: &cache.r,
            z: &cache.z,
            h_tilde: &cache.h_tilde,
        },
        dh,
        cache.clamp,
        &mut da,
        &mut dx,
        &mut dh_prev,
        &mut tmp,
    );
    let mut dp = GruParams::zeros(p.input_dim(), m);
    accumulate_step_grads(&mut dp, &cache.x, &cache.h_prev, &cache.r, &da);
    Ok(GruStepGrads { dx, dh_prev, dp })
}

/// Forward kernel for one row; gates are written into `r`, `z`, `ht`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gru_forward_row(
    p: &GruParams,
    x: &[f64],
    h_prev: &[f64],
    r: &mut [f64],
    z: &mut [f64],
    ht: &mut [f64],
    h_out: &mut [f64],
    clamp: GateClamp,
) {
    let m = p.hidden_dim();
    for i in 0..m {
        r[i] = match clamp.reset {
            Some(c) => c,
            None => sigmoid(dot(p.w_r.row(i), x) + dot(p.u_r.row(i), h_prev) + p.b_r[i]),
        };
        z[i] = match clamp.update {
            Some(c) => c,
            None => sigmoid(dot(p.w_z.row(i), x) + dot(p.u_z.row(i), h_prev) + p.b_z[i]),
        };
    }
    // h_out doubles as the r ∘ h_prev buffer until the final blend.
    for i in 0..m {
        h_out[i] = r[i] * h_prev[i];
    }
    for i in 0..m {
        ht[i] = (dot(p.w_h.row(i), x) + dot(p.u_h.row(i), h_out) + p.b_h[i]).tanh();
    }
    for i in 0..m {
        h_out[i] = z[i] * h_prev[i] + (1.0 - z[i]) * ht[i];
    }
}

#[derive(Clone, Copy)]
pub(crate) struct StepView<'a> {
    pub h_prev: &'a [f64],
    pub r: &'a [f64],
    pub z: &'a [f64],
    pub h_tilde: &'a [f64],
}

/// Reverse kernel for one row. Writes the gate pre-activation gradients into
/// `da = [da_r | da_z | da_h]` and overwrites `dx`, `dh_prev`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gru_backward_row(
    p: &GruParams,
    s: StepView<'_>,
    dh: &[f64],
    clamp: GateClamp,
    da: &mut [f64],
    dx: &mut [f64],
    dh_prev: &mut [f64],
    drh: &mut [f64],
) {
    let m = p.hidden_dim();
    let (da_r, rest) = da.split_at_mut(m);
    let (da_z, da_h) = rest.split_at_mut(m);

    for i in 0..m {
        let dht = dh[i] * (1.0 - s.z[i]);
        da_h[i] = dht * (1.0 - s.h_tilde[i] * s.h_tilde[i]);
        da_z[i] = if clamp.update.is_some() {
            0.0
        } else {
            dh[i] * (s.h_prev[i] - s.h_tilde[i]) * s.z[i] * (1.0 - s.z[i])
        };
    }
    drh.iter_mut().for_each(|v| *v = 0.0);
    matvec_t_acc(&p.u_h, da_h, drh);
    for i in 0..m {
        da_r[i] = if clamp.reset.is_some() {
            0.0
        } else {
            drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i])
        };
    }

    for i in 0..m {
        dh_prev[i] = dh[i] * s.z[i] + drh[i] * s.r[i];
    }
    matvec_t_acc(&p.u_r, da_r, dh_prev);
    matvec_t_acc(&p.u_z, da_z, dh_prev);

    dx.iter_mut().for_each(|v| *v = 0.0);
    matvec_t_acc(&p.w_r, da_r, dx);
    matvec_t_acc(&p.w_z, da_z, dx);
    matvec_t_acc(&p.w_h, da_h, dx);
}

/// `grads += outer products of one step`, given that step's `da`.
pub(crate) fn accumulate_step_grads(
    grads: &mut GruParams,
    x: &[f64],
    h_prev: &[f64],
    r: &[f64],
    da: &[f64],
) {
    let m = grads.hidden_dim();
    let (da_r, rest) = da.split_at(m);
    let (da_z, da_h) = rest.split_at(m);
    for i in 0..m {
        outer_row_acc(grads.w_r.row_mut(i), da_r[i], x);
        outer_row_acc(grads.u_r.row_mut(i), da_r[i], h_prev);
        grads.b_r[i] += da_r[i];
        outer_row_acc(grads.w_z.row_mut(i), da_z[i], x);
        outer_row_acc(grads.u_z.row_mut(i), da_z[i], h_prev);
        grads.b_z[i] += da_z[i];
        outer_row_acc(grads.w_h.row_mut(i), da_h[i], x);
        let u_row = grads.u_h.row_mut(i);
        for j in 0..m {
            u_row[j] += da_h[i] * (r[j] * h_prev[j]);
        }
        grads.b_h[i] += da_h[i];
    }
}

#[inline]
fn outer_row_acc(row: &mut [f64], a: f64, v: &[f64]) {
    for (o, &x) in row.iter_mut().zip(v) {
        *o += a * x;
    }
}

impl RecurrentCell for GruParams {
    fn input_dim(&self) -> usize {
        GruParams::input_dim(self)
    }

    fn hidden_dim(&self) -> usize {
        GruParams::hidden_dim(self)
    }

    fn scratch_len(&self) -> usize {
        3 * GruParams::hidden_dim(self)
    }

    fn step_into(&self, x: &[f64], h_prev: &[f64], h_out: &mut [f64], scratch: &mut [f64]) {
        let m = GruParams::hidden_dim(self);
        let (r, rest) = scratch.split_at_mut(m);
        let (z, ht) = rest.split_at_mut(m);
        gru_forward_row(self, x, h_prev, r, z, &mut ht[..m], h_out, GateClamp::NONE);
    }
}

/// Linear recurrence `h_t = U x_t + W h_{t−1} + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRnnParams {
    pub u: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LinearRnnParams {
    /// Zero-bias cell, the form the equivalence construction uses.
    pub fn new(u: Matrix, w: Matrix) -> Result<Self> {
        let b = vec![0.0; u.rows()];
        Self::with_bias(u, w, b)
    }

    pub fn with_bias(u: Matrix, w: Matrix, b: Vec<f64>) -> Result<Self> {
        let m = u.rows();
        if w.shape() != (m, m) || b.len() != m {
            return Err(SrnnError::dim(
                "LinearRnnParams",
                format!("U {}x{}", u.rows(), u.cols()),
                format!("W {}x{}, b of length {}", w.rows(), w.cols(), b.len()),
            ));
        }
        Ok(LinearRnnParams { u, w, b })
    }
}

pub fn linear_step(p: &LinearRnnParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.u.cols() || h_prev.len() != p.w.cols() {
        return Err(SrnnError::dim(
            "linear_step",
            format!("U {}x{}, W {}x{}", p.u.rows(), p.u.cols(), p.w.rows(), p.w.cols()),
            format!("x of length {}, h_prev of length {}", x.len(), h_prev.len()),
        ));
    }
    let mut out = vec![0.0; p.u.rows()];
    let mut scratch = vec![0.0; p.u.rows()];
    p.step_into(x, h_prev, &mut out, &mut scratch);
    Ok(out)
}

impl RecurrentCell for LinearRnnParams {
    fn input_dim(&self) -> usize {
        self.u.cols()
    }

    fn hidden_dim(&self) -> usize {
        self.u.rows()
    }

    fn scratch_len(&self) -> usize {
        self.u.rows()
    }

    fn step_into(&self, x: &[f64], h_prev: &[f64], h_out: &mut [f64], scratch: &mut [f64]) {
        matvec_into(&self.u, x, h_out);
        matvec_into(&self.w, h_prev, scratch);
        for ((o, &wh), &b) in h_out.iter_mut().zip(scratch.iter()).zip(&self.b) {
            *o = *o + wh + b;
        }
    }
}
