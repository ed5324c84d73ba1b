//! Binary model checkpoints.
//!
//! Layout, all little-endian: magic `SRNNCKP1`; header `V e m n k T C` as
//! u64; the `V × e` embedding table; one GRU block per layer in layer order;
//! the `C × m` head matrix and its bias. Floats are stored as raw bits, so a
//! round trip is exact.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cell::GruParams;
use crate::codec;
use crate::engine::SrnnModel;
use crate::error::{Result, SrnnError};
use crate::slice::{build_plan, SliceConfig};
use crate::tensor::Matrix;
use crate::training::ClassifierHead;

const MAGIC: &[u8; 8] = b"SRNNCKP1";

/// Dimensions stored at the head of a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub slices: usize,
    pub depth: usize,
    pub seq_len: usize,
    pub classes: usize,
}

impl CheckpointHeader {
    pub fn of(model: &SrnnModel) -> Self {
        CheckpointHeader {
            vocab_size: model.vocab_size(),
            embed_dim: model.embed_dim(),
            hidden_dim: model.hidden_dim(),
            slices: model.plan.slices,
            depth: model.plan.depth,
            seq_len: model.plan.seq_len,
            classes: model.classes(),
        }
    }

    fn fields(&self) -> [usize; 7] {
        [
            self.vocab_size,
            self.embed_dim,
            self.hidden_dim,
            self.slices,
            self.depth,
            self.seq_len,
            self.classes,
        ]
    }
}

pub fn write_model(model: &SrnnModel, w: &mut impl Write) -> Result<()> {
    model.validate()?;
    w.write_all(MAGIC)?;
    for v in CheckpointHeader::of(model).fields() {
        codec::write_u64(w, v as u64)?;
    }
    codec::write_f64s(w, model.embed.data())?;
    for cell in &model.cells {
        cell.write_to(w)?;
    }
    codec::write_f64s(w, model.head.w.data())?;
    codec::write_f64s(w, &model.head.b)?;
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<SrnnModel> {
    codec::expect_magic(r, MAGIC)?;
    let names = ["V", "e", "m", "n", "k", "T", "C"];
    let mut f = [0usize; 7];
    for (slot, name) in f.iter_mut().zip(names) {
        *slot = codec::read_usize(r, name)?;
    }
    let [v, e, m, n, k, t, c] = f;
    let plan = build_plan(SliceConfig::new(t, n, k))
        .map_err(|err| SrnnError::Checkpoint(format!("stored slice geometry is invalid: {err}")))?;
    let embed = Matrix::from_vec(v, e, codec::read_f64s(r, v * e)?)?;
    let mut cells = Vec::with_capacity(k + 1);
    for p in 0..=k {
        let cell = GruParams::read_from(r)?;
        let want_in = if p == 0 { e } else { m };
        if cell.input_dim() != want_in || cell.hidden_dim() != m {
            return Err(SrnnError::Checkpoint(format!(
                "layer {p} cell is {}→{}, header says {want_in}→{m}",
                cell.input_dim(),
                cell.hidden_dim()
            )));
        }
        cells.push(cell);
    }
    let w = Matrix::from_vec(c, m, codec::read_f64s(r, c * m)?)?;
    let b = codec::read_f64s(r, c)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(SrnnError::Checkpoint("trailing bytes after head".into()));
    }
    let model = SrnnModel {
        plan,
        embed,
        cells,
        head: ClassifierHead { w, b },
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &SrnnModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(SrnnError::file(path))?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SrnnModel> {
    let mut r = BufReader::new(fs::File::open(path).map_err(SrnnError::file(path))?);
    read_model(&mut r)
}
