//! Softmax head, negative log-likelihood, Adam, and the epoch loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{srnn_backward, srnn_forward_batch, srnn_infer, ModelGradients, SrnnModel, PAD_ID};
use crate::error::{Result, SrnnError};
use crate::tensor::{dot, softmax, Matrix, SeededRng};
use crate::text::{Corpus, Example};

/// `p = softmax(W_F F + b_F)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(classes: usize, hidden_dim: usize) -> Self {
        ClassifierHead {
            w: Matrix::zeros(classes, hidden_dim),
            b: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.data().len() + self.b.len()
    }

    pub fn validate(&self, hidden_dim: usize) -> Result<()> {
        if self.w.cols() != hidden_dim || self.b.len() != self.w.rows() {
            return Err(SrnnError::dim(
                "ClassifierHead",
                format!("W_F {}x{}, b_F of {}", self.w.rows(), self.w.cols(), self.b.len()),
                format!("hidden_dim {hidden_dim}"),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.w.cols() {
            return Err(SrnnError::dim(
                "ClassifierHead::logits",
                format!("W_F {}x{}", self.w.rows(), self.w.cols()),
                format!("F of length {}", f.len()),
            ));
        }
        Ok((0..self.w.rows())
            .map(|c| dot(self.w.row(c), f) + self.b[c])
            .collect())
    }
}

pub fn predict(head: &ClassifierHead, f: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&head.logits(f)?))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `−log p[label]` and the gradient with respect to the logits, `p − onehot`.
pub fn nll_loss(p: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= p.len() {
        return Err(SrnnError::Argument(format!(
            "label {label} out of range for {} classes",
            p.len()
        )));
    }
    let loss = -p[label].ln();
    let mut d = p.to_vec();
    d[label] -= 1.0;
    Ok((loss, d))
}

/// Same as `nll_loss(softmax(logits), label)` but via log-sum-exp, so the
/// loss stays finite when `p[label]` underflows.
fn nll_from_logits(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let mut d = softmax(logits);
    d[label] -= 1.0;
    (lse - logits[label], d)
}

/// Mean NLL over a batch and its gradient with respect to every parameter.
pub fn loss_and_gradients<D: AsRef<[usize]>>(
    model: &SrnnModel,
    docs: &[D],
    labels: &[usize],
    workers: usize,
) -> Result<(f64, ModelGradients)> {
    if docs.len() != labels.len() {
        return Err(SrnnError::dim(
            "loss_and_gradients",
            format!("{} documents", docs.len()),
            format!("{} labels", labels.len()),
        ));
    }
    let classes = model.classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(SrnnError::Argument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let (f, trace) = srnn_forward_batch(model, docs, workers)?;
    let batch = docs.len();
    let scale = 1.0 / batch as f64;
    let m = model.hidden_dim();
    let mut head = ClassifierHead::zeros(classes, m);
    let mut d_final = Matrix::zeros(batch, m);
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let fb = f.row(b);
        let (loss, mut dlogits) = nll_from_logits(&model.head.logits(fb)?, label);
        total += loss;
        dlogits.iter_mut().for_each(|v| *v *= scale);
        for (c, &dl) in dlogits.iter().enumerate() {
            for (g, &x) in head.w.row_mut(c).iter_mut().zip(fb) {
                *g += dl * x;
            }
            head.b[c] += dl;
            for (o, &w) in d_final.row_mut(b).iter_mut().zip(model.head.w.row(c)) {
                *o += w * dl;
            }
        }
    }
    let mut grads = srnn_backward(model, &trace, &d_final, workers)?;
    grads.head = head;
    Ok((total * scale, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_lens: &[usize]) -> Self {
        AdamState {
            config,
            t: 0,
            m: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(config: AdamConfig, model: &mut SrnnModel) -> Self {
        let lens: Vec<usize> = model.param_blocks_mut().iter().map(|b| b.len()).collect();
        AdamState::new(config, &lens)
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SrnnError::dim(
                "adam_update",
                format!("{} moment blocks", self.m.len()),
                format!("{} parameter / {} gradient blocks", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(SrnnError::dim(
                    "adam_update",
                    format!("block {i} of {}", self.m[i].len()),
                    format!("parameter {} / gradient {}", p.len(), g.len()),
                ));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_update(state: &mut AdamState, model: &mut SrnnModel, grads: &ModelGradients) -> Result<()> {
    state.update(model.param_blocks_mut(), grads.blocks())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub workers: usize,
    pub adam: AdamConfig,
    /// Rescale the global gradient norm to at most this value. Off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            epochs: 10,
            seed: 42,
            hidden_dim: 50,
            embed_dim: 200,
            workers: 1,
            adam: AdamConfig::default(),
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tval_acc\tseconds";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.3}",
            self.epoch, self.train_loss, self.val_acc, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best: SrnnModel,
}

fn clip(grads: &mut ModelGradients, max_norm: f64) {
    let norm = grads
        .blocks()
        .iter()
        .flat_map(|b| b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for b in grads.blocks_mut() {
            b.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// One optimizer step on one batch; returns the batch's mean loss.
pub fn train_step(
    model: &mut SrnnModel,
    adam: &mut AdamState,
    batch: &[&Example],
    cfg: &TrainConfig,
) -> Result<f64> {
    let docs: Vec<&[usize]> = batch.iter().map(|e| e.ids.as_slice()).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let (loss, mut grads) = loss_and_gradients(model, &docs, &labels, cfg.workers)?;
    // The padding row never learns.
    grads.embed.row_mut(PAD_ID).iter_mut().for_each(|g| *g = 0.0);
    if let Some(max_norm) = cfg.clip_norm {
        clip(&mut grads, max_norm);
    }
    adam_update(adam, model, &grads)?;
    Ok(loss)
}

/// Trains for `cfg.epochs` epochs and keeps the model with the best
/// validation accuracy (earliest epoch wins ties).
pub fn train(mut model: SrnnModel, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainReport> {
    if corpus.train.is_empty() || corpus.val.is_empty() {
        return Err(SrnnError::Argument(format!(
            "training needs non-empty train and validation splits (got {} / {})",
            corpus.train.len(),
            corpus.val.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(SrnnError::Argument("batch_size must be ≥ 1".into()));
    }
    let mut adam = AdamState::for_model(cfg.adam, &mut model);
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, SrnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &corpus.train[i]).collect();
            loss_sum += train_step(&mut model, &mut adam, &batch, cfg)? * batch.len() as f64;
        }
        let val_acc = evaluate(&model, &corpus.val, cfg.workers)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / corpus.train.len() as f64,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.clone()));
        }
        log.push(entry);
    }
    let (best_epoch, _, best) = best.unwrap_or((0, 0.0, model));
    Ok(TrainReport {
        log,
        best_epoch,
        best,
    })
}

/// Predicted labels for a set of examples.
pub fn predict_labels(model: &SrnnModel, examples: &[Example], workers: usize) -> Result<Vec<usize>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let docs: Vec<&[usize]> = chunk.iter().map(|e| e.ids.as_slice()).collect();
        let (f, _) = srnn_infer(model, &docs, workers)?;
        for b in 0..chunk.len() {
            out.push(argmax(&model.head.logits(f.row(b))?));
        }
    }
    Ok(out)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn evaluate(model: &SrnnModel, examples: &[Example], workers: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(SrnnError::Argument("evaluate on an empty split".into()));
    }
    let predicted = predict_labels(model, examples, workers)?;
    let correct = predicted
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ModelDims;
    use crate::slice::{build_plan, SliceConfig};

    #[test]
    fn zero_head_is_uniform() {
        let head = ClassifierHead::zeros(4, 3);
        let p = predict(&head, &[0.3, -1.0, 2.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(predict(&head, &[0.0; 2]).is_err());
    }

    #[test]
    fn bias_gap_two_classes() {
        let mut head = ClassifierHead::zeros(2, 3);
        head.b = vec![10.0, 0.0];
        let p = predict(&head, &[1.0, 2.0, 3.0]).unwrap();
        let expect = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p[0] - expect).abs() < 1e-15);
        assert!((p[0] - 0.99995).abs() < 1e-5);
        assert!((p[1] - 0.00005).abs() < 1e-5);
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
        let head = ClassifierHead::zeros(3, 2);
        assert_eq!(argmax(&predict(&head, &[1.0, 1.0]).unwrap()), 0);
    }

    #[test]
    fn nll_cases() {
        let (l, d) = nll_loss(&[0.2; 5], 3).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        assert!(d.iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(nll_loss(&[0.0, 1.0], 1).unwrap().0, 0.0);
        assert!(nll_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn dlogits_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let label = rng.below(4);
            let (_, d) = nll_loss(&softmax(&logits), label).unwrap();
            let f = |z: &[f64]| -softmax(z)[label].ln();
            let eps = 1e-5;
            for i in 0..4 {
                let mut zp = logits.clone();
                zp[i] += eps;
                let mut zm = logits.clone();
                zm[i] -= eps;
                let fd = (f(&zp) - f(&zm)) / (2.0 * eps);
                assert!((fd - d[i]).abs() < 1e-7, "{fd} vs {}", d[i]);
            }
            let (l2, d2) = nll_from_logits(&logits, label);
            assert!((l2 - f(&logits)).abs() < 1e-12);
            for (a, b) in d.iter().zip(&d2) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        state.update(vec![&mut p], vec![&[0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(cfg, &[3]);
        let mut p = vec![0.0; 3];
        let g = [0.3, -2.0, 1e-3];
        state.update(vec![&mut p], vec![&g]).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        for (pi, gi) in p.iter().zip(g) {
            let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - expect).abs() < 1e-18);
            assert!((pi.abs() - cfg.lr).abs() < 1e-7);
        }
        assert!(state.update(vec![&mut p], vec![&[0.0; 2]]).is_err());
    }

    #[test]
    fn zero_head_loss_is_log_classes() {
        let plan = build_plan(SliceConfig::new(8, 2, 1)).unwrap();
        let dims = ModelDims { vocab_size: 9, embed_dim: 3, hidden_dim: 4, classes: 3 };
        let model = SrnnModel::new(plan, dims, &mut SeededRng::new(1)).unwrap();
        let docs = vec![vec![1usize, 2, 3, 4, 5, 6, 7, 8], vec![0; 8]];
        let (loss, _) = loss_and_gradients(&model, &docs, &[0, 2], 1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(loss_and_gradients(&model, &docs, &[0, 3], 1).is_err());
    }

    fn toy_setup(seed: u64, k: usize) -> (SrnnModel, Corpus) {
        let (corpus, vocab) = crate::text::make_toy_corpus(seed, 60, 16, 2).unwrap();
        let plan = build_plan(SliceConfig::new(16, 2, k)).unwrap();
        let dims = ModelDims { vocab_size: vocab.len(), embed_dim: 6, hidden_dim: 5, classes: 2 };
        (SrnnModel::new(plan, dims, &mut SeededRng::new(seed)).unwrap(), corpus)
    }

    #[test]
    fn one_step_lowers_batch_loss() {
        let (mut model, corpus) = toy_setup(4, 2);
        let cfg = TrainConfig { batch_size: 16, ..TrainConfig::default() };
        let batch: Vec<&Example> = corpus.train.iter().take(16).collect();
        let docs: Vec<&[usize]> = batch.iter().map(|e| e.ids.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let mut adam = AdamState::for_model(cfg.adam, &mut model);
        let before = train_step(&mut model, &mut adam, &batch, &cfg).unwrap();
        let (after, _) = loss_and_gradients(&model, &docs, &labels, 1).unwrap();
        assert!(before.is_finite() && after.is_finite());
        assert!(after < before, "{after} !< {before}");
        assert!(model.embed.row(PAD_ID).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = TrainConfig { batch_size: 8, epochs: 2, ..TrainConfig::default() };
        let run = || {
            let (model, corpus) = toy_setup(9, 1);
            train(model, &corpus, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log.len(), 2);
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!((x.epoch, x.train_loss, x.val_acc), (y.epoch, y.train_loss, y.val_acc));
        }
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.best, b.best);
        let line = a.log[0].to_tsv();
        assert_eq!(line.split('\t').count(), EpochLog::HEADER.split('\t').count());
    }

    #[test]
    fn training_rejects_empty_splits() {
        let (model, mut corpus) = toy_setup(2, 1);
        corpus.val.clear();
        assert!(train(model.clone(), &corpus, &TrainConfig::default()).is_err());
        let (model, corpus) = toy_setup(2, 1);
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(model, &corpus, &cfg).is_err());
    }
}
