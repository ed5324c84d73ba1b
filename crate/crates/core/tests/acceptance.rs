//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured numbers, then asserts.
//!
//! Run with `cargo test -p srnn-core --test acceptance -- --nocapture
//! --test-threads 1` to see the lines in order.

use std::time::Instant;

use srnn_core::cell::{gru_step, gru_step_backward, GruParams};
use srnn_core::engine::{
    run_layer, srnn_backward, srnn_forward, srnn_forward_batch, srnn_infer, standard_backward, standard_forward,
    ModelDims, SeqBatch, SrnnModel,
};
use srnn_core::equivalence::{construct_equivalent_srnn, default_suite, perturb, scalar_demo, verify_with_cells};
use srnn_core::slice::{build_plan, SliceConfig};
use srnn_core::speed::{predict_ratio, run_bench, BenchConfig};
use srnn_core::tensor::{softmax, Matrix, SeededRng};
use srnn_core::text::make_toy_corpus;
use srnn_core::training::{evaluate, loss_and_gradients, nll_loss, predict, train, ClassifierHead, TrainConfig};

fn report(id: &str, pass: bool, detail: String) {
    println!("criterion {id}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn criterion_1_linear_equivalence() {
    let start = Instant::now();
    let cases = default_suite(31).unwrap();
    let mut worst = 0.0f64;
    let mut worst_layer0 = 0.0f64;
    let mut weakest_perturbed = f64::INFINITY;
    for case in &cases {
        let cells = construct_equivalent_srnn(case).unwrap();
        let r = verify_with_cells(case, &cells, 1e-9).unwrap();
        worst = worst.max(r.max_rel_err());
        worst_layer0 = worst_layer0.max(r.layer0_err);
        let mut bent = cells.clone();
        perturb(&mut bent, 0, 0, 0, 1e-3).unwrap();
        let p = verify_with_cells(case, &bent, 1e-9).unwrap();
        weakest_perturbed = weakest_perturbed.min(p.err_sequential_srnn.min(p.err_closed_srnn));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = cases.len() == 50 && worst <= 1e-9 && worst_layer0 <= 1e-10 && weakest_perturbed > 1e-6 && secs < 10.0;
    report(
        "1 linear equivalence",
        pass,
        format!(
            "{} cases, max_rel_err={worst:.2e}, layer0_err={worst_layer0:.2e}, min perturbed err={weakest_perturbed:.2e}, {secs:.2}s",
            cases.len()
        ),
    );
}

#[test]
fn criterion_2_scalar_example() {
    let demo = scalar_demo().unwrap();
    let pass = demo.layer0 == [3.0, 3.0] && demo.srnn == 15.0 && demo.sequential == 15.0 && demo.closed_form == 15.0;
    report(
        "2 scalar example",
        pass,
        format!("layer0={:?} F={} h_T={} closed={}", demo.layer0, demo.srnn, demo.sequential, demo.closed_form),
    );
}

fn cell_fd_worst(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let (d, m) = (3, 4);
    let mut p = GruParams::init(d, m, &mut rng);
    for b in [&mut p.b_r, &mut p.b_z, &mut p.b_h] {
        b.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
    }
    let x: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let h: Vec<f64> = (0..m).map(|_| rng.uniform(-0.9, 0.9)).collect();
    let w: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let obj = |p: &GruParams, x: &[f64], h: &[f64]| -> f64 {
        gru_step(p, x, h).unwrap().0.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = gru_step(&p, &x, &h).unwrap();
    let g = gru_step_backward(&p, &cache, &w).unwrap();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..d {
        let (mut a, mut b) = (x.clone(), x.clone());
        a[i] += eps;
        b[i] -= eps;
        worst = worst.max(rel((obj(&p, &a, &h) - obj(&p, &b, &h)) / (2.0 * eps), g.dx[i]));
    }
    for i in 0..m {
        let (mut a, mut b) = (h.clone(), h.clone());
        a[i] += eps;
        b[i] -= eps;
        worst = worst.max(rel((obj(&p, &x, &a) - obj(&p, &x, &b)) / (2.0 * eps), g.dh_prev[i]));
    }
    let analytic: Vec<Vec<f64>> = g.dp.blocks().iter().map(|b| b.to_vec()).collect();
    for (bi, block) in analytic.iter().enumerate() {
        for (j, &an) in block.iter().enumerate() {
            let mut pp = p.clone();
            pp.blocks_mut()[bi][j] += eps;
            let mut pm = p.clone();
            pm.blocks_mut()[bi][j] -= eps;
            worst = worst.max(rel((obj(&pp, &x, &h) - obj(&pm, &x, &h)) / (2.0 * eps), an));
        }
    }
    worst
}

fn small_model(t: usize, n: usize, k: usize, dims: ModelDims, seed: u64) -> SrnnModel {
    let plan = build_plan(SliceConfig::new(t, n, k)).unwrap();
    let mut rng = SeededRng::new(seed);
    let mut model = SrnnModel::new(plan, dims, &mut rng).unwrap();
    model.embed = Matrix::uniform(dims.vocab_size, dims.embed_dim, -1.0, 1.0, &mut rng);
    model.head = ClassifierHead {
        w: Matrix::uniform(dims.classes, dims.hidden_dim, -1.0, 1.0, &mut rng),
        b: (0..dims.classes).map(|_| rng.uniform(-0.5, 0.5)).collect(),
    };
    model
}

fn random_docs(batch: usize, t: usize, vocab: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = SeededRng::new(seed);
    (0..batch).map(|_| (0..t).map(|_| rng.below(vocab)).collect()).collect()
}

#[test]
fn criterion_3_gradient_correctness() {
    let cell_worst = (0..20).map(|s| cell_fd_worst(500 + s)).fold(0.0, f64::max);

    let dims = ModelDims {
        vocab_size: 7,
        embed_dim: 3,
        hidden_dim: 4,
        classes: 3,
    };
    let mut model = small_model(8, 2, 2, dims, 17);
    let docs = random_docs(3, 8, 7, 18);
    let labels = [0usize, 2, 1];
    let (_, grads) = loss_and_gradients(&model, &docs, &labels, 1).unwrap();
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    let eps = 1e-6;
    let mut model_worst = 0.0f64;
    let mut checked = 0usize;
    for (bi, block) in analytic.iter().enumerate() {
        for (j, &an) in block.iter().enumerate() {
            let orig = model.param_blocks_mut()[bi][j];
            model.param_blocks_mut()[bi][j] = orig + eps;
            let lp = loss_and_gradients(&model, &docs, &labels, 1).unwrap().0;
            model.param_blocks_mut()[bi][j] = orig - eps;
            let lm = loss_and_gradients(&model, &docs, &labels, 1).unwrap().0;
            model.param_blocks_mut()[bi][j] = orig;
            model_worst = model_worst.max(rel((lp - lm) / (2.0 * eps), an));
            checked += 1;
        }
    }
    let pass = cell_worst < 1e-5 && model_worst < 1e-4 && checked == model.param_count();
    report(
        "3 gradient correctness",
        pass,
        format!("cell max_rel_err={cell_worst:.2e} over 20 draws; SRNN(2,2) max_rel_err={model_worst:.2e} over {checked} parameters"),
    );
}

fn recursive_split(seq: &[usize], n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut pieces = vec![seq.to_vec()];
    for _ in 0..k {
        pieces = pieces
            .into_iter()
            .flat_map(|p| p.chunks(p.len() / n).map(<[usize]>::to_vec).collect::<Vec<_>>())
            .collect();
    }
    pieces
}

#[test]
fn criterion_4_slice_geometry() {
    let mut mismatches = 0;
    let mut plans = 0;
    for n in 2..=5usize {
        for k in 0..=4usize {
            for l0 in 1..=4usize {
                let t = l0 * n.pow(k as u32);
                let plan = build_plan(SliceConfig::new(t, n, k)).unwrap();
                plans += 1;
                let seq: Vec<usize> = (0..t).collect();
                for p in 0..=k {
                    let pieces = recursive_split(&seq, n, k - p);
                    let layer = plan.layers[p];
                    let want_len = if p == 0 { pieces[0].len() } else { n };
                    if layer.count != pieces.len() || layer.len != want_len {
                        mismatches += 1;
                    }
                }
                for i in 0..plan.min_count() {
                    let oracle = &recursive_split(&seq, n, k)[i];
                    if seq[plan.min_range(i).unwrap()] != oracle[..] {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let fig = build_plan(SliceConfig::new(8, 2, 2)).unwrap();
    let pass = mismatches == 0 && fig.min_count() == 4 && fig.min_len == 2;
    report(
        "4 slice geometry",
        pass,
        format!(
            "{plans} plans vs oracle, {mismatches} mismatches; (8,2,2) gives {} subsequences of length {}",
            fig.min_count(),
            fig.min_len
        ),
    );
}

#[test]
fn criterion_5_degeneracy() {
    let dims = ModelDims {
        vocab_size: 9,
        embed_dim: 3,
        hidden_dim: 5,
        classes: 2,
    };
    let mut max_diff = 0.0f64;
    for seed in 0..10u64 {
        let model = small_model(12, 2, 0, dims, 40 + seed);
        let doc = &random_docs(1, 12, 9, 60 + seed)[0];
        let (f, trace) = srnn_forward(&model, doc).unwrap();
        let embedded = Matrix::from_vec(12, 3, model.embed_batch(&[doc]).unwrap()).unwrap();
        let (h, steps) = standard_forward(&model.cells[0], &embedded).unwrap();
        max_diff = f.iter().zip(&h).fold(max_diff, |m, (a, b)| m.max((a - b).abs()));

        let mut rng = SeededRng::new(seed);
        let df: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g = srnn_backward(&model, &trace, &Matrix::from_vec(1, 5, df.clone()).unwrap(), 1).unwrap();
        let (dx, dp) = standard_backward(&model.cells[0], &steps, &df).unwrap();
        for (a, b) in g.cells[0].blocks().iter().zip(dp.blocks()) {
            max_diff = a.iter().zip(b.iter()).fold(max_diff, |m, (x, y)| m.max((x - y).abs()));
        }
        let mut embed_grad = Matrix::zeros(9, 3);
        for (t, &tok) in doc.iter().enumerate() {
            for (o, &v) in embed_grad.row_mut(tok).iter_mut().zip(dx.row(t)) {
                *o += v;
            }
        }
        max_diff = g
            .embed
            .data()
            .iter()
            .zip(embed_grad.data())
            .fold(max_diff, |m, (x, y)| m.max((x - y).abs()));
    }
    report(
        "5 degeneracy",
        max_diff == 0.0,
        format!("k=0 vs standard path over 10 models: max |diff| = {max_diff:e}"),
    );
}

#[test]
fn criterion_6_determinism() {
    let dims = ModelDims {
        vocab_size: 13,
        embed_dim: 4,
        hidden_dim: 6,
        classes: 3,
    };
    let model = small_model(16, 2, 2, dims, 71);
    let docs = random_docs(7, 16, 13, 72);
    let labels: Vec<usize> = (0..7).map(|i| i % 3).collect();
    let (f1, _) = srnn_forward_batch(&model, &docs, 1).unwrap();
    let (l1, g1) = loss_and_gradients(&model, &docs, &labels, 1).unwrap();
    let mut identical = true;
    for workers in [2, 8] {
        let (f, _) = srnn_forward_batch(&model, &docs, workers).unwrap();
        let (l, g) = loss_and_gradients(&model, &docs, &labels, workers).unwrap();
        let same_bits = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        identical &= same_bits(f.data(), f1.data())
            && l.to_bits() == l1.to_bits()
            && g.blocks().iter().zip(g1.blocks()).all(|(a, b)| same_bits(a, b));
    }
    report(
        "6 determinism",
        identical,
        "forward, loss and gradients bitwise identical for workers 1, 2, 8".into(),
    );
}

#[test]
fn criterion_7_step_counts_and_ratio() {
    let mut ok = true;
    let mut rows = Vec::new();
    for (t, n, k) in [(512, 8, 2), (64, 4, 2), (8, 2, 2), (4096, 8, 3), (96, 2, 0)] {
        let plan = build_plan(SliceConfig::new(t, n, k)).unwrap();
        let dims = ModelDims {
            vocab_size: 5,
            embed_dim: 2,
            hidden_dim: 3,
            classes: 2,
        };
        let model = small_model(t, n, k, dims, 3);
        let docs = random_docs(2, t, 5, 4);
        let (_, steps_srnn) = srnn_infer(&model, &docs, 2).unwrap();
        let embedded = model.embed_batch(&docs).unwrap();
        let seq = run_layer(&model.cells[0], SeqBatch::new(&embedded, 2, t, 2).unwrap(), None, 1).unwrap();
        let steps_rnn = *seq.depth.iter().max().unwrap();
        ok &= steps_srnn == plan.min_len + n * k && steps_rnn == t && steps_srnn == plan.critical_steps();
        rows.push(format!("({t},{n},{k}): {steps_rnn} vs {steps_srnn}"));
    }
    let r = predict_ratio(8, 2, 512);
    ok &= r == 0.046875;
    report("7 step counts", ok, format!("{}; R(8,2,512)={r}", rows.join(", ")));
}

/// Wall-clock half of criterion 7. Needs a machine with at least eight cores.
#[test]
fn criterion_7_wall_clock_speedup() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let bench = |t: usize, k: usize| {
        run_bench(&BenchConfig {
            seq_len: t,
            slices: 8,
            depth: k,
            hidden: 50,
            embed: 50,
            batch: 32,
            workers: 8,
            trials: 3,
            warmup: 1,
            seed: 11,
        })
        .unwrap()
    };
    let short = bench(512, 2);
    let long = bench(4096, 3);
    let pass = long.speedup >= 3.0 && long.speedup > short.speedup;
    report(
        "7 wall clock",
        pass,
        format!(
            "{cores} core(s) available; speedup T=512 (8,2): {:.2}x, T=4096 (8,3): {:.2}x; need ≥ 3x at 4096 and growth with T",
            short.speedup, long.speedup
        ),
    );
}

#[test]
fn criterion_8_training_sanity() {
    let start = Instant::now();
    let (corpus, vocab) = make_toy_corpus(2024, 2000, 64, 2).unwrap();
    let cfg = TrainConfig {
        batch_size: 20,
        epochs: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = |k: usize| {
        let plan = build_plan(SliceConfig::new(64, 4, k)).unwrap();
        let dims = ModelDims {
            vocab_size: vocab.len(),
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
            classes: 2,
        };
        let model = SrnnModel::new(plan, dims, &mut SeededRng::new(cfg.seed)).unwrap();
        let rep = train(model, &corpus, &cfg).unwrap();
        evaluate(&rep.best, &corpus.test, cfg.workers).unwrap()
    };
    let sliced = run(2);
    let standard = run(0);
    let secs = start.elapsed().as_secs_f64();
    let gap = (sliced - standard).abs() * 100.0;
    let pass = sliced >= 0.95 && gap <= 3.0 && secs < 300.0;
    report(
        "8 training sanity",
        pass,
        format!(
            "test acc SRNN(4,2)={:.1}%, standard={:.1}%, gap={gap:.1} points, {secs:.0}s",
            sliced * 100.0,
            standard * 100.0
        ),
    );
}

#[test]
fn criterion_9_invariants() {
    let mut rng = SeededRng::new(99);

    let mut p = GruParams::init(3, 5, &mut rng);
    for b in p.blocks_mut() {
        b.iter_mut().for_each(|v| *v *= 10.0);
    }
    let mut h = vec![0.0; 5];
    let mut bounded = true;
    for _ in 0..500 {
        let x: Vec<f64> = (0..3).map(|_| rng.uniform(-10.0, 10.0)).collect();
        h = gru_step(&p, &x, &h).unwrap().0;
        bounded &= h.iter().all(|v| (-1.0..=1.0).contains(v));
    }

    let mut softmax_ok = true;
    for _ in 0..200 {
        let v: Vec<f64> = (0..6).map(|_| rng.uniform(-50.0, 50.0)).collect();
        let c = rng.uniform(-100.0, 100.0);
        let a = softmax(&v);
        let b = softmax(&v.iter().map(|x| x + c).collect::<Vec<_>>());
        softmax_ok &= (a.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        softmax_ok &= a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12);
    }

    let mut nll_ok = true;
    for c in 2..8 {
        let head = ClassifierHead::zeros(c, 4);
        let p = predict(&head, &[0.5, -0.5, 1.0, 2.0]).unwrap();
        nll_ok &= (nll_loss(&p, c - 1).unwrap().0 - (c as f64).ln()).abs() < 1e-12;
    }

    let dims = ModelDims {
        vocab_size: 10,
        embed_dim: 3,
        hidden_dim: 4,
        classes: 2,
    };
    let model = small_model(8, 2, 2, dims, 5);
    let mut buf = Vec::new();
    srnn_core::checkpoint::write_model(&model, &mut buf).unwrap();
    let back = srnn_core::checkpoint::read_model(&mut buf.as_slice()).unwrap();
    let mut again = Vec::new();
    srnn_core::checkpoint::write_model(&back, &mut again).unwrap();
    let ckpt_ok = buf == again && back == model;

    report(
        "9 invariants",
        bounded && softmax_ok && nll_ok && ckpt_ok,
        format!("gru bounded={bounded} softmax={softmax_ok} nll_uniform={nll_ok} checkpoint_round_trip={ckpt_ok}"),
    );
}
