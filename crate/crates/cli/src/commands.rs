use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use srnn_core::checkpoint::{load_model, save_model};
use srnn_core::engine::random_embeddings;
use srnn_core::equivalence::{
    construct_equivalent_srnn, perturb, scalar_demo, suite, verify_with_cells,
};
use srnn_core::slice::{build_plan, SliceConfig};
use srnn_core::speed::{emit_jsonl, emit_table, predict_ratio, run_bench, theoretical_speedup, BenchConfig};
use srnn_core::text::{
    build_corpus, encode_documents, load_word_vectors, read_tsv, split_documents, toy_documents, write_tsv,
    Vocabulary,
};
use srnn_core::training::{evaluate, train, EpochLog, TrainConfig};
use srnn_core::{SeededRng, SrnnModel};

use crate::manifest::{now_ms, RunManifest};
use crate::{
    BenchArgs, Cli, CliError, Command, EvalArgs, GenToyArgs, GeometryArgs, Split, TrainArgs, VerifyArgs,
};

type CmdResult = Result<Vec<PathBuf>, CliError>;

/// Runs the command and writes its manifest, whatever the outcome.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let started = now_ms();
    let (name, out, seed, result) = match &cli.command {
        Command::Train(a) => ("train", &a.out.out, Some(a.seed), cmd_train(a)),
        Command::Eval(a) => ("eval", &a.out.out, Some(a.seed), cmd_eval(a)),
        Command::Bench(a) => ("bench", &a.out.out, Some(a.seed), cmd_bench(a)),
        Command::Verify(a) => ("verify", &a.out.out, Some(a.seed), cmd_verify(a)),
        Command::SlicePlan(a) => ("slice-plan", &a.out.out, None, cmd_slice_plan(a)),
        Command::PredictSpeed(a) => ("predict-speed", &a.out.out, None, cmd_predict_speed(a)),
        Command::GenToy(a) => ("gen-toy", &a.out.out, Some(a.seed), cmd_gen_toy(a)),
    };
    let (exit_code, outputs) = match &result {
        Ok(paths) => (0, paths.iter().map(|p| p.display().to_string()).collect()),
        Err(e) => (e.exit_code(), Vec::new()),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv: std::env::args().collect(),
        flags: serde_json::to_value(&cli.command).unwrap_or(serde_json::Value::Null),
        seed,
        version: env!("CARGO_PKG_VERSION"),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        exit_code,
        outputs,
    };
    if let Err(e) = manifest.write(out) {
        eprintln!("warning: could not write manifest in {}: {e}", out.display());
    }
    result.map(|_| ())
}

fn check_workers(workers: usize) -> Result<(), CliError> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be ≥ 1".into()));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let plan = build_plan(SliceConfig::new(a.seq_len, a.n, a.k))?;
    check_workers(a.workers)?;
    if a.batch == 0 || a.hidden == 0 || a.embed == 0 {
        return Err(CliError::Usage("--batch, --hidden and --embed must be ≥ 1".into()));
    }
    let docs = read_tsv(&a.data)?;
    let (corpus, vocab) = build_corpus(&docs, a.seq_len, a.vocab_size, a.seed)?;
    let mut rng = SeededRng::new(a.seed);
    let embed = match &a.vectors {
        Some(path) => load_word_vectors(path, &vocab, a.embed, &mut rng)?,
        None => random_embeddings(vocab.len(), a.embed, &mut rng),
    };
    let model = SrnnModel::with_embeddings(plan, embed, a.hidden, corpus.classes, &mut rng)?;
    let cfg = TrainConfig {
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        hidden_dim: a.hidden,
        embed_dim: a.embed,
        workers: a.workers,
        clip_norm: a.clip,
        ..TrainConfig::default()
    };
    let report = train(model, &corpus, &cfg)?;

    fs::create_dir_all(&a.out.out)?;
    let log_path = a.out.out.join("epochs.tsv");
    let mut log = fs::File::create(&log_path)?;
    writeln!(log, "{}", EpochLog::HEADER)?;
    println!("{}", EpochLog::HEADER);
    for e in &report.log {
        writeln!(log, "{}", e.to_tsv())?;
        println!("{}", e.to_tsv());
    }
    let ckpt = a.out.out.join("best.ckpt");
    save_model(&report.best, &ckpt)?;
    let vocab_path = a.out.out.join("vocab.tsv");
    vocab.save(&vocab_path)?;
    let best_val = report.log.get(report.best_epoch.wrapping_sub(1)).map_or(0.0, |e| e.val_acc);
    print!("best_epoch={} val_acc={best_val:.4}", report.best_epoch);
    if !corpus.test.is_empty() {
        print!(" test_acc={:.4}", evaluate(&report.best, &corpus.test, a.workers)?);
    }
    println!();
    Ok(vec![log_path, ckpt, vocab_path])
}

fn default_vocab_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name("vocab.tsv")
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    check_workers(a.workers)?;
    let model = load_model(&a.checkpoint)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| default_vocab_path(&a.checkpoint));
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.len() != model.vocab_size() {
        return Err(CliError::Failed(format!(
            "vocabulary {} has {} entries but the checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            model.vocab_size()
        )));
    }
    let docs = read_tsv(&a.data)?;
    let (train_docs, val_docs, test_docs) = split_documents(&docs, a.seed);
    let (label, chosen) = match a.split {
        Split::Train => ("train", train_docs),
        Split::Val => ("val", val_docs),
        Split::Test => ("test", test_docs),
        Split::All => ("all", docs),
    };
    if let Some(bad) = chosen.iter().find(|d| d.label >= model.classes()) {
        return Err(CliError::Failed(format!(
            "label {} exceeds the checkpoint's {} classes",
            bad.label,
            model.classes()
        )));
    }
    let examples = encode_documents(&chosen, &vocab, model.plan.seq_len);
    let acc = evaluate(&model, &examples, a.workers)?;
    println!("{label}_acc={acc:.4}");
    Ok(Vec::new())
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    check_workers(workers)?;
    let ks: Vec<usize> = match a.k.len() {
        1 => vec![a.k[0]; a.seq_len.len()],
        len if len == a.seq_len.len() => a.k.clone(),
        len => {
            return Err(CliError::Usage(format!(
                "--k takes one value or one per --T value ({} given, {} lengths)",
                len,
                a.seq_len.len()
            )))
        }
    };
    let configs: Vec<BenchConfig> = a
        .seq_len
        .iter()
        .zip(&ks)
        .map(|(&t, &k)| BenchConfig {
            seq_len: t,
            slices: a.n,
            depth: k,
            hidden: a.hidden,
            embed: a.embed,
            batch: a.batch,
            workers,
            trials: a.trials,
            warmup: a.warmup,
            seed: a.seed,
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut reports = Vec::with_capacity(configs.len());
    for c in &configs {
        reports.push(run_bench(c)?);
    }
    let text = if a.jsonl { emit_jsonl(&reports)? } else { emit_table(&reports) };
    print!("{text}");
    Ok(Vec::new())
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    if a.scalar_demo {
        if matches!((a.n, a.k), (Some(n), Some(k)) if (n, k) != (2, 1)) {
            return Err(CliError::Usage("the scalar example is defined for --n 2 --k 1".into()));
        }
        let demo = scalar_demo()?;
        let states: Vec<String> = demo.layer0.iter().map(|v| v.to_string()).collect();
        println!("U=1 W=2 n=2 k=1 x=[1,1,1,1]");
        println!("layer0_last_states=({})", states.join(", "));
        println!("F={} h_T={} closed_form={}", demo.srnn, demo.sequential, demo.closed_form);
        let ok = demo.srnn == demo.sequential && demo.sequential == demo.closed_form;
        println!("{} == {} {}", demo.srnn, demo.sequential, if ok { "PASS" } else { "FAIL" });
        return if ok {
            Ok(Vec::new())
        } else {
            Err(CliError::Failed("scalar example mismatch".into()))
        };
    }
    if a.cases == 0 {
        return Err(CliError::Usage("--cases must be ≥ 1".into()));
    }
    let shape = a.n.zip(a.k);
    let cases = suite(a.seed, a.cases, shape)?;
    println!("n\tk\tT\tdims\tmax_rel_err\tstatus");
    let mut failed = 0;
    for case in &cases {
        let mut cells = construct_equivalent_srnn(case)?;
        if let Some(delta) = a.perturb {
            perturb(&mut cells, 0, 0, 0, delta)?;
        }
        let r = verify_with_cells(case, &cells, a.tol)?;
        if !r.passed() {
            failed += 1;
        }
        println!("{}", r.line());
    }
    println!("passed {}/{}", cases.len() - failed, cases.len());
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} cases failed", cases.len())));
    }
    Ok(Vec::new())
}

fn cmd_slice_plan(a: &GeometryArgs) -> CmdResult {
    let plan = build_plan(SliceConfig::new(a.seq_len, a.n, a.k))?;
    println!("p\ts_p\tl_p");
    for l in &plan.layers {
        println!("{}\t{}\t{}", l.index, l.count, l.len);
    }
    println!("s_k={}", plan.layers[plan.depth].count);
    println!("critical_steps={}", plan.critical_steps());
    Ok(Vec::new())
}

fn cmd_predict_speed(a: &GeometryArgs) -> CmdResult {
    if a.n < 2 || a.seq_len == 0 {
        return Err(CliError::Usage("need --n ≥ 2 and --T ≥ 1".into()));
    }
    println!(
        "R={} theoretical_speedup={:.2}",
        predict_ratio(a.n, a.k, a.seq_len),
        theoretical_speedup(a.n, a.k, a.seq_len)
    );
    Ok(Vec::new())
}

fn cmd_gen_toy(a: &GenToyArgs) -> CmdResult {
    let docs = toy_documents(a.seed, a.docs, a.seq_len, a.classes)?;
    if let Some(parent) = a.file.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_tsv(&a.file, &docs)?;
    println!("wrote {} documents to {}", docs.len(), a.file.display());
    Ok(vec![a.file.clone()])
}
