use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slash_core::frontend::{parse_program, Program};
use slash_core::grounder::{ground, Value};
use slash_core::npp::{checkpoint, BankSpec, NppBank, Tensor};
use slash_core::trainer::{Example, TrainConfig, TrainError, Trainer};

const PROGRAM: &str = "img(a). img(b).
npp(d(1,X),[0,1,2]) :- img(X).
s(A,B,N) :- d(1,A)=D1, d(1,B)=D2, N = D1 + D2.
";

fn bank_spec() -> BankSpec {
    serde_json::from_value(serde_json::json!({ "models": { "d": {
        "flavor": "nn", "net": { "sizes": [3, 8, 3], "head": "softmax" } } } }))
    .unwrap()
}

/// Noisy one-hot digits, labelled only by their sum.
fn data(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let digit = |rng: &mut ChaCha8Rng| {
        let d = rng.gen_range(0..3);
        let x = (0..3)
            .map(|i| (i == d) as u8 as f64 + rng.gen_range(-0.2..0.2))
            .collect();
        (d, Tensor::vector(x))
    };
    (0..n)
        .map(|_| {
            let (da, xa) = digit(&mut rng);
            let (db, xb) = digit(&mut rng);
            Example {
                bindings: vec![(Value::Sym("a".into()), xa), (Value::Sym("b".into()), xb)],
                query: format!(":- not s(a,b,{}).", da + db),
            }
        })
        .collect()
}

fn config(threads: usize) -> TrainConfig {
    let mut c = TrainConfig::new(0.05, 16, 4);
    c.seed = 11;
    c.threads = threads;
    c.chunk_size = 4;
    c
}

fn run(program: &Program, threads: usize, metrics: &std::path::Path) -> (NppBank, Vec<f64>) {
    let gp = ground(program).unwrap();
    let mut bank = NppBank::build(program, &bank_spec(), 3).unwrap();
    let mut t = Trainer::new(program, &gp, &bank, config(threads)).unwrap();
    t.metrics_path = Some(metrics.to_path_buf());
    let report = t.train(&mut bank, &data(200, 1), None).unwrap();
    (bank, report.epochs.iter().map(|m| m.l_ent).collect())
}

#[test]
fn entailment_loss_decreases() {
    let program = parse_program(PROGRAM).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (_, losses) = run(&program, 1, &dir.path().join("m.jsonl"));
    assert!(losses.last().unwrap() < &(losses[0] * 0.8), "{losses:?}");
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let program = parse_program(PROGRAM).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..3)
        .map(|i| dir.path().join(format!("{i}.jsonl")))
        .collect();
    let (b0, _) = run(&program, 1, &paths[0]);
    let (b1, _) = run(&program, 1, &paths[1]);
    let (b2, _) = run(&program, 0, &paths[2]);
    assert_eq!(b0, b1);
    assert_eq!(b0, b2);
    let bytes: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0], bytes[2]);
    let lines: Vec<serde_json::Value> = String::from_utf8(bytes[0].clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        for k in [
            "l_npp",
            "l_ent",
            "l_slash",
            "task_metric",
            "skipped_examples",
        ] {
            assert!(l.get(k).is_some(), "missing {k}");
        }
    }
}

#[test]
fn impossible_examples_are_skipped() {
    let program = parse_program(PROGRAM).unwrap();
    let gp = ground(&program).unwrap();
    let mut bank = NppBank::build(&program, &bank_spec(), 3).unwrap();
    let mut examples = data(10, 2);
    examples[3].query = ":- not s(a,b,7).".into();
    let mut t = Trainer::new(&program, &gp, &bank, config(1)).unwrap();
    let report = t.train(&mut bank, &examples, None).unwrap();
    assert!(report.epochs.iter().all(|m| m.skipped_examples == 1));
}

#[test]
fn unbound_data_term_is_an_error() {
    let program = parse_program(PROGRAM).unwrap();
    let gp = ground(&program).unwrap();
    let mut bank = NppBank::build(&program, &bank_spec(), 3).unwrap();
    let mut examples = data(4, 2);
    examples[1].bindings.pop();
    let mut t = Trainer::new(&program, &gp, &bank, config(1)).unwrap();
    assert!(matches!(
        t.train(&mut bank, &examples, None).unwrap_err(),
        TrainError::Unbound { example: 1, .. }
    ));
}

#[test]
fn checkpoint_round_trip() {
    let program = parse_program(PROGRAM).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (trained, _) = run(&program, 1, &dir.path().join("m.jsonl"));
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&trained, &path).unwrap();
    let mut fresh = NppBank::build(&program, &bank_spec(), 99).unwrap();
    checkpoint::load(&mut fresh, &path).unwrap();
    for ((_, a), (_, b)) in trained.nets.iter().zip(&fresh.nets) {
        for (x, y) in a.params.blocks.iter().zip(&b.params.blocks) {
            for (u, v) in x.data.iter().zip(&y.data) {
                assert_eq!(*u as f32 as f64, *v);
            }
        }
    }
    assert_eq!(checkpoint::encode(&fresh), std::fs::read(&path).unwrap());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(checkpoint::load(&mut fresh, &path).is_err());
}
