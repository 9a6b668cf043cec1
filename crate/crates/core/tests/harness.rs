use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slash_core::frontend::parse_program;
use slash_core::harness::{
    self, average_precision, gen_attribute_world, parse_idx_images, parse_idx_labels, read_jsonl,
    write_jsonl, AttributeSample, HarnessError, LabeledImage, Prediction, WorldSpec, BACKGROUND,
};
use slash_core::npp::{BankSpec, NppBank, Tensor};
use slash_core::par::Execution;

fn idx_images(n: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x803u32, n as u32, rows as u32, cols as u32] {
        b.extend(v.to_be_bytes());
    }
    b.extend((0..n * rows * cols).map(|i| (i % 256) as u8));
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend(0x801u32.to_be_bytes());
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}

#[test]
fn idx_images_parse() {
    let (rows, cols, imgs) = parse_idx_images(&idx_images(3, 2, 2), Path::new("x")).unwrap();
    assert_eq!((rows, cols, imgs.len()), (2, 2, 3));
    assert_eq!(imgs[1], vec![4, 5, 6, 7]);
}

#[test]
fn idx_bad_magic() {
    let err = parse_idx_images(&idx_labels(&[1, 2]), Path::new("labels")).unwrap_err();
    match err {
        HarnessError::BadMagic {
            expected, found, ..
        } => assert_eq!((expected, found), (0x803, 0x801)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn idx_truncated() {
    let mut buf = idx_images(2, 2, 2);
    buf.truncate(16 + 5);
    match parse_idx_images(&buf, Path::new("x")).unwrap_err() {
        HarnessError::Truncated { offset, .. } => assert!((16..=21).contains(&offset), "{offset}"),
        other => panic!("{other:?}"),
    }
    let mut labels = idx_labels(&[1, 2, 3]);
    labels.pop();
    assert!(matches!(
        parse_idx_labels(&labels, Path::new("y")).unwrap_err(),
        HarnessError::Truncated { .. }
    ));
}

#[test]
fn idx_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&i, idx_images(3, 2, 2)).unwrap();
    std::fs::write(&l, idx_labels(&[1, 2])).unwrap();
    assert!(matches!(
        harness::load_idx(&i, &l).unwrap_err(),
        HarnessError::CountMismatch {
            images: 3,
            labels: 2
        }
    ));
    std::fs::write(&l, idx_labels(&[1, 2, 3])).unwrap();
    let imgs = harness::load_idx(&i, &l).unwrap();
    assert_eq!(imgs[2].label, 3);
    assert!((imgs[0].pixels.values[3] - 3.0 / 255.0).abs() < 1e-12);
}

fn images(n: usize) -> Vec<LabeledImage> {
    (0..n)
        .map(|i| LabeledImage {
            pixels: Tensor::vector(vec![i as f64; 4]),
            label: (i % 10) as u8,
        })
        .collect()
}

#[test]
fn pairs_are_disjoint_and_summed() {
    let pairs = harness::make_addition_pairs(images(11), 3);
    assert_eq!(pairs.len(), 5);
    let mut seen = std::collections::BTreeSet::new();
    for p in &pairs {
        assert_eq!(p.sum, p.a.label + p.b.label);
        assert!(seen.insert(p.a.pixels.values[0] as usize));
        assert!(seen.insert(p.b.pixels.values[0] as usize));
        assert_eq!(p.query(), format!(":- not addition(i1,i2,{}).", p.sum));
    }
    let again = harness::make_addition_pairs(images(11), 3);
    assert!(pairs
        .iter()
        .zip(&again)
        .all(|(x, y)| x.a == y.a && x.b == y.b));
}

#[test]
fn missing_fraction_counts() {
    let img = Tensor::vector(vec![0.5; 784]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (m, k) in [(0.0, 0), (0.5, 392), (0.97, 760)] {
        let masked = harness::mask_missing(&img, m, &mut rng).unwrap();
        assert_eq!(masked.missing_count(), k);
        for i in 0..784 {
            let expect = if masked.observed(i) { 0.5 } else { 0.0 };
            assert_eq!(masked.values[i], expect);
        }
    }
    assert!(harness::mask_missing(&img, 1.0, &mut rng).is_err());
    assert!(harness::mask_missing(&img, -0.1, &mut rng).is_err());
}

#[test]
fn downscale_is_area_weighted() {
    let x = Tensor::new(vec![3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
    let y = harness::downscale(&x, 1, 1);
    assert!((y.values[0] - 4.0).abs() < 1e-12);
    let z = harness::downscale(&x, 2, 2);
    // Top-left cell covers rows and columns [0, 1.5): weights 1, 0.5.
    let w = [1.0, 0.5];
    let mut expect = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            expect += w[r] * w[c] * (r * 3 + c) as f64;
        }
    }
    assert!((z.values[0] - expect / 2.25).abs() < 1e-12);
}

#[test]
fn digit_accuracy_matches_hand_computation() {
    let program = parse_program("npp(digit(1,X),[0,1,2]) :- img(X). img(i1).").unwrap();
    let spec: BankSpec = serde_json::from_value(serde_json::json!({ "models": { "digit": {
        "flavor": "nn", "net": { "sizes": [4, 3], "head": "softmax" } } } }))
    .unwrap();
    let bank = NppBank::build(&program, &spec, 9).unwrap();
    let model = bank.model_of("digit").unwrap();
    let p = &bank.nets[0].1.params;
    let (w, b) = (&p.blocks[0].data, &p.blocks[1].data);
    let imgs: Vec<LabeledImage> = (0..30)
        .map(|i| LabeledImage {
            pixels: Tensor::vector(
                (0..4)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0 - 0.5)
                    .collect(),
            ),
            label: (i % 3) as u8,
        })
        .collect();
    let hits = imgs
        .iter()
        .filter(|im| {
            let z: Vec<f64> = (0..3)
                .map(|o| {
                    b[o] + (0..4)
                        .map(|j| w[o * 4 + j] * im.pixels.values[j])
                        .sum::<f64>()
                })
                .collect();
            let best = (0..3).fold(0, |k, o| if z[o] > z[k] { o } else { k });
            best == im.label as usize
        })
        .count();
    for exec in [Execution::Sequential, Execution::Parallel] {
        let acc = harness::digit_accuracy(&bank, model, &imgs, exec).unwrap();
        assert_eq!(acc, hits as f64 / 30.0);
    }
}

#[test]
fn attribute_world_is_deterministic_and_balanced() {
    let spec = WorldSpec::default();
    let a = gen_attribute_world(400, 5, 0.1, &spec);
    let b = gen_attribute_world(400, 5, 0.1, &spec);
    assert_eq!(a, b);
    assert_ne!(a, gen_attribute_world(400, 6, 0.1, &spec));
    let mut objects = 0;
    let mut red = 0;
    for s in &a {
        assert_eq!(s.features.len(), 4);
        assert!(s.features.iter().all(|f| f.len() == spec.dim));
        let n = s.objects().count();
        assert!((1..=4).contains(&n));
        objects += n;
        red += s.objects().filter(|o| o[0] == 0).count();
        assert!(s
            .objects()
            .all(|o| o.iter().zip(BACKGROUND).all(|(v, bg)| *v < bg)));
    }
    // 1..=4 objects uniformly: mean 2.5; 8 colors uniformly: 1/8 red.
    assert!((objects as f64 / 400.0 - 2.5).abs() < 0.15);
    assert!((red as f64 / objects as f64 - 0.125).abs() < 0.03);
}

#[test]
fn attribute_jsonl_round_trip() {
    let samples = gen_attribute_world(5, 1, 0.0, &WorldSpec::default());
    let mut buf = Vec::new();
    write_jsonl(&samples, &mut buf).unwrap();
    assert_eq!(read_jsonl(&buf[..]).unwrap(), samples);
    let bad = String::from_utf8(buf)
        .unwrap()
        .replacen("\"schema\":1", "\"schema\":7", 1);
    assert!(matches!(
        read_jsonl(bad.as_bytes()),
        Err(HarnessError::Jsonl { line: 1, .. })
    ));
}

#[test]
fn attribute_query_names_every_slot() {
    let s: &AttributeSample = &gen_attribute_world(1, 2, 0.0, &WorldSpec::default())[0];
    let q = s.query();
    assert_eq!(q.lines().count(), 16);
    assert!(q.contains("color(1,s1)=") && q.contains("size(1,s4)="));
}

fn pred(sample: usize, attrs: [usize; 4], confidence: f64) -> Prediction {
    Prediction {
        sample,
        attrs,
        confidence,
    }
}

#[test]
fn average_precision_fixtures() {
    let (a, b, c) = ([0, 0, 0, 0], [1, 1, 1, 1], [2, 0, 1, 0]);
    let truth = vec![vec![a], vec![b]];
    assert_eq!(
        average_precision(&[pred(0, a, 0.9), pred(1, b, 0.8)], &truth),
        1.0
    );
    // Ranked hit, miss, hit: 0.5 * 1 + 0.5 * 2/3.
    let ap = average_precision(&[pred(0, a, 0.9), pred(1, c, 0.8), pred(1, b, 0.7)], &truth);
    assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    // A duplicate only matches once.
    let ap = average_precision(&[pred(0, a, 0.9), pred(0, a, 0.8)], &[vec![a]]);
    assert_eq!(ap, 1.0);
    // Right tuple, wrong sample.
    assert_eq!(average_precision(&[pred(1, a, 0.9)], &truth), 0.0);
    assert_eq!(average_precision(&[], &[vec![]]), 0.0);
    // Half the objects found, both predictions correct.
    let ap = average_precision(&[pred(0, a, 0.5)], &truth);
    assert!((ap - 0.5).abs() < 1e-12);
}
