//! Datasets, masking, the synthetic attribute world and evaluation metrics.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::QueryFlavor;
use crate::grounder::Value;
use crate::npp::{NppBank, NppError, Tensor};
use crate::par::{map_indexed, Execution};
use crate::trainer::Example;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic {found}, expected {expected}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated at byte offset {offset}")]
    Truncated { path: PathBuf, offset: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("missing fraction {0} outside [0,1)")]
    Fraction(f64),
    #[error("line {line}: {reason}")]
    Jsonl { line: usize, reason: String },
    #[error(transparent)]
    Npp(#[from] NppError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[height, width]`, values in [0,1].
    pub pixels: Tensor,
    pub label: u8,
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32, HarnessError> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| HarnessError::Truncated {
            path: path.to_path_buf(),
            offset: buf.len(),
        })
}

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn check_magic(buf: &[u8], expected: u32, path: &Path) -> Result<(), HarnessError> {
    let found = be_u32(buf, 0, path)?;
    if found != expected {
        return Err(HarnessError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parse an IDX image file: `(height, width, pixel bytes per image)`.
pub fn parse_idx_images(
    buf: &[u8],
    path: &Path,
) -> Result<(usize, usize, Vec<Vec<u8>>), HarnessError> {
    check_magic(buf, IMAGE_MAGIC, path)?;
    let n = be_u32(buf, 4, path)? as usize;
    let h = be_u32(buf, 8, path)? as usize;
    let w = be_u32(buf, 12, path)? as usize;
    let size = h * w;
    let need = 16 + n * size;
    if buf.len() < need {
        return Err(HarnessError::Truncated {
            path: path.to_path_buf(),
            offset: buf.len(),
        });
    }
    let images = buf[16..need]
        .chunks_exact(size.max(1))
        .take(n)
        .map(<[u8]>::to_vec)
        .collect();
    Ok((h, w, images))
}

pub fn parse_idx_labels(buf: &[u8], path: &Path) -> Result<Vec<u8>, HarnessError> {
    check_magic(buf, LABEL_MAGIC, path)?;
    let n = be_u32(buf, 4, path)? as usize;
    if buf.len() < 8 + n {
        return Err(HarnessError::Truncated {
            path: path.to_path_buf(),
            offset: buf.len(),
        });
    }
    Ok(buf[8..8 + n].to_vec())
}

/// Load an IDX image/label file pair; pixels are scaled by 1/255.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Vec<LabeledImage>, HarnessError> {
    let (h, w, imgs) = parse_idx_images(&read(images)?, images)?;
    let labs = parse_idx_labels(&read(labels)?, labels)?;
    if imgs.len() != labs.len() {
        return Err(HarnessError::CountMismatch {
            images: imgs.len(),
            labels: labs.len(),
        });
    }
    Ok(imgs
        .into_iter()
        .zip(labs)
        .map(|(px, label)| LabeledImage {
            pixels: Tensor {
                shape: vec![h, w],
                values: px.iter().map(|&b| b as f64 / 255.0).collect(),
                mask: None,
            },
            label,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// `$SLASH_MNIST_DIR`, or `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    match std::env::var_os("SLASH_MNIST_DIR") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<Vec<LabeledImage>, HarnessError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Overlap weights of `n_out` equal output cells over `n_in` input cells.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            (lo.floor() as usize..(hi.ceil() as usize).min(n_in))
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted average pooling of a `[h, w]` image to `[out_h, out_w]`.
/// Handles non-integer factors such as 28 → 8.
pub fn downscale(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    assert_eq!(x.shape.len(), 2, "downscale expects [h, w]");
    assert!(x.mask.is_none(), "downscale before masking");
    let (h, w) = (x.shape[0], x.shape[1]);
    let (wy, wx) = (area_weights(h, out_h), area_weights(w, out_w));
    let mut values = Vec::with_capacity(out_h * out_w);
    for row in &wy {
        for col in &wx {
            let mut s = 0.0;
            for &(y, a) in row {
                for &(xx, b) in col {
                    s += a * b * x.values[y * w + xx];
                }
            }
            values.push(s);
        }
    }
    Tensor {
        shape: vec![out_h, out_w],
        values,
        mask: None,
    }
}

/// Clear exactly `round(m · n)` mask bits, chosen uniformly. Missing values
/// are zeroed; observed values are untouched.
pub fn mask_missing(x: &Tensor, m: f64, rng: &mut ChaCha8Rng) -> Result<Tensor, HarnessError> {
    if !(0.0..1.0).contains(&m) {
        return Err(HarnessError::Fraction(m));
    }
    let n = x.values.len();
    let k = (m * n as f64).round() as usize;
    let mut mask = vec![true; n];
    let mut values = x.values.clone();
    for i in rand::seq::index::sample(rng, n, k) {
        mask[i] = false;
        values[i] = 0.0;
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        values,
        mask: Some(mask),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdditionExample {
    pub a: LabeledImage,
    pub b: LabeledImage,
    pub sum: u8,
}

/// Seeded shuffle, then disjoint consecutive pairs: ⌊N/2⌋ examples.
pub fn make_addition_pairs(images: Vec<LabeledImage>, seed: u64) -> Vec<AdditionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = images;
    images.shuffle(&mut rng);
    let mut out = Vec::with_capacity(images.len() / 2);
    let mut it = images.into_iter();
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        let sum = a.label + b.label;
        out.push(AdditionExample { a, b, sum });
    }
    out
}

/// Mask both images of every example with fraction `m`.
pub fn apply_missing(
    examples: &[AdditionExample],
    m: f64,
    seed: u64,
) -> Result<Vec<AdditionExample>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.a.pixels = mask_missing(&e.a.pixels, m, &mut rng)?;
            e.b.pixels = mask_missing(&e.b.pixels, m, &mut rng)?;
            Ok(e)
        })
        .collect()
}

impl AdditionExample {
    pub fn query(&self) -> String {
        format!(":- not addition(i1,i2,{}).", self.sum)
    }

    /// Training example binding `i1` and `i2`; the images are moved.
    pub fn into_example(self) -> Example {
        let query = self.query();
        Example {
            bindings: vec![
                (Value::Sym("i1".into()), self.a.pixels),
                (Value::Sym("i2".into()), self.b.pixels),
            ],
            query,
        }
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of images whose most probable conditional outcome is the label.
pub fn digit_accuracy(
    bank: &NppBank,
    model: usize,
    images: &[LabeledImage],
    exec: Execution,
) -> Result<f64, HarnessError> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let hits = map_indexed(images.len(), exec, |i| {
        bank.forward(model, &images[i].pixels, QueryFlavor::Conditional)
            .map(|f| argmax(&f.p) == images[i].label as usize)
    });
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / images.len() as f64)
}

pub const COLORS: [&str; 9] = [
    "red", "blue", "green", "gray", "brown", "magenta", "cyan", "yellow", "bg",
];
pub const SHADES: [&str; 3] = ["bright", "dark", "bg"];
pub const SHAPES: [&str; 4] = ["circle", "triangle", "square", "bg"];
pub const SIZES: [&str; 3] = ["small", "big", "bg"];
pub const CATEGORIES: [(&str, &[&str]); 4] = [
    ("color", &COLORS),
    ("shade", &SHADES),
    ("shape", &SHAPES),
    ("size", &SIZES),
];
pub const SLOTS: usize = 4;
pub const SCHEMA_VERSION: u32 = 1;

/// Category value indices; the last index of every category is `bg`.
pub type Attrs = [usize; 4];

pub const BACKGROUND: Attrs = [
    COLORS.len() - 1,
    SHADES.len() - 1,
    SHAPES.len() - 1,
    SIZES.len() - 1,
];

pub fn is_background(a: &Attrs) -> bool {
    *a == BACKGROUND
}

fn one_hot_width() -> usize {
    CATEGORIES.iter().map(|(_, v)| v.len()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub dim: usize,
    /// Seed of the embedding, shared by every split of one world.
    pub embed_seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            dim: 16,
            embed_seed: 0x5eed,
        }
    }
}

impl WorldSpec {
    /// `dim × one_hot_width` matrix, entries N(0, 1).
    fn embedding(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.embed_seed);
        (0..self.dim)
            .map(|_| {
                (0..one_hot_width())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSample {
    pub schema: u32,
    /// One feature vector per slot.
    pub features: Vec<Vec<f64>>,
    /// Ground truth per slot; empty slots are all-`bg`.
    pub truth: Vec<Attrs>,
}

impl AttributeSample {
    pub fn objects(&self) -> impl Iterator<Item = &Attrs> {
        self.truth.iter().filter(|a| !is_background(a))
    }

    /// The slot-aligned conjunction `:- not color(1,sK)=v.` over all slots
    /// and categories.
    pub fn query(&self) -> String {
        let mut q = String::new();
        for (s, attrs) in self.truth.iter().enumerate() {
            for (c, (name, values)) in CATEGORIES.iter().enumerate() {
                q.push_str(&format!(
                    ":- not {name}(1,s{})={}.\n",
                    s + 1,
                    values[attrs[c]]
                ));
            }
        }
        q
    }

    pub fn to_example(&self) -> Example {
        Example {
            bindings: self
                .features
                .iter()
                .enumerate()
                .map(|(s, f)| (Value::Sym(format!("s{}", s + 1)), Tensor::vector(f.clone())))
                .collect(),
            query: self.query(),
        }
    }
}

/// `count` samples with 1..=4 objects in random slots, attributes uniform.
pub fn gen_attribute_world(
    count: usize,
    seed: u64,
    sigma: f64,
    spec: &WorldSpec,
) -> Vec<AttributeSample> {
    assert!(sigma >= 0.0, "noise must be non-negative");
    let emb = spec.embedding();
    let noise = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=SLOTS);
            let mut slots: Vec<usize> = (0..SLOTS).collect();
            slots.shuffle(&mut rng);
            let mut truth = vec![BACKGROUND; SLOTS];
            for &s in &slots[..n] {
                for (c, (_, values)) in CATEGORIES.iter().enumerate() {
                    truth[s][c] = rng.gen_range(0..values.len() - 1);
                }
            }
            let features = truth
                .iter()
                .map(|attrs| {
                    let mut hot = Vec::with_capacity(one_hot_width());
                    for (c, (_, values)) in CATEGORIES.iter().enumerate() {
                        hot.extend((0..values.len()).map(|v| (v == attrs[c]) as u8 as f64));
                    }
                    emb.iter()
                        .map(|row| {
                            let z: f64 = row.iter().zip(&hot).map(|(a, b)| a * b).sum();
                            z + noise.sample(&mut rng)
                        })
                        .collect()
                })
                .collect();
            AttributeSample {
                schema: SCHEMA_VERSION,
                features,
                truth,
            }
        })
        .collect()
}

pub fn write_jsonl<W: Write>(samples: &[AttributeSample], mut w: W) -> io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<AttributeSample>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Jsonl {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let s: AttributeSample = serde_json::from_str(&line).map_err(|e| HarnessError::Jsonl {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if s.schema != SCHEMA_VERSION {
            return Err(HarnessError::Jsonl {
                line: i + 1,
                reason: format!("schema {} (expected {SCHEMA_VERSION})", s.schema),
            });
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub sample: usize,
    pub attrs: Attrs,
    pub confidence: f64,
}

/// Average precision over predictions ranked by confidence (stable for
/// ties). A prediction is a true positive iff its tuple equals a not yet
/// matched object of the same sample. The area uses the monotone precision
/// envelope.
pub fn average_precision(predictions: &[Prediction], truth: &[Vec<Attrs>]) -> f64 {
    let positives: usize = truth.iter().map(Vec::len).sum();
    if positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .total_cmp(&predictions[a].confidence)
    });
    let mut used: Vec<Vec<bool>> = truth.iter().map(|t| vec![false; t.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(order.len());
    for i in order {
        let p = &predictions[i];
        let hit = truth[p.sample]
            .iter()
            .enumerate()
            .position(|(j, t)| !used[p.sample][j] && *t == p.attrs);
        match hit {
            Some(j) => {
                used[p.sample][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for k in (0..curve.len()).rev() {
        envelope = envelope.max(curve[k].1);
        let prev_recall = if k == 0 { 0.0 } else { curve[k - 1].0 };
        if curve[k].0 > prev_recall {
            ap += (curve[k].0 - prev_recall) * envelope;
        }
    }
    ap.min(1.0)
}

/// Per-slot predictions: the most probable value of every category, with the
/// product of their probabilities as confidence. All-`bg` slots are empty and
/// yield no prediction. `probs[slot][category]` is a distribution.
pub fn slot_predictions(sample: usize, probs: &[Vec<Vec<f64>>]) -> Vec<Prediction> {
    probs
        .iter()
        .filter_map(|cats| {
            let mut attrs = [0; 4];
            let mut confidence = 1.0;
            for (c, p) in cats.iter().enumerate() {
                attrs[c] = argmax(p);
                confidence *= p[attrs[c]];
            }
            (!is_background(&attrs)).then_some(Prediction {
                sample,
                attrs,
                confidence,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_weights_partition_unity() {
        for (n, m) in [(28, 8), (28, 14), (5, 3), (4, 4)] {
            let w = area_weights(n, m);
            let mut per_in = vec![0.0; n];
            for row in &w {
                let s: f64 = row.iter().map(|&(_, x)| x).sum();
                assert!((s - 1.0).abs() < 1e-12);
                for &(i, x) in row {
                    per_in[i] += x;
                }
            }
            for v in per_in {
                assert!((v - m as f64 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downscale_integer_factor_is_block_mean() {
        let x = Tensor {
            shape: vec![4, 4],
            values: (0..16).map(|v| v as f64).collect(),
            mask: None,
        };
        let y = downscale(&x, 2, 2);
        assert_eq!(y.values, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn ap_half_correct_ranked_first() {
        let truth = vec![vec![[0, 0, 0, 0], [1, 1, 1, 1], [2, 0, 1, 0], [3, 1, 2, 1]]];
        let mk = |attrs, confidence| Prediction {
            sample: 0,
            attrs,
            confidence,
        };
        let preds = vec![
            mk([0, 0, 0, 0], 0.9),
            mk([1, 1, 1, 1], 0.8),
            mk([7, 0, 0, 0], 0.7),
            mk([6, 0, 0, 0], 0.6),
        ];
        // recall 1/4 and 2/4 at precision 1, then only false positives
        assert!((average_precision(&preds, &truth) - 0.5).abs() < 1e-12);
    }
}
