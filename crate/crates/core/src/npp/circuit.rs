//! Probabilistic circuits over a W×H grid of variables with a Poon-Domingos
//! region graph.
//!
//! Every region holds K densities (C at the root, one per class). A region
//! that can be cut mixes, for every cut, all K×K products of its two halves;
//! a region that cannot be cut is a leaf of K fully factorized densities.
//! The root adds a learnable class prior: log P(x, c) = log π_c + root_c(x).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::Params;
use super::tensor::Tensor;
use crate::par::{map_indexed, Execution};

pub const LOGVAR_MIN: f64 = -7.0;
pub const LOGVAR_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CircuitError {
    #[error("piece list is empty")]
    EmptyPieces,
    #[error("piece {piece} is zero or larger than the {axis} axis ({len})")]
    BadPiece {
        piece: usize,
        axis: &'static str,
        len: usize,
    },
    #[error("circuit expects {expected} inputs, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("input {index} is not a category in 0..{categories}")]
    BadCategory { index: usize, categories: usize },
    #[error("minimum log-variance {0} must be finite and below {LOGVAR_MAX}")]
    BadVariance(f64),
    #[error("non-finite log-density; parameters have diverged")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafSpec {
    #[default]
    Gaussian,
    Categorical {
        categories: usize,
    },
}

fn default_k() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub width: usize,
    pub height: usize,
    pub pieces: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub leaf: LeafSpec,
    /// Lower bound of Gaussian log-variances.
    #[serde(default = "default_min_logvar")]
    pub min_logvar: f64,
}

fn default_min_logvar() -> f64 {
    LOGVAR_MIN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    fn vars(&self, width: usize) -> Vec<usize> {
        let mut v = Vec::new();
        for y in self.y0..self.y1 {
            for x in self.x0..self.x1 {
                v.push(y * width + x);
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
enum RegionKind {
    Leaf {
        vars: Vec<usize>,
        block: usize,
    },
    Inner {
        parts: Vec<(usize, usize)>,
        block: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Region {
    rect: Rect,
    n: usize,
    kind: RegionKind,
}

/// Normalized weights and leaf constants derived from the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
struct Cache {
    weights: Vec<Vec<f64>>,
    log_prior: Vec<f64>,
    /// Gaussian: exp(-logvar) per leaf block; categorical: log-softmax of the logits.
    leaf: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub spec: CircuitSpec,
    pub classes: usize,
    regions: Vec<Region>,
    params: Params,
    prior_block: usize,
    cache: Cache,
    dirty: bool,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct CircuitTape {
    input: Tensor,
    logs: Vec<Vec<f64>>,
    pub logjoint: Vec<f64>,
}

fn cut_points(lo: usize, hi: usize, pieces: &[usize]) -> Vec<usize> {
    let mut c: Vec<usize> = (lo + 1..hi)
        .filter(|p| pieces.iter().any(|&d| p % d == 0))
        .collect();
    c.dedup();
    c
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let l = logsumexp(v);
    v.iter().map(|x| x - l).collect()
}

struct Builder<'a> {
    spec: &'a CircuitSpec,
    classes: usize,
    regions: Vec<Region>,
    index: HashMap<Rect, usize>,
    params: Params,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn region(&mut self, rect: Rect, root: bool) -> usize {
        if let Some(&i) = self.index.get(&rect) {
            return i;
        }
        let n = if root { self.classes } else { self.spec.k };
        let mut parts = Vec::new();
        for c in cut_points(rect.x0, rect.x1, &self.spec.pieces) {
            parts.push((Rect { x1: c, ..rect }, Rect { x0: c, ..rect }));
        }
        for c in cut_points(rect.y0, rect.y1, &self.spec.pieces) {
            parts.push((Rect { y1: c, ..rect }, Rect { y0: c, ..rect }));
        }
        let id_hint = self.regions.len();
        let kind = if parts.is_empty() {
            let vars = rect.vars(self.spec.width);
            let block = self.leaf_params(id_hint, vars.len(), n);
            RegionKind::Leaf { vars, block }
        } else {
            let parts: Vec<(usize, usize)> = parts
                .into_iter()
                .map(|(a, b)| (self.region(a, false), self.region(b, false)))
                .collect();
            let width = parts.len() * self.spec.k * self.spec.k;
            let w = (0..n * width)
                .map(|_| self.rng.gen_range(-0.5..0.5))
                .collect();
            let block = self.params.add(
                format!("sum.{}_{}_{}_{}", rect.x0, rect.y0, rect.x1, rect.y1),
                vec![n, width],
                w,
            );
            RegionKind::Inner { parts, block }
        };
        self.regions.push(Region { rect, n, kind });
        let i = self.regions.len() - 1;
        self.index.insert(rect, i);
        i
    }

    fn leaf_params(&mut self, id: usize, nvars: usize, n: usize) -> usize {
        match self.spec.leaf {
            LeafSpec::Gaussian => {
                let mean = (0..nvars * n)
                    .map(|_| self.rng.gen_range(0.0..1.0))
                    .collect();
                let b = self
                    .params
                    .add(format!("leaf{id}.mean"), vec![nvars, n], mean);
                self.params.add(
                    format!("leaf{id}.logvar"),
                    vec![nvars, n],
                    vec![(0.1f64).ln(); nvars * n],
                );
                b
            }
            LeafSpec::Categorical { categories } => {
                let normal = Normal::new(0.0, 0.5).expect("valid normal");
                let logits = (0..nvars * n * categories)
                    .map(|_| normal.sample(self.rng))
                    .collect();
                self.params.add(
                    format!("leaf{id}.logits"),
                    vec![nvars, n, categories],
                    logits,
                )
            }
        }
    }
}

impl Circuit {
    pub fn new(
        spec: CircuitSpec,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Circuit, CircuitError> {
        if spec.pieces.is_empty() {
            return Err(CircuitError::EmptyPieces);
        }
        if !(spec.min_logvar.is_finite() && spec.min_logvar < LOGVAR_MAX) {
            return Err(CircuitError::BadVariance(spec.min_logvar));
        }
        for &p in &spec.pieces {
            let axis_len = spec.width.max(spec.height);
            if p == 0 || p > axis_len {
                return Err(CircuitError::BadPiece {
                    piece: p,
                    axis: if spec.width >= spec.height { "x" } else { "y" },
                    len: axis_len,
                });
            }
        }
        assert!(spec.k >= 1 && classes >= 1 && spec.width >= 1 && spec.height >= 1);
        let mut b = Builder {
            spec: &spec,
            classes,
            regions: Vec::new(),
            index: HashMap::new(),
            params: Params::default(),
            rng,
        };
        let root = Rect {
            x0: 0,
            y0: 0,
            x1: spec.width,
            y1: spec.height,
        };
        b.region(root, true);
        let (regions, mut params) = (b.regions, b.params);
        let prior_block = params.add("prior", vec![classes], vec![0.0; classes]);
        let mut c = Circuit {
            spec,
            classes,
            regions,
            params,
            prior_block,
            cache: Cache::default(),
            dirty: true,
        };
        c.refresh();
        Ok(c)
    }

    pub fn scope_size(&self) -> usize {
        self.spec.width * self.spec.height
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access to the parameters; call [`Circuit::refresh`] afterwards.
    pub fn params_mut(&mut self) -> &mut Params {
        self.dirty = true;
        &mut self.params
    }

    /// Clamp log-variances and recompute normalized weights.
    pub fn refresh(&mut self) {
        let mut leaf = Vec::new();
        for r in &self.regions {
            if let RegionKind::Leaf { block, .. } = r.kind {
                match self.spec.leaf {
                    LeafSpec::Gaussian => {
                        let lv = &mut self.params.blocks[block + 1].data;
                        for s in lv.iter_mut() {
                            *s = s.clamp(self.spec.min_logvar, LOGVAR_MAX);
                        }
                        leaf.push(lv.iter().map(|s| (-s).exp()).collect());
                    }
                    LeafSpec::Categorical { categories } => {
                        let logits = &self.params.blocks[block].data;
                        leaf.push(logits.chunks(categories).flat_map(log_softmax).collect());
                    }
                }
            } else {
                leaf.push(Vec::new());
            }
        }
        let weights = self
            .regions
            .iter()
            .map(|r| match &r.kind {
                RegionKind::Inner { block, .. } => {
                    let b = &self.params.blocks[*block];
                    let width = b.shape[1];
                    b.data
                        .chunks(width)
                        .flat_map(|row| log_softmax(row).into_iter().map(f64::exp))
                        .collect()
                }
                RegionKind::Leaf { .. } => Vec::new(),
            })
            .collect();
        self.cache = Cache {
            weights,
            log_prior: log_softmax(&self.params.blocks[self.prior_block].data),
            leaf,
        };
        self.dirty = false;
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.cache.log_prior
    }

    fn leaf_forward(
        &self,
        ri: usize,
        vars: &[usize],
        block: usize,
        n: usize,
        x: &Tensor,
    ) -> Vec<f64> {
        let mut out = vec![0.0; n];
        match self.spec.leaf {
            LeafSpec::Gaussian => {
                let mean = &self.params.blocks[block].data;
                let logvar = &self.params.blocks[block + 1].data;
                let prec = &self.cache.leaf[ri];
                for (li, &v) in vars.iter().enumerate() {
                    if !x.observed(v) {
                        continue;
                    }
                    let xv = x.values[v];
                    for (k, o) in out.iter_mut().enumerate() {
                        let j = li * n + k;
                        let d = xv - mean[j];
                        *o -= 0.5 * (LN_2PI + logvar[j] + d * d * prec[j]);
                    }
                }
            }
            LeafSpec::Categorical { categories } => {
                let logp = &self.cache.leaf[ri];
                for (li, &v) in vars.iter().enumerate() {
                    if !x.observed(v) {
                        continue;
                    }
                    let cat = x.values[v] as usize;
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += logp[(li * n + k) * categories + cat];
                    }
                }
            }
        }
        out
    }

    /// Scaled products of every partition of an inner region and their common
    /// log-scale: true product = q · exp(shift).
    fn products(&self, parts: &[(usize, usize)], logs: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let k = self.spec.k;
        let mut shifts = Vec::with_capacity(parts.len());
        for &(a, b) in parts {
            let ma = logs[a].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mb = logs[b].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shifts.push(ma + mb);
        }
        let top = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut q = Vec::with_capacity(parts.len() * k * k);
        for (&(a, b), &s) in parts.iter().zip(&shifts) {
            let ma = logs[a].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mb = logs[b].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let scale = (s - top).exp();
            let eb: Vec<f64> = logs[b].iter().map(|v| (v - mb).exp()).collect();
            for &av in &logs[a] {
                let ea = (av - ma).exp() * scale;
                q.extend(eb.iter().map(|e| ea * e));
            }
        }
        (q, top)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), CircuitError> {
        if x.len() != self.scope_size() {
            return Err(CircuitError::Shape {
                expected: self.scope_size(),
                found: x.len(),
            });
        }
        if let LeafSpec::Categorical { categories } = self.spec.leaf {
            for (i, &v) in x.values.iter().enumerate() {
                if x.observed(i) && (v < 0.0 || v.fract() != 0.0 || v as usize >= categories) {
                    return Err(CircuitError::BadCategory {
                        index: i,
                        categories,
                    });
                }
            }
        }
        Ok(())
    }

    /// log P(x, C=c) for every class, with masked variables marginalized.
    pub fn forward(&self, x: &Tensor) -> Result<CircuitTape, CircuitError> {
        assert!(!self.dirty, "circuit parameters changed without refresh()");
        self.check_input(x)?;
        let mut logs: Vec<Vec<f64>> = Vec::with_capacity(self.regions.len());
        for (ri, r) in self.regions.iter().enumerate() {
            let out = match &r.kind {
                RegionKind::Leaf { vars, block } => self.leaf_forward(ri, vars, *block, r.n, x),
                RegionKind::Inner { parts, .. } => {
                    let (q, top) = self.products(parts, &logs);
                    let w = &self.cache.weights[ri];
                    (0..r.n)
                        .map(|k| {
                            let row = &w[k * q.len()..(k + 1) * q.len()];
                            let s: f64 = row.iter().zip(&q).map(|(a, b)| a * b).sum();
                            top + s.ln()
                        })
                        .collect()
                }
            };
            logs.push(out);
        }
        let root = logs.last().expect("root region");
        let logjoint: Vec<f64> = root
            .iter()
            .zip(&self.cache.log_prior)
            .map(|(r, p)| r + p)
            .collect();
        if logjoint.iter().any(|v| !v.is_finite()) {
            return Err(CircuitError::NonFinite);
        }
        Ok(CircuitTape {
            input: x.clone(),
            logs,
            logjoint,
        })
    }

    pub fn logjoint(&self, x: &Tensor) -> Result<Vec<f64>, CircuitError> {
        Ok(self.forward(x)?.logjoint)
    }

    pub fn forward_batch(
        &self,
        xs: &[Tensor],
        exec: Execution,
    ) -> Vec<Result<Vec<f64>, CircuitError>> {
        map_indexed(xs.len(), exec, |i| self.logjoint(&xs[i]))
    }

    /// Accumulate the gradient of `⟨upstream, logjoint⟩` into `grads` (laid
    /// out like [`Circuit::params`]) and return the gradient with respect to
    /// the input values (zero for masked and categorical inputs).
    pub fn backward(&self, tape: &CircuitTape, upstream: &[f64], grads: &mut Params) -> Vec<f64> {
        assert!(!self.dirty, "circuit parameters changed without refresh()");
        assert_eq!(upstream.len(), self.classes, "upstream width");
        let x = &tape.input;
        let mut gx = vec![0.0; x.len()];
        // prior: log-softmax backward
        let total: f64 = upstream.iter().sum();
        for (j, g) in grads.blocks[self.prior_block].data.iter_mut().enumerate() {
            *g += upstream[j] - self.cache.log_prior[j].exp() * total;
        }
        let mut g_logs: Vec<Vec<f64>> = self.regions.iter().map(|r| vec![0.0; r.n]).collect();
        *g_logs.last_mut().expect("root") = upstream.to_vec();
        let k = self.spec.k;
        for ri in (0..self.regions.len()).rev() {
            let g = std::mem::take(&mut g_logs[ri]);
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let r = &self.regions[ri];
            match &r.kind {
                RegionKind::Inner { parts, block } => {
                    let (q, top) = self.products(parts, &tape.logs);
                    let w = &self.cache.weights[ri];
                    let width = q.len();
                    let mut gq = vec![0.0; width];
                    {
                        let gw = &mut grads.blocks[*block].data;
                        for (kk, &gk) in g.iter().enumerate() {
                            if gk == 0.0 {
                                continue;
                            }
                            let s = (tape.logs[ri][kk] - top).exp();
                            if s == 0.0 || !s.is_finite() {
                                continue;
                            }
                            let u = gk / s;
                            let row = &w[kk * width..(kk + 1) * width];
                            let grow = &mut gw[kk * width..(kk + 1) * width];
                            for t in 0..width {
                                gq[t] += u * row[t];
                                grow[t] += row[t] * (u * q[t] - gk);
                            }
                        }
                    }
                    for (pi, &(a, b)) in parts.iter().enumerate() {
                        let base = pi * k * k;
                        for i in 0..k {
                            for j in 0..k {
                                let t = base + i * k + j;
                                let v = gq[t] * q[t];
                                g_logs[a][i] += v;
                                g_logs[b][j] += v;
                            }
                        }
                    }
                }
                RegionKind::Leaf { vars, block } => {
                    let n = r.n;
                    match self.spec.leaf {
                        LeafSpec::Gaussian => {
                            let mean = &self.params.blocks[*block].data;
                            let prec = &self.cache.leaf[ri];
                            let mut gm = vec![0.0; vars.len() * n];
                            let mut gs = vec![0.0; vars.len() * n];
                            for (li, &v) in vars.iter().enumerate() {
                                if !x.observed(v) {
                                    continue;
                                }
                                let xv = x.values[v];
                                for (kk, &gk) in g.iter().enumerate() {
                                    let j = li * n + kk;
                                    let d = (xv - mean[j]) * prec[j];
                                    gm[j] += gk * d;
                                    gs[j] += gk * 0.5 * (d * (xv - mean[j]) - 1.0);
                                    gx[v] -= gk * d;
                                }
                            }
                            for (a, b) in grads.blocks[*block].data.iter_mut().zip(gm) {
                                *a += b;
                            }
                            for (a, b) in grads.blocks[*block + 1].data.iter_mut().zip(gs) {
                                *a += b;
                            }
                        }
                        LeafSpec::Categorical { categories } => {
                            let logp = &self.cache.leaf[ri];
                            let gl = &mut grads.blocks[*block].data;
                            for (li, &v) in vars.iter().enumerate() {
                                if !x.observed(v) {
                                    continue;
                                }
                                let cat = x.values[v] as usize;
                                for (kk, &gk) in g.iter().enumerate() {
                                    let base = (li * n + kk) * categories;
                                    for c in 0..categories {
                                        let ind = if c == cat { 1.0 } else { 0.0 };
                                        gl[base + c] += gk * (ind - logp[base + c].exp());
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    /// Check smoothness and decomposability by scope computation.
    pub fn audit(&self) -> Result<(), String> {
        let mut scopes: Vec<Vec<usize>> = Vec::with_capacity(self.regions.len());
        for (ri, r) in self.regions.iter().enumerate() {
            let scope = match &r.kind {
                RegionKind::Leaf { vars, .. } => {
                    let mut s = vars.clone();
                    s.sort_unstable();
                    s
                }
                RegionKind::Inner { parts, .. } => {
                    let mut first: Option<Vec<usize>> = None;
                    for &(a, b) in parts {
                        if a >= ri || b >= ri {
                            return Err(format!(
                                "region {ri} has a child that is not computed before it"
                            ));
                        }
                        let (sa, sb) = (&scopes[a], &scopes[b]);
                        if sa.iter().any(|v| sb.binary_search(v).is_ok()) {
                            return Err(format!("region {ri}: product children overlap"));
                        }
                        let mut u: Vec<usize> = sa.iter().chain(sb).copied().collect();
                        u.sort_unstable();
                        match &first {
                            None => first = Some(u),
                            Some(f) if *f != u => {
                                return Err(format!("region {ri}: sum children differ in scope"))
                            }
                            _ => {}
                        }
                    }
                    first.ok_or_else(|| format!("region {ri} has no partitions"))?
                }
            };
            let expected = {
                let mut v = r.rect.vars(self.spec.width);
                v.sort_unstable();
                v
            };
            if scope != expected {
                return Err(format!("region {ri}: scope does not match its rectangle"));
            }
            scopes.push(scope);
        }
        let root = scopes.last().ok_or("empty circuit")?;
        if root.len() != self.scope_size() {
            return Err("root scope does not cover all variables".into());
        }
        Ok(())
    }
}
