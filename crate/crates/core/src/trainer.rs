//! Learning from entailment: L_SLASH = L_NPP + L_ENT, optimized with Adam
//! by coordinate descent.
//!
//! Phase A updates the generative circuits on L_NPP; phase B updates every
//! parameter on L_ENT. With schedule period `p`, each group of `p` batches is
//! first visited in phase A, then in phase B. Each phase keeps its own Adam
//! moments.
//!
//! Batches are split into fixed-size chunks with private gradient buffers
//! that are summed in chunk order, so results do not depend on the number of
//! worker threads.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CompiledQuery, EngineError, GradientForm};
use crate::frontend::{parse_query, ParseError, Program, QueryFlavor};
use crate::grounder::{ground_constraints, GroundError, GroundProgram, Value};
use crate::npp::{checkpoint, BankGrads, Forward, NppBank, NppError, Params, Tensor};
use crate::par::{map_indexed, with_threads, Execution};
use crate::solver::{NumScope, SolverConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("query `{query}`: {source}")]
    Query { query: String, source: ParseError },
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Npp(#[from] NppError),
    #[error("example {example}: no tensor bound to data term `{term}`")]
    Unbound { example: usize, term: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// w = 1: plain negative log query probability.
    #[default]
    Unit,
    /// w = |log P_NPP(x)|, the data log-likelihood of the example's inputs.
    LikelihoodScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate of networks (classifiers and encoders).
    pub lr_nn: f64,
    /// Learning rate of circuits.
    pub lr_pc: f64,
    /// Learning rate of circuits in the entailment phase; defaults to `lr_pc`.
    #[serde(default)]
    pub lr_pc_entailment: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub weighting: Weighting,
    /// Coordinate-descent alternation period in batches.
    #[serde(default = "one")]
    pub period: usize,
    #[serde(default)]
    pub seed: u64,
    /// Examples per gradient chunk; fixes the reduction order.
    #[serde(default = "chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub gradient: GradientForm,
    #[serde(default)]
    pub num_scope: NumScope,
    /// Worker threads; 0 uses the library default, 1 runs sequentially.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "yes")]
    pub shuffle: bool,
}

fn one() -> usize {
    1
}
fn chunk() -> usize {
    10
}
fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(lr: f64, batch_size: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            lr_nn: lr,
            lr_pc: lr,
            lr_pc_entailment: None,
            batch_size,
            epochs,
            adam: AdamConfig::default(),
            weighting: Weighting::Unit,
            period: 1,
            seed: 0,
            chunk_size: chunk(),
            gradient: GradientForm::Raw,
            num_scope: NumScope::Base,
            threads: 0,
            shuffle: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr_nn > 0.0 && self.lr_pc > 0.0 && self.lr_pc_entailment.is_none_or(|l| l > 0.0))
        {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.chunk_size == 0 || self.period == 0 {
            return bad("batch size, chunk size and period must be at least 1");
        }
        let b = &self.adam;
        if !(b.beta1 > 0.0 && b.beta1 < 1.0 && b.beta2 > 0.0 && b.beta2 < 1.0 && b.eps > 0.0) {
            return bad("Adam betas must lie in (0,1) and eps must be positive");
        }
        Ok(())
    }

    fn execution(&self) -> Execution {
        if self.threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

/// Adam moments for a bank, with per-component masks.
#[derive(Debug, Clone)]
pub struct Adam {
    m: BankGrads,
    v: BankGrads,
    t: i32,
}

impl Adam {
    pub fn new(bank: &NppBank) -> Adam {
        Adam {
            m: bank.zero_grads(),
            v: bank.zero_grads(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> i32 {
        self.t
    }

    fn update(
        p: &mut Params,
        g: &Params,
        m: &mut Params,
        v: &mut Params,
        lr: f64,
        cfg: &AdamConfig,
        t: i32,
    ) {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((pb, gb), mb), vb) in p
            .blocks
            .iter_mut()
            .zip(&g.blocks)
            .zip(&mut m.blocks)
            .zip(&mut v.blocks)
        {
            for i in 0..pb.data.len() {
                let gi = gb.data[i];
                mb.data[i] = cfg.beta1 * mb.data[i] + (1.0 - cfg.beta1) * gi;
                vb.data[i] = cfg.beta2 * vb.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = mb.data[i] / c1;
                let vhat = vb.data[i] / c2;
                pb.data[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    /// One bias-corrected Adam step on the selected components.
    pub fn step(
        &mut self,
        bank: &mut NppBank,
        grads: &BankGrads,
        lr_nn: f64,
        lr_pc: f64,
        cfg: &AdamConfig,
        nets: bool,
    ) {
        self.t += 1;
        if nets {
            for (i, (_, net)) in bank.nets.iter_mut().enumerate() {
                Adam::update(
                    &mut net.params,
                    &grads.nets[i],
                    &mut self.m.nets[i],
                    &mut self.v.nets[i],
                    lr_nn,
                    cfg,
                    self.t,
                );
            }
        }
        for (i, (_, c)) in bank.circuits.iter_mut().enumerate() {
            Adam::update(
                c.params_mut(),
                &grads.circuits[i],
                &mut self.m.circuits[i],
                &mut self.v.circuits[i],
                lr_pc,
                cfg,
                self.t,
            );
        }
        bank.refresh();
    }
}

/// One training example: tensors for the data terms and a query known to hold.
#[derive(Debug, Clone)]
pub struct Example {
    pub bindings: Vec<(Value, Tensor)>,
    pub query: String,
}

impl Example {
    pub fn tensor(&self, term: &Value) -> Option<&Tensor> {
        self.bindings
            .iter()
            .find(|(t, _)| t == term)
            .map(|(_, x)| x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_npp: f64,
    pub l_ent: f64,
    pub l_slash: f64,
    pub task_metric: Option<f64>,
    pub skipped_examples: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Loss sums and gradients of one chunk of a batch.
struct ChunkResult {
    grads: BankGrads,
    loss: f64,
    skipped: u64,
    failures: Vec<TrainError>,
}

pub struct Trainer<'a> {
    pub program: &'a Program,
    pub gp: &'a GroundProgram,
    pub config: TrainConfig,
    /// Model index and data term of every ground choice.
    instances: Vec<(usize, Value)>,
    queries: HashMap<String, Arc<CompiledQuery>>,
    adam_a: Option<Adam>,
    adam_b: Option<Adam>,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl<'a> Trainer<'a> {
    pub fn new(
        program: &'a Program,
        gp: &'a GroundProgram,
        bank: &NppBank,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let mut instances = Vec::new();
        for c in &gp.choices {
            let model = bank.model_of(&c.instance.npp)?;
            let term = c.instance.data_term().cloned().ok_or_else(|| {
                TrainError::Config(format!("NPP instance `{}` has no data term", c.instance))
            })?;
            instances.push((model, term));
        }
        Ok(Trainer {
            program,
            gp,
            config,
            instances,
            queries: HashMap::new(),
            adam_a: None,
            adam_b: None,
            metrics_path: None,
            checkpoint_path: None,
        })
    }

    /// Compile (and cache) the query of every example.
    pub fn compile_queries(&mut self, data: &[Example]) -> Result<(), TrainError> {
        let cfg = SolverConfig {
            execution: Execution::Sequential,
            ..Default::default()
        };
        for ex in data {
            if self.queries.contains_key(&ex.query) {
                continue;
            }
            let q = parse_query(&ex.query, self.program).map_err(|source| TrainError::Query {
                query: ex.query.clone(),
                source,
            })?;
            let cs = ground_constraints(self.gp, &q.constraints)?;
            let compiled = CompiledQuery::compile(self.gp, &cs, self.config.num_scope, &cfg)?;
            self.queries.insert(ex.query.clone(), Arc::new(compiled));
        }
        Ok(())
    }

    pub fn query(&self, text: &str) -> Option<&CompiledQuery> {
        self.queries.get(text).map(|q| q.as_ref())
    }

    fn check_bindings(&self, data: &[Example]) -> Result<(), TrainError> {
        for (i, ex) in data.iter().enumerate() {
            for (_, term) in &self.instances {
                if ex.tensor(term).is_none() {
                    return Err(TrainError::Unbound {
                        example: i,
                        term: term.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Conditional outputs of every instance for one example.
    fn forward_example(&self, bank: &NppBank, ex: &Example) -> Result<Vec<Forward>, TrainError> {
        self.instances
            .iter()
            .map(|(model, term)| {
                let x = ex.tensor(term).expect("bindings checked");
                Ok(bank.forward(*model, x, QueryFlavor::Conditional)?)
            })
            .collect()
    }

    /// Σ over generative instances of −log Σ_v P(x, v), with its gradient
    /// (scaled by `scale`) accumulated into `grads` if given.
    fn nll_example(
        &self,
        bank: &NppBank,
        ex: &Example,
        scale: f64,
        grads: Option<&mut BankGrads>,
    ) -> Result<f64, TrainError> {
        let mut total = 0.0;
        let mut fwds = Vec::new();
        for (model, term) in &self.instances {
            if !bank.models[*model].1.flavor().is_generative() {
                continue;
            }
            let (l, f) = bank.nll(*model, ex.tensor(term).expect("bindings checked"))?;
            total += l;
            fwds.push(f);
        }
        if let Some(g) = grads {
            for f in &fwds {
                bank.nll_backward(f, scale, g);
            }
        }
        Ok(total)
    }

    fn run_chunks(
        &self,
        bank: &NppBank,
        batch: &[&Example],
        f: impl Fn(&Example, &mut BankGrads) -> Result<Option<f64>, TrainError> + Sync + Send,
    ) -> Result<(BankGrads, f64, u64), TrainError> {
        let cs = self.config.chunk_size;
        let n_chunks = batch.len().div_ceil(cs);
        let results: Vec<ChunkResult> = map_indexed(n_chunks, self.config.execution(), |ci| {
            let mut r = ChunkResult {
                grads: bank.zero_grads(),
                loss: 0.0,
                skipped: 0,
                failures: Vec::new(),
            };
            for ex in &batch[ci * cs..((ci + 1) * cs).min(batch.len())] {
                match f(ex, &mut r.grads) {
                    Ok(Some(l)) => r.loss += l,
                    Ok(None) => r.skipped += 1,
                    Err(e) => r.failures.push(e),
                }
            }
            r
        });
        let mut grads = bank.zero_grads();
        let mut loss = 0.0;
        let mut skipped = 0;
        for r in results {
            if let Some(e) = r.failures.into_iter().next() {
                return Err(e);
            }
            grads.add_assign(&r.grads);
            loss += r.loss;
            skipped += r.skipped;
        }
        Ok((grads, loss, skipped))
    }

    /// Phase A: mean L_NPP over the batch and its gradient.
    pub fn nll_loss_and_grad(
        &self,
        bank: &NppBank,
        batch: &[&Example],
    ) -> Result<(f64, BankGrads), TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let scale = 1.0 / batch.len() as f64;
        let (grads, loss, _) = self.run_chunks(bank, batch, |ex, g| {
            Ok(Some(self.nll_example(bank, ex, scale, Some(g))?))
        })?;
        Ok((loss * scale, grads))
    }

    /// Phase B: mean weighted −log P(Q) over the batch and its gradient.
    /// Examples with P(Q) = 0 are skipped and counted.
    pub fn entailment_loss_and_grad(
        &self,
        bank: &NppBank,
        batch: &[&Example],
    ) -> Result<(f64, BankGrads, u64), TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let scale = 1.0 / batch.len() as f64;
        let (grads, loss, skipped) = self.run_chunks(bank, batch, |ex, g| {
            let q = self
                .queries
                .get(&ex.query)
                .ok_or_else(|| TrainError::Config(format!("query `{}` not compiled", ex.query)))?;
            let fwds = self.forward_example(bank, ex)?;
            let table: Vec<Vec<f64>> = fwds.iter().map(|f| f.p.clone()).collect();
            let (res, grad) = match q.grad_log(&table, self.config.gradient) {
                Ok(v) => v,
                Err(EngineError::ZeroProbability) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            if !res.probability.is_finite() {
                return Ok(None);
            }
            let w = match self.config.weighting {
                Weighting::Unit => 1.0,
                Weighting::LikelihoodScaled => self.nll_example(bank, ex, 0.0, None)?.abs(),
            };
            for (f, gr) in fwds.iter().zip(&grad) {
                let up: Vec<f64> = gr.iter().map(|v| -w * scale * v).collect();
                bank.backward(f, &up, g)?;
            }
            Ok(Some(-w * res.probability.ln()))
        })?;
        Ok((loss * scale, grads, skipped))
    }

    fn write_metrics(&self, m: &EpochMetrics, first: bool) -> Result<(), TrainError> {
        if let Some(path) = &self.metrics_path {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(!first)
                .truncate(first)
                .open(path)?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(m).expect("metrics serialize")
            )?;
        }
        Ok(())
    }

    /// Run the configured number of epochs. `task_metric` is evaluated after each epoch.
    pub fn train(
        &mut self,
        bank: &mut NppBank,
        data: &[Example],
        task_metric: Option<&(dyn Fn(&NppBank) -> f64 + Sync)>,
    ) -> Result<TrainReport, TrainError> {
        let threads = self.config.threads;
        with_threads(threads, || self.train_inner(bank, data, task_metric))
    }

    fn train_inner(
        &mut self,
        bank: &mut NppBank,
        data: &[Example],
        task_metric: Option<&(dyn Fn(&NppBank) -> f64 + Sync)>,
    ) -> Result<TrainReport, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        self.check_bindings(data)?;
        self.compile_queries(data)?;
        let generative = bank.has_generative();
        if self.adam_a.is_none() {
            self.adam_a = Some(Adam::new(bank));
            self.adam_b = Some(Adam::new(bank));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = TrainReport::default();
        let cfg = self.config.clone();
        for epoch in 1..=cfg.epochs {
            if cfg.shuffle {
                order.shuffle(&mut rng);
            }
            let batches: Vec<Vec<&Example>> = order
                .chunks(cfg.batch_size)
                .map(|c| c.iter().map(|&i| &data[i]).collect())
                .collect();
            let (mut sum_npp, mut sum_ent, mut skipped) = (0.0, 0.0, 0u64);
            for (gi, group) in batches.chunks(cfg.period).enumerate() {
                if generative {
                    for (bi, batch) in group.iter().enumerate() {
                        let (l, g) = self.nll_loss_and_grad(bank, batch)?;
                        if !l.is_finite() {
                            return Err(TrainError::NonFinite {
                                epoch,
                                batch: gi * cfg.period + bi,
                            });
                        }
                        sum_npp += l;
                        if g.all_finite() {
                            // phase A: circuits only
                            self.adam_a
                                .as_mut()
                                .expect("adam")
                                .step(bank, &g, cfg.lr_nn, cfg.lr_pc, &cfg.adam, false);
                            report.steps += 1;
                        }
                    }
                }
                for (bi, batch) in group.iter().enumerate() {
                    let (l, g, s) = self.entailment_loss_and_grad(bank, batch)?;
                    if !l.is_finite() {
                        return Err(TrainError::NonFinite {
                            epoch,
                            batch: gi * cfg.period + bi,
                        });
                    }
                    sum_ent += l;
                    skipped += s;
                    if g.all_finite() {
                        let lr_pc = cfg.lr_pc_entailment.unwrap_or(cfg.lr_pc);
                        self.adam_b
                            .as_mut()
                            .expect("adam")
                            .step(bank, &g, cfg.lr_nn, lr_pc, &cfg.adam, true);
                        report.steps += 1;
                    } else {
                        skipped += batch.len() as u64;
                    }
                }
            }
            let l_npp = mean(sum_npp, batches.len());
            let l_ent = mean(sum_ent, batches.len());
            let m = EpochMetrics {
                epoch,
                l_npp,
                l_ent,
                l_slash: l_npp + l_ent,
                task_metric: task_metric.map(|f| f(bank)),
                skipped_examples: skipped,
            };
            log::info!(
                "epoch {epoch}: l_npp {l_npp:.5} l_ent {l_ent:.5} metric {:?} skipped {skipped}",
                m.task_metric
            );
            self.write_metrics(&m, epoch == 1)?;
            if let Some(p) = &self.checkpoint_path {
                checkpoint::save(bank, p)?;
            }
            report.epochs.push(m);
        }
        Ok(report)
    }
}
