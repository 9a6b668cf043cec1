//! Solution and query probabilities, and gradients of log query probability
//! with respect to the NPP output vectors.
//!
//! A probability table holds one vector per ground choice rule (indexed like
//! `GroundProgram::choices`). Queries compile into independent parts, one per
//! component of the program touched together by rules and query constraints;
//! P(Q) is the product of the part probabilities.

use serde::Serialize;
use thiserror::Error;

use crate::grounder::{GroundProgram, GroundRule};
use crate::solver::{
    components, satisfies, CompiledComponent, Component, Model, ModelSet, NumScope, SolveError,
    SolverConfig,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("no probability vector for choice {choice} ({instance})")]
    MissingEntry { choice: usize, instance: String },
    #[error("choice {choice} expects {expected} outcomes, table has {found}")]
    WrongArity {
        choice: usize,
        expected: usize,
        found: usize,
    },
    #[error("query has probability zero; its gradient is undefined")]
    ZeroProbability,
}

/// Which expression `grad_log_query` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientForm {
    /// The plain partial derivative of log P(Q) in each entry of p.
    #[default]
    Raw,
    /// A contrastive form, which subtracts the contribution of the
    /// competing outcomes of the same choice.
    Contrastive,
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub probability: f64,
    pub satisfying_models: u64,
}

/// Probability of one stable model: the product of the chosen outcome probabilities divided by `num`.
pub fn solution_probability(
    projection: &[usize],
    choices: &[usize],
    table: &[Vec<f64>],
    num: usize,
) -> Result<f64, EngineError> {
    let mut p = 1.0;
    for (&c, &v) in choices.iter().zip(projection) {
        let row = table.get(c).ok_or_else(|| EngineError::MissingEntry {
            choice: c,
            instance: format!("#{c}"),
        })?;
        p *= row[v];
    }
    Ok(p / num as f64)
}

/// Probability of a query set: the product of per-query probabilities.
pub fn query_set_probability(results: &[QueryResult]) -> f64 {
    results.iter().map(|r| r.probability).product()
}

#[derive(Debug, Clone)]
struct Entry {
    projection: Vec<usize>,
    satisfies: bool,
    num: usize,
}

/// One independent factor of P(Q).
#[derive(Debug, Clone)]
struct Part {
    choices: Vec<usize>,
    entries: Vec<Entry>,
}

impl Part {
    fn from_models(
        choices: Vec<usize>,
        models: &[Model],
        constraints: &[GroundRule],
        scope: NumScope,
    ) -> Part {
        let sat: Vec<bool> = models.iter().map(|m| satisfies(m, constraints)).collect();
        let mut counts = std::collections::HashMap::new();
        for (m, &s) in models.iter().zip(&sat) {
            if scope == NumScope::Base || s {
                *counts.entry(&m.projection).or_insert(0usize) += 1;
            }
        }
        let entries = models
            .iter()
            .zip(&sat)
            .map(|(m, &s)| Entry {
                projection: m.projection.clone(),
                satisfies: s,
                num: counts.get(&m.projection).copied().unwrap_or(0),
            })
            .collect();
        Part { choices, entries }
    }

    fn sat(&self) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(|e| e.satisfies)
    }

    fn probability(&self, table: &[Vec<f64>]) -> f64 {
        let mut acc = Kahan::default();
        for e in self.sat() {
            let mut w = 1.0;
            for (&c, &v) in self.choices.iter().zip(&e.projection) {
                w *= table[c][v];
            }
            acc.add(w / e.num as f64);
        }
        acc.value()
    }

    /// Per choice of this part, Σ_{e sat, e_c = v} P(e) / p_{c,v} for each v,
    /// computed with exclusive products so zero entries stay exact.
    fn raw_partials(&self, table: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.choices.len();
        let mut acc: Vec<Vec<Kahan>> = self
            .choices
            .iter()
            .map(|&c| vec![Kahan::default(); table[c].len()])
            .collect();
        let mut prefix = vec![1.0; k + 1];
        let mut suffix = vec![1.0; k + 1];
        for e in self.sat() {
            for i in 0..k {
                prefix[i + 1] = prefix[i] * table[self.choices[i]][e.projection[i]];
            }
            for i in (0..k).rev() {
                suffix[i] = suffix[i + 1] * table[self.choices[i]][e.projection[i]];
            }
            for i in 0..k {
                acc[i][e.projection[i]].add(prefix[i] * suffix[i + 1] / e.num as f64);
            }
        }
        acc.into_iter()
            .map(|row| row.into_iter().map(|k| k.value()).collect())
            .collect()
    }

    fn sat_count(&self) -> u64 {
        self.sat().count() as u64
    }
}

/// A query compiled against a ground program, reusable across tables.
#[derive(Debug, Clone)]
pub struct CompiledQuery {
    parts: Vec<Part>,
    n_choices: usize,
    arities: Vec<usize>,
    names: Vec<String>,
}

impl CompiledQuery {
    /// Enumerate the base program per component and mark the models that
    /// satisfy the query constraints.
    pub fn compile(
        gp: &GroundProgram,
        constraints: &[GroundRule],
        scope: NumScope,
        cfg: &SolverConfig,
    ) -> Result<CompiledQuery, EngineError> {
        let mut parts = Vec::new();
        for comp in components(gp, constraints) {
            let base = Component {
                extra: Vec::new(),
                ..comp.clone()
            };
            let models = CompiledComponent::new(gp, &base, &[])?.enumerate(cfg)?;
            let local: Vec<GroundRule> =
                comp.extra.iter().map(|&i| constraints[i].clone()).collect();
            parts.push(Part::from_models(comp.choices, &models, &local, scope));
        }
        Ok(CompiledQuery {
            parts,
            n_choices: gp.choices.len(),
            arities: gp.choices.iter().map(|c| c.alternatives.len()).collect(),
            names: gp.choices.iter().map(|c| c.instance.to_string()).collect(),
        })
    }

    /// A single-part query over an explicit model set.
    pub fn from_model_set(
        gp: &GroundProgram,
        models: &ModelSet,
        constraints: &[GroundRule],
        scope: NumScope,
    ) -> CompiledQuery {
        CompiledQuery {
            parts: vec![Part::from_models(
                models.choices.clone(),
                &models.models,
                constraints,
                scope,
            )],
            n_choices: gp.choices.len(),
            arities: gp.choices.iter().map(|c| c.alternatives.len()).collect(),
            names: gp.choices.iter().map(|c| c.instance.to_string()).collect(),
        }
    }

    pub fn n_choices(&self) -> usize {
        self.n_choices
    }

    fn check(&self, table: &[Vec<f64>]) -> Result<(), EngineError> {
        for c in 0..self.n_choices {
            let row = table.get(c).ok_or_else(|| EngineError::MissingEntry {
                choice: c,
                instance: self.names[c].clone(),
            })?;
            if row.len() != self.arities[c] {
                return Err(EngineError::WrongArity {
                    choice: c,
                    expected: self.arities[c],
                    found: row.len(),
                });
            }
        }
        Ok(())
    }

    /// P(Q): the summed probability of the models satisfying the query.
    pub fn probability(&self, table: &[Vec<f64>]) -> Result<QueryResult, EngineError> {
        self.check(table)?;
        let mut p = 1.0;
        let mut count: u64 = 1;
        for part in &self.parts {
            p *= part.probability(table);
            count = count.saturating_mul(part.sat_count());
        }
        Ok(QueryResult {
            probability: p,
            satisfying_models: count,
        })
    }

    /// ∂ log P(Q) / ∂p for every entry of the table, together with P(Q).
    pub fn grad_log(
        &self,
        table: &[Vec<f64>],
        form: GradientForm,
    ) -> Result<(QueryResult, Vec<Vec<f64>>), EngineError> {
        let result = self.probability(table)?;
        if result.probability <= 0.0 {
            return Err(EngineError::ZeroProbability);
        }
        let mut grad: Vec<Vec<f64>> = self.arities.iter().map(|&n| vec![0.0; n]).collect();
        for part in &self.parts {
            let pk = part.probability(table);
            let raw = part.raw_partials(table);
            for (&c, row) in part.choices.iter().zip(raw) {
                match form {
                    GradientForm::Raw => {
                        for (g, r) in grad[c].iter_mut().zip(&row) {
                            *g = r / pk;
                        }
                    }
                    GradientForm::Contrastive => {
                        let mut total = Kahan::default();
                        for &r in &row {
                            total.add(r);
                        }
                        for (g, &r) in grad[c].iter_mut().zip(&row) {
                            *g = (r - (total.value() - r)) / pk;
                        }
                    }
                }
            }
        }
        Ok((result, grad))
    }
}

/// P(Q) over an explicit model set (the base program's stable models).
pub fn query_probability(
    gp: &GroundProgram,
    models: &ModelSet,
    constraints: &[GroundRule],
    table: &[Vec<f64>],
) -> Result<QueryResult, EngineError> {
    CompiledQuery::from_model_set(gp, models, constraints, NumScope::Base).probability(table)
}

/// The contrastive gradient of log P(Q) over an explicit model set.
pub fn grad_log_query(
    gp: &GroundProgram,
    models: &ModelSet,
    constraints: &[GroundRule],
    table: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, EngineError> {
    CompiledQuery::from_model_set(gp, models, constraints, NumScope::Base)
        .grad_log(table, GradientForm::Contrastive)
        .map(|(_, g)| g)
}

/// Uniform probability vectors for every choice of `gp`.
pub fn uniform_table(gp: &GroundProgram) -> Vec<Vec<f64>> {
    gp.choices
        .iter()
        .map(|c| vec![1.0 / c.alternatives.len() as f64; c.alternatives.len()])
        .collect()
}
