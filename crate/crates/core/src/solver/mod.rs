//! Stable-model enumeration for stratified ground programs.
//!
//! Every total choice assignment is extended to its least model stratum by
//! stratum, filtered by the constraints and checked against the
//! Gelfond-Lifschitz reduct. Programs whose atoms split into independent
//! components can also be enumerated per component (see [`factor`]); the
//! full model set is then the cartesian product of the component sets.

mod stratify;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::grounder::{AtomId, GroundProgram, GroundRule};
use crate::par::{map_indexed, Execution};
use stratify::{stratify, LocalRule, Stratum};

pub const DEFAULT_CANDIDATE_CAP: u64 = 10_000_000;

const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("negation is not stratified: cycle through {}", cycle.join(" -> "))]
    NonStratified { cycle: Vec<String> },
    #[error("{candidates} choice assignments exceed the cap of {cap}")]
    TooManyCandidates { candidates: u128, cap: u64 },
}

/// Which program the agreement count `Num` is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumScope {
    /// Stable models of the base program; the query only filters.
    #[default]
    Base,
    /// Stable models of the program extended with the query constraints.
    WithQuery,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub candidate_cap: u64,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn sequential() -> Self {
        SolverConfig {
            execution: Execution::Sequential,
            ..Default::default()
        }
    }
}

/// A stable model: its true atoms (sorted) and its projection onto the NPP
/// choices, given as one outcome index per choice of the owning [`ModelSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Model {
    pub atoms: Vec<AtomId>,
    pub projection: Vec<usize>,
}

impl Model {
    pub fn contains(&self, atom: AtomId) -> bool {
        self.atoms.binary_search(&atom).is_ok()
    }

    /// Space-separated atoms in canonical (lexicographic atom) order.
    pub fn render(&self, gp: &GroundProgram) -> String {
        let mut atoms: Vec<_> = self.atoms.iter().map(|&a| gp.atoms.atom(a)).collect();
        atoms.sort();
        atoms
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    /// Indices into `GroundProgram::choices` that `Model::projection` refers to.
    pub choices: Vec<usize>,
    pub models: Vec<Model>,
    /// Num(I|npp): number of models per projection.
    pub agree_count: BTreeMap<Vec<usize>, usize>,
}

impl ModelSet {
    fn new(choices: Vec<usize>, models: Vec<Model>) -> ModelSet {
        let mut agree_count = BTreeMap::new();
        for m in &models {
            *agree_count.entry(m.projection.clone()).or_insert(0) += 1;
        }
        ModelSet {
            choices,
            models,
            agree_count,
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn num(&self, projection: &[usize]) -> usize {
        self.agree_count.get(projection).copied().unwrap_or(0)
    }
}

/// True iff no constraint body holds in the model.
pub fn satisfies(model: &Model, constraints: &[GroundRule]) -> bool {
    constraints.iter().all(|c| {
        !(c.pos.iter().all(|&a| model.contains(a)) && c.neg.iter().all(|&a| !model.contains(a)))
    })
}

/// All stable models of `gp`.
pub fn enumerate_models(gp: &GroundProgram, cfg: &SolverConfig) -> Result<ModelSet, SolveError> {
    enumerate_with(gp, &[], cfg)
}

/// All stable models of `gp` extended with the constraints `extra`.
pub fn enumerate_with(
    gp: &GroundProgram,
    extra: &[GroundRule],
    cfg: &SolverConfig,
) -> Result<ModelSet, SolveError> {
    let whole = Component {
        atoms: (0..gp.atoms.len() as AtomId).collect(),
        choices: (0..gp.choices.len()).collect(),
        rules: (0..gp.rules.len()).collect(),
        extra: (0..extra.len()).collect(),
    };
    let compiled = CompiledComponent::new(gp, &whole, extra)?;
    Ok(ModelSet::new(whole.choices, compiled.enumerate(cfg)?))
}

/// An independent part of a ground program: no rule or choice connects its
/// atoms with atoms outside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub atoms: Vec<AtomId>,
    pub choices: Vec<usize>,
    /// Indices into `GroundProgram::rules`.
    pub rules: Vec<usize>,
    /// Indices into the extra constraints passed to [`components`].
    pub extra: Vec<usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Split `gp` (together with the constraints `extra`) into independent
/// components, ordered by their smallest atom. Rules without atoms (violated
/// empty constraints) form a final component of their own.
pub fn components(gp: &GroundProgram, extra: &[GroundRule]) -> Vec<Component> {
    let n = gp.atoms.len();
    let mut uf = UnionFind((0..n).collect());
    let mut link = |atoms: &mut dyn Iterator<Item = AtomId>| {
        if let Some(first) = atoms.next() {
            for a in atoms {
                uf.union(first as usize, a as usize);
            }
        }
    };
    for c in &gp.choices {
        link(&mut c.alternatives.iter().copied());
    }
    for r in gp.rules.iter().chain(extra) {
        link(&mut r.atoms());
    }
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut comps: Vec<Component> = Vec::new();
    for a in 0..n {
        let root = uf.find(a);
        let ci = *index.entry(root).or_insert_with(|| {
            comps.push(Component {
                atoms: Vec::new(),
                choices: Vec::new(),
                rules: Vec::new(),
                extra: Vec::new(),
            });
            comps.len() - 1
        });
        comps[ci].atoms.push(a as AtomId);
    }
    let mut empty = Component {
        atoms: Vec::new(),
        choices: Vec::new(),
        rules: Vec::new(),
        extra: Vec::new(),
    };
    for (i, c) in gp.choices.iter().enumerate() {
        let ci = index[&uf.find(c.alternatives[0] as usize)];
        comps[ci].choices.push(i);
    }
    for (i, r) in gp.rules.iter().enumerate() {
        match r.atoms().next() {
            Some(a) => comps[index[&uf.find(a as usize)]].rules.push(i),
            None => empty.rules.push(i),
        }
    }
    for (i, r) in extra.iter().enumerate() {
        match r.atoms().next() {
            Some(a) => comps[index[&uf.find(a as usize)]].extra.push(i),
            None => empty.extra.push(i),
        }
    }
    if !empty.rules.is_empty() || !empty.extra.is_empty() {
        comps.push(empty);
    }
    comps
}

/// Stable models of each component of `gp` ∪ `extra`. Projections in each
/// [`ModelSet`] refer to that component's choices only.
pub fn factor(
    gp: &GroundProgram,
    extra: &[GroundRule],
    cfg: &SolverConfig,
) -> Result<Vec<ModelSet>, SolveError> {
    components(gp, extra)
        .into_iter()
        .map(|comp| {
            let compiled = CompiledComponent::new(gp, &comp, extra)?;
            Ok(ModelSet::new(comp.choices, compiled.enumerate(cfg)?))
        })
        .collect()
}

/// A component translated to dense local atom indices, ready for enumeration.
pub struct CompiledComponent {
    global: Vec<AtomId>,
    alternatives: Vec<Vec<u32>>,
    rules: Vec<LocalRule>,
    strata: Vec<Stratum>,
    early: Vec<LocalRule>,
    late: Vec<LocalRule>,
    pos_occ: Vec<Vec<usize>>,
}

impl CompiledComponent {
    pub fn new(
        gp: &GroundProgram,
        comp: &Component,
        extra: &[GroundRule],
    ) -> Result<Self, SolveError> {
        let mut local = vec![u32::MAX; gp.atoms.len()];
        for (i, &a) in comp.atoms.iter().enumerate() {
            local[a as usize] = i as u32;
        }
        let tr = |r: &GroundRule| LocalRule {
            head: r.head.map(|h| local[h as usize]),
            pos: r.pos.iter().map(|&a| local[a as usize]).collect(),
            neg: r.neg.iter().map(|&a| local[a as usize]).collect(),
        };
        let alternatives: Vec<Vec<u32>> = comp
            .choices
            .iter()
            .map(|&c| {
                gp.choices[c]
                    .alternatives
                    .iter()
                    .map(|&a| local[a as usize])
                    .collect()
            })
            .collect();
        let mut is_choice = vec![false; comp.atoms.len()];
        for alts in &alternatives {
            for &a in alts {
                is_choice[a as usize] = true;
            }
        }
        let mut rules = Vec::new();
        let mut early = Vec::new();
        let mut late = Vec::new();
        let all = comp
            .rules
            .iter()
            .map(|&i| &gp.rules[i])
            .chain(comp.extra.iter().map(|&i| &extra[i]));
        for r in all {
            let lr = tr(r);
            if lr.head.is_some() {
                rules.push(lr);
            } else if lr.pos.iter().chain(&lr.neg).all(|&a| is_choice[a as usize]) {
                early.push(lr);
            } else {
                late.push(lr);
            }
        }
        let strata =
            stratify(comp.atoms.len(), &rules).map_err(|cycle| SolveError::NonStratified {
                cycle: cycle
                    .0
                    .iter()
                    .map(|&a| gp.atoms.atom(comp.atoms[a as usize]).to_string())
                    .collect(),
            })?;
        let mut pos_occ = vec![Vec::new(); comp.atoms.len()];
        for (ri, r) in rules.iter().enumerate() {
            for &a in &r.pos {
                pos_occ[a as usize].push(ri);
            }
        }
        Ok(CompiledComponent {
            global: comp.atoms.clone(),
            alternatives,
            rules,
            strata,
            early,
            late,
            pos_occ,
        })
    }

    /// Number of total choice assignments.
    pub fn candidates(&self) -> u128 {
        self.alternatives.iter().map(|a| a.len() as u128).product()
    }

    /// The stable model induced by one choice assignment, if any.
    pub fn evaluate(&self, assign: &[usize]) -> Option<Vec<bool>> {
        let mut m = vec![false; self.global.len()];
        for (alts, &v) in self.alternatives.iter().zip(assign) {
            m[alts[v] as usize] = true;
        }
        if self.early.iter().any(|c| c.body_holds(&m)) {
            return None;
        }
        for s in &self.strata {
            loop {
                let mut changed = false;
                for &ri in &s.rules {
                    let r = &self.rules[ri];
                    let h = r.head.expect("normal rule") as usize;
                    if !m[h] && r.body_holds(&m) {
                        m[h] = true;
                        changed = true;
                    }
                }
                if !s.recursive || !changed {
                    break;
                }
            }
        }
        if self.late.iter().any(|c| c.body_holds(&m)) {
            return None;
        }
        if !self.is_stable(&m, assign) {
            return None;
        }
        Some(m)
    }

    /// `m` equals the least model of the reduct of the program w.r.t. `m`.
    fn is_stable(&self, m: &[bool], assign: &[usize]) -> bool {
        let mut lm = vec![false; m.len()];
        let mut missing: Vec<usize> = self.rules.iter().map(|r| r.pos.len()).collect();
        let active: Vec<bool> = self
            .rules
            .iter()
            .map(|r| r.neg.iter().all(|&a| !m[a as usize]))
            .collect();
        let mut stack: Vec<u32> = self
            .alternatives
            .iter()
            .zip(assign)
            .map(|(alts, &v)| alts[v])
            .collect();
        for (ri, r) in self.rules.iter().enumerate() {
            if active[ri] && r.pos.is_empty() {
                stack.push(r.head.expect("normal rule"));
            }
        }
        while let Some(a) = stack.pop() {
            if lm[a as usize] {
                continue;
            }
            lm[a as usize] = true;
            for &ri in &self.pos_occ[a as usize] {
                missing[ri] -= 1;
                if missing[ri] == 0 && active[ri] {
                    stack.push(self.rules[ri].head.expect("normal rule"));
                }
            }
        }
        lm == m
    }

    /// All stable models in lexicographic order of choice assignments.
    pub fn enumerate(&self, cfg: &SolverConfig) -> Result<Vec<Model>, SolveError> {
        let total = self.candidates();
        if total > cfg.candidate_cap as u128 {
            return Err(SolveError::TooManyCandidates {
                candidates: total,
                cap: cfg.candidate_cap,
            });
        }
        let total = total as u64;
        let n_chunks = total.div_ceil(CHUNK) as usize;
        let chunks = map_indexed(n_chunks, cfg.execution, |ci| {
            let start = ci as u64 * CHUNK;
            let end = (start + CHUNK).min(total);
            let mut assign = self.decode(start);
            let mut out = Vec::new();
            for _ in start..end {
                if let Some(m) = self.evaluate(&assign) {
                    out.push(self.to_model(&m, &assign));
                }
                self.advance(&mut assign);
            }
            out
        });
        Ok(chunks.into_iter().flatten().collect())
    }

    fn decode(&self, mut idx: u64) -> Vec<usize> {
        let mut assign = vec![0; self.alternatives.len()];
        for (i, alts) in self.alternatives.iter().enumerate().rev() {
            let n = alts.len() as u64;
            assign[i] = (idx % n) as usize;
            idx /= n;
        }
        assign
    }

    fn advance(&self, assign: &mut [usize]) {
        for i in (0..assign.len()).rev() {
            assign[i] += 1;
            if assign[i] < self.alternatives[i].len() {
                return;
            }
            assign[i] = 0;
        }
    }

    fn to_model(&self, m: &[bool], assign: &[usize]) -> Model {
        Model {
            atoms: m
                .iter()
                .enumerate()
                .filter(|(_, &t)| t)
                .map(|(i, _)| self.global[i])
                .collect(),
            projection: assign.to_vec(),
        }
    }
}
