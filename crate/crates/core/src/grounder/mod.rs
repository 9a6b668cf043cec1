//! Instantiation of programs over their Herbrand base.
//!
//! NPP declarations become cardinality-one choice rules, one per ground
//! instance whose body holds. Variable domains come only from positive body
//! atoms and NPP outcome lists, so grounding is finite for safe programs.

mod program;

pub use program::*;

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::frontend::{ArithOp, Atom, CmpOp, Literal, NppDecl, Program, Rule, Term};

/// Upper bound on the number of ground atoms before grounding is declared unbounded.
pub const MAX_GROUND_ATOMS: usize = 2_000_000;

/// Upper bound on join steps (candidate unifications) over the whole grounding.
pub const MAX_JOIN_STEPS: u64 = 20_000_000;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GroundError {
    #[error("unbounded grounding in `{rule}`: cannot bind {vars:?}")]
    Unbounded { rule: String, vars: Vec<String> },
    #[error("arithmetic on non-integer value in `{rule}`: {expr}")]
    NonInteger { rule: String, expr: String },
    #[error("integer overflow while evaluating `{rule}`")]
    Overflow { rule: String },
    #[error("grounding exceeded {limit} atoms")]
    TooLarge { limit: usize },
    #[error("grounding exceeded {limit} join steps; the program is likely unbounded")]
    TooManySteps { limit: u64 },
}

type Env = Vec<(String, Value)>;

fn lookup<'a>(env: &'a Env, v: &str) -> Option<&'a Value> {
    env.iter().rev().find(|(n, _)| n == v).map(|(_, val)| val)
}

struct Ctx<'a> {
    rule_text: &'a dyn Fn() -> String,
    steps: &'a std::cell::Cell<u64>,
}

impl Ctx<'_> {
    fn step(&self) -> Result<(), GroundError> {
        let n = self.steps.get() + 1;
        self.steps.set(n);
        if n > MAX_JOIN_STEPS {
            return Err(GroundError::TooManySteps {
                limit: MAX_JOIN_STEPS,
            });
        }
        Ok(())
    }
}

fn eval(t: &Term, env: &Env, ctx: &Ctx<'_>) -> Result<Option<Value>, GroundError> {
    Ok(match t {
        Term::Const(c) => Some(Value::Sym(c.clone())),
        Term::Int(i) => Some(Value::Int(*i)),
        Term::Var(v) => lookup(env, v).cloned(),
        Term::BinOp { op, lhs, rhs } => {
            let (Some(l), Some(r)) = (eval(lhs, env, ctx)?, eval(rhs, env, ctx)?) else {
                return Ok(None);
            };
            let (Value::Int(a), Value::Int(b)) = (&l, &r) else {
                return Err(GroundError::NonInteger {
                    rule: (ctx.rule_text)(),
                    expr: format!("{l} {} {r}", op.symbol()),
                });
            };
            let res = match op {
                ArithOp::Add => a.checked_add(*b),
                ArithOp::Sub => a.checked_sub(*b),
                ArithOp::Mul => a.checked_mul(*b),
            };
            Some(Value::Int(res.ok_or_else(|| GroundError::Overflow {
                rule: (ctx.rule_text)(),
            })?))
        }
    })
}

fn term_bound(t: &Term, env: &Env) -> bool {
    match t {
        Term::Var(v) => lookup(env, v).is_some(),
        Term::BinOp { lhs, rhs, .. } => term_bound(lhs, env) && term_bound(rhs, env),
        _ => true,
    }
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> bool {
    match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Lt => a < b,
        CmpOp::Le => a <= b,
        CmpOp::Gt => a > b,
        CmpOp::Ge => a >= b,
    }
}

type PredKey = (String, usize, bool);

fn key_of_atom(a: &Atom) -> PredKey {
    (a.predicate.clone(), a.args.len(), a.outcome.is_some())
}

fn key_of_ground(a: &GroundAtom) -> PredKey {
    (a.predicate.clone(), a.args.len(), a.outcome.is_some())
}

/// The set of atoms that may become true, indexed by predicate signature.
#[derive(Default)]
struct Domain {
    by_pred: HashMap<PredKey, Vec<GroundAtom>>,
    all: HashSet<GroundAtom>,
}

impl Domain {
    fn insert(&mut self, a: GroundAtom) -> Result<bool, GroundError> {
        if self.all.contains(&a) {
            return Ok(false);
        }
        if self.all.len() >= MAX_GROUND_ATOMS {
            return Err(GroundError::TooLarge {
                limit: MAX_GROUND_ATOMS,
            });
        }
        self.by_pred
            .entry(key_of_ground(&a))
            .or_default()
            .push(a.clone());
        self.all.insert(a);
        Ok(true)
    }

    fn contains(&self, a: &GroundAtom) -> bool {
        self.all.contains(a)
    }
}

fn unify(
    pattern: &Atom,
    ground: &GroundAtom,
    env: &mut Env,
    ctx: &Ctx<'_>,
) -> Result<bool, GroundError> {
    let terms = pattern.args.iter().chain(pattern.outcome.iter());
    let values = ground.args.iter().chain(ground.outcome.iter());
    for (t, v) in terms.zip(values) {
        match t {
            Term::Var(name) => match lookup(env, name) {
                Some(b) if b != v => return Ok(false),
                Some(_) => {}
                None => env.push((name.clone(), v.clone())),
            },
            other => match eval(other, env, ctx)? {
                Some(val) if &val == v => {}
                _ => return Ok(false),
            },
        }
    }
    Ok(true)
}

fn ground_atom(a: &Atom, env: &Env, ctx: &Ctx<'_>) -> Result<GroundAtom, GroundError> {
    let mut args = Vec::with_capacity(a.args.len());
    for t in &a.args {
        args.push(eval(t, env, ctx)?.ok_or_else(|| unbound(a, env, ctx))?);
    }
    let outcome = match &a.outcome {
        Some(t) => Some(eval(t, env, ctx)?.ok_or_else(|| unbound(a, env, ctx))?),
        None => None,
    };
    Ok(GroundAtom {
        predicate: a.predicate.clone(),
        args,
        outcome,
    })
}

fn unbound(a: &Atom, env: &Env, ctx: &Ctx<'_>) -> GroundError {
    let mut vars = std::collections::BTreeSet::new();
    a.collect_vars(&mut vars);
    GroundError::Unbounded {
        rule: (ctx.rule_text)(),
        vars: vars
            .into_iter()
            .filter(|v| lookup(env, v).is_none())
            .map(str::to_string)
            .collect(),
    }
}

/// Enumerate every binding of `body` over `domain`, in a fixed order.
///
/// Comparisons are applied as soon as they are bound, `V = expr` binds `V`,
/// positive atoms are joined left to right, and negated atoms are only
/// checked for boundness (they are kept in the ground rule).
fn instantiate(
    body: &[Literal],
    domain: &Domain,
    ctx: &Ctx<'_>,
    visit: &mut dyn FnMut(&Env) -> Result<(), GroundError>,
) -> Result<(), GroundError> {
    let mut done = vec![false; body.len()];
    let mut env = Env::new();
    search(body, domain, ctx, &mut done, &mut env, visit)
}

fn search(
    body: &[Literal],
    domain: &Domain,
    ctx: &Ctx<'_>,
    done: &mut [bool],
    env: &mut Env,
    visit: &mut dyn FnMut(&Env) -> Result<(), GroundError>,
) -> Result<(), GroundError> {
    // comparisons and assignments first
    for i in 0..body.len() {
        if done[i] {
            continue;
        }
        if let Literal::Compare { op, lhs, rhs } = &body[i] {
            let lb = term_bound(lhs, env);
            let rb = term_bound(rhs, env);
            if lb && rb {
                let l = eval(lhs, env, ctx)?.expect("bound");
                let r = eval(rhs, env, ctx)?.expect("bound");
                if !compare(*op, &l, &r) {
                    return Ok(());
                }
                done[i] = true;
                let res = search(body, domain, ctx, done, env, visit);
                done[i] = false;
                return res;
            }
            if *op == CmpOp::Eq {
                let assign = match (lhs, rhs) {
                    (Term::Var(v), other) if !lb && rb => Some((v, other)),
                    (other, Term::Var(v)) if !rb && lb => Some((v, other)),
                    _ => None,
                };
                if let Some((v, other)) = assign {
                    let val = eval(other, env, ctx)?.expect("bound");
                    env.push((v.clone(), val));
                    done[i] = true;
                    let res = search(body, domain, ctx, done, env, visit);
                    done[i] = false;
                    env.pop();
                    return res;
                }
            }
        }
    }
    // next joinable positive atom
    for i in 0..body.len() {
        if done[i] {
            continue;
        }
        if let Literal::Atom {
            atom,
            negated: false,
        } = &body[i]
        {
            let joinable = atom
                .args
                .iter()
                .chain(atom.outcome.iter())
                .all(|t| matches!(t, Term::Var(_)) || term_bound(t, env));
            if !joinable {
                continue;
            }
            done[i] = true;
            if let Some(cands) = domain.by_pred.get(&key_of_atom(atom)) {
                for cand in cands {
                    ctx.step()?;
                    let mark = env.len();
                    if unify(atom, cand, env, ctx)? {
                        search(body, domain, ctx, done, env, visit)?;
                    }
                    env.truncate(mark);
                }
            }
            done[i] = false;
            return Ok(());
        }
    }
    // all remaining literals must be bound negations
    for (i, lit) in body.iter().enumerate() {
        if done[i] {
            continue;
        }
        match lit {
            Literal::Atom {
                atom,
                negated: true,
            } => {
                ground_atom(atom, env, ctx)?;
            }
            Literal::Atom { atom, .. } => return Err(unbound(atom, env, ctx)),
            Literal::Compare { lhs, rhs, .. } => {
                let mut vars = std::collections::BTreeSet::new();
                lhs.collect_vars(&mut vars);
                rhs.collect_vars(&mut vars);
                return Err(GroundError::Unbounded {
                    rule: (ctx.rule_text)(),
                    vars: vars
                        .into_iter()
                        .filter(|v| lookup(env, v).is_none())
                        .map(str::to_string)
                        .collect(),
                });
            }
        }
    }
    visit(env)
}

fn ground_body(
    body: &[Literal],
    env: &Env,
    domain: &Domain,
    table: &mut AtomTable,
    ctx: &Ctx<'_>,
) -> Result<(Vec<AtomId>, Vec<AtomId>), GroundError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for lit in body {
        if let Literal::Atom { atom, negated } = lit {
            let g = ground_atom(atom, env, ctx)?;
            if *negated {
                // an atom that can never be derived makes `not a` trivially true
                if domain.contains(&g) {
                    neg.push(table.intern(g));
                }
            } else {
                pos.push(table.intern(g));
            }
        }
    }
    Ok((pos, neg))
}

fn npp_instance(decl: &NppDecl, env: &Env, ctx: &Ctx<'_>) -> Result<InstanceKey, GroundError> {
    let head = Atom::new(&decl.name, decl.args.clone());
    let g = ground_atom(&head, env, ctx)?;
    Ok(InstanceKey {
        npp: decl.name.clone(),
        args: g.args,
    })
}

fn outcome_values(decl: &NppDecl) -> Vec<Value> {
    decl.outcomes
        .iter()
        .map(|o| match o {
            Term::Int(i) => Value::Int(*i),
            Term::Const(c) => Value::Sym(c.clone()),
            other => Value::Sym(other.to_string()),
        })
        .collect()
}

fn outcome_atoms(key: &InstanceKey, outcomes: &[Value]) -> Vec<GroundAtom> {
    outcomes
        .iter()
        .map(|v| GroundAtom {
            predicate: key.npp.clone(),
            args: key.args.clone(),
            outcome: Some(v.clone()),
        })
        .collect()
}

/// Ground a validated program.
pub fn ground(program: &Program) -> Result<GroundProgram, GroundError> {
    let steps = std::cell::Cell::new(0);
    let mut domain = Domain::default();
    let mut instances: HashSet<InstanceKey> = HashSet::new();

    // possible-atom fixpoint; negation is ignored, which over-approximates
    loop {
        let mut changed = false;
        for decl in &program.npps {
            let text = || decl.to_string();
            let ctx = Ctx {
                rule_text: &text,
                steps: &steps,
            };
            let outcomes = outcome_values(decl);
            let mut found = Vec::new();
            instantiate(&decl.body, &domain, &ctx, &mut |env| {
                found.push(npp_instance(decl, env, &ctx)?);
                Ok(())
            })?;
            for key in found {
                if instances.insert(key.clone()) {
                    for a in outcome_atoms(&key, &outcomes) {
                        domain.insert(a)?;
                    }
                    changed = true;
                }
            }
        }
        for rule in &program.rules {
            let Some(head) = &rule.head else { continue };
            let text = || rule.to_string();
            let ctx = Ctx {
                rule_text: &text,
                steps: &steps,
            };
            let mut heads = Vec::new();
            instantiate(&rule.body, &domain, &ctx, &mut |env| {
                heads.push(ground_atom(head, env, &ctx)?);
                Ok(())
            })?;
            for h in heads {
                changed |= domain.insert(h)?;
            }
        }
        if !changed {
            break;
        }
    }

    // emission pass: NPP declarations, then rules, each in source order
    let mut table = AtomTable::new();
    let mut choices = Vec::new();
    let mut emitted: HashSet<InstanceKey> = HashSet::new();
    for decl in &program.npps {
        let text = || decl.to_string();
        let ctx = Ctx {
            rule_text: &text,
            steps: &steps,
        };
        let outcomes = outcome_values(decl);
        let mut keys = Vec::new();
        instantiate(&decl.body, &domain, &ctx, &mut |env| {
            keys.push(npp_instance(decl, env, &ctx)?);
            Ok(())
        })?;
        for key in keys {
            if !emitted.insert(key.clone()) {
                continue;
            }
            let alternatives = outcome_atoms(&key, &outcomes)
                .into_iter()
                .map(|a| table.intern(a))
                .collect();
            choices.push(ChoiceRule {
                alternatives,
                instance: key,
            });
        }
    }
    let mut rules = Vec::new();
    let mut seen: HashSet<GroundRule> = HashSet::new();
    for rule in &program.rules {
        let text = || rule.to_string();
        let ctx = Ctx {
            rule_text: &text,
            steps: &steps,
        };
        let mut out = Vec::new();
        instantiate(&rule.body, &domain, &ctx, &mut |env| {
            let head = match &rule.head {
                Some(h) => Some(table.intern(ground_atom(h, env, &ctx)?)),
                None => None,
            };
            let (pos, neg) = ground_body(&rule.body, env, &domain, &mut table, &ctx)?;
            out.push(GroundRule { head, pos, neg });
            Ok(())
        })?;
        for r in out {
            if seen.insert(r.clone()) {
                rules.push(r);
            }
        }
    }
    Ok(GroundProgram::from_parts(table, rules, choices))
}

/// Ground query constraints against the atoms of an existing ground program.
///
/// Atoms outside the Herbrand base are false: a positive occurrence drops the
/// constraint instance, a negated occurrence drops the literal.
pub fn ground_constraints(
    gp: &GroundProgram,
    constraints: &[Rule],
) -> Result<Vec<GroundRule>, GroundError> {
    let steps = std::cell::Cell::new(0);
    let mut domain = Domain::default();
    for (_, a) in gp.atoms.iter() {
        domain.insert(a.clone())?;
    }
    let mut out = Vec::new();
    for rule in constraints {
        let text = || rule.to_string();
        let ctx = Ctx {
            rule_text: &text,
            steps: &steps,
        };
        instantiate(&rule.body, &domain, &ctx, &mut |env| {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for lit in &rule.body {
                if let Literal::Atom { atom, negated } = lit {
                    let g = ground_atom(atom, env, &ctx)?;
                    if let Some(id) = gp.atoms.get(&g) {
                        if *negated {
                            neg.push(id);
                        } else {
                            pos.push(id);
                        }
                    }
                }
            }
            out.push(GroundRule {
                head: None,
                pos,
                neg,
            });
            Ok(())
        })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    const MNIST: &str = "img(i1). img(i2).\n\
        npp(digit(1,X),[0,1,2,3,4,5,6,7,8,9]) :- img(X).\n\
        addition(A,B,N) :- digit(1,A)=D1, digit(1,B)=D2, N = D1 + D2.";

    #[test]
    fn npp_declaration_expands_per_instance() {
        let gp = ground(&parse_program(MNIST).unwrap()).unwrap();
        assert_eq!(gp.choices.len(), 2);
        assert_eq!(gp.r_npp().len(), 20);
        for c in &gp.choices {
            assert_eq!(c.alternatives.len(), 10);
            for (i, &a) in c.alternatives.iter().enumerate() {
                assert_eq!(gp.atoms.atom(a).outcome, Some(Value::Int(i as i64)));
                assert_eq!(gp.choice_of(a).unwrap().1, i);
            }
        }
        assert_eq!(gp.choices[0].instance.to_string(), "digit(1,i1)");
    }

    #[test]
    fn unsatisfiable_npp_body_emits_nothing() {
        let gp = ground(&parse_program("npp(d(X),[a,b]) :- s(X).").unwrap()).unwrap();
        assert!(gp.choices.is_empty());
        assert_eq!(gp.stats(), HerbrandStats::default());
    }

    #[test]
    fn empty_program_stats() {
        let gp = ground(&parse_program("").unwrap()).unwrap();
        assert_eq!(
            herbrand_stats(&gp),
            HerbrandStats {
                atoms: 0,
                rules: 0,
                choices: 0
            }
        );
    }

    #[test]
    fn arithmetic_filters_and_binds() {
        let gp = ground(
            &parse_program(
                "n(1). n(2). n(3).\nbig(X) :- n(X), X > 1.\nsucc(Y) :- n(X), Y = X + 1.",
            )
            .unwrap(),
        )
        .unwrap();
        let heads: Vec<String> = gp
            .rules
            .iter()
            .filter(|r| !r.pos.is_empty())
            .map(|r| gp.atoms.atom(r.head.unwrap()).to_string())
            .collect();
        assert_eq!(
            heads,
            vec!["big(2)", "big(3)", "succ(2)", "succ(3)", "succ(4)"]
        );
    }

    #[test]
    fn arithmetic_on_symbols_is_an_error() {
        let err = ground(&parse_program("n(a).\np(Y) :- n(X), Y = X + 1.").unwrap()).unwrap_err();
        assert!(matches!(err, GroundError::NonInteger { .. }), "{err}");
    }

    #[test]
    fn recursion_through_arithmetic_is_capped() {
        let err = ground(&parse_program("n(0).\nn(Y) :- n(X), Y = X + 1.").unwrap()).unwrap_err();
        assert!(matches!(
            err,
            GroundError::TooLarge { .. } | GroundError::TooManySteps { .. }
        ));
    }

    #[test]
    fn negation_of_underivable_atom_is_dropped() {
        let gp = ground(&parse_program("b.\na :- not c.").unwrap()).unwrap();
        assert_eq!(gp.dump(), "b.\na.\n");
    }

    #[test]
    fn grounding_is_deterministic() {
        let p = parse_program(MNIST).unwrap();
        let a = ground(&p).unwrap();
        let b = ground(&p).unwrap();
        assert_eq!(a.dump(), b.dump());
        let ids_a: Vec<String> = a.atoms.iter().map(|(_, x)| x.to_string()).collect();
        let ids_b: Vec<String> = b.atoms.iter().map(|(_, x)| x.to_string()).collect();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn dump_uses_choice_notation() {
        let gp = ground(&parse_program("s(x).\nnpp(c(X),[a,b]) :- s(X).").unwrap()).unwrap();
        assert_eq!(gp.dump(), "1{c(x)=a;c(x)=b}1.\ns(x).\n");
    }

    #[test]
    fn query_constraints_against_base() {
        let gp = ground(&parse_program(MNIST).unwrap()).unwrap();
        let q = crate::frontend::parse_query(
            ":- not addition(i1,i2,4).\n:- addition(i1,i2,99).\n:- not addition(i1,i2,77).",
            &parse_program(MNIST).unwrap(),
        )
        .unwrap();
        let cs = ground_constraints(&gp, &q.constraints).unwrap();
        // a positive atom outside the base never holds, so the second constraint vanishes
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].neg.len(), 1);
        // and a negated one always holds, leaving an empty (violated) body
        assert!(cs[1].pos.is_empty() && cs[1].neg.is_empty());
    }
}
