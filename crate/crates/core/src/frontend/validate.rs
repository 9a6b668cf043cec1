use std::collections::{BTreeSet, HashMap};

use super::ast::*;
use super::error::{ParseError, Pos};

/// Variables of a rule that the safety condition leaves unbound.
///
/// A variable is bound if it occurs as a plain argument (or outcome) of a
/// positive atom, or if it is the lone side of an `=` whose other side only
/// uses bound variables. Everything else that mentions a variable (head,
/// negated atoms, comparisons, arithmetic inside atoms) must be bound.
pub fn unsafe_vars(head_vars: &BTreeSet<&str>, body: &[Literal]) -> Vec<String> {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    for lit in body {
        if let Literal::Atom {
            atom,
            negated: false,
        } = lit
        {
            for t in atom.args.iter().chain(atom.outcome.iter()) {
                if let Term::Var(v) = t {
                    bound.insert(v);
                }
            }
        }
    }
    loop {
        let mut changed = false;
        for lit in body {
            if let Literal::Compare {
                op: CmpOp::Eq,
                lhs,
                rhs,
            } = lit
            {
                for (side, other) in [(lhs, rhs), (rhs, lhs)] {
                    if let Term::Var(v) = side {
                        if !bound.contains(v.as_str()) {
                            let mut needed = BTreeSet::new();
                            other.collect_vars(&mut needed);
                            if needed.iter().all(|n| bound.contains(n)) {
                                bound.insert(v);
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut required: BTreeSet<&str> = head_vars.clone();
    for lit in body {
        match lit {
            Literal::Atom { atom, negated } => {
                if *negated {
                    atom.collect_vars(&mut required);
                } else {
                    for t in atom.args.iter().chain(atom.outcome.iter()) {
                        if let Term::BinOp { .. } = t {
                            t.collect_vars(&mut required);
                        }
                    }
                }
            }
            Literal::Compare { lhs, rhs, .. } => {
                lhs.collect_vars(&mut required);
                rhs.collect_vars(&mut required);
            }
        }
    }
    required.difference(&bound).map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PredKind {
    Plain,
    Npp,
}

struct Signatures {
    arity: HashMap<String, (usize, PredKind)>,
}

impl Signatures {
    fn check(&mut self, atom: &Atom, kind: PredKind, pos: Pos) -> Result<(), ParseError> {
        match self.arity.get(&atom.predicate) {
            Some(&(expected, k)) => {
                if expected != atom.arity() {
                    return Err(ParseError::ArityMismatch {
                        pos,
                        predicate: atom.predicate.clone(),
                        expected,
                        found: atom.arity(),
                    });
                }
                if k != kind {
                    return Err(ParseError::InvalidNpp {
                        pos,
                        reason: if k == PredKind::Npp {
                            format!(
                                "NPP predicate `{}` must be used as an outcome literal `{}(..)=v`",
                                atom.predicate, atom.predicate
                            )
                        } else {
                            format!(
                                "`{}` is not an NPP and cannot carry an outcome",
                                atom.predicate
                            )
                        },
                    });
                }
            }
            None => {
                self.arity
                    .insert(atom.predicate.clone(), (atom.arity(), kind));
            }
        }
        Ok(())
    }
}

fn body_atoms(body: &[Literal]) -> impl Iterator<Item = &Atom> {
    body.iter().filter_map(|l| match l {
        Literal::Atom { atom, .. } => Some(atom),
        _ => None,
    })
}

pub(crate) fn validate_program(
    rules: &[(Rule, Pos)],
    npps: &[(NppDecl, Pos)],
) -> Result<(), ParseError> {
    let mut sigs = Signatures {
        arity: HashMap::new(),
    };
    let mut seen: HashMap<(&str, &[Term]), ()> = HashMap::new();
    let mut outcome_sets: HashMap<&str, &[Term]> = HashMap::new();

    for (decl, pos) in npps {
        let pos = *pos;
        if decl.name == "npp" || decl.name == "not" {
            return Err(ParseError::InvalidNpp {
                pos,
                reason: format!("`{}` is reserved", decl.name),
            });
        }
        if decl.outcomes.len() < 2 {
            return Err(ParseError::InvalidNpp {
                pos,
                reason: "an NPP needs at least two outcomes".into(),
            });
        }
        let mut distinct = BTreeSet::new();
        for o in &decl.outcomes {
            if !matches!(o, Term::Const(_) | Term::Int(_)) {
                return Err(ParseError::InvalidNpp {
                    pos,
                    reason: "outcomes must be constants".into(),
                });
            }
            if !distinct.insert(o) {
                return Err(ParseError::InvalidNpp {
                    pos,
                    reason: format!("duplicate outcome `{o}`"),
                });
            }
        }
        if seen.insert((&decl.name, &decl.args), ()).is_some() {
            return Err(ParseError::DuplicateNpp {
                pos,
                name: decl.name.clone(),
            });
        }
        if let Some(prev) = outcome_sets.insert(&decl.name, &decl.outcomes) {
            if prev != decl.outcomes.as_slice() {
                return Err(ParseError::InvalidNpp {
                    pos,
                    reason: format!("declarations of `{}` disagree on outcomes", decl.name),
                });
            }
        }
        let head = Atom::new(&decl.name, decl.args.clone());
        sigs.check(&head, PredKind::Npp, pos)?;
        let mut head_vars = BTreeSet::new();
        head.collect_vars(&mut head_vars);
        let bad = unsafe_vars(&head_vars, &decl.body);
        if !bad.is_empty() {
            return Err(ParseError::Unsafe { pos, vars: bad });
        }
    }
    let npp_names: BTreeSet<&str> = npps.iter().map(|(d, _)| d.name.as_str()).collect();

    for (rule, pos) in rules {
        let pos = *pos;
        if let Some(head) = &rule.head {
            if head.outcome.is_some() || npp_names.contains(head.predicate.as_str()) {
                return Err(ParseError::NppInHead {
                    pos,
                    atom: head.to_string(),
                });
            }
            if head.predicate == "npp" {
                return Err(ParseError::InvalidNpp {
                    pos,
                    reason: "`npp` is reserved".into(),
                });
            }
            sigs.check(head, PredKind::Plain, pos)?;
        }
    }
    for (rule, pos) in rules {
        check_body(&mut sigs, &npp_names, &rule.body, *pos)?;
        let mut head_vars = BTreeSet::new();
        if let Some(h) = &rule.head {
            h.collect_vars(&mut head_vars);
        }
        let bad = unsafe_vars(&head_vars, &rule.body);
        if !bad.is_empty() {
            return Err(ParseError::Unsafe {
                pos: *pos,
                vars: bad,
            });
        }
    }
    for (decl, pos) in npps {
        check_body(&mut sigs, &npp_names, &decl.body, *pos)?;
    }
    Ok(())
}

fn check_body(
    sigs: &mut Signatures,
    npp_names: &BTreeSet<&str>,
    body: &[Literal],
    pos: Pos,
) -> Result<(), ParseError> {
    for atom in body_atoms(body) {
        let kind = if atom.outcome.is_some() || npp_names.contains(atom.predicate.as_str()) {
            PredKind::Npp
        } else {
            PredKind::Plain
        };
        if kind == PredKind::Npp && !npp_names.contains(atom.predicate.as_str()) {
            return Err(ParseError::InvalidNpp {
                pos,
                reason: format!("`{}` is not a declared NPP", atom.predicate),
            });
        }
        if kind == PredKind::Npp && atom.outcome.is_none() {
            return Err(ParseError::InvalidNpp {
                pos,
                reason: format!(
                    "NPP predicate `{}` must be used as an outcome literal",
                    atom.predicate
                ),
            });
        }
        sigs.check(atom, kind, pos)?;
    }
    Ok(())
}

pub(crate) fn validate_query(
    constraints: &[(Rule, Pos)],
    flavored: &[(FlavoredAtom, Pos)],
    program: &Program,
) -> Result<(), ParseError> {
    for (rule, pos) in constraints {
        let bad = unsafe_vars(&BTreeSet::new(), &rule.body);
        if !bad.is_empty() {
            return Err(ParseError::Unsafe {
                pos: *pos,
                vars: bad,
            });
        }
        for atom in body_atoms(&rule.body) {
            if atom.outcome.is_some() && program.npp(&atom.predicate).is_none() {
                return Err(ParseError::UndeclaredNpp {
                    pos: *pos,
                    name: atom.predicate.clone(),
                });
            }
        }
    }
    for (fa, pos) in flavored {
        let decl = program
            .npp(&fa.npp)
            .ok_or_else(|| ParseError::UndeclaredNpp {
                pos: *pos,
                name: fa.npp.clone(),
            })?;
        let pattern: String = fa.args.iter().map(|(m, _)| m.symbol()).collect();
        let supported = match (fa.flavor(), decl.flavor) {
            (None, _) => false,
            (Some(q), Some(f)) => q.supported_by(f),
            (Some(_), None) => true,
        };
        if !supported {
            return Err(ParseError::UnsupportedMarkers {
                pos: *pos,
                name: fa.npp.clone(),
                pattern,
            });
        }
    }
    Ok(())
}
