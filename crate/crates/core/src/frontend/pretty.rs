//! Canonical text form. Parsing the output yields the same AST.

use std::fmt::{self, Display, Formatter};

use super::ast::*;

fn write_operand(f: &mut Formatter<'_>, t: &Term, parent: ArithOp, right: bool) -> fmt::Result {
    match t {
        Term::BinOp { op, .. }
            if op.precedence() < parent.precedence()
                || (right && op.precedence() == parent.precedence()) =>
        {
            write!(f, "({t})")
        }
        _ => write!(f, "{t}"),
    }
}

impl Display for Term {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(c) => f.write_str(c),
            Term::Int(i) => write!(f, "{i}"),
            Term::Var(v) => f.write_str(v),
            Term::BinOp { op, lhs, rhs } => {
                write_operand(f, lhs, *op, false)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, rhs, *op, true)
            }
        }
    }
}

fn write_args(f: &mut Formatter<'_>, args: &[Term]) -> fmt::Result {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{a}")?;
    }
    Ok(())
}

impl Display for Atom {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            write_args(f, &self.args)?;
            f.write_str(")")?;
        }
        if let Some(o) = &self.outcome {
            write!(f, "={o}")?;
        }
        Ok(())
    }
}

impl Display for Literal {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Atom { atom, negated } => {
                if *negated {
                    f.write_str("not ")?;
                }
                write!(f, "{atom}")
            }
            Literal::Compare { op, lhs, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
        }
    }
}

fn write_body(f: &mut Formatter<'_>, body: &[Literal]) -> fmt::Result {
    for (i, l) in body.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{l}")?;
    }
    Ok(())
}

impl Display for Rule {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match &self.head {
            Some(h) if self.body.is_empty() => write!(f, "{h}."),
            Some(h) => {
                write!(f, "{h} :- ")?;
                write_body(f, &self.body)?;
                f.write_str(".")
            }
            None => {
                f.write_str(":- ")?;
                write_body(f, &self.body)?;
                f.write_str(".")
            }
        }
    }
}

impl Display for NppDecl {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "npp({}(", self.name)?;
        write_args(f, &self.args)?;
        f.write_str("), [")?;
        write_args(f, &self.outcomes)?;
        f.write_str("])")?;
        match (self.flavor, self.binding == self.name) {
            (Some(fl), true) => write!(f, " @{}", fl.keyword())?,
            (Some(fl), false) => write!(f, " @{}({})", fl.keyword(), self.binding)?,
            (None, false) => write!(f, " @({})", self.binding)?,
            (None, true) => {}
        }
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            write_body(f, &self.body)?;
        }
        f.write_str(".")
    }
}

impl Display for Program {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for d in &self.npps {
            writeln!(f, "{d}")?;
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

impl Display for FlavoredAtom {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.npp)?;
        for (i, (m, t)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}{t}", m.symbol())?;
        }
        f.write_str(")")
    }
}

impl Display for Query {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for fa in &self.flavored {
            writeln!(f, "{fa}.")?;
        }
        for c in &self.constraints {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}
