//! Abstract syntax for programs and queries.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    /// Lowercase symbolic constant.
    Const(String),
    Int(i64),
    /// Uppercase (or `_`-prefixed) variable.
    Var(String),
    BinOp {
        op: ArithOp,
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
}

impl Term {
    pub fn constant(s: &str) -> Term {
        Term::Const(s.to_string())
    }

    pub fn var(s: &str) -> Term {
        Term::Var(s.to_string())
    }

    pub fn binop(op: ArithOp, lhs: Term, rhs: Term) -> Term {
        Term::BinOp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::BinOp { lhs, rhs, .. } => lhs.is_ground() && rhs.is_ground(),
            _ => true,
        }
    }

    pub fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Term::Var(v) => {
                out.insert(v.as_str());
            }
            Term::BinOp { lhs, rhs, .. } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
    /// Present iff the atom is an NPP outcome literal `h(x)=v`.
    pub outcome: Option<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Atom {
        Atom {
            predicate: predicate.to_string(),
            args,
            outcome: None,
        }
    }

    pub fn with_outcome(predicate: &str, args: Vec<Term>, outcome: Term) -> Atom {
        Atom {
            predicate: predicate.to_string(),
            args,
            outcome: Some(outcome),
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        for t in &self.args {
            t.collect_vars(out);
        }
        if let Some(o) = &self.outcome {
            o.collect_vars(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Atom { atom: Atom, negated: bool },
    Compare { op: CmpOp, lhs: Term, rhs: Term },
}

impl Literal {
    pub fn pos(atom: Atom) -> Literal {
        Literal::Atom {
            atom,
            negated: false,
        }
    }

    pub fn neg(atom: Atom) -> Literal {
        Literal::Atom {
            atom,
            negated: true,
        }
    }

    pub fn cmp(op: CmpOp, lhs: Term, rhs: Term) -> Literal {
        Literal::Compare { op, lhs, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    /// `None` for constraints.
    pub head: Option<Atom>,
    pub body: Vec<Literal>,
}

impl Rule {
    pub fn is_constraint(&self) -> bool {
        self.head.is_none()
    }

    pub fn is_fact(&self) -> bool {
        self.head.is_some() && self.body.is_empty()
    }
}

/// Which kind of model backs an NPP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NppFlavor {
    /// Feed-forward network with a softmax head: conditional queries only.
    Nn,
    /// Probabilistic circuit over the raw input.
    Pc,
    /// Encoder network followed by a circuit over its latent output.
    NnPc,
}

impl NppFlavor {
    pub fn keyword(self) -> &'static str {
        match self {
            NppFlavor::Nn => "nn",
            NppFlavor::Pc => "pc",
            NppFlavor::NnPc => "nn_pc",
        }
    }

    pub fn from_keyword(s: &str) -> Option<NppFlavor> {
        match s {
            "nn" => Some(NppFlavor::Nn),
            "pc" => Some(NppFlavor::Pc),
            "nn_pc" => Some(NppFlavor::NnPc),
            _ => None,
        }
    }

    pub fn is_generative(self) -> bool {
        !matches!(self, NppFlavor::Nn)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NppDecl {
    pub name: String,
    /// Instance terms of `h(x)`; the last one names the bound data term.
    pub args: Vec<Term>,
    pub outcomes: Vec<Term>,
    pub body: Vec<Literal>,
    /// Name of the registered implementation. Defaults to `name`.
    pub binding: String,
    pub flavor: Option<NppFlavor>,
}

impl NppDecl {
    pub fn arity(&self) -> usize {
        self.args.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Program {
    pub rules: Vec<Rule>,
    pub npps: Vec<NppDecl>,
}

impl Program {
    pub fn npp(&self, name: &str) -> Option<&NppDecl> {
        self.npps.iter().find(|n| n.name == name)
    }
}

/// `+` marks a given variable, `-` a queried one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Given,
    Queried,
}

impl Marker {
    pub fn symbol(self) -> char {
        match self {
            Marker::Given => '+',
            Marker::Queried => '-',
        }
    }
}

/// Which distribution is requested from an NPP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFlavor {
    /// `h(+X,-C)`: P(C|X).
    Conditional,
    /// `h(-X,+C)`: P(X|C).
    Likelihood,
    /// `h(-X,-C)`: P(X,C).
    Joint,
    /// `h(-C)`: P(C) with X marginalized.
    Prior,
}

impl QueryFlavor {
    pub fn from_markers(markers: &[Marker]) -> Option<QueryFlavor> {
        use Marker::*;
        match markers {
            [Given, Queried] => Some(QueryFlavor::Conditional),
            [Queried, Given] => Some(QueryFlavor::Likelihood),
            [Queried, Queried] => Some(QueryFlavor::Joint),
            [Queried] => Some(QueryFlavor::Prior),
            _ => None,
        }
    }

    pub fn supported_by(self, flavor: NppFlavor) -> bool {
        match flavor {
            NppFlavor::Nn => self == QueryFlavor::Conditional,
            NppFlavor::Pc | NppFlavor::NnPc => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlavoredAtom {
    pub npp: String,
    pub args: Vec<(Marker, Term)>,
}

impl FlavoredAtom {
    pub fn flavor(&self) -> Option<QueryFlavor> {
        let markers: Vec<Marker> = self.args.iter().map(|(m, _)| *m).collect();
        QueryFlavor::from_markers(&markers)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Query {
    pub constraints: Vec<Rule>,
    pub flavored: Vec<FlavoredAtom>,
}
