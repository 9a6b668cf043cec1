use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A ground constant. Integers order before symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Sym(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Sym(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<Value>,
    pub outcome: Option<Value>,
}

impl GroundAtom {
    pub fn new(predicate: &str, args: Vec<Value>) -> GroundAtom {
        GroundAtom {
            predicate: predicate.to_string(),
            args,
            outcome: None,
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        if let Some(o) = &self.outcome {
            write!(f, "={o}")?;
        }
        Ok(())
    }
}

pub type AtomId = u32;

/// Dense interning of ground atoms; ids follow insertion order.
#[derive(Debug, Clone, Default)]
pub struct AtomTable {
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, AtomId>,
}

impl AtomTable {
    pub fn new() -> AtomTable {
        AtomTable::default()
    }

    pub fn intern(&mut self, atom: GroundAtom) -> AtomId {
        if let Some(&id) = self.index.get(&atom) {
            return id;
        }
        let id = self.atoms.len() as AtomId;
        self.index.insert(atom.clone(), id);
        self.atoms.push(atom);
        id
    }

    pub fn get(&self, atom: &GroundAtom) -> Option<AtomId> {
        self.index.get(atom).copied()
    }

    pub fn atom(&self, id: AtomId) -> &GroundAtom {
        &self.atoms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AtomId, &GroundAtom)> {
        self.atoms.iter().enumerate().map(|(i, a)| (i as AtomId, a))
    }
}

/// A ground normal rule or (with `head == None`) a constraint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundRule {
    pub head: Option<AtomId>,
    pub pos: Vec<AtomId>,
    pub neg: Vec<AtomId>,
}

impl GroundRule {
    pub fn fact(head: AtomId) -> GroundRule {
        GroundRule {
            head: Some(head),
            pos: Vec::new(),
            neg: Vec::new(),
        }
    }

    pub fn atoms(&self) -> impl Iterator<Item = AtomId> + '_ {
        self.head
            .iter()
            .copied()
            .chain(self.pos.iter().copied())
            .chain(self.neg.iter().copied())
    }
}

/// Identifies one ground NPP instance `h(x)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceKey {
    pub npp: String,
    pub args: Vec<Value>,
}

impl InstanceKey {
    /// The data term the instance's input tensor is bound to: the last argument.
    pub fn data_term(&self) -> Option<&Value> {
        self.args.last()
    }
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.npp)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// `1{h(x)=v1; ...; h(x)=vn}1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceRule {
    pub alternatives: Vec<AtomId>,
    pub instance: InstanceKey,
}

#[derive(Debug, Clone, Default)]
pub struct GroundProgram {
    pub atoms: AtomTable,
    pub rules: Vec<GroundRule>,
    pub choices: Vec<ChoiceRule>,
    /// atom id -> (choice index, outcome index) for every atom of r^npp.
    choice_of: HashMap<AtomId, (usize, usize)>,
}

impl GroundProgram {
    pub fn from_parts(atoms: AtomTable, rules: Vec<GroundRule>, choices: Vec<ChoiceRule>) -> Self {
        let mut choice_of = HashMap::new();
        for (ci, c) in choices.iter().enumerate() {
            for (oi, &a) in c.alternatives.iter().enumerate() {
                choice_of.insert(a, (ci, oi));
            }
        }
        GroundProgram {
            atoms,
            rules,
            choices,
            choice_of,
        }
    }

    pub fn choice_of(&self, atom: AtomId) -> Option<(usize, usize)> {
        self.choice_of.get(&atom).copied()
    }

    pub fn is_npp_atom(&self, atom: AtomId) -> bool {
        self.choice_of.contains_key(&atom)
    }

    /// The set r^npp, in choice order.
    pub fn r_npp(&self) -> Vec<AtomId> {
        self.choices
            .iter()
            .flat_map(|c| c.alternatives.iter().copied())
            .collect()
    }

    pub fn choice_index(&self, key: &InstanceKey) -> Option<usize> {
        self.choices.iter().position(|c| &c.instance == key)
    }

    pub fn stats(&self) -> HerbrandStats {
        HerbrandStats {
            atoms: self.atoms.len(),
            rules: self.rules.len(),
            choices: self.choices.len(),
        }
    }

    /// Line-oriented dump: choice rules first, then rules in order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in &self.choices {
            out.push_str("1{");
            for (i, &a) in c.alternatives.iter().enumerate() {
                if i > 0 {
                    out.push(';');
                }
                out.push_str(&self.atoms.atom(a).to_string());
            }
            out.push_str("}1.\n");
        }
        for r in &self.rules {
            out.push_str(&self.rule_to_string(r));
            out.push('\n');
        }
        out
    }

    pub fn rule_to_string(&self, r: &GroundRule) -> String {
        let mut s = String::new();
        if let Some(h) = r.head {
            s.push_str(&self.atoms.atom(h).to_string());
        }
        if !r.pos.is_empty() || !r.neg.is_empty() || r.head.is_none() {
            s.push_str(if r.head.is_some() { " :- " } else { ":- " });
            let lits: Vec<String> = r
                .pos
                .iter()
                .map(|&a| self.atoms.atom(a).to_string())
                .chain(r.neg.iter().map(|&a| format!("not {}", self.atoms.atom(a))))
                .collect();
            s.push_str(&lits.join(", "));
        }
        s.push('.');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct HerbrandStats {
    pub atoms: usize,
    pub rules: usize,
    pub choices: usize,
}

pub fn herbrand_stats(gp: &GroundProgram) -> HerbrandStats {
    gp.stats()
}
