use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{pos}: syntax error: found {found}, expected one of: {}", expected.join(", "))]
    Syntax {
        pos: Pos,
        found: String,
        expected: Vec<String>,
    },
    #[error("{pos}: unsafe rule: variable(s) {} do not occur in a positive body literal", vars.join(", "))]
    Unsafe { pos: Pos, vars: Vec<String> },
    #[error("{pos}: NPP outcome atom `{atom}` may not appear in a rule head")]
    NppInHead { pos: Pos, atom: String },
    #[error("{pos}: duplicate NPP declaration for `{name}`")]
    DuplicateNpp { pos: Pos, name: String },
    #[error("{pos}: invalid NPP declaration: {reason}")]
    InvalidNpp { pos: Pos, reason: String },
    #[error("{pos}: predicate `{predicate}` used with arity {found}, previously {expected}")]
    ArityMismatch {
        pos: Pos,
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("{pos}: query references undeclared NPP `{name}`")]
    UndeclaredNpp { pos: Pos, name: String },
    #[error("{pos}: marker pattern `{pattern}` is not supported for NPP `{name}`")]
    UnsupportedMarkers {
        pos: Pos,
        name: String,
        pattern: String,
    },
    #[error("{pos}: nesting too deep")]
    TooDeep { pos: Pos },
}

impl ParseError {
    pub fn pos(&self) -> Pos {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::Unsafe { pos, .. }
            | ParseError::NppInHead { pos, .. }
            | ParseError::DuplicateNpp { pos, .. }
            | ParseError::InvalidNpp { pos, .. }
            | ParseError::ArityMismatch { pos, .. }
            | ParseError::UndeclaredNpp { pos, .. }
            | ParseError::UnsupportedMarkers { pos, .. }
            | ParseError::TooDeep { pos } => *pos,
        }
    }
}
