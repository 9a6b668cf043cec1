//! Lexing, parsing and validation of programs and queries.
//!
//! The grammar is an ASP-Core-2 subset (facts, normal rules, constraints,
//! default negation, integer arithmetic and comparisons) extended with NPP
//! declarations `npp(h(x), [v1,...,vn]) :- body.` and flavored query atoms
//! such as `color(+X,-C).`. See `docs/grammar.md` for the EBNF.

mod ast;
mod error;
mod lexer;
mod parser;
mod pretty;
mod validate;

pub use ast::*;
pub use error::{ParseError, Pos};
pub use validate::unsafe_vars;

use parser::{Parser, Statement};

/// Parse and validate a program.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(text)?;
    let mut rules = Vec::new();
    let mut npps = Vec::new();
    while !p.at_eof() {
        match p.program_statement()? {
            (Statement::Rule(r), pos) => rules.push((r, pos)),
            (Statement::Npp(d), pos) => npps.push((d, pos)),
            (Statement::Flavored(_), _) => unreachable!("programs have no flavored atoms"),
        }
    }
    validate::validate_program(&rules, &npps)?;
    Ok(Program {
        rules: rules.into_iter().map(|(r, _)| r).collect(),
        npps: npps.into_iter().map(|(d, _)| d).collect(),
    })
}

/// Parse a query against an already parsed program.
pub fn parse_query(text: &str, program: &Program) -> Result<Query, ParseError> {
    let mut p = Parser::new(text)?;
    let mut constraints = Vec::new();
    let mut flavored = Vec::new();
    while !p.at_eof() {
        match p.query_statement()? {
            (Statement::Rule(r), pos) => constraints.push((r, pos)),
            (Statement::Flavored(fa), pos) => flavored.push((fa, pos)),
            (Statement::Npp(_), _) => unreachable!("queries have no NPP declarations"),
        }
    }
    validate::validate_query(&constraints, &flavored, program)?;
    Ok(Query {
        constraints: constraints.into_iter().map(|(r, _)| r).collect(),
        flavored: flavored.into_iter().map(|(f, _)| f).collect(),
    })
}
