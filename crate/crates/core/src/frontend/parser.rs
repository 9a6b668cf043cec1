use super::ast::*;
use super::error::{ParseError, Pos};
use super::lexer::{tokenize, Tok, Token};

const MAX_DEPTH: usize = 200;

pub(crate) enum Statement {
    Rule(Rule),
    Npp(NppDecl),
    Flavored(FlavoredAtom),
}

pub(crate) struct Parser {
    toks: Vec<Token>,
    at: usize,
    depth: usize,
}

impl Parser {
    pub(crate) fn new(src: &str) -> Result<Parser, ParseError> {
        Ok(Parser {
            toks: tokenize(src)?,
            at: 0,
            depth: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.at + offset).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            found: self.peek().to_string(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            self.error(&[tok.describe()])
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::TooDeep { pos: self.pos() });
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    pub(crate) fn at_eof(&self) -> bool {
        *self.peek() == Tok::Eof
    }

    /// Program statement: fact, rule, constraint, or NPP declaration.
    pub(crate) fn program_statement(&mut self) -> Result<(Statement, Pos), ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::If => {
                self.bump();
                let body = self.body()?;
                self.expect(Tok::Dot)?;
                Ok((Statement::Rule(Rule { head: None, body }), pos))
            }
            Tok::Ident(name) if name == "npp" && *self.peek_at(1) == Tok::LParen => {
                Ok((Statement::Npp(self.npp_decl()?), pos))
            }
            Tok::Ident(_) => {
                let head = self.atom()?;
                let body = if *self.peek() == Tok::If {
                    self.bump();
                    self.body()?
                } else {
                    Vec::new()
                };
                self.expect(Tok::Dot)?;
                Ok((
                    Statement::Rule(Rule {
                        head: Some(head),
                        body,
                    }),
                    pos,
                ))
            }
            _ => self.error(&["identifier", ":-", "npp", "end of input"]),
        }
    }

    /// Query statement: constraint or flavored atom.
    pub(crate) fn query_statement(&mut self) -> Result<(Statement, Pos), ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::If => {
                self.bump();
                let body = self.body()?;
                self.expect(Tok::Dot)?;
                Ok((Statement::Rule(Rule { head: None, body }), pos))
            }
            Tok::Ident(name) => {
                self.bump();
                self.expect(Tok::LParen)?;
                let mut args = Vec::new();
                loop {
                    let marker = match self.peek() {
                        Tok::Plus => Marker::Given,
                        Tok::Minus => Marker::Queried,
                        _ => return self.error(&["+", "-"]),
                    };
                    self.bump();
                    args.push((marker, self.term()?));
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                        }
                        Tok::RParen => break,
                        _ => return self.error(&[",", ")"]),
                    }
                }
                self.expect(Tok::RParen)?;
                self.expect(Tok::Dot)?;
                Ok((Statement::Flavored(FlavoredAtom { npp: name, args }), pos))
            }
            _ => self.error(&[":-", "identifier", "end of input"]),
        }
    }

    fn npp_decl(&mut self) -> Result<NppDecl, ParseError> {
        self.bump(); // npp
        self.expect(Tok::LParen)?;
        let name = match self.bump().tok {
            Tok::Ident(n) => n,
            _ => {
                self.at -= 1;
                return self.error(&["identifier"]);
            }
        };
        self.expect(Tok::LParen)?;
        let args = self.term_list()?;
        self.expect(Tok::RParen)?;
        self.expect(Tok::Comma)?;
        self.expect(Tok::LBracket)?;
        let outcomes = self.outcome_list()?;
        self.expect(Tok::RBracket)?;
        self.expect(Tok::RParen)?;

        let mut binding = name.clone();
        let mut flavor = None;
        if *self.peek() == Tok::At {
            self.bump();
            if let Tok::Ident(kw) = self.peek().clone() {
                match NppFlavor::from_keyword(&kw) {
                    Some(f) => {
                        flavor = Some(f);
                        self.bump();
                    }
                    None => return self.error(&["nn", "pc", "nn_pc", "("]),
                }
            }
            if *self.peek() == Tok::LParen {
                self.bump();
                match self.peek().clone() {
                    Tok::Ident(b) => {
                        binding = b;
                        self.bump();
                    }
                    _ => return self.error(&["identifier"]),
                }
                self.expect(Tok::RParen)?;
            } else if flavor.is_none() {
                return self.error(&["nn", "pc", "nn_pc", "("]);
            }
        }

        let body = if *self.peek() == Tok::If {
            self.bump();
            self.body()?
        } else {
            Vec::new()
        };
        self.expect(Tok::Dot)?;
        Ok(NppDecl {
            name,
            args,
            outcomes,
            body,
            binding,
            flavor,
        })
    }

    fn outcome_list(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut out = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Ident(c) => {
                    self.bump();
                    out.push(Term::Const(c));
                }
                Tok::Int(_) | Tok::Minus => {
                    let lo = self.signed_int()?;
                    if *self.peek() == Tok::DotDot {
                        self.bump();
                        let hi_pos = self.pos();
                        let hi = self.signed_int()?;
                        if hi < lo {
                            return Err(ParseError::InvalidNpp {
                                pos: hi_pos,
                                reason: format!("empty outcome range {lo}..{hi}"),
                            });
                        }
                        if hi - lo > 1_000_000 {
                            return Err(ParseError::InvalidNpp {
                                pos: hi_pos,
                                reason: "outcome range too large".into(),
                            });
                        }
                        out.extend((lo..=hi).map(Term::Int));
                    } else {
                        out.push(Term::Int(lo));
                    }
                }
                _ => return self.error(&["constant", "integer"]),
            }
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBracket => return Ok(out),
                _ => return self.error(&[",", "]", ".."]),
            }
        }
    }

    fn signed_int(&mut self) -> Result<i64, ParseError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(if neg { -i } else { i })
            }
            _ => self.error(&["integer"]),
        }
    }

    fn body(&mut self) -> Result<Vec<Literal>, ParseError> {
        let mut lits = vec![self.literal()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            lits.push(self.literal()?);
        }
        Ok(lits)
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        match self.peek().clone() {
            Tok::Ident(n) if n == "not" && matches!(self.peek_at(1), Tok::Ident(_)) => {
                self.bump();
                Ok(Literal::neg(self.atom()?))
            }
            Tok::Ident(_) => {
                let next = self.peek_at(1).clone();
                if next == Tok::LParen || !is_operator(&next) {
                    Ok(Literal::pos(self.atom()?))
                } else {
                    self.comparison()
                }
            }
            Tok::Var(_) | Tok::Int(_) | Tok::Minus | Tok::LParen => self.comparison(),
            _ => self.error(&["literal", "not"]),
        }
    }

    fn comparison(&mut self) -> Result<Literal, ParseError> {
        let lhs = self.term()?;
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return self.error(&["=", "!=", "<", "<=", ">", ">="]),
        };
        self.bump();
        let rhs = self.term()?;
        Ok(Literal::cmp(op, lhs, rhs))
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let predicate = match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                n
            }
            _ => return self.error(&["identifier"]),
        };
        let args = if *self.peek() == Tok::LParen {
            self.bump();
            let args = self.term_list()?;
            self.expect(Tok::RParen)?;
            args
        } else {
            Vec::new()
        };
        let outcome = if *self.peek() == Tok::Eq && !args.is_empty() {
            self.bump();
            Some(self.term()?)
        } else {
            None
        };
        Ok(Atom {
            predicate,
            args,
            outcome,
        })
    }

    fn term_list(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut out = vec![self.term()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            out.push(self.term()?);
        }
        Ok(out)
    }

    pub(crate) fn term(&mut self) -> Result<Term, ParseError> {
        self.enter()?;
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Term::binop(op, lhs, rhs);
        }
        self.leave();
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Term, ParseError> {
        let mut lhs = self.primary()?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.primary()?;
            lhs = Term::binop(ArithOp::Mul, lhs, rhs);
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Term, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Term::Int(i))
            }
            Tok::Minus if matches!(self.peek_at(1), Tok::Int(_)) => {
                self.bump();
                match self.bump().tok {
                    Tok::Int(i) => Ok(Term::Int(-i)),
                    _ => unreachable!(),
                }
            }
            Tok::Var(v) => {
                self.bump();
                Ok(Term::Var(v))
            }
            Tok::Ident(c) => {
                if *self.peek_at(1) == Tok::LParen {
                    self.bump();
                    return self.error(&["constant (function symbols are not supported)"]);
                }
                self.bump();
                Ok(Term::Const(c))
            }
            Tok::LParen => {
                self.bump();
                let t = self.term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            _ => self.error(&["integer", "variable", "constant", "("]),
        }
    }
}

fn is_operator(t: &Tok) -> bool {
    matches!(
        t,
        Tok::Eq
            | Tok::Ne
            | Tok::Lt
            | Tok::Le
            | Tok::Gt
            | Tok::Ge
            | Tok::Plus
            | Tok::Minus
            | Tok::Star
    )
}
