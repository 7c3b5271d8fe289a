//! Recursive-descent parser for the property grammar.
//!
//! ```text
//! formula  := disj EOF
//! disj     := conj ( "||" conj )*
//! conj     := unary ( "&&" unary )*
//! unary    := "!" unary | "(" disj ")" | atom
//! atom     := sum ( ">" | "<" ) signed annot*
//! sum      := [ "-" ] term ( ( "+" | "-" ) term )*
//! term     := number "*" ident | number | ident
//! signed   := [ "-" ] number
//! annot    := "@rhomax" "(" number ")"
//!           | "@signals" "(" [ ident ( "," ident )* ] ")"
//!           | "@label" "(" ident ")"
//! ident    := [A-Za-z_][A-Za-z0-9_]*
//! number   := digits [ "." digits ] [ ("e"|"E") [ "+"|"-" ] digits ]
//! ```
//!
//! `&&` and `||` are left-associative and `&&` binds tighter. Whitespace,
//! including newlines, separates tokens. Repeated terms for the same state
//! are summed. Atoms without `@label` are named `p0`, `p1`, ... by
//! left-to-right position.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{Comparator, Formula, LinearAtom};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("atom `{0}` has no @rhomax declaration")]
    MissingRhoMax(String),
    #[error("atom `{0}`: rho_max must be positive")]
    NonPositiveRhoMax(String),
    #[error("duplicate atom label `{0}`")]
    DuplicateLabel(String),
}

/// Validation applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// When set, every referenced state must be in this set.
    pub known_states: Option<BTreeSet<String>>,
    /// When true, every atom must carry `@rhomax`.
    pub require_rho_max: bool,
}

/// Parses with no state whitelist and optional `@rhomax`.
pub fn parse(text: &str) -> Result<Formula, ParseError> {
    parse_with(text, &ParseOptions::default())
}

pub fn parse_with(text: &str, options: &ParseOptions) -> Result<Formula, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let formula = parser.disjunction()?;
    parser.expect_end()?;
    let mut formula = formula.to_nnf();
    assign_labels(&mut formula)?;
    validate(&formula, options)?;
    Ok(formula)
}

fn assign_labels(formula: &mut Formula) -> Result<(), ParseError> {
    let mut seen = BTreeSet::new();
    for (index, atom) in formula.atoms_mut().into_iter().enumerate() {
        if atom.label.is_empty() {
            atom.label = format!("p{index}");
        }
        if !seen.insert(atom.label.clone()) {
            return Err(ParseError::DuplicateLabel(atom.label.clone()));
        }
    }
    Ok(())
}

fn validate(formula: &Formula, options: &ParseOptions) -> Result<(), ParseError> {
    for atom in formula.atoms() {
        if let Some(known) = &options.known_states {
            if let Some(unknown) = atom.coefficients.keys().find(|s| !known.contains(*s)) {
                return Err(ParseError::UnknownState(unknown.clone()));
            }
        }
        match atom.rho_max {
            None if options.require_rho_max => {
                return Err(ParseError::MissingRhoMax(atom.label.clone()))
            }
            Some(r) if r <= 0.0 => return Err(ParseError::NonPositiveRhoMax(atom.label.clone())),
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Annotation(String),
    Plus,
    Minus,
    Star,
    Gt,
    Lt,
    Bang,
    AndAnd,
    OrOr,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::Annotation(s) => format!("annotation `@{s}`"),
            Tok::End => "end of input".to_owned(),
            other => format!("`{}`", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Gt => ">",
            Tok::Lt => "<",
            Tok::Bang => "!",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Comma => ",",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, column, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut column) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, column);
        if c == '\n' {
            i += 1;
            line += 1;
            column = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            column += 1;
            continue;
        }
        let two = chars.get(i + 1).copied();
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '>' => Tok::Gt,
            '<' => Tok::Lt,
            '!' => Tok::Bang,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '&' if two == Some('&') => Tok::AndAnd,
            '|' if two == Some('|') => Tok::OrOr,
            '@' => {
                let name: String = chars[i + 1..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                    .collect();
                if name.is_empty() {
                    return Err(syntax(line, column, "expected annotation name after `@`"));
                }
                let len = name.len() + 1;
                out.push(Spanned { tok: Tok::Annotation(name), line, column });
                i += len;
                column += len;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let name: String = chars[i..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                    .collect();
                let len = name.len();
                out.push(Spanned { tok: Tok::Ident(name), line, column });
                i += len;
                column += len;
                continue;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let len = number_len(&chars[i..]);
                let literal: String = chars[i..i + len].iter().collect();
                let value = literal
                    .parse::<f64>()
                    .map_err(|_| syntax(line, column, format!("malformed number `{literal}`")))?;
                out.push(Spanned { tok: Tok::Number(value), line, column });
                i += len;
                column += len;
                continue;
            }
            other => return Err(syntax(line, column, format!("unexpected character `{other}`"))),
        };
        let len = if matches!(tok, Tok::AndAnd | Tok::OrOr) { 2 } else { 1 };
        out.push(Spanned { tok, line: start_line, column: start_col });
        i += len;
                column += len;
    }
    out.push(Spanned { tok: Tok::End, line, column });
    Ok(out)
}

fn number_len(s: &[char]) -> usize {
    let mut n = 0;
    while n < s.len() && (s[n].is_ascii_digit() || s[n] == '.') {
        n += 1;
    }
    if n < s.len() && (s[n] == 'e' || s[n] == 'E') {
        let mut m = n + 1;
        if m < s.len() && (s[m] == '+' || s[m] == '-') {
            m += 1;
        }
        if m < s.len() && s[m].is_ascii_digit() {
            while m < s.len() && s[m].is_ascii_digit() {
                m += 1;
            }
            n = m;
        }
    }
    n
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn next(&mut self) -> Spanned {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, expected: &str) -> ParseError {
        let t = &self.tokens[self.pos];
        syntax(t.line, t.column, format!("expected {expected}, found {}", t.tok.describe()))
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.error_here(&format!("`{}`", tok.symbol())))
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::End => Ok(()),
            _ => Err(self.error_here("`&&`, `||` or end of input")),
        }
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.conjunction()?;
        while self.eat(&Tok::OrOr) {
            let rhs = self.conjunction()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat(&Tok::AndAnd) {
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat(&Tok::Bang) {
            return Ok(Formula::not(self.unary()?));
        }
        if self.eat(&Tok::LParen) {
            let inner = self.disjunction()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        self.atom().map(Formula::Atom)
    }

    fn atom(&mut self) -> Result<LinearAtom, ParseError> {
        let mut coefficients = BTreeMap::new();
        let mut offset = 0.0;

        let mut sign = if self.eat(&Tok::Minus) { -1.0 } else { 1.0 };
        loop {
            self.term(sign, &mut coefficients, &mut offset)?;
            sign = match self.peek() {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => break,
            };
            self.next();
        }

        let comparator = match self.peek() {
            Tok::Gt => Comparator::Gt,
            Tok::Lt => Comparator::Lt,
            _ => return Err(self.error_here("`>` or `<`")),
        };
        self.next();
        let threshold = self.signed_number()?;

        let mut atom = LinearAtom {
            label: String::new(),
            coefficients,
            offset,
            comparator,
            threshold,
            rho_max: None,
            signals: BTreeSet::new(),
        };
        self.annotations(&mut atom)?;
        Ok(atom)
    }

    fn term(
        &mut self,
        sign: f64,
        coefficients: &mut BTreeMap<String, f64>,
        offset: &mut f64,
    ) -> Result<(), ParseError> {
        match self.peek().clone() {
            Tok::Number(value) => {
                self.next();
                if self.eat(&Tok::Star) {
                    let name = self.ident()?;
                    *coefficients.entry(name).or_insert(0.0) += sign * value;
                } else {
                    *offset += sign * value;
                }
                Ok(())
            }
            Tok::Ident(name) => {
                self.next();
                *coefficients.entry(name).or_insert(0.0) += sign;
                Ok(())
            }
            _ => Err(self.error_here("a term")),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.next();
                Ok(name)
            }
            _ => Err(self.error_here("an identifier")),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match *self.peek() {
            Tok::Number(v) => {
                self.next();
                Ok(v)
            }
            _ => Err(self.error_here("a number")),
        }
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let sign = if self.eat(&Tok::Minus) { -1.0 } else { 1.0 };
        Ok(sign * self.number()?)
    }

    fn annotations(&mut self, atom: &mut LinearAtom) -> Result<(), ParseError> {
        while let Tok::Annotation(name) = self.peek().clone() {
            let at = self.tokens[self.pos].clone();
            self.next();
            self.expect(Tok::LParen)?;
            match name.as_str() {
                "rhomax" => atom.rho_max = Some(self.number()?),
                "label" => atom.label = self.ident()?,
                "signals" => {
                    if !matches!(self.peek(), Tok::RParen) {
                        atom.signals.insert(self.ident()?);
                        while self.eat(&Tok::Comma) {
                            atom.signals.insert(self.ident()?);
                        }
                    }
                }
                other => {
                    return Err(syntax(at.line, at.column, format!("unknown annotation `@{other}`")))
                }
            }
            self.expect(Tok::RParen)?;
        }
        Ok(())
    }
}
