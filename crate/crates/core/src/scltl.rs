//! Syntactically co-safe LTL: concrete syntax, AST and finite-word semantics.
//!
//! Formulas are built over a finite alphabet of observations. A word is a
//! sequence of observations with exactly one observation per step.
//!
//! Concrete syntax, from loosest to tightest binding:
//!
//! ```text
//! until   := or ('U' until)?          right associative
//! or      := and ('|' and)*
//! and     := unary ('&' unary)*
//! unary   := '!' unary | 'X' unary | 'F' unary | primary
//! primary := 'T' | <observation> | '(' until ')'
//! ```
//!
//! Negation is only accepted when it applies to a single observation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of an observation inside its [`Alphabet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationId(pub usize);

impl ObservationId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered set of observation names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, FormulaError> {
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref().trim();
            if !is_identifier(name) || is_reserved(name) {
                return Err(FormulaError::InvalidObservationName(name.to_string()));
            }
            if out.iter().any(|n| n == name) {
                return Err(FormulaError::DuplicateObservation(name.to_string()));
            }
            out.push(name.to_string());
        }
        if out.is_empty() {
            return Err(FormulaError::EmptyAlphabet);
        }
        Ok(Self { names: out })
    }

    /// Parses a comma separated list such as `o1,o2,o3`.
    pub fn parse_list(list: &str) -> Result<Self, FormulaError> {
        let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        Self::new(&names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ObservationId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lookup(&self, name: &str) -> Option<ObservationId> {
        self.names.iter().position(|n| n == name).map(ObservationId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ObservationId> + '_ {
        (0..self.names.len()).map(ObservationId)
    }

    /// Parses a word written as names separated by spaces or commas.
    pub fn parse_word(&self, text: &str) -> Result<Vec<ObservationId>, FormulaError> {
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| self.lookup(s).ok_or_else(|| FormulaError::UnknownObservation(s.to_string())))
            .collect()
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_reserved(s: &str) -> bool {
    matches!(s, "T" | "X" | "U" | "F")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Formula {
    True,
    Obs(ObservationId),
    NegObs(ObservationId),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
}

impl Formula {
    pub fn and(l: Formula, r: Formula) -> Self {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Self {
        Formula::Or(Box::new(l), Box::new(r))
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn until(l: Formula, r: Formula) -> Self {
        Formula::Until(Box::new(l), Box::new(r))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Formula::True | Formula::Obs(_) | Formula::NegObs(_) => 1,
            Formula::Next(f) | Formula::Eventually(f) => 1 + f.size(),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Until(l, r) => 1 + l.size() + r.size(),
        }
    }

    /// Largest observation index referenced, if any.
    pub fn max_observation(&self) -> Option<ObservationId> {
        match self {
            Formula::True => None,
            Formula::Obs(o) | Formula::NegObs(o) => Some(*o),
            Formula::Next(f) | Formula::Eventually(f) => f.max_observation(),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Until(l, r) => {
                l.max_observation().max(r.max_observation())
            }
        }
    }

    /// Renders the formula in the concrete syntax accepted by [`parse_formula`].
    pub fn display<'a>(&'a self, alphabet: &'a Alphabet) -> FormulaDisplay<'a> {
        FormulaDisplay { formula: self, alphabet }
    }
}

pub struct FormulaDisplay<'a> {
    formula: &'a Formula,
    alphabet: &'a Alphabet,
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_formula(f, self.formula, self.alphabet)
    }
}

fn write_formula(f: &mut fmt::Formatter<'_>, phi: &Formula, alphabet: &Alphabet) -> fmt::Result {
    match phi {
        Formula::True => write!(f, "T"),
        Formula::Obs(o) => write!(f, "{}", alphabet.name(*o)),
        Formula::NegObs(o) => write!(f, "!{}", alphabet.name(*o)),
        Formula::Next(g) => {
            write!(f, "X ")?;
            write_operand(f, g, alphabet)
        }
        Formula::Eventually(g) => {
            write!(f, "F ")?;
            write_operand(f, g, alphabet)
        }
        Formula::And(l, r) => write_binary(f, l, "&", r, alphabet),
        Formula::Or(l, r) => write_binary(f, l, "|", r, alphabet),
        Formula::Until(l, r) => write_binary(f, l, "U", r, alphabet),
    }
}

fn write_binary(f: &mut fmt::Formatter<'_>, l: &Formula, op: &str, r: &Formula, alphabet: &Alphabet) -> fmt::Result {
    write!(f, "(")?;
    write_formula(f, l, alphabet)?;
    write!(f, " {op} ")?;
    write_formula(f, r, alphabet)?;
    write!(f, ")")
}

fn write_operand(f: &mut fmt::Formatter<'_>, g: &Formula, alphabet: &Alphabet) -> fmt::Result {
    // Binary nodes already print their own parentheses.
    write_formula(f, g, alphabet)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at offset {position}: expected {}, found {found}", expected.join(" or "))]
    SyntaxError { position: usize, expected: Vec<String>, found: String },
    #[error("unknown observation `{0}`")]
    UnknownObservation(String),
    #[error("negation applied to a non-observation at offset {0}")]
    NegationOfNonObservation(usize),
    #[error("word must contain at least one observation")]
    EmptyWord,
    #[error("observation name `{0}` is not a valid identifier")]
    InvalidObservationName(String),
    #[error("observation `{0}` listed twice")]
    DuplicateObservation(String),
    #[error("alphabet is empty")]
    EmptyAlphabet,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    True,
    Not,
    And,
    Or,
    Next,
    Until,
    Eventually,
    LParen,
    RParen,
    Ident(String),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::True => "`T`".into(),
            Tok::Not => "`!`".into(),
            Tok::And => "`&`".into(),
            Tok::Or => "`|`".into(),
            Tok::Next => "`X`".into(),
            Tok::Until => "`U`".into(),
            Tok::Eventually => "`F`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '!' => Some(Tok::Not),
            '&' => Some(Tok::And),
            '|' => Some(Tok::Or),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = tok {
            out.push((i, tok));
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let tok = match word {
                "T" => Tok::True,
                "X" => Tok::Next,
                "U" => Tok::Until,
                "F" => Tok::Eventually,
                _ => Tok::Ident(word.to_string()),
            };
            out.push((start, tok));
            continue;
        }
        return Err(FormulaError::SyntaxError {
            position: i,
            expected: vec!["a formula token".into()],
            found: format!("`{c}`"),
        });
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    alphabet: &'a Alphabet,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> FormulaError {
        FormulaError::SyntaxError {
            position: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn until(&mut self) -> Result<Formula, FormulaError> {
        let lhs = self.or()?;
        if *self.peek() == Tok::Until {
            self.bump();
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.and()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, FormulaError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, FormulaError> {
        match self.peek() {
            Tok::Not => {
                let at = self.offset();
                self.bump();
                match self.unary()? {
                    Formula::Obs(o) => Ok(Formula::NegObs(o)),
                    _ => Err(FormulaError::NegationOfNonObservation(at)),
                }
            }
            Tok::Next => {
                self.bump();
                Ok(Formula::next(self.unary()?))
            }
            Tok::Eventually => {
                self.bump();
                Ok(Formula::eventually(self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, FormulaError> {
        match self.peek().clone() {
            Tok::True => {
                self.bump();
                Ok(Formula::True)
            }
            Tok::Ident(name) => match self.alphabet.lookup(&name) {
                Some(o) => {
                    self.bump();
                    Ok(Formula::Obs(o))
                }
                None => Err(FormulaError::UnknownObservation(name)),
            },
            Tok::LParen => {
                self.bump();
                let inner = self.until()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error(&["`)`", "`&`", "`|`", "`U`"]));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.error(&["`T`", "observation", "`(`", "`!`", "`X`", "`F`"])),
        }
    }
}

/// Parses formula text over `alphabet`.
pub fn parse_formula(text: &str, alphabet: &Alphabet) -> Result<Formula, FormulaError> {
    let toks = tokenize(text)?;
    let mut parser = Parser { toks, pos: 0, alphabet };
    let phi = parser.until()?;
    if *parser.peek() != Tok::End {
        return Err(parser.error(&["`&`", "`|`", "`U`", "end of input"]));
    }
    Ok(phi)
}

/// Finite-word satisfaction of `phi` by the whole of `word`.
pub fn satisfies_finite(word: &[ObservationId], phi: &Formula) -> Result<bool, FormulaError> {
    if word.is_empty() {
        return Err(FormulaError::EmptyWord);
    }
    Ok(sat_at(word, 0, phi))
}

fn sat_at(w: &[ObservationId], i: usize, phi: &Formula) -> bool {
    match phi {
        Formula::True => true,
        Formula::Obs(o) => w[i] == *o,
        Formula::NegObs(o) => w[i] != *o,
        Formula::And(l, r) => sat_at(w, i, l) && sat_at(w, i, r),
        Formula::Or(l, r) => sat_at(w, i, l) || sat_at(w, i, r),
        Formula::Next(g) => i + 1 < w.len() && sat_at(w, i + 1, g),
        Formula::Until(l, r) => until_at(w, i, |k| sat_at(w, k, l), |k| sat_at(w, k, r)),
        Formula::Eventually(g) => until_at(w, i, |_| true, |k| sat_at(w, k, g)),
    }
}

fn until_at(w: &[ObservationId], i: usize, hold: impl Fn(usize) -> bool, goal: impl Fn(usize) -> bool) -> bool {
    for k in i..w.len() {
        if goal(k) {
            return true;
        }
        if !hold(k) {
            return false;
        }
    }
    false
}

/// True iff some non-empty prefix of `word` satisfies `phi`.
pub fn good_prefix(word: &[ObservationId], phi: &Formula) -> Result<bool, FormulaError> {
    if word.is_empty() {
        return Err(FormulaError::EmptyWord);
    }
    Ok((1..=word.len()).any(|k| sat_at(&word[..k], 0, phi)))
}
