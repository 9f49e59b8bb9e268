//! Runtime checking of a small statement language.
//!
//! A program is a sequence of newline-terminated statements:
//!
//! ```text
//! stmt   ::= name "=" expr | expr | ""
//! expr   ::= term (("+" | "-") term)*
//! term   ::= factor (("*" | "/" | "%") factor)*
//! factor ::= integer | name | "(" expr ")" | "-" factor
//! ```
//!
//! Values are `i64`. Division and remainder truncate toward zero. Runtime
//! faults are division by zero, overflow, reading an unassigned name and
//! syntax errors. Each evaluation runs under a step budget so the checker
//! always terminates.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::{Potential, PotentialClass, PotentialFault, PotentialState, Stride};
use crate::lm::{TokenId, Vocabulary};

const DEFAULT_STEP_BUDGET: u64 = 100_000;
const MAX_NESTING: usize = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalFault {
    #[error("line {line}: division by zero")]
    DivisionByZero { line: usize },
    #[error("line {line}: integer overflow")]
    Overflow { line: usize },
    #[error("line {line}: `{name}` is not defined")]
    Undefined { name: String, line: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("step budget of {0} exhausted")]
    Budget(u64),
}

impl EvalFault {
    /// Faults of the checker itself rather than of the checked program.
    pub fn is_checker_fault(&self) -> bool {
        matches!(self, EvalFault::Budget(_))
    }
}

/// A total program checker.
pub trait Evaluator: Send + Sync {
    fn check(&self, program: &[u8]) -> Result<(), EvalFault>;
}

/// Interpreter for the statement language above.
#[derive(Debug, Clone)]
pub struct ToyEvaluator {
    pub step_budget: u64,
}

impl Default for ToyEvaluator {
    fn default() -> Self {
        Self {
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl ToyEvaluator {
    /// Runs `program` and returns the final variable bindings.
    pub fn run(&self, program: &[u8]) -> Result<HashMap<String, i64>, EvalFault> {
        let mut env = HashMap::new();
        let mut steps = 0u64;
        for (i, line) in program.split(|&b| b == b'\n').enumerate() {
            let mut p = LineParser {
                src: line,
                pos: 0,
                line: i + 1,
                env: &env,
                steps: &mut steps,
                budget: self.step_budget,
                depth: 0,
            };
            if let Some((name, value)) = p.statement()? {
                env.insert(name, value);
            }
        }
        Ok(env)
    }
}

impl Evaluator for ToyEvaluator {
    fn check(&self, program: &[u8]) -> Result<(), EvalFault> {
        self.run(program).map(|_| ())
    }
}

struct LineParser<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    env: &'a HashMap<String, i64>,
    steps: &'a mut u64,
    budget: u64,
    depth: usize,
}

impl LineParser<'_> {
    fn tick(&mut self) -> Result<(), EvalFault> {
        *self.steps += 1;
        if *self.steps > self.budget {
            return Err(EvalFault::Budget(self.budget));
        }
        Ok(())
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && matches!(self.src[self.pos], b' ' | b'\t' | b'\r') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax(&self, message: &str) -> EvalFault {
        EvalFault::Syntax {
            line: self.line,
            message: format!("{message} at column {}", self.pos + 1),
        }
    }

    fn statement(&mut self) -> Result<Option<(String, i64)>, EvalFault> {
        if self.peek().is_none() {
            return Ok(None);
        }
        let start = self.pos;
        let target = self.name();
        if let Some(name) = target {
            if self.peek() == Some(b'=') {
                self.pos += 1;
                let value = self.expr()?;
                self.end()?;
                return Ok(Some((name, value)));
            }
        }
        self.pos = start;
        self.expr()?;
        self.end()?;
        Ok(None)
    }

    fn end(&mut self) -> Result<(), EvalFault> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.syntax("unexpected input")),
        }
    }

    fn name(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        match self.src.get(self.pos) {
            Some(c) if c.is_ascii_alphabetic() || *c == b'_' => {}
            _ => return None,
        }
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        Some(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn expr(&mut self) -> Result<i64, EvalFault> {
        let mut acc = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            self.tick()?;
            acc = if op == b'+' {
                acc.checked_add(rhs)
            } else {
                acc.checked_sub(rhs)
            }
            .ok_or(EvalFault::Overflow { line: self.line })?;
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<i64, EvalFault> {
        let mut acc = self.factor()?;
        while let Some(op @ (b'*' | b'/' | b'%')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            self.tick()?;
            if op != b'*' && rhs == 0 {
                return Err(EvalFault::DivisionByZero { line: self.line });
            }
            acc = match op {
                b'*' => acc.checked_mul(rhs),
                b'/' => acc.checked_div(rhs),
                _ => acc.checked_rem(rhs),
            }
            .ok_or(EvalFault::Overflow { line: self.line })?;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<i64, EvalFault> {
        self.tick()?;
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(self.syntax("nesting too deep"));
        }
        let v = match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                v
            }
            Some(b'-') => {
                self.pos += 1;
                self.factor()?
                    .checked_neg()
                    .ok_or(EvalFault::Overflow { line: self.line })?
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    self.pos += 1;
                }
                std::str::from_utf8(&self.src[start..self.pos])
                    .expect("digits")
                    .parse::<i64>()
                    .map_err(|_| EvalFault::Overflow { line: self.line })?
            }
            Some(_) => {
                let Some(name) = self.name() else {
                    return Err(self.syntax("expected a value"));
                };
                *self.env.get(&name).ok_or(EvalFault::Undefined {
                    name,
                    line: self.line,
                })?
            }
            None => return Err(self.syntax("expected a value")),
        };
        self.depth -= 1;
        Ok(v)
    }
}

/// Expensive potential that runs the checker on complete statements.
///
/// Partial sequences are truncated to their last newline before checking,
/// so the score only changes at statement boundaries. Program faults score
/// zero; checker faults (budget exhaustion) are reported as
/// [`PotentialFault`]s.
pub struct CheckedEvalPotential {
    evaluator: Arc<dyn Evaluator>,
    vocab: Vocabulary,
    boundary: u8,
}

impl CheckedEvalPotential {
    pub fn new(evaluator: Arc<dyn Evaluator>, vocab: Vocabulary) -> Self {
        Self {
            evaluator,
            vocab,
            boundary: b'\n',
        }
    }

    pub fn toy(vocab: Vocabulary) -> Self {
        Self::new(Arc::new(ToyEvaluator::default()), vocab)
    }

    fn checked_prefix<'b>(&self, bytes: &'b [u8], complete: bool) -> &'b [u8] {
        if complete {
            return bytes;
        }
        match bytes.iter().rposition(|&b| b == self.boundary) {
            Some(i) => &bytes[..=i],
            None => &[],
        }
    }

    fn evaluate(&self, program: &[u8]) -> Result<f64, PotentialFault> {
        match self.evaluator.check(program) {
            Ok(()) => Ok(0.0),
            Err(f) if f.is_checker_fault() => Err(PotentialFault {
                potential: self.name().to_string(),
                message: f.to_string(),
            }),
            Err(_) => Ok(f64::NEG_INFINITY),
        }
    }
}

impl Potential for CheckedEvalPotential {
    fn name(&self) -> &str {
        "checked_eval"
    }

    fn class(&self) -> PotentialClass {
        PotentialClass::Expensive
    }

    fn stride(&self) -> Stride {
        Stride::SemanticUnit {
            boundary: self.boundary,
        }
    }

    fn log_score(&self, tokens: &[TokenId], complete: bool) -> Result<f64, PotentialFault> {
        let bytes = self.vocab.decode(tokens);
        self.evaluate(self.checked_prefix(&bytes, complete))
    }

    fn start(self: Arc<Self>) -> Arc<dyn PotentialState> {
        let partial = self.evaluate(&[]);
        Arc::new(CheckedState {
            potential: self,
            bytes: Arc::new(Vec::new()),
            partial,
        })
    }
}

struct CheckedState {
    potential: Arc<CheckedEvalPotential>,
    bytes: Arc<Vec<u8>>,
    /// Score of the bytes up to the last boundary.
    partial: Result<f64, PotentialFault>,
}

impl PotentialState for CheckedState {
    fn extend(&self, token: TokenId) -> Arc<dyn PotentialState> {
        let p = &self.potential;
        let piece = p.vocab.bytes_of(token);
        let mut bytes = (*self.bytes).clone();
        bytes.extend_from_slice(piece);
        let dead = matches!(self.partial, Ok(v) if v == f64::NEG_INFINITY);
        let partial = if !dead && piece.contains(&p.boundary) {
            p.evaluate(p.checked_prefix(&bytes, false))
        } else {
            self.partial.clone()
        };
        Arc::new(CheckedState {
            potential: p.clone(),
            bytes: Arc::new(bytes),
            partial,
        })
    }

    fn log_score(&self, complete: bool) -> Result<f64, PotentialFault> {
        if !complete {
            return self.partial.clone();
        }
        if matches!(self.partial, Ok(v) if v == f64::NEG_INFINITY) {
            return Ok(f64::NEG_INFINITY);
        }
        self.potential.evaluate(&self.bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::bytes(b"wxyz=0123456789+-*/%()\n ").unwrap()
    }

    fn encode(v: &Vocabulary, s: &str) -> Vec<TokenId> {
        v.encode(s.as_bytes()).unwrap()
    }

    #[test]
    fn interpreter_semantics() {
        let e = ToyEvaluator::default();
        let env = e.run(b"x=7\ny=x/2-(3*-2)\nz=y%4\n").unwrap();
        assert_eq!(env["x"], 7);
        assert_eq!(env["y"], 9);
        assert_eq!(env["z"], 1);
        assert_eq!(e.check(b"x=1/0"), Err(EvalFault::DivisionByZero { line: 1 }));
        assert!(matches!(e.check(b"x=y"), Err(EvalFault::Undefined { .. })));
        assert!(matches!(e.check(b"x=9223372036854775807+1"), Err(EvalFault::Overflow { .. })));
        assert!(matches!(e.check(b"x=(1"), Err(EvalFault::Syntax { .. })));
        assert_eq!(e.check(b"\n\n1+1\n"), Ok(()));
    }

    #[test]
    fn budget_is_a_checker_fault() {
        let e = ToyEvaluator { step_budget: 5 };
        let err = e.check(b"x=1+1+1+1+1+1").unwrap_err();
        assert!(err.is_checker_fault());
        let p = CheckedEvalPotential::new(Arc::new(e), vocab());
        let v = vocab();
        assert!(p.log_score(&encode(&v, "x=1+1+1+1+1+1"), true).is_err());
    }

    #[test]
    fn scores_statements() {
        let v = vocab();
        let p = CheckedEvalPotential::toy(v.clone());
        assert_eq!(p.log_score(&encode(&v, "x=1"), true).unwrap(), 0.0);
        assert_eq!(p.log_score(&encode(&v, "x=1/0"), true).unwrap(), f64::NEG_INFINITY);
        // Only "x=1" is checked; the unfinished "y=" is ignored.
        assert_eq!(p.log_score(&encode(&v, "x=1\ny="), false).unwrap(), 0.0);
        assert_eq!(p.log_score(&encode(&v, "x=1/0\ny="), false).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn incremental_state_matches_rescoring() {
        let v = vocab();
        let p = Arc::new(CheckedEvalPotential::toy(v.clone()));
        let program = encode(&v, "x=4\ny=x-4\nz=x/y\nw=1\n");
        let mut s = p.clone().start();
        for (i, &t) in program.iter().enumerate() {
            s = s.extend(t);
            let prefix = &program[..=i];
            assert_eq!(s.log_score(false).unwrap(), p.log_score(prefix, false).unwrap());
            assert_eq!(s.log_score(true).unwrap(), p.log_score(prefix, true).unwrap());
        }
    }
}
