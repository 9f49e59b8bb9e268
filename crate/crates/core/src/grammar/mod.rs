//! Byte-terminal context-free grammars.
//!
//! # Source format
//!
//! ```text
//! # comment
//! S    ::= "(" S ")" S | ""
//! Expr ::= Expr "+" Term
//!        | Term
//! ```
//!
//! One rule per line, `Name ::= alt | alt`. A line starting with `|`
//! continues the previous rule. Alternatives are whitespace-separated quoted
//! strings and nonterminal names; `""` is the empty string. Quoted strings
//! are UTF-8 and expand to their bytes, with escapes `\n \t \r \0 \\ \" \'`
//! and `\xHH`. The first rule's left-hand side is the start symbol.

mod earley;

pub use earley::{Recognizer, RecognizerState};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub type NonterminalId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Byte(u8),
    Nonterminal(NonterminalId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub lhs: NonterminalId,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: undefined nonterminal `{name}`")]
    Undefined {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("grammar has no rules")]
    Empty,
    #[error("start symbol `{0}` has no rules")]
    NoStartRule(String),
    #[error("rule {rule} refers to unknown nonterminal id {id}")]
    BadSymbol { rule: usize, id: NonterminalId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    names: Vec<String>,
    start: NonterminalId,
    rules: Vec<Rule>,
}

impl Grammar {
    /// Builds a grammar from parts, checking that every symbol is declared
    /// and that the start symbol has at least one rule.
    pub fn new(
        names: Vec<String>,
        start: NonterminalId,
        rules: Vec<Rule>,
    ) -> Result<Self, GrammarError> {
        if rules.is_empty() {
            return Err(GrammarError::Empty);
        }
        let n = names.len() as NonterminalId;
        for (i, r) in rules.iter().enumerate() {
            let bad = std::iter::once(r.lhs).chain(r.rhs.iter().filter_map(|s| match s {
                Symbol::Nonterminal(id) => Some(*id),
                Symbol::Byte(_) => None,
            }));
            if let Some(id) = bad.into_iter().find(|&id| id >= n) {
                return Err(GrammarError::BadSymbol { rule: i, id });
            }
        }
        if start >= n || !rules.iter().any(|r| r.lhs == start) {
            let name = names.get(start as usize).cloned().unwrap_or_default();
            return Err(GrammarError::NoStartRule(name));
        }
        Ok(Self {
            names,
            start,
            rules,
        })
    }

    pub fn parse(source: &str) -> Result<Self, GrammarError> {
        Parser::default().parse(source)
    }

    pub fn start(&self) -> NonterminalId {
        self.start
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn name(&self, id: NonterminalId) -> &str {
        &self.names[id as usize]
    }

    pub fn nonterminal_count(&self) -> usize {
        self.names.len()
    }

    pub fn id_of(&self, name: &str) -> Option<NonterminalId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as NonterminalId)
    }

    /// Bytes appearing as terminals anywhere in the grammar, sorted.
    pub fn terminal_alphabet(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for r in &self.rules {
            for s in &r.rhs {
                if let Symbol::Byte(b) = s {
                    seen[*b as usize] = true;
                }
            }
        }
        (0..=255u8).filter(|&b| seen[b as usize]).collect()
    }

    /// Nonterminals deriving at least one terminal string.
    pub fn productive(&self) -> Vec<bool> {
        let mut productive = vec![false; self.names.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for r in &self.rules {
                if !productive[r.lhs as usize]
                    && r.rhs.iter().all(|s| match s {
                        Symbol::Byte(_) => true,
                        Symbol::Nonterminal(b) => productive[*b as usize],
                    })
                {
                    productive[r.lhs as usize] = true;
                    changed = true;
                }
            }
        }
        productive
    }

    /// Nonterminals deriving the empty string.
    pub fn nullable(&self) -> Vec<bool> {
        let mut nullable = vec![false; self.names.len()];
        let mut changed = true;
        while changed {
            changed = false;
            for r in &self.rules {
                if !nullable[r.lhs as usize]
                    && r.rhs.iter().all(|s| match s {
                        Symbol::Byte(_) => false,
                        Symbol::Nonterminal(b) => nullable[*b as usize],
                    })
                {
                    nullable[r.lhs as usize] = true;
                    changed = true;
                }
            }
        }
        nullable
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            write!(f, "{} ::=", self.names[r.lhs as usize])?;
            if r.rhs.is_empty() {
                write!(f, " \"\"")?;
            }
            for s in &r.rhs {
                match s {
                    Symbol::Nonterminal(id) => write!(f, " {}", self.names[*id as usize])?,
                    Symbol::Byte(b) => write!(f, " \"{}\"", escape_byte(*b))?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn escape_byte(b: u8) -> String {
    match b {
        b'\n' => "\\n".into(),
        b'\t' => "\\t".into(),
        b'\r' => "\\r".into(),
        b'\\' => "\\\\".into(),
        b'"' => "\\\"".into(),
        0x20..=0x7e => (b as char).to_string(),
        _ => format!("\\x{b:02x}"),
    }
}

#[derive(Debug)]
enum Item {
    Bytes(Vec<u8>),
    Name(String, usize, usize),
}

#[derive(Default)]
struct Parser {
    names: Vec<String>,
    ids: HashMap<String, NonterminalId>,
    defined: Vec<bool>,
    /// (lhs, alternatives) in definition order.
    pending: Vec<(NonterminalId, Vec<Vec<Item>>)>,
}

impl Parser {
    fn intern(&mut self, name: &str) -> NonterminalId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as NonterminalId;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        self.defined.push(false);
        id
    }

    fn parse(mut self, source: &str) -> Result<Grammar, GrammarError> {
        for (lineno, line) in source.lines().enumerate() {
            let lineno = lineno + 1;
            let mut lexer = Lexer::new(line, lineno);
            let tokens = lexer.tokens()?;
            if tokens.is_empty() {
                continue;
            }
            let body = match &tokens[0].kind {
                TokKind::Bar => {
                    if self.pending.is_empty() {
                        return Err(syntax(lineno, tokens[0].col, "continuation before any rule"));
                    }
                    &tokens[..]
                }
                TokKind::Name(name) => {
                    match tokens.get(1) {
                        Some(Tok {
                            kind: TokKind::Define,
                            ..
                        }) => {}
                        Some(t) => return Err(syntax(lineno, t.col, "expected `::=`")),
                        None => return Err(syntax(lineno, line.len() + 1, "expected `::=`")),
                    }
                    let id = self.intern(name);
                    self.defined[id as usize] = true;
                    self.pending.push((id, Vec::new()));
                    &tokens[2..]
                }
                _ => return Err(syntax(lineno, tokens[0].col, "expected a rule name")),
            };
            self.alternatives(body, lineno, line.len())?;
        }
        if self.pending.is_empty() {
            return Err(GrammarError::Empty);
        }
        let mut rules = Vec::new();
        let pending = std::mem::take(&mut self.pending);
        for (lhs, alts) in pending {
            for alt in alts {
                let mut rhs = Vec::new();
                for item in alt {
                    match item {
                        Item::Bytes(bytes) => rhs.extend(bytes.into_iter().map(Symbol::Byte)),
                        Item::Name(name, line, column) => {
                            let id = self.ids[&name];
                            if !self.defined[id as usize] {
                                return Err(GrammarError::Undefined { name, line, column });
                            }
                            rhs.push(Symbol::Nonterminal(id));
                        }
                    }
                }
                rules.push(Rule { lhs, rhs });
            }
        }
        let start = rules[0].lhs;
        Grammar::new(self.names, start, rules)
    }

    /// Appends the alternatives in `tokens` to the most recent rule. A
    /// continuation line's tokens begin with `|`.
    fn alternatives(&mut self, tokens: &[Tok], line: usize, eol: usize) -> Result<(), GrammarError> {
        let continuation = matches!(tokens.first(), Some(Tok { kind: TokKind::Bar, .. }));
        let tokens = if continuation { &tokens[1..] } else { tokens };
        let mut alts = Vec::new();
        let mut current: Vec<Item> = Vec::new();
        for t in tokens {
            match &t.kind {
                TokKind::Bar => {
                    if current.is_empty() {
                        return Err(syntax(line, t.col, EMPTY_ALT));
                    }
                    alts.push(std::mem::take(&mut current));
                }
                TokKind::Str(bytes) => current.push(Item::Bytes(bytes.clone())),
                TokKind::Name(name) => {
                    self.intern(name);
                    current.push(Item::Name(name.clone(), line, t.col));
                }
                TokKind::Define => return Err(syntax(line, t.col, "unexpected `::=`")),
            }
        }
        if current.is_empty() {
            return Err(syntax(line, eol + 1, EMPTY_ALT));
        }
        alts.push(current);
        self.pending.last_mut().expect("rule exists").1.extend(alts);
        Ok(())
    }
}

const EMPTY_ALT: &str = "empty alternative; write \"\" for the empty string";

fn syntax(line: usize, column: usize, message: &str) -> GrammarError {
    GrammarError::Syntax {
        line,
        column,
        message: message.to_string(),
    }
}

#[derive(Debug)]
enum TokKind {
    Name(String),
    Str(Vec<u8>),
    Define,
    Bar,
}

#[derive(Debug)]
struct Tok {
    kind: TokKind,
    col: usize,
}

struct Lexer<'a> {
    chars: Vec<(usize, char)>,
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Self {
            chars: src.char_indices().collect(),
            src,
            pos: 0,
            line,
        }
    }

    fn col(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|(i, _)| self.src[..*i].chars().count() + 1)
            .unwrap_or_else(|| self.src.chars().count() + 1)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn tokens(&mut self) -> Result<Vec<Tok>, GrammarError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            let col = self.col();
            match c {
                '#' => break,
                c if c.is_whitespace() => self.pos += 1,
                '|' => {
                    self.pos += 1;
                    out.push(Tok {
                        kind: TokKind::Bar,
                        col,
                    });
                }
                ':' => {
                    let rest: String = self.chars[self.pos..].iter().take(3).map(|(_, c)| c).collect();
                    if rest != "::=" {
                        return Err(syntax(self.line, col, "expected `::=`"));
                    }
                    self.pos += 3;
                    out.push(Tok {
                        kind: TokKind::Define,
                        col,
                    });
                }
                '"' | '\'' => {
                    let bytes = self.string(c)?;
                    out.push(Tok {
                        kind: TokKind::Str(bytes),
                        col,
                    });
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                            name.push(c);
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    out.push(Tok {
                        kind: TokKind::Name(name),
                        col,
                    });
                }
                other => {
                    return Err(syntax(self.line, col, &format!("unexpected character `{other}`")))
                }
            }
        }
        Ok(out)
    }

    fn string(&mut self, quote: char) -> Result<Vec<u8>, GrammarError> {
        let open = self.col();
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            let col = self.col();
            let Some(c) = self.peek() else {
                return Err(syntax(self.line, open, "unterminated string"));
            };
            self.pos += 1;
            if c == quote {
                return Ok(out);
            }
            if c != '\\' {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                continue;
            }
            let Some(e) = self.peek() else {
                return Err(syntax(self.line, col, "dangling escape"));
            };
            self.pos += 1;
            match e {
                'n' => out.push(b'\n'),
                't' => out.push(b'\t'),
                'r' => out.push(b'\r'),
                '0' => out.push(0),
                '\\' => out.push(b'\\'),
                '"' => out.push(b'"'),
                '\'' => out.push(b'\''),
                'x' => {
                    let hex: String = (0..2).filter_map(|_| {
                        let c = self.peek();
                        self.pos += 1;
                        c
                    }).collect();
                    let b = u8::from_str_radix(&hex, 16)
                        .map_err(|_| syntax(self.line, col, "bad \\x escape"))?;
                    out.push(b);
                }
                other => return Err(syntax(self.line, col, &format!("unknown escape `\\{other}`"))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_finite_language() {
        let g = Grammar::parse(r#"S ::= "ab" | "ba""#).unwrap();
        assert_eq!(g.rules().len(), 2);
        assert_eq!(
            g.rules()[0].rhs,
            vec![Symbol::Byte(b'a'), Symbol::Byte(b'b')]
        );
        assert_eq!(g.terminal_alphabet(), b"ab".to_vec());
    }

    #[test]
    fn parses_epsilon_and_recursion() {
        let g = Grammar::parse("S ::= \"a\" S | \"\"").unwrap();
        assert_eq!(g.rules()[1].rhs, vec![]);
        assert!(g.nullable()[0]);
    }

    #[test]
    fn continuation_lines_and_comments() {
        let src = "# header\nE ::= E \"+\" T   # left recursive\n  | T\nT ::= \"1\"\n";
        let g = Grammar::parse(src).unwrap();
        assert_eq!(g.rules().len(), 3);
        assert_eq!(g.name(g.start()), "E");
    }

    #[test]
    fn undefined_nonterminal_is_named() {
        let err = Grammar::parse("S ::= \"a\" T").unwrap_err();
        assert_eq!(
            err,
            GrammarError::Undefined {
                name: "T".into(),
                line: 1,
                column: 11
            }
        );
    }

    #[test]
    fn syntax_errors_carry_positions() {
        assert!(matches!(
            Grammar::parse("S ::= \"a"),
            Err(GrammarError::Syntax { line: 1, column: 7, .. })
        ));
        assert!(matches!(
            Grammar::parse("S \"a\""),
            Err(GrammarError::Syntax { line: 1, column: 3, .. })
        ));
        assert!(matches!(
            Grammar::parse("S ::= \"a\" | | \"b\""),
            Err(GrammarError::Syntax { line: 1, column: 13, .. })
        ));
        assert_eq!(Grammar::parse("# nothing\n"), Err(GrammarError::Empty));
    }

    #[test]
    fn escapes_and_utf8_expand_to_bytes() {
        let g = Grammar::parse(r#"S ::= "\n\x41é""#).unwrap();
        let bytes: Vec<u8> = g.rules()[0]
            .rhs
            .iter()
            .map(|s| match s {
                Symbol::Byte(b) => *b,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(bytes, b"\nA\xc3\xa9".to_vec());
    }

    #[test]
    fn display_round_trips() {
        let g = Grammar::parse("S ::= \"(\" S \")\" S | \"\"\n").unwrap();
        let again = Grammar::parse(&g.to_string()).unwrap();
        assert_eq!(g, again);
    }
}
