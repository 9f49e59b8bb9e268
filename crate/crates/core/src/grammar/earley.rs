//! Incremental Earley recognition over bytes.
//!
//! Rules mentioning a non-productive nonterminal are dropped before
//! recognition. Every surviving item can then be completed, so a state is a
//! valid prefix exactly when its last item set is nonempty. Nullable
//! nonterminals are stepped over at prediction time, which makes ε-rules
//! safe without a separate completion pass.
//!
//! States are persistent: [`Recognizer::advance`] shares all earlier item
//! sets with its input, so cloned particles can diverge cheaply.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::{Grammar, NonterminalId, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Item {
    rule: u32,
    dot: u32,
    origin: u32,
}

#[derive(Debug)]
struct Column {
    /// Byte consumed to reach this column; unused for column 0.
    byte: u8,
    items: Vec<Item>,
    /// Items whose next symbol is a nonterminal, by that nonterminal.
    waiting: HashMap<NonterminalId, Vec<u32>>,
    /// Items whose next symbol is a byte, sorted by byte.
    scans: Vec<(u8, u32)>,
    allowed: [u64; 4],
    accepts: bool,
}

#[derive(Debug)]
struct Tables {
    grammar: Grammar,
    /// Usable rules by left-hand side.
    by_lhs: Vec<Vec<u32>>,
    nullable: Vec<bool>,
    rule_len: Vec<u32>,
}

/// Shared, immutable recognizer for one grammar.
#[derive(Debug, Clone)]
pub struct Recognizer {
    tables: Arc<Tables>,
}

/// Recognition state after consuming some byte string.
#[derive(Debug, Clone)]
pub struct RecognizerState {
    columns: Arc<Vec<Arc<Column>>>,
}

impl Recognizer {
    pub fn new(grammar: Grammar) -> Self {
        let productive = grammar.productive();
        let nullable = grammar.nullable();
        let mut by_lhs = vec![Vec::new(); grammar.nonterminal_count()];
        for (i, r) in grammar.rules().iter().enumerate() {
            let usable = r.rhs.iter().all(|s| match s {
                Symbol::Byte(_) => true,
                Symbol::Nonterminal(b) => productive[*b as usize],
            });
            if usable {
                by_lhs[r.lhs as usize].push(i as u32);
            }
        }
        let rule_len = grammar.rules().iter().map(|r| r.rhs.len() as u32).collect();
        Self {
            tables: Arc::new(Tables {
                grammar,
                by_lhs,
                nullable,
                rule_len,
            }),
        }
    }

    pub fn grammar(&self) -> &Grammar {
        &self.tables.grammar
    }

    /// State for the empty byte string.
    pub fn initial(&self) -> RecognizerState {
        let t = &self.tables;
        let seed: Vec<Item> = t.by_lhs[t.grammar.start() as usize]
            .iter()
            .map(|&rule| Item {
                rule,
                dot: 0,
                origin: 0,
            })
            .collect();
        let column = self.close(&[], 0, 0, seed);
        RecognizerState {
            columns: Arc::new(vec![Arc::new(column)]),
        }
    }

    /// State after consuming one more byte. Dead states stay dead.
    pub fn advance(&self, state: &RecognizerState, byte: u8) -> RecognizerState {
        let last = state.last();
        let position = state.columns.len() as u32;
        let lo = last.scans.partition_point(|&(b, _)| b < byte);
        let seed: Vec<Item> = last.scans[lo..]
            .iter()
            .take_while(|&&(b, _)| b == byte)
            .map(|&(_, i)| {
                let it = last.items[i as usize];
                Item {
                    dot: it.dot + 1,
                    ..it
                }
            })
            .collect();
        let column = self.close(&state.columns, position, byte, seed);
        let mut columns = Vec::with_capacity(state.columns.len() + 1);
        columns.extend(state.columns.iter().cloned());
        columns.push(Arc::new(column));
        RecognizerState {
            columns: Arc::new(columns),
        }
    }

    /// Consumes every byte of `bytes` in turn.
    pub fn advance_all(&self, state: &RecognizerState, bytes: &[u8]) -> RecognizerState {
        bytes
            .iter()
            .fold(state.clone(), |s, &b| self.advance(&s, b))
    }

    pub fn state_for(&self, bytes: &[u8]) -> RecognizerState {
        self.advance_all(&self.initial(), bytes)
    }

    /// Predict/complete closure of `seed` at `position`.
    fn close(&self, previous: &[Arc<Column>], position: u32, byte: u8, seed: Vec<Item>) -> Column {
        let t = &self.tables;
        let rules = t.grammar.rules();
        let mut items: Vec<Item> = Vec::with_capacity(seed.len() * 2);
        let mut seen: HashSet<Item> = HashSet::with_capacity(seed.len() * 2);
        let mut waiting: HashMap<NonterminalId, Vec<u32>> = HashMap::new();
        let mut predicted: HashSet<NonterminalId> = HashSet::new();
        let mut scans = Vec::new();
        let mut accepts = false;

        for it in seed {
            if seen.insert(it) {
                items.push(it);
            }
        }
        let mut k = 0;
        while k < items.len() {
            let it = items[k];
            let rule = &rules[it.rule as usize];
            if it.dot < t.rule_len[it.rule as usize] {
                match rule.rhs[it.dot as usize] {
                    Symbol::Byte(b) => scans.push((b, k as u32)),
                    Symbol::Nonterminal(nt) => {
                        waiting.entry(nt).or_default().push(k as u32);
                        if predicted.insert(nt) {
                            for &r in &t.by_lhs[nt as usize] {
                                let new = Item {
                                    rule: r,
                                    dot: 0,
                                    origin: position,
                                };
                                if seen.insert(new) {
                                    items.push(new);
                                }
                            }
                        }
                        if t.nullable[nt as usize] {
                            let new = Item {
                                dot: it.dot + 1,
                                ..it
                            };
                            if seen.insert(new) {
                                items.push(new);
                            }
                        }
                    }
                }
            } else {
                if it.origin == 0 && rule.lhs == t.grammar.start() {
                    accepts = true;
                }
                let parents: Vec<Item> = if it.origin == position {
                    waiting
                        .get(&rule.lhs)
                        .map(|w| w.iter().map(|&i| items[i as usize]).collect())
                        .unwrap_or_default()
                } else {
                    let col = &previous[it.origin as usize];
                    col.waiting
                        .get(&rule.lhs)
                        .map(|w| w.iter().map(|&i| col.items[i as usize]).collect())
                        .unwrap_or_default()
                };
                for p in parents {
                    let new = Item {
                        dot: p.dot + 1,
                        ..p
                    };
                    if seen.insert(new) {
                        items.push(new);
                    }
                }
            }
            k += 1;
        }
        scans.sort_unstable();
        let mut allowed = [0u64; 4];
        for &(b, _) in &scans {
            allowed[(b >> 6) as usize] |= 1 << (b & 63);
        }
        Column {
            byte,
            items,
            waiting,
            scans,
            allowed,
            accepts,
        }
    }
}

impl RecognizerState {
    fn last(&self) -> &Column {
        self.columns.last().expect("at least one column")
    }

    /// Number of bytes consumed.
    pub fn len(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Some string in the language starts with the consumed bytes.
    pub fn is_valid_prefix(&self) -> bool {
        !self.last().items.is_empty()
    }

    /// The consumed bytes are themselves in the language.
    pub fn is_complete_member(&self) -> bool {
        self.last().accepts
    }

    /// Bytes `b` with `advance(self, b).is_valid_prefix()`.
    pub fn allowed_next_bytes(&self) -> Vec<u8> {
        let a = &self.last().allowed;
        (0..=255u8)
            .filter(|&b| a[(b >> 6) as usize] & (1 << (b & 63)) != 0)
            .collect()
    }

    pub fn allows(&self, byte: u8) -> bool {
        self.last().allowed[(byte >> 6) as usize] & (1 << (byte & 63)) != 0
    }

    /// Whether ending the string here is allowed.
    pub fn allows_eos(&self) -> bool {
        self.is_complete_member()
    }

    pub fn consumed(&self) -> Vec<u8> {
        self.columns[1..].iter().map(|c| c.byte).collect()
    }
}
