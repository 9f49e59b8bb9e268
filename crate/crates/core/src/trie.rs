//! Prefix-closure trie over token byte strings.
//!
//! Node 0 is the root (the empty prefix). A node carries an end-of-token
//! marker when its prefix is itself a token. EOS is a marker on the root.
//! Parents always have smaller ids than their children.

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::lm::{TokenDistribution, TokenId, Vocabulary};

pub type NodeId = u32;

pub const ROOT: NodeId = 0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrieError {
    #[error("tokens {first} and {second} share the byte string {bytes:?}")]
    Duplicate {
        first: TokenId,
        second: TokenId,
        bytes: Vec<u8>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<NodeId>,
    byte: u8,
    depth: u32,
    /// Sorted by byte.
    children: Vec<(u8, NodeId)>,
    token: Option<TokenId>,
}

#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<Node>,
    eos: TokenId,
    vocab_len: usize,
}

impl TokenTrie {
    pub fn build(vocab: &Vocabulary) -> Result<Self, TrieError> {
        let mut nodes = vec![Node {
            parent: None,
            byte: 0,
            depth: 0,
            children: Vec::new(),
            token: None,
        }];
        for (id, bytes) in vocab.iter() {
            let mut at = ROOT;
            for &b in bytes {
                let children = &nodes[at as usize].children;
                at = match children.binary_search_by_key(&b, |&(c, _)| c) {
                    Ok(i) => children[i].1,
                    Err(i) => {
                        let new = nodes.len() as NodeId;
                        let depth = nodes[at as usize].depth + 1;
                        nodes[at as usize].children.insert(i, (b, new));
                        nodes.push(Node {
                            parent: Some(at),
                            byte: b,
                            depth,
                            children: Vec::new(),
                            token: None,
                        });
                        new
                    }
                };
            }
            let node = &mut nodes[at as usize];
            if let Some(first) = node.token {
                return Err(TrieError::Duplicate {
                    first,
                    second: id,
                    bytes: bytes.to_vec(),
                });
            }
            node.token = Some(id);
        }
        Ok(Self {
            nodes,
            eos: vocab.eos(),
            vocab_len: vocab.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn children(&self, node: NodeId) -> &[(u8, NodeId)] {
        &self.nodes[node as usize].children
    }

    pub fn child(&self, node: NodeId, byte: u8) -> Option<NodeId> {
        let c = &self.nodes[node as usize].children;
        c.binary_search_by_key(&byte, |&(b, _)| b).ok().map(|i| c[i].1)
    }

    /// Token whose bytes end exactly at `node`.
    pub fn token_at(&self, node: NodeId) -> Option<TokenId> {
        self.nodes[node as usize].token
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node as usize].parent
    }

    pub fn depth(&self, node: NodeId) -> usize {
        self.nodes[node as usize].depth as usize
    }

    /// Byte string spelled by the path to `node`.
    pub fn prefix(&self, node: NodeId) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.depth(node));
        let mut at = node;
        while let Some(p) = self.nodes[at as usize].parent {
            out.push(self.nodes[at as usize].byte);
            at = p;
        }
        out.reverse();
        out
    }

    pub fn lookup(&self, bytes: &[u8]) -> Option<NodeId> {
        bytes.iter().try_fold(ROOT, |n, &b| self.child(n, b))
    }

    /// Per-node probability mass under `dist`. Linear space: masses are sums
    /// of probabilities and stay well above underflow for realistic
    /// vocabularies.
    pub fn compute_mass(&self, dist: &TokenDistribution) -> MassMap {
        debug_assert_eq!(dist.len(), self.vocab_len);
        let mut mass: Vec<f64> = self
            .nodes
            .iter()
            .map(|n| n.token.map_or(0.0, |t| dist.prob(t)))
            .collect();
        let eos = dist.prob(self.eos);
        for i in (1..self.nodes.len()).rev() {
            let p = self.nodes[i].parent.expect("non-root") as usize;
            mass[p] += mass[i];
        }
        mass[ROOT as usize] += eos;
        let eot = self
            .nodes
            .iter()
            .map(|n| n.token.map_or(0.0, |t| dist.prob(t)))
            .collect();
        MassMap { mass, eot, eos }
    }

    /// JSON dump of the trie structure, with masses if given.
    pub fn to_json(&self, mass: Option<&MassMap>) -> Value {
        let nodes: Vec<Value> = (0..self.nodes.len() as NodeId)
            .map(|i| {
                let n = &self.nodes[i as usize];
                let mut v = json!({
                    "id": i,
                    "prefix": String::from_utf8_lossy(&self.prefix(i)),
                    "parent": n.parent,
                    "token": n.token,
                });
                if let Some(m) = mass {
                    v["mass"] = json!(m.mass(i));
                    v["eot_mass"] = json!(m.eot_mass(i));
                }
                v
            })
            .collect();
        let mut out = json!({ "eos": self.eos, "nodes": nodes });
        if let Some(m) = mass {
            out["eos_mass"] = json!(m.eos_mass());
        }
        out
    }
}

/// Probability mass of every trie node in one context.
#[derive(Debug, Clone, Serialize)]
pub struct MassMap {
    mass: Vec<f64>,
    eot: Vec<f64>,
    eos: f64,
}

impl MassMap {
    /// Total probability of tokens whose bytes start with the node's prefix
    /// (plus EOS, at the root).
    pub fn mass(&self, node: NodeId) -> f64 {
        self.mass[node as usize]
    }

    /// Probability of the token ending at `node`, zero if none does.
    pub fn eot_mass(&self, node: NodeId) -> f64 {
        self.eot[node as usize]
    }

    pub fn eos_mass(&self) -> f64 {
        self.eos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_prefix_closure() {
        let v = Vocabulary::merged(&["a", "ab", "b"]).unwrap();
        let t = TokenTrie::build(&v).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.token_at(t.lookup(b"a").unwrap()), Some(0));
        assert_eq!(t.token_at(t.lookup(b"ab").unwrap()), Some(1));
        assert_eq!(t.token_at(t.lookup(b"b").unwrap()), Some(2));
        assert_eq!(t.token_at(ROOT), None);

        let v = Vocabulary::merged(&["ab", "b"]).unwrap();
        let t = TokenTrie::build(&v).unwrap();
        let a = t.lookup(b"a").unwrap();
        assert_eq!(t.token_at(a), None);
        assert_eq!(t.prefix(t.lookup(b"ab").unwrap()), b"ab".to_vec());
    }

    #[test]
    fn single_byte_vocab_is_depth_one() {
        let v = Vocabulary::bytes(b"abc").unwrap();
        let t = TokenTrie::build(&v).unwrap();
        assert_eq!(t.children(ROOT).len(), 3);
        assert!(t.children(ROOT).iter().all(|&(_, n)| t.token_at(n).is_some() && t.children(n).is_empty()));
    }

    #[test]
    fn duplicates_name_both_ids() {
        let v = Vocabulary::merged(&["x", "ab", "ab"]).unwrap();
        let err = TokenTrie::build(&v).unwrap_err();
        assert_eq!(
            err,
            TrieError::Duplicate {
                first: 1,
                second: 2,
                bytes: b"ab".to_vec()
            }
        );
    }

    #[test]
    fn mass_recursion_by_hand() {
        let v = Vocabulary::merged(&["a", "ab", "b"]).unwrap();
        let t = TokenTrie::build(&v).unwrap();
        let d = TokenDistribution::new(vec![0.5f64.ln(), 0.3f64.ln(), 0.1f64.ln(), 0.1f64.ln()]).unwrap();
        let m = t.compute_mass(&d);
        let a = t.lookup(b"a").unwrap();
        assert!((m.mass(a) - 0.8).abs() < 1e-12);
        assert!((m.eot_mass(a) - 0.5).abs() < 1e-12);
        assert!((m.mass(t.lookup(b"ab").unwrap()) - 0.3).abs() < 1e-12);
        assert!((m.mass(ROOT) - 1.0).abs() < 1e-12);
        let dump = t.to_json(Some(&m));
        assert_eq!(dump["nodes"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn uniform_mass() {
        let v = Vocabulary::bytes(b"abc").unwrap();
        let t = TokenTrie::build(&v).unwrap();
        let m = t.compute_mass(&TokenDistribution::uniform(4));
        for &(_, n) in t.children(ROOT) {
            assert!((m.mass(n) - 0.25).abs() < 1e-12);
        }
        assert!((m.mass(ROOT) - 1.0).abs() < 1e-12);
    }
}
