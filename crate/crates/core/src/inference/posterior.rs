use std::collections::BTreeMap;

use serde::Serialize;

use crate::lm::{log_sum_exp, TokenId};

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorEntry {
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Normalized weight (log weight before normalization).
    pub weight: f64,
}

/// Weighted complete sequences with weights summing to one. Empty when
/// every particle has zero weight.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PosteriorApproximation {
    pub entries: Vec<PosteriorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group<K> {
    pub key: K,
    pub mass: f64,
    pub score: f64,
}

impl PosteriorApproximation {
    /// Normalizes entries given with log weights, dropping zero-weight ones.
    pub fn from_entries(entries: Vec<PosteriorEntry>) -> Self {
        let logs: Vec<f64> = entries.iter().map(|e| e.weight).collect();
        let total = log_sum_exp(&logs);
        if total == f64::NEG_INFINITY {
            return Self::default();
        }
        Self {
            entries: entries
                .into_iter()
                .filter(|e| e.weight > f64::NEG_INFINITY)
                .map(|e| PosteriorEntry {
                    weight: (e.weight - total).exp(),
                    ..e
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mass per distinct token sequence.
    pub fn by_tokens(&self) -> BTreeMap<Vec<TokenId>, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.tokens.clone()).or_insert(0.0) += e.weight;
        }
        out
    }

    /// Sums normalized weight within equivalence classes. Each group's
    /// score is `score` of its first member.
    pub fn group_and_score<K, F, S>(&self, key: F, score: S) -> Vec<Group<K>>
    where
        K: Ord + Clone,
        F: Fn(&PosteriorEntry) -> K,
        S: Fn(&PosteriorEntry) -> f64,
    {
        let mut groups: BTreeMap<K, (f64, f64)> = BTreeMap::new();
        for e in &self.entries {
            groups
                .entry(key(e))
                .and_modify(|g| g.0 += e.weight)
                .or_insert((e.weight, score(e)));
        }
        groups
            .into_iter()
            .map(|(key, (mass, score))| Group { key, mass, score })
            .collect()
    }
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let n = n as f64;
    let cov = sxy - sx * sy / n;
    let vx = sxx - sx * sx / n;
    let vy = syy - sy * sy / n;
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Total variation distance between two distributions given as maps.
pub fn total_variation<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut d = 0.0;
    for (k, pa) in a {
        d += (pa - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, pb) in b {
        if !a.contains_key(k) {
            d += pb.abs();
        }
    }
    d / 2.0
}
