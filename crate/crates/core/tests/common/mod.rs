//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use constrained_smc::grammar::Symbol;
use constrained_smc::inference::{run, Method, Model, RunOutput};
use constrained_smc::instances::Instance;
use constrained_smc::{Grammar, MethodConfig, TokenDistribution, TokenId, Vocabulary};
use rand::RngCore;

pub mod weighting;

/// Membership and prefix decisions by fixpoint over spans, without any
/// chart parser.
pub struct CfgOracle {
    rules: Vec<(usize, Vec<Symbol>)>,
    start: usize,
    nts: usize,
    productive: Vec<bool>,
}

impl CfgOracle {
    pub fn new(g: &Grammar) -> Self {
        let rules: Vec<(usize, Vec<Symbol>)> = g.rules().iter().map(|r| (r.lhs as usize, r.rhs.clone())).collect();
        let nts = g.nonterminal_count();
        let mut productive = vec![false; nts];
        loop {
            let mut changed = false;
            for (lhs, rhs) in &rules {
                if !productive[*lhs]
                    && rhs.iter().all(|s| match s {
                        Symbol::Byte(_) => true,
                        Symbol::Nonterminal(n) => productive[*n as usize],
                    })
                {
                    productive[*lhs] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Self {
            rules,
            start: g.start() as usize,
            nts,
            productive,
        }
    }

    /// `d[a][i][j]`: nonterminal `a` derives `s[i..j]`.
    fn spans(&self, s: &[u8]) -> Vec<Vec<Vec<bool>>> {
        let n = s.len();
        let mut d = vec![vec![vec![false; n + 1]; n + 1]; self.nts];
        loop {
            let mut changed = false;
            for (lhs, rhs) in &self.rules {
                for i in 0..=n {
                    let ends = self.seq_ends(rhs, s, i, &d);
                    for j in ends {
                        if !d[*lhs][i][j] {
                            d[*lhs][i][j] = true;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return d;
            }
        }
    }

    /// End positions `j` such that `rhs` derives `s[i..j]`.
    fn seq_ends(&self, rhs: &[Symbol], s: &[u8], i: usize, d: &[Vec<Vec<bool>>]) -> Vec<usize> {
        let n = s.len();
        let mut reach = vec![false; n + 1];
        reach[i] = true;
        for sym in rhs {
            let mut next = vec![false; n + 1];
            for k in 0..=n {
                if !reach[k] {
                    continue;
                }
                match *sym {
                    Symbol::Byte(b) => {
                        if k < n && s[k] == b {
                            next[k + 1] = true;
                        }
                    }
                    Symbol::Nonterminal(a) => {
                        for j in k..=n {
                            if d[a as usize][k][j] {
                                next[j] = true;
                            }
                        }
                    }
                }
            }
            reach = next;
        }
        (0..=n).filter(|&j| reach[j]).collect()
    }

    pub fn member(&self, s: &[u8]) -> bool {
        self.spans(s)[self.start][0][s.len()]
    }

    /// Some completion of `s` is a member.
    pub fn valid_prefix(&self, s: &[u8]) -> bool {
        let n = s.len();
        let d = self.spans(s);
        // pd[a][i]: `a` derives a string with prefix `s[i..]`.
        let mut pd = vec![vec![false; n + 1]; self.nts];
        for (row, &productive) in pd.iter_mut().zip(&self.productive) {
            row[n] = productive;
        }
        loop {
            let mut changed = false;
            for (lhs, rhs) in &self.rules {
                for i in 0..n {
                    if !pd[*lhs][i] && self.seq_prefix(rhs, s, i, &d, &pd) {
                        pd[*lhs][i] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        pd[self.start][0]
    }

    fn symbol_productive(&self, sym: &Symbol) -> bool {
        match sym {
            Symbol::Byte(_) => true,
            Symbol::Nonterminal(a) => self.productive[*a as usize],
        }
    }

    fn seq_prefix(&self, rhs: &[Symbol], s: &[u8], i: usize, d: &[Vec<Vec<bool>>], pd: &[Vec<bool>]) -> bool {
        let n = s.len();
        if rhs.is_empty() {
            return i == n;
        }
        for m in 0..rhs.len() {
            if !rhs[m + 1..].iter().all(|x| self.symbol_productive(x)) {
                continue;
            }
            for k in self.seq_ends(&rhs[..m], s, i, d) {
                let ok = match rhs[m] {
                    Symbol::Byte(b) => k == n || (n - k == 1 && s[k] == b),
                    Symbol::Nonterminal(a) => pd[a as usize][k],
                };
                if ok {
                    return true;
                }
            }
        }
        false
    }
}

/// Every byte string over `alphabet` of length at most `max_len`.
pub fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &b in alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(b);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Mean of per-run posteriors over runs with positive total weight; the
/// second value counts those runs.
pub fn averaged_posterior(outs: &[RunOutput]) -> (BTreeMap<Vec<TokenId>, f64>, usize) {
    let mut acc: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    let mut live = 0;
    for o in outs {
        let post = o.posterior();
        if post.is_empty() {
            continue;
        }
        live += 1;
        for e in post.entries {
            *acc.entry(e.tokens).or_insert(0.0) += e.weight;
        }
    }
    if live > 0 {
        for v in acc.values_mut() {
            *v /= live as f64;
        }
    }
    (acc, live)
}

/// Total variation between two finite distributions.
pub fn tv<K: Ord + Clone>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut keys: Vec<K> = a.keys().cloned().collect();
    keys.extend(b.keys().cloned());
    keys.sort();
    keys.dedup();
    keys.iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0
}

pub fn runs(config: &MethodConfig, model: &Model, seeds: std::ops::Range<u64>) -> Vec<RunOutput> {
    seeds.map(|s| run(config, model, s).expect("run succeeds")).collect()
}

pub fn instance_runs(inst: &Instance, method: Method, n: usize, seeds: std::ops::Range<u64>) -> Vec<RunOutput> {
    runs(&inst.config(method, n), &inst.model, seeds)
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// One outcome of the trie walk, computed without the trie: masses are
/// summed directly over the vocabulary.
#[derive(Debug, Clone)]
pub struct Walk {
    pub path: Vec<u8>,
    /// Probability of the walk, equal to the inclusion probability of its
    /// last node.
    pub prob: f64,
    /// Per step: `q̄` of every child byte, sorted by byte.
    pub q_bars: Vec<Vec<(u8, f64)>>,
    /// Set members with log local weights `log σ̃(x) − log ι(x)`.
    pub set: Vec<(TokenId, f64)>,
}

/// Enumerates every walk of the character proposal. `allows(bytes)` decides
/// whether `bytes` extends the context to a valid prefix; `phi(token)` is
/// the log conditional of the non-grammar efficient potentials.
pub fn enumerate_walks(
    vocab: &Vocabulary,
    dist: &TokenDistribution,
    allows: &dyn Fn(&[u8]) -> bool,
    allows_eos: bool,
    phi: &dyn Fn(TokenId) -> f64,
) -> Vec<Walk> {
    let mass = |prefix: &[u8]| -> f64 {
        vocab
            .iter()
            .filter(|(_, b)| b.starts_with(prefix))
            .map(|(id, _)| dist.prob(id))
            .sum()
    };
    let mut root_set = Vec::new();
    let eos = vocab.eos();
    if allows_eos && dist.prob(eos) > 0.0 && phi(eos) > f64::NEG_INFINITY {
        root_set.push((eos, dist.logprob(eos) + phi(eos)));
    }
    let mut out = Vec::new();
    let mut stack = vec![Walk {
        path: Vec::new(),
        prob: 1.0,
        q_bars: Vec::new(),
        set: root_set,
    }];
    while let Some(w) = stack.pop() {
        let mut next: Vec<u8> = vocab
            .iter()
            .filter(|(_, b)| b.len() > w.path.len() && b.starts_with(&w.path))
            .map(|(_, b)| b[w.path.len()])
            .collect();
        next.sort_unstable();
        next.dedup();
        let q_bar: Vec<f64> = next
            .iter()
            .map(|&b| {
                let mut p = w.path.clone();
                p.push(b);
                if allows(&p) {
                    mass(&p)
                } else {
                    0.0
                }
            })
            .collect();
        let q: f64 = q_bar.iter().sum();
        if q <= 0.0 {
            out.push(w);
            continue;
        }
        let step: Vec<(u8, f64)> = next.iter().copied().zip(q_bar.iter().copied()).collect();
        for (k, &b) in next.iter().enumerate() {
            let qk = q_bar[k];
            if qk <= 0.0 {
                continue;
            }
            let mut path = w.path.clone();
            path.push(b);
            let prob = w.prob * qk / q;
            let mut set = w.set.clone();
            if let Some((id, _)) = vocab.iter().find(|(_, t)| *t == path.as_slice()) {
                let p = dist.prob(id);
                let f = phi(id);
                if p > 0.0 && f > f64::NEG_INFINITY {
                    set.push((id, p.ln() + f - prob.ln()));
                }
            }
            let mut q_bars = w.q_bars.clone();
            q_bars.push(step.clone());
            stack.push(Walk {
                path,
                prob,
                q_bars,
                set,
            });
        }
    }
    out
}

/// An RNG replaying fixed uniform draws in `[0, 1)`; each `next_u64`
/// yields one draw in the form the float samplers decode.
pub struct Scripted {
    draws: VecDeque<f64>,
}

impl Scripted {
    pub fn new(draws: Vec<f64>) -> Self {
        Self { draws: draws.into() }
    }

    pub fn exhausted(&self) -> bool {
        self.draws.is_empty()
    }
}

impl RngCore for Scripted {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let u = self.draws.pop_front().expect("unscripted draw");
        ((u * (1u64 << 52) as f64) as u64) << 12
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Midpoint draw selecting index `k` from weights `w`.
pub fn midpoint(w: &[f64], k: usize) -> f64 {
    let total: f64 = w.iter().sum();
    let before: f64 = w[..k].iter().sum();
    (before + w[k] / 2.0) / total
}

/// A minimal HTTP next-token server on a loopback port. `reply` maps a
/// context to the JSON body; `None` answers with status 500.
pub struct MockServer {
    pub endpoint: String,
    pub requests: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl MockServer {
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(&[TokenId]) -> Option<String> + Send + Sync + 'static,
    {
        use std::io::{BufRead, BufReader, Read, Write};
        use std::sync::atomic::Ordering;

        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let endpoint = format!("http://{}/next", listener.local_addr().unwrap());
        let requests = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let counter = requests.clone();
        let reply = std::sync::Arc::new(reply);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let reply = reply.clone();
                let counter = counter.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut length = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let line = line.trim_end();
                        if line.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = line.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut body = vec![0u8; length];
                    if reader.read_exact(&mut body).is_err() {
                        return;
                    }
                    counter.fetch_add(1, Ordering::SeqCst);
                    let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                    let context: Vec<TokenId> = request["context"]
                        .as_array()
                        .map(|a| a.iter().filter_map(|v| v.as_u64()).map(|v| v as TokenId).collect())
                        .unwrap_or_default();
                    let (status, text) = match reply(&context) {
                        Some(t) => ("200 OK", t),
                        None => ("500 Internal Server Error", String::from("{}")),
                    };
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                        text.len()
                    );
                });
            }
        });
        Self { endpoint, requests }
    }

    /// Serves `lm`'s conditionals.
    pub fn serving(lm: std::sync::Arc<dyn constrained_smc::LanguageModel>) -> Self {
        Self::start(move |ctx| {
            let d = lm.next_distribution(ctx).ok()?;
            let lp: Vec<Option<f64>> = d.logprobs().iter().map(|&l| l.is_finite().then_some(l)).collect();
            Some(serde_json::json!({ "logprobs": lp }).to_string())
        })
    }
}
