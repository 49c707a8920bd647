//! Backoff n-gram language model over sub-word units with Witten-Bell
//! discounting, its text file format, and the shallow-fusion score.
//!
//! Each sequence is scored with a single `bos` token prepended to the
//! history. The unigram level interpolates with a uniform distribution over
//! the whole vocabulary, so every unit has a finite probability.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{read_input_string, Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct ContextTable {
    /// Natural-log probabilities of the units seen after this context.
    log_probs: BTreeMap<usize, f64>,
    log_backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    vocab: usize,
    bos: usize,
    /// `tables[k]` maps contexts of length `k` to their distribution.
    tables: Vec<HashMap<Vec<usize>, ContextTable>>,
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    /// Stored contexts of length `len`.
    pub fn contexts(&self, len: usize) -> impl Iterator<Item = &Vec<usize>> {
        self.tables.get(len).into_iter().flat_map(|t| t.keys())
    }

    /// Natural-log backoff weight of `context` (0 for unknown contexts).
    pub fn log_backoff(&self, context: &[usize]) -> f64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .map_or(0.0, |c| c.log_backoff)
    }

    /// `log p(token | context)` for an explicit context (no `bos` padding).
    /// Contexts longer than `order - 1` are truncated on the left.
    pub fn context_log_prob(&self, context: &[usize], token: usize) -> f64 {
        let keep = context.len().min(self.order - 1);
        self.score(&context[context.len() - keep..], token)
    }

    fn score(&self, context: &[usize], token: usize) -> f64 {
        let mut ctx = context;
        let mut acc = 0.0;
        loop {
            if let Some(table) = self.tables[ctx.len()].get(ctx) {
                if let Some(lp) = table.log_probs.get(&token) {
                    return acc + lp;
                }
                acc += table.log_backoff;
            }
            if ctx.is_empty() {
                // Unigrams cover the whole vocabulary.
                unreachable!("unit {token} missing from unigram table");
            }
            ctx = &ctx[1..];
        }
    }

    /// `log p(next | history)` using the longest stored context, with `bos`
    /// implicitly prepended to `history`.
    pub fn log_prob(&self, history: &[usize], next: usize) -> Result<f64> {
        if next >= self.vocab {
            return Err(Error::Label {
                label: next,
                classes: self.vocab,
            });
        }
        let k = (self.order - 1).min(history.len() + 1);
        let mut ctx = Vec::with_capacity(k);
        if history.len() < k {
            ctx.push(self.bos);
        }
        ctx.extend_from_slice(&history[history.len() + ctx.len() - k..]);
        Ok(self.score(&ctx, next))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "\\data\\");
        let _ = writeln!(s, "order={} vocab={} bos={}", self.order, self.vocab, self.bos);
        let entries = self.entries();
        for (n, e) in entries.iter().enumerate() {
            let _ = writeln!(s, "ngram {}={}", n + 1, e.len());
        }
        for (n, e) in entries.iter().enumerate() {
            let _ = writeln!(s, "\n\\{}-grams:", n + 1);
            for (gram, lp) in e {
                let bo = if n + 1 < self.order {
                    self.tables[n + 1].get(gram).map_or(0.0, |c| c.log_backoff)
                } else {
                    0.0
                };
                let ids: Vec<String> = gram.iter().map(usize::to_string).collect();
                let _ = writeln!(s, "{lp}\t{}\t{bo}", ids.join(" "));
            }
        }
        let _ = writeln!(s, "\n\\end\\");
        s
    }

    /// Every stored n-gram (context followed by unit), sorted, per order.
    fn entries(&self) -> Vec<Vec<(Vec<usize>, f64)>> {
        self.tables
            .iter()
            .map(|t| {
                let mut grams: Vec<(Vec<usize>, f64)> = t
                    .iter()
                    .flat_map(|(ctx, table)| {
                        table.log_probs.iter().map(move |(&w, &lp)| {
                            let mut g = ctx.clone();
                            g.push(w);
                            (g, lp)
                        })
                    })
                    .collect();
                grams.sort_by(|a, b| a.0.cmp(&b.0));
                grams
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_input_string(path.as_ref())?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::LanguageModel(format!("line {line}: {m}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut header = None;
        for (i, l) in lines.by_ref() {
            if l.starts_with("order=") {
                let mut vals = [0usize; 3];
                for (slot, field) in vals.iter_mut().zip(l.split_whitespace()) {
                    *slot = field
                        .split_once('=')
                        .and_then(|(_, v)| v.parse().ok())
                        .ok_or_else(|| bad(i, "bad header"))?;
                }
                header = Some(vals);
                break;
            }
        }
        let [order, vocab, bos] = header.ok_or_else(|| bad(0, "missing header"))?;
        if order == 0 || vocab == 0 || bos >= vocab {
            return Err(bad(0, "invalid header values"));
        }
        let mut grams: Vec<Vec<(Vec<usize>, f64, f64)>> = vec![Vec::new(); order];
        let mut current: Option<usize> = None;
        for (i, l) in lines {
            if l.is_empty() || l.starts_with("ngram ") {
                continue;
            }
            if l == "\\end\\" {
                break;
            }
            if let Some(n) = l.strip_prefix('\\').and_then(|r| r.strip_suffix("-grams:")) {
                let n: usize = n.parse().map_err(|_| bad(i, "bad section"))?;
                if n == 0 || n > order {
                    return Err(bad(i, "section order out of range"));
                }
                current = Some(n);
                continue;
            }
            let n = current.ok_or_else(|| bad(i, "entry outside a section"))?;
            let mut cols = l.split('\t');
            let (Some(lp), Some(ids), Some(bo)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(bad(i, "expected three tab-separated columns"));
            };
            let lp: f64 = lp.parse().map_err(|_| bad(i, "bad log-prob"))?;
            let bo: f64 = bo.parse().map_err(|_| bad(i, "bad backoff"))?;
            let gram: Vec<usize> = ids
                .split_whitespace()
                .map(|t| t.parse::<usize>().ok().filter(|&v| v < vocab))
                .collect::<Option<_>>()
                .ok_or_else(|| bad(i, "bad unit id"))?;
            if gram.len() != n {
                return Err(bad(i, "n-gram length does not match its section"));
            }
            grams[n - 1].push((gram, lp, bo));
        }
        let mut tables: Vec<HashMap<Vec<usize>, ContextTable>> = vec![HashMap::new(); order];
        let mut backoffs: HashMap<Vec<usize>, f64> = HashMap::new();
        for level in &grams {
            for (g, _, bo) in level {
                backoffs.insert(g.clone(), *bo);
            }
        }
        for level in grams {
            for (mut g, lp, _) in level {
                let w = g.pop().unwrap();
                let entry = tables[g.len()].entry(g.clone()).or_insert_with(|| ContextTable {
                    log_probs: BTreeMap::new(),
                    log_backoff: if g.is_empty() { 0.0 } else { backoffs.get(&g).copied().unwrap_or(0.0) },
                });
                entry.log_probs.insert(w, lp);
            }
        }
        let lm = Self {
            order,
            vocab,
            bos,
            tables,
        };
        if lm.tables[0].get(&Vec::new()).map_or(0, |t| t.log_probs.len()) != vocab {
            return Err(Error::LanguageModel("unigram table does not cover the vocabulary".into()));
        }
        Ok(lm)
    }
}

/// Trains a Witten-Bell backoff model of the given order over unit ids in
/// `0..vocab`.
pub fn train_ngram(sequences: &[Vec<usize>], order: usize, vocab: usize, bos: usize) -> Result<NGramLM> {
    if order == 0 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if bos >= vocab {
        return Err(Error::Config(format!("bos id {bos} outside vocabulary of {vocab}")));
    }
    if sequences.iter().all(Vec::is_empty) {
        return Err(Error::LanguageModel("training corpus is empty".into()));
    }
    // counts[k][context][unit]
    let mut counts: Vec<BTreeMap<Vec<usize>, BTreeMap<usize, f64>>> = vec![BTreeMap::new(); order];
    for seq in sequences {
        let mut padded = Vec::with_capacity(seq.len() + 1);
        padded.push(bos);
        for &t in seq {
            if t >= vocab {
                return Err(Error::Label { label: t, classes: vocab });
            }
            padded.push(t);
        }
        for i in 1..padded.len() {
            for k in 0..order.min(i + 1) {
                let ctx = padded[i - k..i].to_vec();
                *counts[k].entry(ctx).or_default().entry(padded[i]).or_insert(0.0) += 1.0;
            }
        }
    }

    let mut lm = NGramLM {
        order,
        vocab,
        bos,
        tables: vec![HashMap::new(); order],
    };

    // Unigrams: Witten-Bell interpolation with the uniform distribution.
    let uni = counts[0].get(&Vec::new()).cloned().unwrap_or_default();
    let total: f64 = uni.values().sum();
    let types = uni.len() as f64;
    let log_probs = (0..vocab)
        .map(|w| {
            let c = uni.get(&w).copied().unwrap_or(0.0);
            (w, ((c + types / vocab as f64) / (total + types)).ln())
        })
        .collect();
    lm.tables[0].insert(
        Vec::new(),
        ContextTable {
            log_probs,
            log_backoff: 0.0,
        },
    );

    for k in 1..order {
        let mut level = HashMap::new();
        for (ctx, followers) in &counts[k] {
            let c: f64 = followers.values().sum();
            let t = followers.len() as f64;
            let lower = &ctx[1..];
            let table = if followers.len() == vocab {
                ContextTable {
                    log_probs: followers.iter().map(|(&w, &n)| (w, (n / c).ln())).collect(),
                    log_backoff: 0.0,
                }
            } else {
                let seen_lower: f64 = followers.keys().map(|&w| lm.score(lower, w).exp()).sum();
                let leftover = t / (c + t);
                ContextTable {
                    log_probs: followers.iter().map(|(&w, &n)| (w, (n / (c + t)).ln())).collect(),
                    log_backoff: (leftover / (1.0 - seen_lower)).ln(),
                }
            };
            level.insert(ctx.clone(), table);
        }
        lm.tables[k] = level;
    }
    Ok(lm)
}

/// `lm.log_prob(history, next)`.
pub fn lm_logprob(lm: &NGramLM, history: &[usize], next: usize) -> Result<f64> {
    lm.log_prob(history, next)
}

/// Shallow-fusion weights: LM weight, coverage weight, and the attention
/// mass a frame needs to count as covered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub lambda: f64,
    pub eta: f64,
    pub beta: f64,
}

impl FusionWeights {
    pub fn new(lambda: f64, eta: f64, beta: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(eta >= 0.0) {
            return Err(Error::Config("fusion weights must be non-negative".into()));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Config(format!("coverage threshold {beta} outside (0, 1)")));
        }
        Ok(Self { lambda, eta, beta })
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            eta: 0.0,
            beta: 0.5,
        }
    }
}

/// `model_lp + λ·lm_lp + η·coverage`
#[inline]
pub fn fused_score(model_lp: f64, lm_lp: f64, coverage: f64, w: &FusionWeights) -> f64 {
    model_lp + w.lambda * lm_lp + w.eta * coverage
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_corpus(seed: u64, vocab: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..40)
            .map(|_| (0..rng.gen_range(1..10)).map(|_| rng.gen_range(2..vocab)).collect())
            .collect()
    }

    #[test]
    fn unigram_hand_counts() {
        // "a a b" with a=0, b=1, bos=2 and V=3: N=3 tokens, T=2 types.
        let lm = train_ngram(&[vec![0, 0, 1]], 1, 3, 2).unwrap();
        let p = |w| lm.log_prob(&[], w).unwrap().exp();
        assert!((p(0) - (2.0 + 2.0 / 3.0) / 5.0).abs() < 1e-12);
        assert!((p(1) - (1.0 + 2.0 / 3.0) / 5.0).abs() < 1e-12);
        assert!((p(2) - (2.0 / 3.0) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn bigram_hand_counts() {
        // Context `a` is followed by a once and b once: c=2, T=2.
        let lm = train_ngram(&[vec![0, 0, 1]], 2, 3, 2).unwrap();
        let p = |h: &[usize], w| lm.log_prob(h, w).unwrap().exp();
        assert!((p(&[0], 0) - 0.25).abs() < 1e-12);
        assert!((p(&[0], 1) - 0.25).abs() < 1e-12);
        // Unseen `a bos` backs off: α(a)·p(bos).
        let alpha = lm.log_backoff(&[0]).exp();
        let uni = |w| lm.context_log_prob(&[], w).exp();
        assert!((p(&[0], 2) - alpha * uni(2)).abs() < 1e-12);
        let uni_seen = uni(0) + uni(1);
        assert!((alpha - 0.5 / (1.0 - uni_seen)).abs() < 1e-12);
    }

    #[test]
    fn distributions_normalize() {
        let vocab = 9;
        let corpus = random_corpus(3, vocab);
        let lm = train_ngram(&corpus, 3, vocab, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let hist: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(2..vocab)).collect();
            let total: f64 = (0..vocab).map(|w| lm.log_prob(&hist, w).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-6, "history {hist:?}: {total}");
            for w in 0..vocab {
                assert!(lm.log_prob(&hist, w).unwrap() <= 0.0);
            }
        }
    }

    #[test]
    fn unseen_bigram_backs_off() {
        let lm = train_ngram(&[vec![3, 4], vec![3, 4], vec![5]], 2, 7, 1).unwrap();
        let direct = lm.log_prob(&[3], 5).unwrap();
        let backed = lm.log_backoff(&[3]) + lm.context_log_prob(&[], 5);
        assert!((direct - backed).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let corpus = random_corpus(8, 8);
        let lm = train_ngram(&corpus, 3, 8, 1).unwrap();
        let text = lm.to_text();
        let back = NGramLM::parse(&text).unwrap();
        assert_eq!(back.to_text(), text);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let hist: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(2..8)).collect();
            let w = rng.gen_range(0..8);
            assert_eq!(lm.log_prob(&hist, w).unwrap(), back.log_prob(&hist, w).unwrap());
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(train_ngram(&[vec![]], 2, 4, 1).is_err());
        assert!(train_ngram(&[vec![1]], 0, 4, 1).is_err());
    }

    #[test]
    fn fusion_arithmetic() {
        let off = FusionWeights::default();
        assert_eq!(fused_score(-2.5, -7.0, 3.0, &off), -2.5);
        let w = FusionWeights::new(1.0, 0.0, 0.5).unwrap();
        assert_eq!(fused_score(-2.0, -3.0, 9.0, &w), -5.0);
        let w = FusionWeights::new(0.5, 2.0, 0.5).unwrap();
        assert_eq!(fused_score(-2.0, -3.0, 1.0, &w), -1.5);
        assert!(FusionWeights::new(-1.0, 0.0, 0.5).is_err());
        assert!(FusionWeights::new(0.0, 0.0, 1.0).is_err());
    }
}
