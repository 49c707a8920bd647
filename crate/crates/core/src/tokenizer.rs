//! Grapheme and wordpiece inventories.
//!
//! Every inventory starts with four control units (`<eps>`, `<s>`, `</s>`,
//! `<unk>`). Grapheme inventories add a word separator `<sp>` and one unit
//! per character. Wordpiece units carry a leading `_` when they start a word
//! and are word-internal continuations otherwise.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{read_input_string, Error, Result};

pub const EPSILON: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Word separator; present in grapheme mode only.
pub const SEPARATOR: usize = 4;

const SPECIALS: [&str; 4] = ["<eps>", "<s>", "</s>", "<unk>"];
const SEPARATOR_UNIT: &str = "<sp>";
pub const WORD_MARKER: char = '_';

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenizerMode {
    Grapheme,
    Wordpiece,
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Grapheme => "grapheme",
            TokenizerMode::Wordpiece => "wordpiece",
        })
    }
}

impl FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grapheme" => Ok(TokenizerMode::Grapheme),
            "wordpiece" => Ok(TokenizerMode::Wordpiece),
            other => Err(Error::Config(format!("unknown tokenizer mode `{other}`"))),
        }
    }
}

/// How word boundaries appear in a token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelimiterPolicy {
    /// An explicit separator token follows every word except the last, and
    /// is emitted together with the word it follows.
    TrailingSeparator(usize),
    /// Word-initial units carry the `_` marker; no separator token.
    WordStartMarker,
}

pub fn word_delimiters(mode: TokenizerMode) -> DelimiterPolicy {
    match mode {
        TokenizerMode::Grapheme => DelimiterPolicy::TrailingSeparator(SEPARATOR),
        TokenizerMode::Wordpiece => DelimiterPolicy::WordStartMarker,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordInventory {
    mode: TokenizerMode,
    units: Vec<String>,
    index: HashMap<String, usize>,
    max_unit_chars: usize,
}

impl SubwordInventory {
    fn from_units(mode: TokenizerMode, units: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if index.insert(u.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate unit `{u}`")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if units.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Config(format!("unit {i} must be `{s}`")));
            }
        }
        if mode == TokenizerMode::Grapheme
            && units.get(SEPARATOR).map(String::as_str) != Some(SEPARATOR_UNIT)
        {
            return Err(Error::Config(format!(
                "grapheme unit {SEPARATOR} must be `{SEPARATOR_UNIT}`"
            )));
        }
        let max_unit_chars = units.iter().map(|u| u.chars().count()).max().unwrap_or(1);
        Ok(Self {
            mode,
            units,
            index,
            max_unit_chars,
        })
    }

    /// Character inventory covering every character of `transcripts`.
    pub fn graphemes<'a>(transcripts: impl IntoIterator<Item = &'a str>) -> Self {
        let chars: BTreeSet<char> = transcripts
            .into_iter()
            .flat_map(|t| t.chars())
            .filter(|c| !c.is_whitespace())
            .collect();
        let mut units: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        units.push(SEPARATOR_UNIT.into());
        units.extend(chars.into_iter().map(String::from));
        Self::from_units(TokenizerMode::Grapheme, units).expect("grapheme units are unique")
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn unit(&self, id: usize) -> Option<&str> {
        self.units.get(id).map(String::as_str)
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    /// Units other than the control symbols, i.e. what a model may emit as
    /// content.
    pub fn content_ids(&self) -> std::ops::Range<usize> {
        SPECIALS.len()..self.units.len()
    }

    pub fn is_control(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Tokens of each whitespace-separated word, delimiters included, so that
    /// their concatenation equals [`encode`](Self::encode).
    pub fn encode_words(&self, text: &str) -> Vec<Vec<usize>> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let n = words.len();
        words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut toks = self.encode_word(w);
                if let DelimiterPolicy::TrailingSeparator(sep) = word_delimiters(self.mode) {
                    if i + 1 < n {
                        toks.push(sep);
                    }
                }
                toks
            })
            .collect()
    }

    /// Greedy longest-match segmentation.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.encode_words(text).into_iter().flatten().collect()
    }

    fn encode_word(&self, word: &str) -> Vec<usize> {
        match self.mode {
            TokenizerMode::Grapheme => {
                let mut buf = [0u8; 4];
                word.chars()
                    .map(|c| self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK))
                    .collect()
            }
            TokenizerMode::Wordpiece => self.longest_match(word),
        }
    }

    fn longest_match(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut candidate = String::new();
        while pos < chars.len() {
            let longest = self.max_unit_chars.min(chars.len() - pos + 1);
            let mut found = None;
            for len in (1..=longest).rev() {
                if pos + len > chars.len() {
                    continue;
                }
                candidate.clear();
                if pos == 0 {
                    candidate.push(WORD_MARKER);
                }
                candidate.extend(&chars[pos..pos + len]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, len));
                    break;
                }
            }
            match found {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    out.push(UNK);
                    pos += 1;
                }
            }
        }
        out
    }

    /// Concatenates units back into text, dropping control tokens.
    pub fn decode(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        for &t in tokens {
            match t {
                EPSILON | SOS | EOS => {}
                UNK => out.push_str("<unk>"),
                _ => {
                    let Some(unit) = self.unit(t) else { continue };
                    match self.mode {
                        TokenizerMode::Grapheme if t == SEPARATOR => out.push(' '),
                        TokenizerMode::Grapheme => out.push_str(unit),
                        TokenizerMode::Wordpiece => {
                            if let Some(rest) = unit.strip_prefix(WORD_MARKER) {
                                if !out.is_empty() {
                                    out.push(' ');
                                }
                                out.push_str(rest);
                            } else {
                                out.push_str(unit);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("mode={} version=1\n", self.mode);
        for u in &self.units {
            s.push_str(u);
            s.push('\n');
        }
        s
    }

    /// Short content hash, used to tie checkpoints to their inventory.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let mut mode = None;
        let mut version = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("mode", m)) => mode = Some(m.parse::<TokenizerMode>()?),
                Some(("version", v)) => version = Some(v.to_string()),
                _ => {}
            }
        }
        let (Some(mode), Some("1")) = (mode, version.as_deref()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("bad inventory header `{header}`"),
            });
        };
        let units = lines.map(str::to_string).collect();
        Self::from_units(mode, units)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_input_string(path)?, path)
    }
}

/// Result of wordpiece training with the corpus log-likelihood after each
/// merge (first entry: the character segmentation).
#[derive(Debug, Clone)]
pub struct WordpieceTraining {
    pub inventory: SubwordInventory,
    pub log_likelihoods: Vec<f64>,
    pub merges: Vec<(String, String)>,
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Unigram log-likelihood of a unit-count table.
fn unigram_log_likelihood(counts: &HashMap<String, f64>) -> f64 {
    let total: f64 = counts.values().sum();
    counts.values().map(|&c| xlogx(c)).sum::<f64>() - xlogx(total)
}

/// Non-overlapping left-to-right occurrences of each adjacent pair.
fn pair_counts(segmented: &[(Vec<String>, f64)]) -> BTreeMap<(String, String), f64> {
    let mut counts: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (units, freq) in segmented {
        let mut last_start: HashMap<(&str, &str), usize> = HashMap::new();
        for i in 0..units.len().saturating_sub(1) {
            let key = (units[i].as_str(), units[i + 1].as_str());
            if let Some(&s) = last_start.get(&key) {
                if s + 1 == i {
                    continue;
                }
            }
            last_start.insert(key, i);
            *counts
                .entry((units[i].clone(), units[i + 1].clone()))
                .or_insert(0.0) += freq;
        }
    }
    counts
}

fn apply_merge(units: &mut Vec<String>, a: &str, b: &str, merged: &str) {
    let mut out = Vec::with_capacity(units.len());
    let mut i = 0;
    while i < units.len() {
        if i + 1 < units.len() && units[i] == a && units[i + 1] == b {
            out.push(merged.to_string());
            i += 2;
        } else {
            out.push(std::mem::take(&mut units[i]));
            i += 1;
        }
    }
    *units = out;
}

/// Builds a wordpiece inventory of `target_size` content units.
///
/// Starts from characters (word-initial ones marked with `_`) and repeatedly
/// merges the adjacent pair whose merge most increases the unigram
/// log-likelihood of the segmented training text, stopping at the target size
/// or when no merge increases it. Ties go to the lexicographically smallest
/// pair.
pub fn train_wordpieces<'a>(
    transcripts: impl IntoIterator<Item = &'a str>,
    target_size: usize,
) -> Result<WordpieceTraining> {
    let mut words: BTreeMap<&str, f64> = BTreeMap::new();
    for t in transcripts {
        for w in t.split_whitespace() {
            *words.entry(w).or_insert(0.0) += 1.0;
        }
    }
    if words.is_empty() {
        return Err(Error::Config("wordpiece corpus is empty".into()));
    }
    let mut segmented: Vec<(Vec<String>, f64)> = words
        .iter()
        .map(|(w, &f)| {
            let units = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{WORD_MARKER}{c}")
                    } else {
                        c.to_string()
                    }
                })
                .collect();
            (units, f)
        })
        .collect();

    let base: BTreeSet<String> = segmented.iter().flat_map(|(u, _)| u.iter().cloned()).collect();
    if target_size < base.len() {
        return Err(Error::Config(format!(
            "wordpiece target size {target_size} is below the {} base units",
            base.len()
        )));
    }
    let mut units: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    units.extend(base.iter().cloned());
    let mut known: BTreeSet<String> = base;

    let mut counts: HashMap<String, f64> = HashMap::new();
    for (u, f) in &segmented {
        for unit in u {
            *counts.entry(unit.clone()).or_insert(0.0) += f;
        }
    }
    let mut log_likelihoods = vec![unigram_log_likelihood(&counts)];
    let mut merges = Vec::new();

    while units.len() - SPECIALS.len() < target_size {
        let total: f64 = counts.values().sum();
        let mut best: Option<(f64, (String, String))> = None;
        for ((a, b), n) in pair_counts(&segmented) {
            let get = |k: &str| counts.get(k).copied().unwrap_or(0.0);
            let merged = format!("{a}{b}");
            let mut delta = -(xlogx(total - n) - xlogx(total));
            if a == b {
                delta += xlogx(get(&a) - 2.0 * n) - xlogx(get(&a));
            } else {
                delta += xlogx(get(&a) - n) - xlogx(get(&a));
                delta += xlogx(get(&b) - n) - xlogx(get(&b));
            }
            delta += xlogx(get(&merged) + n) - xlogx(get(&merged));
            // Pairs are visited in lexicographic order, so strict improvement
            // keeps the smallest pair on ties.
            if delta > 1e-12 && best.as_ref().map_or(true, |(d, _)| delta > *d) {
                best = Some((delta, (a, b)));
            }
        }
        let Some((_, (a, b))) = best else { break };
        let merged = format!("{a}{b}");
        for (u, _) in &mut segmented {
            apply_merge(u, &a, &b, &merged);
        }
        counts.clear();
        for (u, f) in &segmented {
            for unit in u {
                *counts.entry(unit.clone()).or_insert(0.0) += f;
            }
        }
        log_likelihoods.push(unigram_log_likelihood(&counts));
        if known.insert(merged.clone()) {
            units.push(merged);
        }
        merges.push((a, b));
    }

    Ok(WordpieceTraining {
        inventory: SubwordInventory::from_units(TokenizerMode::Wordpiece, units)?,
        log_likelihoods,
        merges,
    })
}
