//! Per-block training targets built from word alignments.
//!
//! All tokens of a word go to the block containing the word's last frame, and
//! every block is closed by exactly one epsilon.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::frontend::WordAlignment;
use crate::tokenizer::{SubwordInventory, EPSILON};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTargets {
    pub block_size: usize,
    pub per_block: Vec<Vec<usize>>,
    pub flattened: Vec<usize>,
}

impl BlockTargets {
    pub fn num_blocks(&self) -> usize {
        self.per_block.len()
    }

    /// Block index of every position in `flattened`.
    pub fn block_of_each(&self) -> Vec<usize> {
        self.per_block
            .iter()
            .enumerate()
            .flat_map(|(b, toks)| std::iter::repeat(b).take(toks.len()))
            .collect()
    }

    /// Largest number of non-epsilon labels in any block.
    pub fn max_block_labels(&self) -> usize {
        self.per_block.iter().map(|b| b.len() - 1).max().unwrap_or(0)
    }

    pub fn content_tokens(&self) -> Vec<usize> {
        self.flattened.iter().copied().filter(|&t| t != EPSILON).collect()
    }

    /// One line per block, labels rendered through `inventory`.
    pub fn dump(&self, utterance: &str, inventory: &SubwordInventory) -> String {
        let mut s = String::new();
        for (b, toks) in self.per_block.iter().enumerate() {
            let units: Vec<&str> = toks.iter().map(|&t| inventory.unit(t).unwrap_or("?")).collect();
            let _ = writeln!(s, "{utterance}\tblock {b}\t{}", units.join(" "));
        }
        s
    }
}

/// `ceil(frames / block_size)`.
pub fn num_blocks(frames: usize, block_size: usize) -> Result<usize> {
    if block_size == 0 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    Ok(frames.div_ceil(block_size))
}

/// Places each word's tokens in block `end_frame / block_size` and closes
/// every block with epsilon.
pub fn build_block_targets(
    utterance: &str,
    alignment: &WordAlignment,
    tokens_per_word: &[Vec<usize>],
    frames: usize,
    block_size: usize,
    max_per_block: usize,
) -> Result<BlockTargets> {
    alignment.validate(frames, utterance)?;
    if tokens_per_word.len() != alignment.entries.len() {
        return Err(Error::Alignment {
            utterance: utterance.to_string(),
            message: format!(
                "{} aligned words but {} tokenized words",
                alignment.entries.len(),
                tokens_per_word.len()
            ),
        });
    }
    let blocks = num_blocks(frames, block_size)?;
    let mut per_block: Vec<Vec<usize>> = vec![Vec::new(); blocks];
    for (entry, toks) in alignment.entries.iter().zip(tokens_per_word) {
        if toks.is_empty() {
            return Err(Error::Alignment {
                utterance: utterance.to_string(),
                message: format!("word `{}` has no tokens", entry.word),
            });
        }
        if toks.contains(&EPSILON) {
            return Err(Error::Alignment {
                utterance: utterance.to_string(),
                message: format!("word `{}` tokenizes to epsilon", entry.word),
            });
        }
        per_block[entry.end_frame / block_size].extend_from_slice(toks);
    }
    for (b, toks) in per_block.iter_mut().enumerate() {
        if toks.len() > max_per_block {
            return Err(Error::CapExceeded {
                utterance: utterance.to_string(),
                block: b,
                count: toks.len(),
                cap: max_per_block,
            });
        }
        toks.push(EPSILON);
    }
    let flattened = per_block.iter().flatten().copied().collect();
    Ok(BlockTargets {
        block_size,
        per_block,
        flattened,
    })
}

/// Default cap: two more than the busiest block seen in training data.
pub fn default_cap(max_observed: usize) -> usize {
    max_observed + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::AlignedWord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn align(spans: &[(usize, usize)]) -> WordAlignment {
        WordAlignment {
            entries: spans
                .iter()
                .enumerate()
                .map(|(i, &(s, e))| AlignedWord {
                    word: format!("w{i}"),
                    start_frame: s,
                    end_frame: e,
                })
                .collect(),
        }
    }

    const A: usize = 10;
    const B: usize = 11;
    const C: usize = 12;
    const D: usize = 13;

    #[test]
    fn block_count() {
        assert_eq!(num_blocks(23, 10).unwrap(), 3);
        assert_eq!(num_blocks(20, 10).unwrap(), 2);
        assert_eq!(num_blocks(1, 5).unwrap(), 1);
        assert!(num_blocks(5, 0).is_err());
    }

    #[test]
    fn direct_placement() {
        let bt = build_block_targets("u", &align(&[(0, 7), (9, 12)]), &[vec![A, B], vec![C, D]], 20, 10, 4)
            .unwrap();
        assert_eq!(bt.per_block, vec![vec![A, B, EPSILON], vec![C, D, EPSILON]]);
    }

    #[test]
    fn empty_blocks_hold_only_epsilon() {
        let bt = build_block_targets("u", &align(&[(0, 3)]), &[vec![A, B]], 25, 10, 4).unwrap();
        assert_eq!(bt.per_block, vec![vec![A, B, EPSILON], vec![EPSILON], vec![EPSILON]]);
        assert_eq!(bt.flattened.len(), 2 + 3);
    }

    #[test]
    fn boundary_frame_belongs_to_later_block() {
        let bt = build_block_targets("u", &align(&[(0, 10)]), &[vec![A]], 20, 10, 4).unwrap();
        assert_eq!(bt.per_block, vec![vec![EPSILON], vec![A, EPSILON]]);
        let bt = build_block_targets("u", &align(&[(0, 9)]), &[vec![A]], 20, 10, 4).unwrap();
        assert_eq!(bt.per_block, vec![vec![A, EPSILON], vec![EPSILON]]);
    }

    #[test]
    fn cap_exceeded_names_block() {
        let err = build_block_targets("utt7", &align(&[(0, 2), (3, 4)]), &[vec![A, B], vec![C]], 10, 5, 2)
            .unwrap_err();
        match err {
            Error::CapExceeded {
                utterance,
                block,
                count,
                cap,
            } => {
                assert_eq!((utterance.as_str(), block, count, cap), ("utt7", 0, 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Random alignments: the epsilon-stripped target must equal the word
    /// tokens in order, re-derived by sorting (block, word) pairs.
    #[test]
    fn randomized_alignments_preserve_token_order() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = rng.gen_range(1..60);
            let w = rng.gen_range(1..12);
            let mut spans = Vec::new();
            let mut t = 0;
            while t < frames {
                let len = rng.gen_range(1..6).min(frames - t);
                spans.push((t, t + len - 1));
                t += len + rng.gen_range(0..3);
            }
            let toks: Vec<Vec<usize>> = spans
                .iter()
                .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(4..20)).collect())
                .collect();
            let bt = build_block_targets("u", &align(&spans), &toks, frames, w, 1000).unwrap();

            let mut expected: Vec<(usize, usize, usize)> = Vec::new();
            for (i, (span, tk)) in spans.iter().zip(&toks).enumerate() {
                for (j, &tok) in tk.iter().enumerate() {
                    expected.push((span.1 / w * 1000 + i, j, tok));
                }
            }
            expected.sort();
            let want: Vec<usize> = expected.into_iter().map(|e| e.2).collect();
            assert_eq!(bt.content_tokens(), want, "seed {seed}");
            assert_eq!(bt.flattened.len(), want.len() + frames.div_ceil(w));
            for b in &bt.per_block {
                assert_eq!(b.iter().filter(|&&t| t == EPSILON).count(), 1);
                assert_eq!(*b.last().unwrap(), EPSILON);
            }
        }
    }
}
