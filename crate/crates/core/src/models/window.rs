use std::ops::{Range, RangeInclusive};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FRAME_SHIFT_MS;

/// Streaming attention window: block size, blocks looked back over, and
/// frames of look-ahead past the block end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub block_size: usize,
    /// Number of blocks visible counting the current one; 0 and 1 both
    /// mean the current block only.
    pub lookback: usize,
    pub lookahead: usize,
}

impl WindowSpec {
    pub fn new(block_size: usize, lookback: usize, lookahead: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        Ok(Self {
            block_size,
            lookback,
            lookahead,
        })
    }

    /// 0-based half-open frame range visible to block `block` (0-based).
    pub fn frames(&self, block: usize, total_frames: usize) -> Range<usize> {
        let w = self.block_size;
        let back = self.lookback.max(1) - 1;
        let start = block.saturating_sub(back) * w;
        let end = ((block + 1) * w + self.lookahead).min(total_frames);
        start..end
    }

    /// Highest 0-based frame index visible to `block`, ignoring utterance end.
    pub fn last_visible_frame(&self, block: usize) -> usize {
        (block + 1) * self.block_size + self.lookahead - 1
    }
}

/// 1-based inclusive range `max(1, (b-k)W+1) ..= min(T, bW + lookahead)` for
/// block `b` (1-based).
pub fn attention_window(block: usize, spec: &WindowSpec, total_frames: usize) -> RangeInclusive<usize> {
    let r = spec.frames(block.max(1) - 1, total_frames);
    r.start + 1..=r.end
}

/// Algorithmic delay of a window: block duration plus look-ahead.
pub fn latency_ms(spec: &WindowSpec) -> u64 {
    (spec.block_size as u64 + spec.lookahead as u64) * u64::from(FRAME_SHIFT_MS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_block_clamps_left() {
        let s = WindowSpec::new(10, 20, 5).unwrap();
        assert_eq!(attention_window(1, &s, 100), 1..=15);
    }

    #[test]
    fn lookback_one_block() {
        let s = WindowSpec::new(10, 1, 5).unwrap();
        assert_eq!(attention_window(3, &s, 100), 21..=35);
        let s = WindowSpec::new(10, 2, 5).unwrap();
        assert_eq!(attention_window(3, &s, 100), 11..=35);
    }

    #[test]
    fn zero_lookback_is_current_block() {
        let s0 = WindowSpec::new(10, 0, 0).unwrap();
        let s1 = WindowSpec::new(10, 1, 0).unwrap();
        assert_eq!(attention_window(4, &s0, 100), 31..=40);
        assert_eq!(attention_window(4, &s0, 100), attention_window(4, &s1, 100));
    }

    #[test]
    fn last_block_clamps_right() {
        let s = WindowSpec::new(10, 2, 50).unwrap();
        assert_eq!(attention_window(3, &s, 23), 11..=23);
    }

    #[test]
    fn latencies() {
        assert_eq!(latency_ms(&WindowSpec::new(10, 20, 5).unwrap()), 450);
        assert_eq!(latency_ms(&WindowSpec::new(5, 20, 5).unwrap()), 300);
        assert_eq!(latency_ms(&WindowSpec::new(1, 0, 0).unwrap()), 30);
    }
}
