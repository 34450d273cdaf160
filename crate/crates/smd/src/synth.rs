//! Synthetic trace generators with seed control: streaming, uniform random,
//! pointer chase, and hot-row hammering patterns.

use serde::Deserialize;

use crate::frontend::{AccessKind, TraceRecord};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Sequential cache-line walk over the footprint.
    Streaming,
    /// Uniform random lines over the footprint.
    Random,
    /// Dependent walk along a random permutation cycle; one outstanding
    /// miss at a time.
    PointerChase,
    /// Alternating activations of two conflicting rows plus background
    /// traffic, the RowHammer-style worst case for a row buffer.
    HotRow,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub records: u64,
    /// Non-memory instructions between accesses.
    pub bubbles: u64,
    pub footprint_bytes: u64,
    pub stride_bytes: u64,
    pub write_fraction: f64,
    /// Fraction of hot-row accesses in the hot-row pattern.
    pub hot_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Streaming,
            records: 100_000,
            bubbles: 2,
            footprint_bytes: 64 << 20,
            stride_bytes: 64,
            write_fraction: 0.2,
            hot_fraction: 0.9,
        }
    }
}

const BASE_VADDR: u64 = 0x1000_0000;

/// Deterministic trace for one core. Different cores should pass different
/// seeds so multi-core runs do not replay identical address streams.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Vec<TraceRecord> {
    let mut rng = SimRng::substream(seed, "synthetic");
    let lines = (spec.footprint_bytes / 64).max(1);
    let mut out = Vec::with_capacity(spec.records as usize);
    let mut push = |vaddr: u64, write: bool, dependent: bool, out: &mut Vec<TraceRecord>| {
        out.push(TraceRecord {
            bubbles: spec.bubbles,
            vaddr,
            kind: if write {
                AccessKind::Write
            } else {
                AccessKind::Read
            },
            dependent,
        });
    };
    match spec.kind {
        SyntheticKind::Streaming => {
            for i in 0..spec.records {
                let offset = (i * spec.stride_bytes) % spec.footprint_bytes;
                let write = rng.chance(spec.write_fraction);
                push(BASE_VADDR + offset, write, false, &mut out);
            }
        }
        SyntheticKind::Random => {
            for _ in 0..spec.records {
                let line = rng.next_below(lines);
                let write = rng.chance(spec.write_fraction);
                push(BASE_VADDR + line * 64, write, false, &mut out);
            }
        }
        SyntheticKind::PointerChase => {
            // Fisher-Yates permutation; follow next[] as a single cycle.
            let n = lines.min(1 << 20) as usize;
            let mut perm: Vec<u32> = (0..n as u32).collect();
            for i in (1..n).rev() {
                let j = rng.next_below(i as u64 + 1) as usize;
                perm.swap(i, j);
            }
            let mut pos = 0usize;
            for _ in 0..spec.records {
                let line = u64::from(perm[pos]);
                push(BASE_VADDR + line * 64, false, true, &mut out);
                pos = (pos + 1) % n;
            }
        }
        SyntheticKind::HotRow => {
            // Two 8 KiB-apart hot lines alternate so each access conflicts
            // in the row buffer; the rest is uniform background traffic.
            let hot_a = 0u64;
            let hot_b = 8192 / 64;
            let mut flip = false;
            for _ in 0..spec.records {
                if rng.chance(spec.hot_fraction) {
                    let line = if flip { hot_b } else { hot_a };
                    flip = !flip;
                    push(BASE_VADDR + line * 64, false, false, &mut out);
                } else {
                    let line = rng.next_below(lines);
                    let write = rng.chance(spec.write_fraction);
                    push(BASE_VADDR + line * 64, write, false, &mut out);
                }
            }
        }
    }
    out
}
