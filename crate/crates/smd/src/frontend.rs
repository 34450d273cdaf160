//! Trace ingestion and the lightweight multi-core model that turns traces
//! into timed memory requests.
//!
//! The core model is limit-based: up to four instructions issue per core
//! cycle, non-memory "bubbles" retire immediately, and memory instructions
//! occupy a 128-entry window until their access completes. Misses allocate
//! MSHRs (eight per core) and become memory requests; a full window or MSHR
//! file stalls issue. Dependent accesses (synthetic pointer chases) wait for
//! the previous memory instruction to finish before issuing.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// Non-memory instructions preceding this access.
    pub bubbles: u64,
    pub vaddr: u64,
    pub kind: AccessKind,
    /// The access may not issue until the previous memory instruction has
    /// completed. Text traces never set this; synthetic pointer chases do.
    pub dependent: bool,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {0}: expected \"bubbles 0xVADDR R|W\", got {1:?}")]
    Malformed(usize, String),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses the text trace format: one record per line, `bubbles 0xVADDR R|W`.
pub fn parse_trace<R: Read>(stream: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(stream).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_ascii_whitespace();
        let (Some(bubbles), Some(vaddr), Some(kind), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(TraceError::Malformed(lineno, line.clone()));
        };
        let bubbles: u64 = bubbles
            .parse()
            .map_err(|_| TraceError::Malformed(lineno, line.clone()))?;
        let vaddr = vaddr
            .strip_prefix("0x")
            .or_else(|| vaddr.strip_prefix("0X"))
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| TraceError::Malformed(lineno, line.clone()))?;
        let kind = match kind {
            "R" => AccessKind::Read,
            "W" => AccessKind::Write,
            _ => return Err(TraceError::Malformed(lineno, line.clone())),
        };
        out.push(TraceRecord {
            bubbles,
            vaddr,
            kind,
            dependent: false,
        });
    }
    Ok(out)
}

/// Loads a trace file; `.gz` paths are gunzipped on the fly.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse_trace(flate2::read::GzDecoder::new(file))
    } else {
        parse_trace(file)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("physical frames exhausted after {0} pages")]
    FramesExhausted(u64),
}

const PAGE_BITS: u32 = 12;

/// Virtual-to-physical mapper: each new 4 KiB virtual page (per address
/// space) gets a random physical frame, drawn without replacement.
#[derive(Debug, Clone)]
pub struct PageMapper {
    rng: SimRng,
    frames: u64,
    used: Vec<u64>,
    allocated: u64,
    map: std::collections::BTreeMap<(u32, u64), u64>,
}

impl PageMapper {
    pub fn new(total_bytes: u64, rng: SimRng) -> Self {
        let frames = total_bytes >> PAGE_BITS;
        assert!(frames > 0);
        Self {
            rng,
            frames,
            used: vec![0; frames.div_ceil(64) as usize],
            allocated: 0,
            map: std::collections::BTreeMap::new(),
        }
    }

    fn mark(&mut self, frame: u64) {
        self.used[(frame / 64) as usize] |= 1 << (frame % 64);
    }

    fn is_used(&self, frame: u64) -> bool {
        self.used[(frame / 64) as usize] & (1 << (frame % 64)) != 0
    }

    pub fn translate(&mut self, asid: u32, vaddr: u64) -> Result<u64, MapError> {
        let vpage = vaddr >> PAGE_BITS;
        let offset = vaddr & ((1 << PAGE_BITS) - 1);
        if let Some(&frame) = self.map.get(&(asid, vpage)) {
            return Ok((frame << PAGE_BITS) | offset);
        }
        if self.allocated >= self.frames {
            return Err(MapError::FramesExhausted(self.allocated));
        }
        // Rejection-sample a free frame; fall back to a linear probe once the
        // occupancy makes rejection slow.
        let mut frame = self.rng.next_below(self.frames);
        let mut tries = 0;
        while self.is_used(frame) {
            tries += 1;
            if tries > 64 {
                while self.is_used(frame) {
                    frame = (frame + 1) % self.frames;
                }
                break;
            }
            frame = self.rng.next_below(self.frames);
        }
        self.mark(frame);
        self.allocated += 1;
        self.map.insert((asid, vpage), frame);
        Ok((frame << PAGE_BITS) | offset)
    }

    pub fn allocated_frames(&self) -> u64 {
        self.allocated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlcOutcome {
    Hit,
    /// Fill required; a dirty victim line may need writing back.
    Miss { writeback: Option<u64> },
}

#[derive(Debug, Clone, Copy)]
struct Line {
    tag: u64,
    dirty: bool,
    lru: u64,
    valid: bool,
}

/// Set-associative writeback LLC with LRU replacement, addressed by 64 B
/// line index.
#[derive(Debug, Clone)]
pub struct LlcModel {
    sets: Vec<Vec<Line>>,
    set_bits: u32,
    epoch: u64,
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
}

impl LlcModel {
    pub fn new(capacity_bytes: u64, ways: u32, line_bytes: u32) -> Self {
        let lines = capacity_bytes / u64::from(line_bytes);
        let sets = (lines / u64::from(ways)).max(1);
        assert!(sets.is_power_of_two(), "set count must be a power of two");
        Self {
            sets: vec![
                vec![
                    Line {
                        tag: 0,
                        dirty: false,
                        lru: 0,
                        valid: false
                    };
                    ways as usize
                ];
                sets as usize
            ],
            set_bits: sets.trailing_zeros(),
            epoch: 0,
            hits: 0,
            misses: 0,
            writebacks: 0,
        }
    }

    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }

    /// Residency check without touching LRU state.
    pub fn probe(&self, line_addr: u64) -> bool {
        let set = (line_addr & ((1 << self.set_bits) - 1)) as usize;
        let tag = line_addr >> self.set_bits;
        self.sets[set].iter().any(|l| l.valid && l.tag == tag)
    }

    /// Access by line index (paddr >> 6). A miss reserves the line (the fill
    /// is assumed to complete; timing is handled by the MSHR machinery).
    pub fn access(&mut self, line_addr: u64, write: bool) -> LlcOutcome {
        self.epoch += 1;
        let set = (line_addr & ((1 << self.set_bits) - 1)) as usize;
        let tag = line_addr >> self.set_bits;
        let ways = &mut self.sets[set];
        if let Some(l) = ways.iter_mut().filter(|l| l.valid).find(|l| l.tag == tag) {
            l.lru = self.epoch;
            l.dirty |= write;
            self.hits += 1;
            return LlcOutcome::Hit;
        }
        self.misses += 1;
        let victim = ways
            .iter_mut()
            .min_by_key(|l| if l.valid { l.lru } else { 0 })
            .expect("at least one way");
        let writeback = (victim.valid && victim.dirty).then(|| {
            self.writebacks += 1;
            (victim.tag << self.set_bits) | set as u64
        });
        *victim = Line {
            tag,
            dirty: write,
            lru: self.epoch,
            valid: true,
        };
        LlcOutcome::Miss { writeback }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MemIntensity {
    Low,
    Medium,
    High,
}

/// Memory-intensity class from LLC misses per kilo-instruction, measured
/// after a warmup prefix of one tenth of the trace.
pub fn classify_mpki(trace: &[TraceRecord], llc: &mut LlcModel) -> MemIntensity {
    let warm = trace.len() / 10;
    let mut instructions = 0u64;
    let mut misses = 0u64;
    for (i, rec) in trace.iter().enumerate() {
        let outcome = llc.access(rec.vaddr >> 6, rec.kind == AccessKind::Write);
        if i >= warm {
            instructions += rec.bubbles + 1;
            if matches!(outcome, LlcOutcome::Miss { .. }) {
                misses += 1;
            }
        }
    }
    let mpki = if instructions == 0 {
        0.0
    } else {
        misses as f64 * 1000.0 / instructions as f64
    };
    if mpki < 1.0 {
        MemIntensity::Low
    } else if mpki < 10.0 {
        MemIntensity::Medium
    } else {
        MemIntensity::High
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendParams {
    pub core_clock_mhz: u64,
    pub issue_width: u64,
    pub window_entries: usize,
    pub mshrs_per_core: usize,
    pub llc_mib_per_core: u64,
    pub llc_ways: u32,
    pub line_bytes: u32,
    /// LLC hit latency in core cycles.
    pub llc_hit_latency: u64,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self {
            core_clock_mhz: 4000,
            issue_width: 4,
            window_entries: 128,
            mshrs_per_core: 8,
            llc_mib_per_core: 4,
            llc_ways: 8,
            line_bytes: 64,
            llc_hit_latency: 20,
        }
    }
}

/// A memory access the core wants serviced by the memory system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreAccess {
    pub core: u32,
    pub line_addr: u64,
    pub write: bool,
}

#[derive(Debug, Clone, Copy)]
struct WindowSlot {
    done_at: Option<u64>,
    mshr: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Mshr {
    line: u64,
}

#[derive(Debug, Clone)]
pub struct Core {
    pub id: u32,
    trace: std::sync::Arc<Vec<TraceRecord>>,
    pos: usize,
    bubbles_left: u64,
    pending: Option<TraceRecord>,
    window: VecDeque<WindowSlot>,
    mshrs: Vec<Option<Mshr>>,
    params: FrontendParams,
    pub retired: u64,
    pub fills_requested: u64,
    pub fills_received: u64,
    pub mshr_merges: u64,
    /// Cycle at which measurement started (set when warmup completes).
    pub measure_from_cycle: Option<u64>,
    pub measure_from_retired: u64,
}

impl Core {
    pub fn new(id: u32, trace: std::sync::Arc<Vec<TraceRecord>>, params: FrontendParams) -> Self {
        let mshrs = vec![None; params.mshrs_per_core];
        Self {
            id,
            trace,
            pos: 0,
            bubbles_left: 0,
            pending: None,
            window: VecDeque::new(),
            mshrs,
            params,
            retired: 0,
            fills_requested: 0,
            fills_received: 0,
            mshr_merges: 0,
            measure_from_cycle: None,
            measure_from_retired: 0,
        }
    }

    fn next_record(&mut self) -> Option<TraceRecord> {
        if self.trace.is_empty() {
            return None;
        }
        let rec = self.trace[self.pos];
        self.pos = (self.pos + 1) % self.trace.len();
        Some(rec)
    }

    /// A memory response for `line` arrived: complete every window slot
    /// waiting on its MSHR.
    pub fn fill(&mut self, line: u64, now: u64) {
        for (i, slot) in self.mshrs.iter_mut().enumerate() {
            if slot.is_some_and(|m| m.line == line) {
                *slot = None;
                self.fills_received += 1;
                for w in self.window.iter_mut() {
                    if w.mshr == Some(i) {
                        w.done_at = Some(now);
                        w.mshr = None;
                    }
                }
                return;
            }
        }
        debug_assert!(false, "fill for unknown line {line:#x}");
    }

    pub fn outstanding_misses(&self) -> usize {
        self.mshrs.iter().filter(|m| m.is_some()).count()
    }

    /// Work still in flight after the instruction target is reached.
    pub fn drained(&self) -> bool {
        self.window.is_empty() && self.mshrs.iter().all(|m| m.is_none())
    }

    /// One core cycle: retire completed work, then issue up to the width.
    /// LLC misses surface as `CoreAccess` entries in `accesses`.
    pub fn tick(
        &mut self,
        now: u64,
        llc: &mut LlcModel,
        mapper: &mut PageMapper,
        accesses: &mut Vec<CoreAccess>,
        writebacks: &mut Vec<u64>,
    ) -> Result<(), MapError> {
        // In-order retire from the window head.
        let mut retire_budget = self.params.issue_width;
        while retire_budget > 0 {
            match self.window.front() {
                Some(w) if w.done_at.is_some_and(|t| t <= now) => {
                    self.window.pop_front();
                    self.retired += 1;
                    retire_budget -= 1;
                }
                _ => break,
            }
        }

        let mut issue_budget = self.params.issue_width;
        while issue_budget > 0 {
            if self.bubbles_left > 0 {
                self.bubbles_left -= 1;
                self.retired += 1;
                issue_budget -= 1;
                continue;
            }
            if self.pending.is_none() {
                match self.next_record() {
                    Some(rec) => {
                        self.bubbles_left = rec.bubbles;
                        self.pending = Some(rec);
                        continue;
                    }
                    None => break,
                }
            }
            let rec = self.pending.expect("checked above");
            if self.window.len() >= self.params.window_entries {
                break;
            }
            if rec.dependent && !self.window.is_empty() {
                break;
            }
            let paddr = mapper.translate(self.id, rec.vaddr)?;
            let line = paddr >> 6;
            let write = rec.kind == AccessKind::Write;
            // A fill already in flight for this line merges into its MSHR.
            if let Some(idx) = self
                .mshrs
                .iter()
                .position(|m| m.is_some_and(|m| m.line == line))
            {
                self.mshr_merges += 1;
                self.window.push_back(WindowSlot {
                    done_at: None,
                    mshr: Some(idx),
                });
                self.pending = None;
                issue_budget -= 1;
                continue;
            }
            if llc.probe(line) {
                let LlcOutcome::Hit = llc.access(line, write) else {
                    unreachable!("probed resident");
                };
                let latency = if write { 1 } else { self.params.llc_hit_latency };
                self.window.push_back(WindowSlot {
                    done_at: Some(now + latency),
                    mshr: None,
                });
            } else {
                let Some(idx) = self.mshrs.iter().position(|m| m.is_none()) else {
                    break; // MSHR-full stall; retry once a fill frees one
                };
                let LlcOutcome::Miss { writeback } = llc.access(line, write) else {
                    unreachable!("probed absent");
                };
                self.mshrs[idx] = Some(Mshr { line });
                self.fills_requested += 1;
                accesses.push(CoreAccess {
                    core: self.id,
                    line_addr: line,
                    write: false,
                });
                if let Some(victim) = writeback {
                    writebacks.push(victim);
                }
                self.window.push_back(WindowSlot {
                    done_at: None,
                    mshr: Some(idx),
                });
            }
            self.pending = None;
            issue_budget -= 1;
        }
        Ok(())
    }
}
