//! In-DRAM memory scrubbing engine.
//!
//! Counter layout mirrors the fixed-rate refresh engine, but each lock
//! acquisition scrubs a single row: every codeword is read and ECC-checked,
//! and corrected codewords are written back. The per-row latency is
//! tRCD + codewords*tBL + tRP plus a write-back slot per corrected codeword,
//! far longer than a refresh, so regions stay locked noticeably longer.

use crate::chip::{Chip, Geometry, LockOwner, LockResult};
use crate::maintenance::{scrub_row_cycles, Engine, EngineFault, MaintEvent};
use crate::rng::mix64;
use crate::timing::TimingParams;

#[derive(Debug, Clone)]
struct ScrubOp {
    region: u32,
    row: u32,
    corrected: u32,
    done_at: u64,
}

#[derive(Debug, Clone)]
pub struct ScrubEngine {
    bank: u32,
    regions: u32,
    rows_per_region: u32,
    codewords_per_row: u32,
    pending: u64,
    lock_region_ctr: u32,
    row_addr_ctr: u32,
    /// Interval between scrub obligations: sweep period over rows per bank.
    t_scrub: u64,
    next_scrub_at: u64,
    /// Injected-error model: per-row probability of one correctable error.
    error_rate: f64,
    error_seed: u64,
    op: Option<ScrubOp>,
}

impl ScrubEngine {
    pub fn new(
        bank: u32,
        geom: &Geometry,
        sweep_period_s: f64,
        p: &TimingParams,
        error_rate: f64,
        error_seed: u64,
    ) -> Self {
        let sweep_cycles = (sweep_period_s * 1e6 * p.clock_freq_mhz as f64).round() as u64;
        let t_scrub = (sweep_cycles / u64::from(geom.rows_per_bank())).max(1);
        Self {
            bank,
            regions: geom.regions_per_bank,
            rows_per_region: geom.rows_per_region(),
            codewords_per_row: geom.columns_per_row,
            pending: 0,
            lock_region_ctr: 0,
            row_addr_ctr: 0,
            t_scrub,
            next_scrub_at: t_scrub,
            error_rate,
            error_seed,
            op: None,
        }
    }

    pub fn t_scrub(&self) -> u64 {
        self.t_scrub
    }

    /// Deterministic injected-error count for a row (0 or 1 codeword).
    fn errors_for_row(&self, row: u32) -> u32 {
        if self.error_rate <= 0.0 {
            return 0;
        }
        let h = mix64(self.error_seed ^ (u64::from(self.bank) << 32) ^ u64::from(row));
        let unit = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u32::from(unit < self.error_rate)
    }

    fn advance(&mut self) {
        self.lock_region_ctr += 1;
        if self.lock_region_ctr == self.regions {
            self.lock_region_ctr = 0;
            self.row_addr_ctr = (self.row_addr_ctr + 1) % self.rows_per_region;
        }
        self.pending -= 1;
    }
}

impl Engine for ScrubEngine {
    fn owner(&self) -> LockOwner {
        LockOwner::Scrub
    }

    fn step(
        &mut self,
        chip: &mut Chip,
        now: u64,
        p: &TimingParams,
        out: &mut Vec<MaintEvent>,
    ) -> Result<u64, EngineFault> {
        while now >= self.next_scrub_at {
            self.pending += 1;
            self.next_scrub_at += self.t_scrub;
        }
        if let Some(op) = &self.op {
            if now < op.done_at {
                return Ok(op.done_at);
            }
            let op = self.op.take().expect("checked above");
            chip.unlock(self.bank, op.region, LockOwner::Scrub, now)
                .expect("scrub op held the lock");
            out.push(MaintEvent::RowScrubbed {
                bank: self.bank,
                row: op.row,
                codewords: self.codewords_per_row,
                corrected: op.corrected,
            });
            self.advance();
        }
        if self.pending > 0 {
            let region = self.lock_region_ctr;
            let row = region * self.rows_per_region + self.row_addr_ctr;
            return match chip.try_lock(self.bank, region, LockOwner::Scrub, now) {
                LockResult::Locked => {
                    let corrected = self.errors_for_row(row);
                    let done_at = now + scrub_row_cycles(self.codewords_per_row, corrected, p);
                    self.op = Some(ScrubOp {
                        region,
                        row,
                        corrected,
                        done_at,
                    });
                    Ok(done_at)
                }
                LockResult::BusyOpenRow | LockResult::BusyLocked => Ok(now + 1),
            };
        }
        Ok(self.next_scrub_at)
    }

    fn on_act(&mut self, _row: u32, _now: u64, _out: &mut Vec<MaintEvent>) {}
}
