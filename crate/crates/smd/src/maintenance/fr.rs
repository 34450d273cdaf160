//! Fixed-rate and retention-aware (variable) refresh engines.
//!
//! Both engines accumulate one pending refresh per tREFI into a counter
//! capped at 8, then lock the region named by the lock-region counter and
//! refresh a group of `RG` sequentially addressed rows. The variable engine
//! additionally skips rows that can retain data across several refresh
//! periods: rows absent from the weak-row Bloom filter are refreshed only
//! every `vr_factor`-th full sweep.

use std::collections::BTreeSet;

use crate::chip::{Chip, Geometry, LockOwner, LockResult};
use crate::maintenance::bloom::BloomFilter;
use crate::maintenance::{Engine, EngineFault, MaintEvent};
use crate::rng::SimRng;
use crate::timing::TimingParams;

#[derive(Debug, Clone)]
struct RefreshOp {
    region: u32,
    rows: Vec<u32>,
    done_at: u64,
}

#[derive(Debug, Clone)]
struct VrParts {
    filter: BloomFilter,
    factor: u32,
    /// Completed full sweeps; all rows are refreshed when this is a multiple
    /// of `factor`.
    cycle_ctr: u64,
}

#[derive(Debug, Clone)]
pub struct RefreshEngine {
    owner: LockOwner,
    bank: u32,
    rg: u32,
    regions: u32,
    rows_per_region: u32,
    chunks_per_region: u32,
    pending: u32,
    lock_region_ctr: u32,
    row_addr_ctr: u32,
    next_trefi_at: u64,
    op: Option<RefreshOp>,
    vr: Option<VrParts>,
}

impl RefreshEngine {
    /// Fixed-rate engine. `first_tick_at` is the end of the bank's first
    /// tREFI interval (offset per chip in worst-case divergence runs).
    pub fn fixed(bank: u32, geom: &Geometry, rg: u32, first_tick_at: u64, start_region: u32) -> Self {
        assert!(rg > 0 && geom.rows_per_region() % rg == 0);
        Self {
            owner: LockOwner::FixedRefresh,
            bank,
            rg,
            regions: geom.regions_per_bank,
            rows_per_region: geom.rows_per_region(),
            chunks_per_region: geom.rows_per_region() / rg,
            pending: 0,
            lock_region_ctr: start_region % geom.regions_per_bank,
            row_addr_ctr: 0,
            next_trefi_at: first_tick_at,
            op: None,
            vr: None,
        }
    }

    /// Variable engine around a weak-row filter. The weak rows are inserted
    /// at construction, as the vendor would after retention tests.
    #[allow(clippy::too_many_arguments)]
    pub fn variable(
        bank: u32,
        geom: &Geometry,
        rg: u32,
        weak_rows: &BTreeSet<u32>,
        bloom_bits: u64,
        bloom_hashes: u32,
        bloom_seed: u64,
        factor: u32,
        first_tick_at: u64,
        start_region: u32,
    ) -> Self {
        assert!(factor >= 1);
        let mut filter = BloomFilter::new(bloom_bits, bloom_hashes, bloom_seed);
        for &row in weak_rows {
            filter.insert(u64::from(row));
        }
        let mut eng = Self::fixed(bank, geom, rg, first_tick_at, start_region);
        eng.owner = LockOwner::VariableRefresh;
        eng.vr = Some(VrParts {
            filter,
            factor,
            cycle_ctr: 0,
        });
        eng
    }

    pub fn pending(&self) -> u32 {
        self.pending
    }

    /// End-of-tREFI tick: one more refresh obligation. The counter can only
    /// exceed 8 if the controller held a row open past its cap.
    pub fn on_trefi(&mut self) -> Result<(), EngineFault> {
        if self.pending >= 8 {
            return Err(EngineFault::PendingOverflow { bank: self.bank });
        }
        self.pending += 1;
        Ok(())
    }

    /// Whether a row is due in the current refresh cycle: filter hits every
    /// time, the rest only on sweeps that are a multiple of the factor.
    pub fn vr_should_refresh(&self, row: u32) -> bool {
        match &self.vr {
            None => true,
            Some(vr) => vr.filter.test(u64::from(row)) || vr.cycle_ctr % u64::from(vr.factor) == 0,
        }
    }

    fn chunk_rows(&self) -> Vec<u32> {
        let base = self.lock_region_ctr * self.rows_per_region + self.row_addr_ctr * self.rg;
        (base..base + self.rg)
            .filter(|&r| self.vr_should_refresh(r))
            .collect()
    }

    /// Advance the counters after one refresh operation: the lock-region
    /// counter every time, the row pointer on its rollover (which also ends a
    /// full sweep), and the pending counter once per operation.
    fn advance(&mut self) {
        self.lock_region_ctr += 1;
        if self.lock_region_ctr == self.regions {
            self.lock_region_ctr = 0;
            self.row_addr_ctr += 1;
            if self.row_addr_ctr == self.chunks_per_region {
                self.row_addr_ctr = 0;
                if let Some(vr) = &mut self.vr {
                    vr.cycle_ctr += 1;
                }
            }
        }
        self.pending -= 1;
    }
}

impl Engine for RefreshEngine {
    fn owner(&self) -> LockOwner {
        self.owner
    }

    fn step(
        &mut self,
        chip: &mut Chip,
        now: u64,
        p: &TimingParams,
        out: &mut Vec<MaintEvent>,
    ) -> Result<u64, EngineFault> {
        let trefi = p.t_refi();
        if self.next_trefi_at == 0 {
            self.next_trefi_at = trefi;
        }
        while now >= self.next_trefi_at {
            self.on_trefi()?;
            self.next_trefi_at += trefi;
        }
        if let Some(op) = &self.op {
            if now < op.done_at {
                return Ok(op.done_at);
            }
            let op = self.op.take().expect("checked above");
            chip.unlock(self.bank, op.region, self.owner, now)
                .expect("refresh op held the lock");
            out.push(MaintEvent::RowsRefreshed {
                mech: self.owner,
                bank: self.bank,
                rows: op.rows,
            });
            self.advance();
        }
        while self.pending > 0 {
            debug_assert!(self.op.is_none());
            let rows = self.chunk_rows();
            if rows.is_empty() {
                // Nothing in this group needs refresh in this cycle; the
                // operation completes without locking.
                self.advance();
                continue;
            }
            return match chip.try_lock(self.bank, self.lock_region_ctr, self.owner, now) {
                LockResult::Locked => {
                    let done_at = now + rows.len() as u64 * p.row_cycle();
                    self.op = Some(RefreshOp {
                        region: self.lock_region_ctr,
                        rows,
                        done_at,
                    });
                    Ok(done_at)
                }
                LockResult::BusyOpenRow | LockResult::BusyLocked => Ok(now + 1),
            };
        }
        Ok(self.next_trefi_at)
    }

    fn on_act(&mut self, _row: u32, _now: u64, _out: &mut Vec<MaintEvent>) {}
}

/// Deterministic weak-row sample: `fraction` of the bank's rows, drawn
/// without replacement from the given substream.
pub fn sample_weak_rows(mut rng: SimRng, rows_per_bank: u32, fraction: f64) -> BTreeSet<u32> {
    let count = ((f64::from(rows_per_bank) * fraction).round() as u32).min(rows_per_bank);
    let mut set = BTreeSet::new();
    while (set.len() as u32) < count {
        set.insert(rng.next_below(u64::from(rows_per_bank)) as u32);
    }
    set
}
