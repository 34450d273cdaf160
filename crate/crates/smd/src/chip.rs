//! DRAM chip model: geometry, per-bank state, the lock region table, and the
//! lock controller that accepts or NACKs activations.
//!
//! One `Chip` models either a whole lock-step rank (the default) or a single
//! physical chip when per-chip divergence is simulated.

use serde::Deserialize;
use thiserror::Error;

use crate::timing::TimingParams;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub chips_per_rank: u32,
    pub bankgroups: u32,
    pub banks_per_group: u32,
    pub regions_per_bank: u32,
    pub subarrays_per_region: u32,
    pub rows_per_subarray: u32,
    pub row_size_bytes: u32,
    pub columns_per_row: u32,
    /// Adjacent subarrays share sense amplifiers; locking a region also
    /// blocks one neighbor subarray on each side.
    pub open_bitline: bool,
}

impl Default for Geometry {
    /// Desk-scale geometry: one channel, eight 8K-row banks. Full sweeps
    /// finish in minutes at this size.
    fn default() -> Self {
        Self {
            channels: 1,
            ranks_per_channel: 1,
            chips_per_rank: 1,
            bankgroups: 2,
            banks_per_group: 4,
            regions_per_bank: 16,
            subarrays_per_region: 1,
            rows_per_subarray: 512,
            row_size_bytes: 8192,
            columns_per_row: 128,
            open_bitline: true,
        }
    }
}

impl Geometry {
    /// Full-scale configuration: 4 channels, 2 ranks, 4x4 banks of 128K rows
    /// split into 16 lock regions of 16 512-row subarrays.
    pub fn paper_scale() -> Self {
        Self {
            channels: 4,
            ranks_per_channel: 2,
            chips_per_rank: 16,
            bankgroups: 4,
            banks_per_group: 4,
            regions_per_bank: 16,
            subarrays_per_region: 16,
            rows_per_subarray: 512,
            row_size_bytes: 8192,
            columns_per_row: 128,
            open_bitline: true,
        }
    }

    pub fn rows_per_region(&self) -> u32 {
        self.subarrays_per_region * self.rows_per_subarray
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.regions_per_bank * self.rows_per_region()
    }

    pub fn subarrays_per_bank(&self) -> u32 {
        self.regions_per_bank * self.subarrays_per_region
    }

    pub fn banks_per_rank(&self) -> u32 {
        self.bankgroups * self.banks_per_group
    }

    pub fn region_of_row(&self, row: u32) -> u32 {
        row / self.rows_per_region()
    }

    pub fn subarray_of_row(&self, row: u32) -> u32 {
        row / self.rows_per_subarray
    }

    /// Bytes of storage addressed by one channel.
    pub fn bytes_per_channel(&self) -> u64 {
        u64::from(self.ranks_per_channel)
            * u64::from(self.banks_per_rank())
            * u64::from(self.rows_per_bank())
            * u64::from(self.row_size_bytes)
    }

    pub fn total_bytes(&self) -> u64 {
        u64::from(self.channels) * self.bytes_per_channel()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            self.channels,
            self.ranks_per_channel,
            self.chips_per_rank,
            self.bankgroups,
            self.banks_per_group,
            self.regions_per_bank,
            self.subarrays_per_region,
            self.rows_per_subarray,
            self.row_size_bytes,
            self.columns_per_row,
        ];
        if fields.iter().any(|&v| v == 0) {
            return Err(GeometryError::ZeroField);
        }
        if self.row_size_bytes % self.columns_per_row != 0 {
            return Err(GeometryError::ColumnSplit);
        }
        Ok(())
    }

    /// Subarrays unavailable to the MC while `region` is locked: the region's
    /// own subarrays plus, under open-bitline, the adjacent subarray on each
    /// side, clamped at the bank edges.
    pub fn blocked_subarrays(&self, region: u32) -> std::ops::RangeInclusive<u32> {
        debug_assert!(region < self.regions_per_bank);
        let first = region * self.subarrays_per_region;
        let last = first + self.subarrays_per_region - 1;
        if self.open_bitline {
            first.saturating_sub(1)..=(last + 1).min(self.subarrays_per_bank() - 1)
        } else {
            first..=last
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("geometry fields must be non-zero")]
    ZeroField,
    #[error("row_size_bytes must be divisible by columns_per_row")]
    ColumnSplit,
}

/// Which maintenance engine holds a lock region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LockOwner {
    FixedRefresh,
    VariableRefresh,
    RowHammerProbabilistic,
    RowHammerTracked,
    RowHammerDeterministic,
    Scrub,
}

impl LockOwner {
    pub fn as_str(self) -> &'static str {
        match self {
            LockOwner::FixedRefresh => "fr",
            LockOwner::VariableRefresh => "vr",
            LockOwner::RowHammerProbabilistic => "prp",
            LockOwner::RowHammerTracked => "prp+",
            LockOwner::RowHammerDeterministic => "drp",
            LockOwner::Scrub => "ms",
        }
    }
}

/// MC-visible row state of one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankState {
    Precharged,
    Activating { row: u32, ready_at: u64 },
    Active { row: u32, opened_at: u64 },
    Precharging { ready_at: u64 },
}

#[derive(Debug, Clone)]
struct Bank {
    state: BankState,
    /// Lock bit plus owner tag per region. At most one region is locked at a
    /// time: concurrent maintenance in one bank is restricted to a single
    /// operation.
    locks: Vec<Option<LockOwner>>,
    /// Row the internal refresh pointer resumes from in baseline mode.
    refresh_row: u32,
    /// Cycles during which some region of this bank was locked.
    locked_cycles: u64,
    lock_started: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockResult {
    Locked,
    /// The MC holds (or is opening/closing) a row whose subarray falls in the
    /// requested region's blocked set.
    BusyOpenRow,
    /// Another maintenance operation owns a region of this bank.
    BusyLocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActResponse {
    Accepted { ready_at: u64 },
    /// Row already open from an earlier activation; retried ACTs in
    /// divergence mode are ignored by chips that accepted before.
    AlreadyOpen,
    Nacked { nack_at: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolFault {
    #[error("ACT to bank {bank} at cycle {now}: MC row already open")]
    ActWhileOpen { bank: u32, now: u64 },
    #[error("ACT to bank {bank} at cycle {now}: bank still precharging")]
    ActWhilePrecharging { bank: u32, now: u64 },
    #[error("{kind} to bank {bank} row {row} at cycle {now}: row not open")]
    RowNotOpen {
        kind: &'static str,
        bank: u32,
        row: u32,
        now: u64,
    },
    #[error("REF issued to a self-managed chip")]
    RefToSmdChip,
    #[error("REF to bank {bank}: bank not precharged")]
    RefWhileOpen { bank: u32 },
    #[error("unlock of region {region} in bank {bank} by {owner:?} without matching lock")]
    UnbalancedUnlock {
        bank: u32,
        region: u32,
        owner: LockOwner,
    },
}

/// One DRAM chip (or one lock-step rank image): bank states, lock region
/// tables, and the internal refresh pointers used in baseline mode.
#[derive(Debug, Clone)]
pub struct Chip {
    geom: Geometry,
    banks: Vec<Bank>,
    /// Baseline DDR4 chips honor REF and never NACK; self-managed chips do
    /// the opposite.
    self_managed: bool,
}

impl Chip {
    pub fn new(geom: &Geometry, self_managed: bool) -> Self {
        let bank = Bank {
            state: BankState::Precharged,
            locks: vec![None; geom.regions_per_bank as usize],
            refresh_row: 0,
            locked_cycles: 0,
            lock_started: 0,
        };
        Self {
            geom: geom.clone(),
            banks: vec![bank; geom.banks_per_rank() as usize],
            self_managed,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    /// Promote Activating/Precharging states whose deadline has passed.
    fn settle(&mut self, bank: u32, now: u64) {
        let b = &mut self.banks[bank as usize];
        match b.state {
            BankState::Activating { row, ready_at } if ready_at <= now => {
                b.state = BankState::Active {
                    row,
                    opened_at: ready_at,
                };
            }
            BankState::Precharging { ready_at } if ready_at <= now => {
                b.state = BankState::Precharged;
            }
            _ => {}
        }
    }

    pub fn bank_state(&mut self, bank: u32, now: u64) -> BankState {
        self.settle(bank, now);
        self.banks[bank as usize].state
    }

    /// Subarray occupied by the MC in this bank, if any. Activating and
    /// precharging rows still tie up their bitlines.
    fn mc_busy_subarray(&mut self, bank: u32, now: u64) -> Option<u32> {
        self.settle(bank, now);
        match self.banks[bank as usize].state {
            BankState::Precharged => None,
            BankState::Activating { row, .. } | BankState::Active { row, .. } => {
                Some(self.geom.subarray_of_row(row))
            }
            // The row address is gone but the bitlines are still restoring;
            // treat the bank as busy for locking by blocking every region.
            BankState::Precharging { .. } => Some(u32::MAX),
        }
    }

    pub fn try_lock(&mut self, bank: u32, region: u32, owner: LockOwner, now: u64) -> LockResult {
        debug_assert!(region < self.geom.regions_per_bank);
        if self.banks[bank as usize].locks.iter().any(|l| l.is_some()) {
            return LockResult::BusyLocked;
        }
        if let Some(sub) = self.mc_busy_subarray(bank, now) {
            if sub == u32::MAX || self.geom.blocked_subarrays(region).contains(&sub) {
                return LockResult::BusyOpenRow;
            }
        }
        let b = &mut self.banks[bank as usize];
        b.locks[region as usize] = Some(owner);
        b.lock_started = now;
        LockResult::Locked
    }

    pub fn unlock(
        &mut self,
        bank: u32,
        region: u32,
        owner: LockOwner,
        now: u64,
    ) -> Result<(), ProtocolFault> {
        let b = &mut self.banks[bank as usize];
        if b.locks[region as usize] != Some(owner) {
            return Err(ProtocolFault::UnbalancedUnlock {
                bank,
                region,
                owner,
            });
        }
        b.locks[region as usize] = None;
        b.locked_cycles += now - b.lock_started;
        Ok(())
    }

    pub fn locked_region(&self, bank: u32) -> Option<(u32, LockOwner)> {
        self.banks[bank as usize]
            .locks
            .iter()
            .enumerate()
            .find_map(|(r, l)| l.map(|o| (r as u32, o)))
    }

    pub fn total_locked_cycles(&self, now: u64) -> u64 {
        self.banks
            .iter()
            .map(|b| {
                b.locked_cycles
                    + if b.locks.iter().any(|l| l.is_some()) {
                        now - b.lock_started
                    } else {
                        0
                    }
            })
            .sum()
    }

    /// Row activation at the chip interface. A self-managed chip rejects the
    /// ACT with a NACK arriving `t_nack` cycles later when the row's subarray
    /// falls inside any locked region's blocked set.
    pub fn handle_act(
        &mut self,
        bank: u32,
        row: u32,
        now: u64,
        p: &TimingParams,
    ) -> Result<ActResponse, ProtocolFault> {
        self.settle(bank, now);
        match self.banks[bank as usize].state {
            BankState::Active { row: open, .. } | BankState::Activating { row: open, .. } => {
                return if open == row {
                    // Retry of a partially accepted ACT; already open here.
                    Ok(ActResponse::AlreadyOpen)
                } else {
                    Err(ProtocolFault::ActWhileOpen { bank, now })
                };
            }
            BankState::Precharging { .. } => {
                return Err(ProtocolFault::ActWhilePrecharging { bank, now });
            }
            BankState::Precharged => {}
        }
        if self.self_managed {
            let sub = self.geom.subarray_of_row(row);
            let blocked = self.banks[bank as usize]
                .locks
                .iter()
                .enumerate()
                .any(|(r, l)| l.is_some() && self.geom.blocked_subarrays(r as u32).contains(&sub));
            if blocked {
                return Ok(ActResponse::Nacked {
                    nack_at: now + p.t_nack,
                });
            }
        }
        self.banks[bank as usize].state = BankState::Activating {
            row,
            ready_at: now + p.t_rcd,
        };
        Ok(ActResponse::Accepted {
            ready_at: now + p.t_rcd,
        })
    }

    /// Precharge. Chips whose bank is already precharged ignore it, which is
    /// exactly what a NACKing chip does when the MC closes a partially
    /// activated row.
    pub fn handle_pre(&mut self, bank: u32, now: u64, p: &TimingParams) {
        self.settle(bank, now);
        match self.banks[bank as usize].state {
            BankState::Active { .. } | BankState::Activating { .. } => {
                self.banks[bank as usize].state = BankState::Precharging {
                    ready_at: now + p.t_rp,
                };
            }
            BankState::Precharged | BankState::Precharging { .. } => {}
        }
    }

    /// Verify a RD/WR hits the open row; the row is served without state
    /// change (open-row policy).
    pub fn check_cas(
        &mut self,
        kind: &'static str,
        bank: u32,
        row: u32,
        now: u64,
    ) -> Result<(), ProtocolFault> {
        self.settle(bank, now);
        match self.banks[bank as usize].state {
            BankState::Active { row: open, .. } if open == row => Ok(()),
            _ => Err(ProtocolFault::RowNotOpen {
                kind,
                bank,
                row,
                now,
            }),
        }
    }

    /// Rows refreshed by one all-bank REF in baseline mode.
    pub fn rows_per_ref(&self) -> u32 {
        (self.geom.rows_per_bank() / 8192).max(1)
    }

    /// All-bank refresh in baseline mode: advances this bank's internal row
    /// pointer and returns the refreshed row range plus the cycle the rank
    /// becomes usable again.
    pub fn baseline_refresh(
        &mut self,
        bank: u32,
        now: u64,
        p: &TimingParams,
    ) -> Result<(std::ops::Range<u32>, u64), ProtocolFault> {
        if self.self_managed {
            return Err(ProtocolFault::RefToSmdChip);
        }
        self.settle(bank, now);
        if !matches!(self.banks[bank as usize].state, BankState::Precharged) {
            return Err(ProtocolFault::RefWhileOpen { bank });
        }
        let n = self.rows_per_ref();
        let start = self.banks[bank as usize].refresh_row;
        let b = &mut self.banks[bank as usize];
        b.refresh_row = (start + n) % self.geom.rows_per_bank();
        Ok((start..start + n, now + p.t_rfc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paperish() -> Geometry {
        Geometry::paper_scale()
    }

    #[test]
    fn geometry_row_counts() {
        let g = paperish();
        assert_eq!(g.rows_per_bank(), 128 * 1024);
        assert_eq!(g.rows_per_region(), 8192);
        assert_eq!(g.subarrays_per_bank(), 256);
        let d = Geometry::default();
        assert_eq!(d.rows_per_bank(), 8192);
        d.validate().unwrap();
    }

    #[test]
    fn blocked_set_interior_is_18_subarrays() {
        let g = paperish();
        // Region 1 spans subarrays 16..=31; open-bitline adds 15 and 32.
        let r = g.blocked_subarrays(1);
        assert_eq!(r, 15..=32);
        assert_eq!(r.count(), 18);
    }

    #[test]
    fn blocked_set_clamps_at_edges() {
        let g = paperish();
        let first = g.blocked_subarrays(0);
        assert_eq!(first, 0..=16);
        assert_eq!(first.count(), 17);
        let last = g.blocked_subarrays(g.regions_per_bank - 1);
        assert_eq!(last.count(), 17);
    }

    #[test]
    fn folded_bitline_blocks_only_the_region() {
        let mut g = paperish();
        g.open_bitline = false;
        assert_eq!(g.blocked_subarrays(1).count(), 16);
    }

    #[test]
    fn lock_then_other_owner_is_busy() {
        let g = paperish();
        let mut c = Chip::new(&g, true);
        assert_eq!(
            c.try_lock(0, 3, LockOwner::FixedRefresh, 0),
            LockResult::Locked
        );
        assert_eq!(c.try_lock(0, 3, LockOwner::Scrub, 0), LockResult::BusyLocked);
        // Single-operation-per-bank restriction: a different region of the
        // same bank is busy too.
        assert_eq!(c.try_lock(0, 9, LockOwner::Scrub, 0), LockResult::BusyLocked);
        // Other banks are unaffected.
        assert_eq!(c.try_lock(1, 3, LockOwner::Scrub, 0), LockResult::Locked);
    }

    #[test]
    fn lock_blocked_by_open_row() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, true);
        // Open a row in the first subarray of region 2 -> locking region 2
        // must wait for the MC to precharge.
        let row = 2 * g.rows_per_region() + 5;
        c.handle_act(0, row, 0, &p).unwrap();
        assert_eq!(
            c.try_lock(0, 2, LockOwner::FixedRefresh, 1),
            LockResult::BusyOpenRow
        );
        // Under open-bitline that subarray also borders region 1's blocked
        // set, so region 1 cannot be locked either.
        assert_eq!(
            c.try_lock(0, 1, LockOwner::FixedRefresh, 1),
            LockResult::BusyOpenRow
        );
        // A distant region locks fine despite the open row.
        assert_eq!(
            c.try_lock(0, 7, LockOwner::FixedRefresh, 1),
            LockResult::Locked
        );
    }

    #[test]
    fn act_to_locked_region_is_nacked_after_t_nack() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, true);
        c.try_lock(0, 4, LockOwner::FixedRefresh, 0);
        let row = 4 * g.rows_per_region();
        match c.handle_act(0, row, 100, &p).unwrap() {
            ActResponse::Nacked { nack_at } => assert_eq!(nack_at, 100 + p.t_nack),
            other => panic!("expected NACK, got {other:?}"),
        }
        // The bank state is untouched by the rejected ACT.
        assert_eq!(c.bank_state(0, 100), BankState::Precharged);
    }

    #[test]
    fn act_to_adjacent_subarray_is_nacked_under_open_bitline() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, true);
        c.try_lock(0, 4, LockOwner::FixedRefresh, 0);
        // Last row of region 3 lives in the subarray adjacent to region 4.
        let row = 4 * g.rows_per_region() - 1;
        assert!(matches!(
            c.handle_act(0, row, 0, &p).unwrap(),
            ActResponse::Nacked { .. }
        ));
        // Folded-bitline chips accept the same ACT.
        let mut folded_geom = paperish();
        folded_geom.open_bitline = false;
        let mut folded = Chip::new(&folded_geom, true);
        folded.try_lock(0, 4, LockOwner::FixedRefresh, 0);
        assert!(matches!(
            folded.handle_act(0, row, 0, &p).unwrap(),
            ActResponse::Accepted { .. }
        ));
    }

    #[test]
    fn act_to_unlocked_region_accepted_while_maintenance_runs() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, true);
        c.try_lock(0, 4, LockOwner::FixedRefresh, 0);
        let row = 9 * g.rows_per_region() + 17;
        match c.handle_act(0, row, 50, &p).unwrap() {
            ActResponse::Accepted { ready_at } => assert_eq!(ready_at, 50 + p.t_rcd),
            other => panic!("expected accept, got {other:?}"),
        }
    }

    #[test]
    fn act_while_open_is_a_protocol_fault() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, true);
        c.handle_act(0, 10, 0, &p).unwrap();
        assert!(c.handle_act(0, 11, 1, &p).is_err());
        // Same-row retry is tolerated (partial-activation retries).
        assert!(matches!(
            c.handle_act(0, 10, 1, &p).unwrap(),
            ActResponse::AlreadyOpen
        ));
    }

    #[test]
    fn unlock_must_match_owner() {
        let g = paperish();
        let mut c = Chip::new(&g, true);
        c.try_lock(0, 1, LockOwner::Scrub, 0);
        assert!(c.unlock(0, 1, LockOwner::FixedRefresh, 10).is_err());
        assert!(c.unlock(0, 1, LockOwner::Scrub, 10).is_ok());
        assert!(c.unlock(0, 1, LockOwner::Scrub, 10).is_err());
    }

    #[test]
    fn baseline_refresh_advances_sixteen_rows() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, false);
        let (rows, busy_until) = c.baseline_refresh(0, 1000, &p).unwrap();
        assert_eq!(rows, 0..16);
        assert_eq!(busy_until - 1000, p.t_rfc);
        let (rows, _) = c.baseline_refresh(0, 2000, &p).unwrap();
        assert_eq!(rows, 16..32);
    }

    #[test]
    fn baseline_refresh_wraps_after_8192_refs() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, false);
        for i in 0..8192u64 {
            let (_, _) = c.baseline_refresh(3, i * p.t_rfc, &p).unwrap();
        }
        // Exactly once around the bank.
        let (rows, _) = c.baseline_refresh(3, 8192 * p.t_rfc, &p).unwrap();
        assert_eq!(rows.start, 0);
    }

    #[test]
    fn ref_to_smd_chip_is_a_fault() {
        let g = paperish();
        let p = TimingParams::default();
        let mut c = Chip::new(&g, true);
        assert_eq!(
            c.baseline_refresh(0, 0, &p).unwrap_err(),
            ProtocolFault::RefToSmdChip
        );
    }
}
