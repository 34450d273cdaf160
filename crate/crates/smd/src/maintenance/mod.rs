//! Autonomous in-DRAM maintenance engines.
//!
//! Each engine is a per-bank state machine driven by chip-local time and by
//! notifications of accepted activations. Engines acquire region locks on the
//! chip, perform their work while holding the lock, and release it; the MC
//! only ever observes the rejections (NACKs) that the locks cause.

pub mod bloom;
pub mod drp;
pub mod fr;
pub mod ms;
pub mod prp;

use serde::Deserialize;
use thiserror::Error;

use crate::chip::{Chip, LockOwner, LockResult};
use crate::timing::TimingParams;

/// Extra write-back slot per corrected codeword during a scrub, in bus
/// cycles (2.5 ns at DDR4-3200).
pub const ERROR_WRITEBACK_CYCLES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaintenanceParams {
    /// Rows refreshed per lock acquisition by the refresh engines.
    pub rg: u32,
    /// Fraction of rows per bank that must be refreshed every period.
    pub vr_weak_fraction: f64,
    /// Retention bound of the weak-row bin in milliseconds; rows above it
    /// survive `rt_weak_row_ms / refresh_period` periods between refreshes.
    pub rt_weak_row_ms: f64,
    pub bloom_bits: u64,
    pub bloom_hashes: u32,
    /// Aggressor-marking probability per activation.
    pub p_mark: f64,
    /// Activation threshold for the tracking protections.
    pub act_max: u64,
    /// Rolling tracking window in milliseconds; defaults to the refresh
    /// window when absent.
    pub l_rtw_ms: Option<f64>,
    /// Victim rows refreshed on each side of an aggressor.
    pub blast_distance: u32,
    /// Full-bank scrub sweep period in seconds.
    pub scrub_sweep_period_s: f64,
    /// Probability that a row holds one correctable codeword error when
    /// scrubbed.
    pub scrub_error_rate: f64,
    /// Override for the deterministic protection's counter count; the sizing
    /// formula is used when absent.
    pub drp_counters: Option<u32>,
}

impl Default for MaintenanceParams {
    fn default() -> Self {
        Self {
            rg: 16,
            vr_weak_fraction: 0.001,
            rt_weak_row_ms: 128.0,
            bloom_bits: 8192,
            bloom_hashes: 6,
            p_mark: 0.01,
            act_max: 1024,
            l_rtw_ms: None,
            blast_distance: 1,
            scrub_sweep_period_s: 300.0,
            scrub_error_rate: 0.0,
            drp_counters: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MaintConfigError {
    #[error("weak-row retention ({rt_ms} ms) is not an integer multiple of the refresh period ({period_ms} ms)")]
    NonIntegralRatio { rt_ms: f64, period_ms: f64 },
    #[error("refresh granularity {rg} must divide the {rows} rows of a lock region")]
    RgSplit { rg: u32, rows: u32 },
}

/// Exact ratio of the weak-row retention bound to the refresh period: a
/// retention-strong row is refreshed once every `vr_factor` periods.
pub fn vr_factor(rt_weak_row_ms: f64, refresh_period_ms: f64) -> Result<u32, MaintConfigError> {
    let rt_ns = (rt_weak_row_ms * 1e6).round() as u64;
    let period_ns = (refresh_period_ms * 1e6).round() as u64;
    if rt_ns == 0 || period_ns == 0 || rt_ns % period_ns != 0 {
        return Err(MaintConfigError::NonIntegralRatio {
            rt_ms: rt_weak_row_ms,
            period_ms: refresh_period_ms,
        });
    }
    Ok((rt_ns / period_ns) as u32)
}

/// Smallest counter-table size that guarantees detection for a per-bank
/// activation budget: N must strictly exceed `budget / act_max - 1`.
pub fn drp_counters_for_budget(act_budget: u64, act_max: u64) -> u32 {
    assert!(act_max > 0);
    if act_budget <= act_max {
        1
    } else {
        ((act_budget - act_max) / act_max + 1) as u32
    }
}

/// Counter-table size for the configured timing: the budget is the maximum
/// number of activations a bank can receive in one refresh window, i.e.
/// `tREFW / (tRAS + tRP)`.
pub fn drp_required_counters(p: &TimingParams, act_max: u64) -> u32 {
    drp_counters_for_budget(p.t_refw() / p.row_cycle(), act_max)
}

/// Latency of scrubbing one row with `codewords` codewords of which
/// `corrected` need a write-back, in cycles.
pub fn scrub_row_cycles(codewords: u32, corrected: u32, p: &TimingParams) -> u64 {
    p.t_rcd + u64::from(codewords) * p.t_bl + p.t_rp + u64::from(corrected) * ERROR_WRITEBACK_CYCLES
}

/// Row-scrub latency in nanoseconds for the standard 128-codeword row.
pub fn scrub_row_latency(n_error_codewords: u32, p: &TimingParams) -> f64 {
    debug_assert!(n_error_codewords <= 128);
    p.cycles_to_ns(scrub_row_cycles(128, n_error_codewords, p))
}

/// Victim rows of an aggressor: `distance` rows on each side, clamped at the
/// bank boundaries, in ascending order without duplicates.
pub fn neighbors(row: u32, distance: u32, rows_per_bank: u32) -> Vec<u32> {
    debug_assert!(distance >= 1);
    let lo = row.saturating_sub(distance);
    let hi = (row + distance).min(rows_per_bank - 1);
    (lo..=hi).filter(|&r| r != row).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaintEvent {
    RowsRefreshed {
        mech: LockOwner,
        bank: u32,
        rows: Vec<u32>,
    },
    RowScrubbed {
        bank: u32,
        row: u32,
        codewords: u32,
        corrected: u32,
    },
    /// An aggressor row was marked for victim refresh (probabilistic paths).
    AggressorMarked { bank: u32, row: u32 },
    /// The deterministic protection's counter crossed a threshold multiple.
    NeighborRefreshTriggered { bank: u32, row: u32 },
    CounterTableReset { bank: u32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineFault {
    #[error("pending refresh counter of bank {bank} would exceed 8: the row-open cap was violated")]
    PendingOverflow { bank: u32 },
}

/// A per-bank maintenance state machine.
pub trait Engine {
    fn owner(&self) -> LockOwner;

    /// Advance to `now`; returns the next cycle at which the engine needs to
    /// run again.
    fn step(
        &mut self,
        chip: &mut Chip,
        now: u64,
        p: &TimingParams,
        out: &mut Vec<MaintEvent>,
    ) -> Result<u64, EngineFault>;

    /// Notification of an activation this chip accepted for this bank.
    fn on_act(&mut self, row: u32, now: u64, out: &mut Vec<MaintEvent>);
}

/// Serialized neighbor-row refreshing under region locks, shared by the
/// RowHammer protections. Victim rows that cross a region boundary are
/// refreshed group by group, locking each region in turn.
#[derive(Debug, Clone)]
pub struct VictimRefresher {
    owner: LockOwner,
    bank: u32,
    queue: std::collections::VecDeque<u32>,
    current: Option<VictimOp>,
}

#[derive(Debug, Clone)]
struct VictimOp {
    aggressor: u32,
    groups: Vec<(u32, Vec<u32>)>,
    idx: usize,
    running_until: Option<u64>,
}

impl VictimRefresher {
    pub fn new(owner: LockOwner, bank: u32) -> Self {
        Self {
            owner,
            bank,
            queue: std::collections::VecDeque::new(),
            current: None,
        }
    }

    pub fn push(&mut self, aggressor: u32) {
        self.queue.push_back(aggressor);
    }

    pub fn idle(&self) -> bool {
        self.current.is_none() && self.queue.is_empty()
    }

    /// Drives the victim queue. Returns the next wake cycle and, when an
    /// aggressor's victims were all refreshed this call, that aggressor row.
    pub fn step(
        &mut self,
        chip: &mut Chip,
        now: u64,
        p: &TimingParams,
        blast: u32,
        out: &mut Vec<MaintEvent>,
    ) -> (u64, Option<u32>) {
        let mut finished = None;
        loop {
            if self.current.is_none() {
                let Some(aggr) = self.queue.pop_front() else {
                    return (u64::MAX, finished);
                };
                let geom = chip.geometry();
                let victims = neighbors(aggr, blast, geom.rows_per_bank());
                let mut groups: Vec<(u32, Vec<u32>)> = Vec::new();
                for v in victims {
                    let region = geom.region_of_row(v);
                    match groups.last_mut() {
                        Some((r, rows)) if *r == region => rows.push(v),
                        _ => groups.push((region, vec![v])),
                    }
                }
                self.current = Some(VictimOp {
                    aggressor: aggr,
                    groups,
                    idx: 0,
                    running_until: None,
                });
            }
            let op = self.current.as_mut().expect("current set above");
            match op.running_until {
                Some(t) if now < t => return (t, finished),
                Some(_) => {
                    let (region, rows) = op.groups[op.idx].clone();
                    chip.unlock(self.bank, region, self.owner, now)
                        .expect("held lock");
                    out.push(MaintEvent::RowsRefreshed {
                        mech: self.owner,
                        bank: self.bank,
                        rows,
                    });
                    op.running_until = None;
                    op.idx += 1;
                    if op.idx == op.groups.len() {
                        finished = Some(op.aggressor);
                        self.current = None;
                    }
                }
                None => {
                    let (region, ref rows) = op.groups[op.idx];
                    match chip.try_lock(self.bank, region, self.owner, now) {
                        LockResult::Locked => {
                            op.running_until = Some(now + rows.len() as u64 * p.row_cycle());
                        }
                        LockResult::BusyOpenRow | LockResult::BusyLocked => {
                            return (now + 1, finished);
                        }
                    }
                }
            }
        }
    }
}
