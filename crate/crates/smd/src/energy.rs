//! Command-level energy accounting in exact integer femtojoules.
//!
//! Per-event energies are configured in picojoules; background power
//! integrates rank active/idle time. All arithmetic is integral so that an
//! independent recomputation from the dumped command log reproduces the
//! reported totals bit for bit.

use serde::Deserialize;

use crate::timing::{CommandKind, TimingParams};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub pj_act: u64,
    pub pj_pre: u64,
    pub pj_rd: u64,
    pub pj_wr: u64,
    /// Rank-level energy of refreshing one row, shared by baseline REF rows
    /// and in-chip refresh rows. In divergence mode each chip accounts its
    /// 1/chips_per_rank slice.
    pub pj_ref_per_row: u64,
    /// Rank-level energy per scrubbed codeword (read + check; write-back on
    /// correction is folded in).
    pub pj_scrub_per_codeword: u64,
    pub mw_active_per_rank: u64,
    pub mw_idle_per_rank: u64,
}

impl Default for EnergyConfig {
    /// Representative DDR4 datasheet-profile constants; absolute joules are
    /// not meaningful beyond comparisons between runs of the same config.
    fn default() -> Self {
        Self {
            pj_act: 2000,
            pj_pre: 1200,
            pj_rd: 2400,
            pj_wr: 2600,
            pj_ref_per_row: 400,
            pj_scrub_per_codeword: 32,
            mw_active_per_rank: 150,
            mw_idle_per_rank: 80,
        }
    }
}

/// Exact femtojoules for a rank's background energy over a cycle count:
/// 1 mW * 1 ns = 1 pJ, and one cycle is 10^6/f_MHz femtoseconds worth of
/// nanoseconds. Integer division is part of the accounting contract; the
/// log-replay oracle applies the identical formula.
pub fn background_fj(mw: u64, cycles: u64, p: &TimingParams) -> u128 {
    u128::from(mw) * u128::from(cycles) * 1_000_000 / u128::from(p.clock_freq_mhz)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnergyBreakdown {
    pub act: u128,
    pub pre: u128,
    pub rd: u128,
    pub wr: u128,
    pub refresh_rows: u128,
    pub scrub: u128,
    pub background_active: u128,
    pub background_idle: u128,
}

impl EnergyBreakdown {
    pub fn total(&self) -> u128 {
        self.act
            + self.pre
            + self.rd
            + self.wr
            + self.refresh_rows
            + self.scrub
            + self.background_active
            + self.background_idle
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnergyAccumulator {
    pub fj: EnergyBreakdown,
}

impl EnergyAccumulator {
    pub fn on_command(&mut self, kind: CommandKind, cfg: &EnergyConfig) {
        let fj = &mut self.fj;
        match kind {
            CommandKind::Act => fj.act += u128::from(cfg.pj_act) * 1000,
            CommandKind::Pre => fj.pre += u128::from(cfg.pj_pre) * 1000,
            CommandKind::Rd => fj.rd += u128::from(cfg.pj_rd) * 1000,
            CommandKind::Wr => fj.wr += u128::from(cfg.pj_wr) * 1000,
            // REF energy is accounted per refreshed row, not per command.
            CommandKind::Ref | CommandKind::Nop => {}
        }
    }

    /// `rows` rows refreshed at rank level, split across `chip_share` chips
    /// (1 for lock-step logical chips, chips_per_rank when chips diverge).
    pub fn on_rows_refreshed(&mut self, rows: u64, chip_share: u32, cfg: &EnergyConfig) {
        self.fj.refresh_rows +=
            u128::from(rows) * u128::from(cfg.pj_ref_per_row) * 1000 / u128::from(chip_share);
    }

    pub fn on_scrub(&mut self, codewords: u64, chip_share: u32, cfg: &EnergyConfig) {
        self.fj.scrub += u128::from(codewords) * u128::from(cfg.pj_scrub_per_codeword) * 1000
            / u128::from(chip_share);
    }

    pub fn finalize_background(
        &mut self,
        active_cycles: u64,
        idle_cycles: u64,
        cfg: &EnergyConfig,
        p: &TimingParams,
    ) {
        self.fj.background_active += background_fj(cfg.mw_active_per_rank, active_cycles, p);
        self.fj.background_idle += background_fj(cfg.mw_idle_per_rank, idle_cycles, p);
    }
}

/// Weighted speedup: the sum over cores of shared-run IPC divided by
/// alone-run IPC.
pub fn weighted_speedup(ipc_shared: &[f64], ipc_alone: &[f64]) -> f64 {
    assert_eq!(ipc_shared.len(), ipc_alone.len());
    assert!(ipc_alone.iter().all(|&x| x > 0.0));
    ipc_shared
        .iter()
        .zip(ipc_alone)
        .map(|(s, a)| s / a)
        .sum()
}
