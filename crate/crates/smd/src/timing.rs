//! DRAM timing parameters, the command vocabulary, and the command-gap rule
//! engine.
//!
//! The same `gap_rule` table backs both the scheduler's earliest-issue
//! computation and the independent stream checker (`check_stream`), so a
//! schedule is legal iff the checker finds no violations.

use serde::Deserialize;
use thiserror::Error;

/// All durations are in DRAM bus cycles unless the field name says otherwise.
/// `t_refi_ns` / `t_refw_ns` are kept in nanoseconds and converted with
/// [`ns_to_cycles`] because refresh windows are specified that way.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub clock_freq_mhz: u64,
    pub t_rcd: u64,
    pub t_ras: u64,
    pub t_rp: u64,
    pub t_cl: u64,
    pub t_cwl: u64,
    pub t_bl: u64,
    pub t_wr: u64,
    pub t_wtr: u64,
    pub t_rtw: u64,
    pub t_rtp: u64,
    pub t_ccd: u64,
    pub t_faw: u64,
    pub t_rfc: u64,
    pub t_refi_ns: f64,
    pub t_refw_ns: f64,
    /// Cycles from an ACT to the arrival of its negative acknowledgment.
    pub t_nack: u64,
    /// ACT retry interval after a rejection, in nanoseconds.
    pub ari_ns: f64,
}

impl Default for TimingParams {
    /// DDR4-3200 profile with a 32 ms refresh window.
    fn default() -> Self {
        Self {
            clock_freq_mhz: 1600,
            t_rcd: 22,
            t_ras: 56,
            t_rp: 24,
            t_cl: 22,
            t_cwl: 16,
            t_bl: 4,
            t_wr: 24,
            t_wtr: 12,
            t_rtw: 12,
            t_rtp: 12,
            t_ccd: 10,
            t_faw: 34,
            t_rfc: 560,
            t_refi_ns: 3900.0,
            t_refw_ns: 32_000_000.0,
            t_nack: 5,
            ari_ns: 60.0,
        }
    }
}

impl TimingParams {
    pub fn t_refi(&self) -> u64 {
        ns_to_cycles(self.t_refi_ns, self)
    }

    pub fn t_refw(&self) -> u64 {
        ns_to_cycles(self.t_refw_ns, self)
    }

    pub fn ari(&self) -> u64 {
        ns_to_cycles(self.ari_ns, self)
    }

    /// ACT to PRE-complete time of one row, the unit cost of an internal
    /// refresh.
    pub fn row_cycle(&self) -> u64 {
        self.t_ras + self.t_rp
    }

    pub fn cycles_to_ns(&self, cycles: u64) -> f64 {
        cycles as f64 * 1000.0 / self.clock_freq_mhz as f64
    }

    /// Largest pairwise gap any rule can require; used to bound the checker's
    /// lookback window.
    pub fn max_gap(&self) -> u64 {
        self.t_rfc
            .max(self.t_ras + self.t_rp)
            .max(self.t_cwl + self.t_bl + self.t_wr + self.t_rp)
            .max(self.t_faw)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        let positive = [
            ("clock_freq_mhz", self.clock_freq_mhz),
            ("t_rcd", self.t_rcd),
            ("t_ras", self.t_ras),
            ("t_rp", self.t_rp),
            ("t_cl", self.t_cl),
            ("t_cwl", self.t_cwl),
            ("t_bl", self.t_bl),
            ("t_wr", self.t_wr),
            ("t_wtr", self.t_wtr),
            ("t_rtw", self.t_rtw),
            ("t_rtp", self.t_rtp),
            ("t_ccd", self.t_ccd),
            ("t_faw", self.t_faw),
            ("t_rfc", self.t_rfc),
            ("t_nack", self.t_nack),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TimingError::NonPositive(name));
            }
        }
        if self.t_refi_ns <= 0.0 || self.t_refw_ns <= 0.0 || self.ari_ns <= 0.0 {
            return Err(TimingError::NonPositive("t_refi_ns/t_refw_ns/ari_ns"));
        }
        if self.t_ras < self.t_rcd {
            return Err(TimingError::Inconsistent("t_ras must be >= t_rcd"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimingError {
    #[error("timing parameter {0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("inconsistent timing profile: {0}")]
    Inconsistent(&'static str),
    #[error("no timing rule defined for command pair {0:?} -> {1:?}")]
    UnknownPair(CommandKind, CommandKind),
}

/// Ceiling conversion of a nanosecond duration to bus cycles.
pub fn ns_to_cycles(ns: f64, p: &TimingParams) -> u64 {
    debug_assert!(ns >= 0.0);
    (ns * p.clock_freq_mhz as f64 / 1000.0).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CommandKind {
    Act,
    Pre,
    Rd,
    Wr,
    Ref,
    Nop,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Act => "ACT",
            CommandKind::Pre => "PRE",
            CommandKind::Rd => "RD",
            CommandKind::Wr => "WR",
            CommandKind::Ref => "REF",
            CommandKind::Nop => "NOP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ACT" => CommandKind::Act,
            "PRE" => CommandKind::Pre,
            "RD" => CommandKind::Rd,
            "WR" => CommandKind::Wr,
            "REF" => CommandKind::Ref,
            "NOP" => CommandKind::Nop,
            _ => return None,
        })
    }
}

/// Full command-stream address. REF targets a whole rank; its bank/row/column
/// components are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Address {
    pub channel: u32,
    pub rank: u32,
    pub bankgroup: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

impl Address {
    pub fn same_rank(&self, o: &Address) -> bool {
        self.channel == o.channel && self.rank == o.rank
    }

    pub fn same_bankgroup(&self, o: &Address) -> bool {
        self.same_rank(o) && self.bankgroup == o.bankgroup
    }

    pub fn same_bank(&self, o: &Address) -> bool {
        self.same_bankgroup(o) && self.bank == o.bank
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub kind: CommandKind,
    pub target: Address,
    pub issue_time: u64,
}

/// Resource scope a pairwise rule applies at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Channel,
    Rank,
    BankGroup,
    Bank,
}

/// Minimum separation required between `prev` and `next` when they share the
/// given resource scope. Returns 0 when the pair is unconstrained at that
/// scope. REF rules assume all-bank refresh at rank scope.
pub fn gap_rule(scope: Scope, prev: CommandKind, next: CommandKind, p: &TimingParams) -> u64 {
    use CommandKind::*;
    let cas = |k: CommandKind| matches!(k, Rd | Wr);
    match scope {
        // One command per channel per bus cycle; CAS bursts occupy the data
        // bus for t_bl regardless of rank.
        Scope::Channel => {
            if cas(prev) && cas(next) {
                p.t_bl.max(1)
            } else {
                1
            }
        }
        Scope::Rank => match (prev, next) {
            (Rd, Wr) => p.t_rtw,
            (Wr, Rd) => p.t_cwl + p.t_bl + p.t_wtr,
            (Act, Ref) => p.t_ras + p.t_rp,
            (Pre, Ref) => p.t_rp,
            (Rd, Ref) => p.t_rtp + p.t_rp,
            (Wr, Ref) => p.t_cwl + p.t_bl + p.t_wr + p.t_rp,
            (Ref, Act) | (Ref, Ref) | (Ref, Rd) | (Ref, Wr) | (Ref, Pre) => p.t_rfc,
            _ => 0,
        },
        Scope::BankGroup => {
            if cas(prev) && cas(next) {
                p.t_ccd
            } else {
                0
            }
        }
        Scope::Bank => match (prev, next) {
            (Act, Act) => p.t_ras + p.t_rp,
            (Act, Pre) => p.t_ras,
            (Act, Rd) | (Act, Wr) => p.t_rcd,
            (Pre, Act) => p.t_rp,
            (Rd, Pre) => p.t_rtp,
            (Wr, Pre) => p.t_cwl + p.t_bl + p.t_wr,
            _ => 0,
        },
    }
}

/// Minimum legal cycle separation between two fully addressed commands.
/// Constraints only apply at scopes the two commands actually share; commands
/// on different channels are unconstrained.
pub fn min_gap(prev: &Command, next: &Command, p: &TimingParams) -> Result<u64, TimingError> {
    if prev.kind == CommandKind::Nop || next.kind == CommandKind::Nop {
        return Err(TimingError::UnknownPair(prev.kind, next.kind));
    }
    if prev.target.channel != next.target.channel {
        return Ok(0);
    }
    let mut gap = gap_rule(Scope::Channel, prev.kind, next.kind, p);
    if prev.target.same_rank(&next.target) {
        gap = gap.max(gap_rule(Scope::Rank, prev.kind, next.kind, p));
        if prev.target.same_bankgroup(&next.target) {
            gap = gap.max(gap_rule(Scope::BankGroup, prev.kind, next.kind, p));
            if prev.target.same_bank(&next.target) {
                gap = gap.max(gap_rule(Scope::Bank, prev.kind, next.kind, p));
            }
        }
    }
    Ok(gap)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `next` was issued earlier than `min_gap` allows after `prev`.
    Gap {
        prev_index: usize,
        next_index: usize,
        required: u64,
        actual: u64,
    },
    /// Five or more activations to one rank inside a `t_faw` window.
    FourActWindow {
        first_index: usize,
        fifth_index: usize,
        window: u64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Gap {
                prev_index,
                next_index,
                required,
                actual,
            } => write!(
                f,
                "gap violation: cmd #{next_index} follows #{prev_index} after {actual} cycles, needs {required}"
            ),
            Violation::FourActWindow {
                first_index,
                fifth_index,
                window,
            } => write!(
                f,
                "tFAW violation: ACT #{fifth_index} is the 5th within {window} cycles of ACT #{first_index}"
            ),
        }
    }
}

/// Checks a command stream (sorted by issue time) against every pairwise gap
/// rule plus the four-activation window per rank. Violations are data, not
/// errors; an empty vector means the stream is legal.
pub fn check_stream(cmds: &[Command], p: &TimingParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let lookback = p.max_gap();
    for (j, next) in cmds.iter().enumerate() {
        if j > 0 {
            debug_assert!(cmds[j - 1].issue_time <= next.issue_time, "stream not sorted");
        }
        for i in (0..j).rev() {
            let prev = &cmds[i];
            let actual = next.issue_time - prev.issue_time;
            if actual > lookback {
                break;
            }
            if prev.kind == CommandKind::Nop || next.kind == CommandKind::Nop {
                continue;
            }
            let required = min_gap(prev, next, p).expect("non-NOP pair");
            if actual < required {
                out.push(Violation::Gap {
                    prev_index: i,
                    next_index: j,
                    required,
                    actual,
                });
            }
        }
    }
    // tFAW: at most four ACTs to a rank in any t_faw window.
    let acts: Vec<(usize, &Command)> = cmds
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind == CommandKind::Act)
        .collect();
    for (n, &(j, act)) in acts.iter().enumerate() {
        let mut in_window = 0;
        for &(i, prior) in acts[..n].iter().rev() {
            if act.issue_time - prior.issue_time >= p.t_faw {
                break;
            }
            if prior.target.same_rank(&act.target) {
                in_window += 1;
                if in_window == 4 {
                    out.push(Violation::FourActWindow {
                        first_index: i,
                        fifth_index: j,
                        window: p.t_faw,
                    });
                    break;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(bank: u32, row: u32) -> Address {
        Address {
            channel: 0,
            rank: 0,
            bankgroup: 0,
            bank,
            row,
            column: 0,
        }
    }

    fn cmd(kind: CommandKind, target: Address, t: u64) -> Command {
        Command {
            kind,
            target,
            issue_time: t,
        }
    }

    #[test]
    fn act_to_read_same_bank_needs_trcd() {
        let p = TimingParams::default();
        let a = cmd(CommandKind::Act, addr(0, 5), 0);
        let r = cmd(CommandKind::Rd, addr(0, 5), 0);
        assert_eq!(min_gap(&a, &r, &p).unwrap(), p.t_rcd);
    }

    #[test]
    fn act_to_pre_same_bank_needs_tras() {
        let p = TimingParams::default();
        let a = cmd(CommandKind::Act, addr(0, 1), 0);
        let pre = cmd(CommandKind::Pre, addr(0, 1), 0);
        assert_eq!(min_gap(&a, &pre, &p).unwrap(), p.t_ras);
    }

    #[test]
    fn read_to_read_cross_bankgroup_is_burst_limited() {
        let p = TimingParams::default();
        let r0 = cmd(CommandKind::Rd, addr(0, 0), 0);
        let mut other = addr(1, 0);
        other.bankgroup = 1;
        let r1 = cmd(CommandKind::Rd, other, 0);
        assert_eq!(min_gap(&r0, &r1, &p).unwrap(), p.t_bl);
    }

    #[test]
    fn cross_channel_commands_are_unconstrained() {
        let p = TimingParams::default();
        let a = cmd(CommandKind::Act, addr(0, 0), 0);
        let mut other = addr(0, 0);
        other.channel = 1;
        let b = cmd(CommandKind::Act, other, 0);
        assert_eq!(min_gap(&a, &b, &p).unwrap(), 0);
    }

    #[test]
    fn nop_pair_is_rejected() {
        let p = TimingParams::default();
        let a = cmd(CommandKind::Nop, addr(0, 0), 0);
        let b = cmd(CommandKind::Act, addr(0, 0), 0);
        assert!(min_gap(&a, &b, &p).is_err());
    }

    #[test]
    fn min_gap_only_tightens_with_shared_resources() {
        // Same pair of kinds, decreasing resource sharing: bank >= bankgroup
        // >= rank >= different channel.
        let p = TimingParams::default();
        for (pk, nk) in [
            (CommandKind::Act, CommandKind::Rd),
            (CommandKind::Rd, CommandKind::Wr),
            (CommandKind::Wr, CommandKind::Rd),
            (CommandKind::Act, CommandKind::Act),
            (CommandKind::Rd, CommandKind::Rd),
        ] {
            let base = addr(0, 0);
            let mut same_bg = base;
            same_bg.bank = 1;
            let mut same_rank = base;
            same_rank.bankgroup = 1;
            let mut cross = base;
            cross.channel = 1;
            let prev = cmd(pk, base, 0);
            let g_bank = min_gap(&prev, &cmd(nk, base, 0), &p).unwrap();
            let g_bg = min_gap(&prev, &cmd(nk, same_bg, 0), &p).unwrap();
            let g_rank = min_gap(&prev, &cmd(nk, same_rank, 0), &p).unwrap();
            let g_cross = min_gap(&prev, &cmd(nk, cross, 0), &p).unwrap();
            assert!(g_bank >= g_bg && g_bg >= g_rank && g_rank >= g_cross);
        }
    }

    #[test]
    fn legal_act_rd_pre_sequence_passes() {
        let p = TimingParams::default();
        let a = addr(0, 7);
        let cmds = vec![
            cmd(CommandKind::Act, a, 0),
            cmd(CommandKind::Rd, a, p.t_rcd),
            cmd(CommandKind::Pre, a, p.t_ras),
        ];
        assert!(check_stream(&cmds, &p).is_empty());
    }

    #[test]
    fn five_acts_in_tfaw_is_one_violation() {
        let p = TimingParams::default();
        let mut cmds = Vec::new();
        for i in 0..5u32 {
            let mut a = addr(0, 0);
            a.bankgroup = i % 4;
            a.bank = i / 4;
            cmds.push(cmd(CommandKind::Act, a, u64::from(i) * 2));
        }
        let v = check_stream(&cmds, &p);
        assert_eq!(
            v.iter()
                .filter(|v| matches!(v, Violation::FourActWindow { .. }))
                .count(),
            1
        );
    }

    #[test]
    fn early_read_after_act_is_one_trcd_violation() {
        let p = TimingParams::default();
        let a = addr(2, 9);
        let cmds = vec![
            cmd(CommandKind::Act, a, 0),
            cmd(CommandKind::Rd, a, p.t_rcd - 1),
        ];
        let v = check_stream(&cmds, &p);
        assert_eq!(v.len(), 1);
        assert!(matches!(
            v[0],
            Violation::Gap {
                required,
                actual,
                ..
            } if required == p.t_rcd && actual == p.t_rcd - 1
        ));
    }

    #[test]
    fn ns_conversion_matches_known_points() {
        let p = TimingParams::default();
        assert_eq!(ns_to_cycles(7800.0, &p), 12480);
        assert_eq!(ns_to_cycles(0.0, &p), 0);
        // ceil(13.5 * 1.6) = ceil(21.6) = 22, the DDR4 tRCD bin.
        assert_eq!(ns_to_cycles(13.5, &p), 22);
    }

    #[test]
    fn ns_conversion_is_monotone() {
        let p = TimingParams::default();
        let mut prev = 0;
        for tenth in 0..20_000u64 {
            let c = ns_to_cycles(tenth as f64 / 10.0, &p);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn default_profile_validates() {
        let p = TimingParams::default();
        p.validate().unwrap();
        // Refresh window over interval lands on the standard 8192 commands.
        let ratio = p.t_refw_ns / p.t_refi_ns;
        assert!((ratio - 8192.0).abs() / 8192.0 < 0.02);
        assert!(p.t_nack <= p.t_cl);
    }

    #[test]
    fn validation_rejects_bad_profiles() {
        let mut p = TimingParams::default();
        p.t_ras = p.t_rcd - 1;
        assert!(p.validate().is_err());
        let mut p = TimingParams::default();
        p.t_rcd = 0;
        assert!(p.validate().is_err());
    }
}
