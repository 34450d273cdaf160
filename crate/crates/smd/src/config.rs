//! Experiment configuration: a flat key-value TOML file with one section per
//! subsystem, plus the mode/engine mapping and cross-field validation.

use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::chip::{Geometry, GeometryError};
use crate::energy::EnergyConfig;
use crate::frontend::FrontendParams;
use crate::maintenance::{MaintConfigError, MaintenanceParams};
use crate::synth::SyntheticSpec;
use crate::timing::{TimingError, TimingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ddr4,
    NoRefresh,
    SmdFr,
    SmdVr,
    SmdPrp,
    SmdPrpPlus,
    SmdDrp,
    SmdMs,
    Combined,
    /// DDR4 with PARA in the controller: neighbor refreshes issued as
    /// explicit ACT/PRE pairs over the bus.
    McPara,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EngineKind {
    Fr,
    Vr,
    Prp,
    PrpPlus,
    Drp,
    Ms,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::Ddr4,
        Mode::NoRefresh,
        Mode::SmdFr,
        Mode::SmdVr,
        Mode::SmdPrp,
        Mode::SmdPrpPlus,
        Mode::SmdDrp,
        Mode::SmdMs,
        Mode::Combined,
        Mode::McPara,
    ];

    pub fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "ddr4" => Mode::Ddr4,
            "norefresh" => Mode::NoRefresh,
            "smd-fr" => Mode::SmdFr,
            "smd-vr" => Mode::SmdVr,
            "smd-prp" => Mode::SmdPrp,
            "smd-prp-plus" => Mode::SmdPrpPlus,
            "smd-drp" => Mode::SmdDrp,
            "smd-ms" => Mode::SmdMs,
            "combined" => Mode::Combined,
            "mc-para" => Mode::McPara,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ddr4 => "ddr4",
            Mode::NoRefresh => "norefresh",
            Mode::SmdFr => "smd-fr",
            Mode::SmdVr => "smd-vr",
            Mode::SmdPrp => "smd-prp",
            Mode::SmdPrpPlus => "smd-prp-plus",
            Mode::SmdDrp => "smd-drp",
            Mode::SmdMs => "smd-ms",
            Mode::Combined => "combined",
            Mode::McPara => "mc-para",
        }
    }

    /// Chips manage their own maintenance (and may NACK) in these modes.
    pub fn self_managed(self) -> bool {
        !matches!(self, Mode::Ddr4 | Mode::NoRefresh | Mode::McPara)
    }

    /// The controller issues periodic REF commands in these modes.
    pub fn baseline_refresh(self) -> bool {
        matches!(self, Mode::Ddr4 | Mode::McPara)
    }

    /// Maintenance engines instantiated per bank. The protection and
    /// scrubbing mechanisms run on top of fixed-rate refresh; the combined
    /// mode pairs variable refresh with the cheap probabilistic protection
    /// and scrubbing.
    pub fn engines(self) -> &'static [EngineKind] {
        match self {
            Mode::Ddr4 | Mode::NoRefresh | Mode::McPara => &[],
            Mode::SmdFr => &[EngineKind::Fr],
            Mode::SmdVr => &[EngineKind::Vr],
            Mode::SmdPrp => &[EngineKind::Fr, EngineKind::Prp],
            Mode::SmdPrpPlus => &[EngineKind::Fr, EngineKind::PrpPlus],
            Mode::SmdDrp => &[EngineKind::Fr, EngineKind::Drp],
            Mode::SmdMs => &[EngineKind::Fr, EngineKind::Ms],
            Mode::Combined => &[EngineKind::Vr, EngineKind::Prp, EngineKind::Ms],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceMode {
    /// One logical chip per rank; all chips maintain in lock step.
    LockStep,
    /// Independent chips with identical schedules but chip-local weak-row
    /// sets and marking draws.
    CommonCase,
    /// Independent chips with deliberately staggered refresh: chip i delays
    /// its first operation by i refresh-op latencies and starts its lock
    /// region counter at i.
    WorstCase,
}

impl DivergenceMode {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lock-step" => DivergenceMode::LockStep,
            "common-case" => DivergenceMode::CommonCase,
            "worst-case" => DivergenceMode::WorstCase,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergencePolicy {
    /// Close a partially activated row immediately; NACKing chips ignore the
    /// PRE.
    Precharge,
    /// Re-issue the same ACT every retry interval until every chip accepts.
    Wait,
    /// Precharge when enough queued requests target other regions of the
    /// bank, otherwise wait.
    Hybrid,
}

impl DivergencePolicy {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "precharge" => DivergencePolicy::Precharge,
            "wait" => DivergencePolicy::Wait,
            "hybrid" => DivergencePolicy::Hybrid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerParams {
    /// Column accesses served from an open row before older row-miss
    /// requests win priority.
    pub row_hit_cap: u32,
    /// Queued same-bank cross-region requests needed before the hybrid
    /// divergence policy precharges instead of waiting.
    pub hybrid_threshold: usize,
    pub read_queue_capacity: usize,
    pub write_queue_capacity: usize,
    /// Write drain starts at the high watermark and stops at the low one.
    pub write_high_watermark: usize,
    pub write_low_watermark: usize,
    /// Force-precharge a row after this many cycles. Zero selects a derived
    /// default safely below the 9*tREFI ceiling so pending refreshes can
    /// never exceed their 8-deep slack.
    pub row_open_cap_cycles: u64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            row_hit_cap: 16,
            hybrid_threshold: 4,
            read_queue_capacity: 64,
            write_queue_capacity: 64,
            write_high_watermark: 48,
            write_low_watermark: 16,
            row_open_cap_cycles: 0,
        }
    }
}

impl SchedulerParams {
    /// Effective row-open cap: at most 9*tREFI (the DDR4 tRAS ceiling), and
    /// by default one tREFI lower minus the worst-case refresh-op tail, so
    /// a blocked refresh engine can never accumulate more than 8 pendings.
    pub fn row_open_cap(&self, p: &TimingParams, rg: u32) -> u64 {
        let ceiling = 9 * p.t_refi();
        if self.row_open_cap_cycles > 0 {
            self.row_open_cap_cycles.min(ceiling)
        } else {
            let tail = p.t_rp + u64::from(rg) * p.row_cycle() + 64;
            (8 * p.t_refi()).saturating_sub(tail).max(p.t_ras)
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("unknown divergence mode {0:?} (lock-step | common-case | worst-case)")]
    UnknownDivergence(String),
    #[error("unknown divergence policy {0:?} (precharge | wait | hybrid)")]
    UnknownPolicy(String),
    #[error("timing: {0}")]
    Timing(#[from] TimingError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("maintenance: {0}")]
    Maintenance(#[from] MaintConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    name: String,
    mode: String,
    seed: u64,
    cores: u32,
    warmup_instructions: u64,
    run_instructions: u64,
    /// Keep simulating (maintenance only) until this many cycles even after
    /// every core reached its instruction target.
    run_min_cycles: u64,
    traces: Vec<String>,
    divergence: String,
    divergence_policy: String,
    dump_commands: String,
    /// Run an inline exact-count security oracle next to the deterministic
    /// protection and fault on any miss.
    drp_oracle: bool,
    /// Track per-row refresh gaps (costs memory proportional to row count).
    track_refresh_gaps: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            mode: "ddr4".into(),
            seed: 1,
            cores: 1,
            warmup_instructions: 20_000,
            run_instructions: 100_000,
            run_min_cycles: 0,
            traces: Vec::new(),
            divergence: "lock-step".into(),
            divergence_policy: "wait".into(),
            dump_commands: String::new(),
            drp_oracle: true,
            track_refresh_gaps: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentSection,
    timing: TimingParams,
    geometry: Geometry,
    maintenance: MaintenanceParams,
    scheduler: SchedulerParams,
    frontend: FrontendParams,
    energy: EnergyConfig,
    synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub cores: u32,
    pub warmup_instructions: u64,
    pub run_instructions: u64,
    pub run_min_cycles: u64,
    pub traces: Vec<PathBuf>,
    pub divergence: DivergenceMode,
    pub divergence_policy: DivergencePolicy,
    pub dump_commands: Option<PathBuf>,
    pub drp_oracle: bool,
    pub track_refresh_gaps: bool,
    pub timing: TimingParams,
    pub geometry: Geometry,
    pub maintenance: MaintenanceParams,
    pub scheduler: SchedulerParams,
    pub frontend: FrontendParams,
    pub energy: EnergyConfig,
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        RawConfig::default().resolve().expect("default config is valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        raw.resolve()
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Refresh period of this config in milliseconds.
    pub fn refresh_period_ms(&self) -> f64 {
        self.timing.t_refw_ns / 1e6
    }

    pub fn uses_engine(&self, kind: EngineKind) -> bool {
        self.mode.engines().contains(&kind)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.timing.validate()?;
        self.geometry.validate()?;
        let m = &self.maintenance;
        if self.geometry.rows_per_region() % m.rg != 0 {
            return Err(MaintConfigError::RgSplit {
                rg: m.rg,
                rows: self.geometry.rows_per_region(),
            }
            .into());
        }
        if self.uses_engine(EngineKind::Vr) {
            // Must divide exactly; surfaces bad sweep combinations early.
            crate::maintenance::vr_factor(m.rt_weak_row_ms, self.refresh_period_ms())?;
        }
        let defaults = MaintenanceParams::default();
        let engines = self.mode.engines();
        let check = |set: bool, needed: &[EngineKind], what: &str| -> Result<(), ConfigError> {
            if set && !needed.iter().any(|k| engines.contains(k)) && !needed.is_empty() {
                let modes: Vec<&str> = Mode::ALL
                    .iter()
                    .filter(|md| needed.iter().any(|k| md.engines().contains(k)))
                    .map(|md| md.as_str())
                    .collect();
                return Err(ConfigError::Invalid(format!(
                    "{what} is set but mode {:?} runs no engine that uses it (want one of: {})",
                    self.mode.as_str(),
                    modes.join(", ")
                )));
            }
            Ok(())
        };
        check(
            m.scrub_sweep_period_s != defaults.scrub_sweep_period_s
                || m.scrub_error_rate != defaults.scrub_error_rate,
            &[EngineKind::Ms],
            "a scrub parameter",
        )?;
        if self.mode != Mode::McPara {
            check(
                m.p_mark != defaults.p_mark,
                &[EngineKind::Prp, EngineKind::PrpPlus],
                "p_mark",
            )?;
            check(
                m.blast_distance != defaults.blast_distance,
                &[EngineKind::Prp, EngineKind::PrpPlus, EngineKind::Drp],
                "blast_distance",
            )?;
        }
        check(
            m.act_max != defaults.act_max,
            &[EngineKind::PrpPlus, EngineKind::Drp],
            "act_max",
        )?;
        check(
            m.drp_counters.is_some(),
            &[EngineKind::Drp],
            "drp_counters",
        )?;
        check(
            m.vr_weak_fraction != defaults.vr_weak_fraction
                || m.rt_weak_row_ms != defaults.rt_weak_row_ms,
            &[EngineKind::Vr],
            "a variable-refresh parameter",
        )?;
        if self.cores == 0 {
            return Err(ConfigError::Invalid("cores must be >= 1".into()));
        }
        if !self.traces.is_empty() && self.synthetic.is_some() {
            return Err(ConfigError::Invalid(
                "set either traces or [synthetic], not both".into(),
            ));
        }
        if self.scheduler.write_low_watermark >= self.scheduler.write_high_watermark
            || self.scheduler.write_high_watermark > self.scheduler.write_queue_capacity
        {
            return Err(ConfigError::Invalid("write watermarks out of order".into()));
        }
        Ok(())
    }
}

impl RawConfig {
    fn resolve(self) -> Result<ExperimentConfig, ConfigError> {
        let e = self.experiment;
        let mode = Mode::parse(&e.mode).ok_or_else(|| ConfigError::UnknownMode(e.mode.clone()))?;
        let divergence = DivergenceMode::parse(&e.divergence)
            .ok_or_else(|| ConfigError::UnknownDivergence(e.divergence.clone()))?;
        let divergence_policy = DivergencePolicy::parse(&e.divergence_policy)
            .ok_or_else(|| ConfigError::UnknownPolicy(e.divergence_policy.clone()))?;
        let cfg = ExperimentConfig {
            name: e.name,
            mode,
            seed: e.seed,
            cores: e.cores,
            warmup_instructions: e.warmup_instructions,
            run_instructions: e.run_instructions,
            run_min_cycles: e.run_min_cycles,
            traces: e.traces.iter().map(PathBuf::from).collect(),
            divergence,
            divergence_policy,
            dump_commands: (!e.dump_commands.is_empty()).then(|| PathBuf::from(e.dump_commands)),
            drp_oracle: e.drp_oracle,
            track_refresh_gaps: e.track_refresh_gaps,
            timing: self.timing,
            geometry: self.geometry,
            maintenance: self.maintenance,
            scheduler: self.scheduler,
            frontend: self.frontend,
            energy: self.energy,
            synthetic: self.synthetic,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
