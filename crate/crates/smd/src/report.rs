//! Experiment metrics and their CSV projection.

use std::collections::BTreeMap;

use crate::energy::EnergyBreakdown;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommandCounts {
    pub act: u64,
    pub pre: u64,
    pub rd: u64,
    pub wr: u64,
    pub refresh: u64,
}

/// Everything a run reports. Energy values are femtojoules; the breakdown
/// sums to the total by construction.
#[derive(Debug, Clone, Default)]
pub struct StatsReport {
    pub experiment: String,
    pub mode: String,
    pub seed: u64,
    /// Value of the swept axis for sweep runs, echoed into the CSV.
    pub axis_value: Option<f64>,
    pub bus_cycles: u64,
    pub cpu_cycles: u64,
    pub instructions: Vec<u64>,
    pub ipc: Vec<f64>,
    pub weighted_speedup: Option<f64>,
    pub commands: CommandCounts,
    pub nacks: u64,
    /// ACTs re-issued to a region after a rejection.
    pub act_retries: u64,
    /// Rows refreshed, keyed by mechanism name.
    pub refresh_rows: BTreeMap<String, u64>,
    pub scrub_rows: u64,
    pub scrub_corrected: u64,
    pub max_row_refresh_gap: Option<u64>,
    pub locked_region_cycles: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub llc_writebacks: u64,
    pub mshr_merges: u64,
    pub reads_served: u64,
    pub writes_served: u64,
    pub fills_requested: u64,
    pub fills_received: u64,
    pub energy: EnergyBreakdown,
    pub faults: Vec<String>,
}

impl StatsReport {
    pub fn aggregate_ipc(&self) -> f64 {
        self.ipc.iter().sum()
    }

    pub fn ok(&self) -> bool {
        self.faults.is_empty()
    }

    /// Stable metric rows: `(metric, value)` in a fixed order. The CSV
    /// column order is experiment, mode, seed, axis, metric, value.
    pub fn metric_rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = vec![
            ("bus_cycles".into(), self.bus_cycles.to_string()),
            ("cpu_cycles".into(), self.cpu_cycles.to_string()),
            ("ipc_total".into(), format!("{:.6}", self.aggregate_ipc())),
        ];
        for (i, ipc) in self.ipc.iter().enumerate() {
            rows.push((format!("ipc_core{i}"), format!("{ipc:.6}")));
        }
        if let Some(ws) = self.weighted_speedup {
            rows.push(("weighted_speedup".into(), format!("{ws:.6}")));
        }
        rows.extend([
            ("cmd_act".into(), self.commands.act.to_string()),
            ("cmd_pre".into(), self.commands.pre.to_string()),
            ("cmd_rd".into(), self.commands.rd.to_string()),
            ("cmd_wr".into(), self.commands.wr.to_string()),
            ("cmd_ref".into(), self.commands.refresh.to_string()),
            ("nacks".into(), self.nacks.to_string()),
            ("act_retries".into(), self.act_retries.to_string()),
        ]);
        for (mech, rows_refreshed) in &self.refresh_rows {
            rows.push((format!("refresh_rows_{mech}"), rows_refreshed.to_string()));
        }
        rows.extend([
            ("scrub_rows".into(), self.scrub_rows.to_string()),
            ("scrub_corrected".into(), self.scrub_corrected.to_string()),
            (
                "max_row_refresh_gap".into(),
                self.max_row_refresh_gap
                    .map_or_else(|| "na".into(), |v| v.to_string()),
            ),
            (
                "locked_region_cycles".into(),
                self.locked_region_cycles.to_string(),
            ),
            ("llc_hits".into(), self.llc_hits.to_string()),
            ("llc_misses".into(), self.llc_misses.to_string()),
            ("llc_writebacks".into(), self.llc_writebacks.to_string()),
            ("mshr_merges".into(), self.mshr_merges.to_string()),
            ("reads_served".into(), self.reads_served.to_string()),
            ("writes_served".into(), self.writes_served.to_string()),
            ("energy_act_fj".into(), self.energy.act.to_string()),
            ("energy_pre_fj".into(), self.energy.pre.to_string()),
            ("energy_rd_fj".into(), self.energy.rd.to_string()),
            ("energy_wr_fj".into(), self.energy.wr.to_string()),
            (
                "energy_refresh_fj".into(),
                self.energy.refresh_rows.to_string(),
            ),
            ("energy_scrub_fj".into(), self.energy.scrub.to_string()),
            (
                "energy_bg_active_fj".into(),
                self.energy.background_active.to_string(),
            ),
            (
                "energy_bg_idle_fj".into(),
                self.energy.background_idle.to_string(),
            ),
            ("energy_total_fj".into(), self.energy.total().to_string()),
            ("faults".into(), self.faults.len().to_string()),
        ]);
        rows
    }
}
