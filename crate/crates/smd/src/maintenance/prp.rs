//! Probabilistic RowHammer protection engines.
//!
//! The plain engine marks each activated row as an aggressor with probability
//! `P_mark` in the per-bank marked-rows table (one entry per lock region,
//! holding a region-relative row address and a valid bit). A marked row's
//! neighbors are refreshed under a region lock on a later engine step, after
//! which the entry is invalidated.
//!
//! The tracking variant adds two counting Bloom filters operated in a
//! time-interleaved manner over a rolling window: every activation is
//! inserted into both, and a row only becomes eligible for marking once the
//! active filter's estimate exceeds the activation threshold. Marking stays
//! probabilistic because the filters cannot reset a single row's counters;
//! the active filter is cleared and the roles swap every half window.

use crate::chip::{Chip, Geometry, LockOwner};
use crate::maintenance::bloom::CountingBloomFilter;
use crate::maintenance::{Engine, EngineFault, MaintEvent, VictimRefresher};
use crate::rng::SimRng;
use crate::timing::TimingParams;

#[derive(Debug, Clone)]
struct Tracking {
    cbfs: [CountingBloomFilter; 2],
    active: usize,
    act_max: u64,
    half_window: u64,
    next_swap_at: u64,
}

impl Tracking {
    fn lazy_swap(&mut self, now: u64) {
        while now >= self.next_swap_at {
            self.cbfs[self.active].clear();
            self.active ^= 1;
            self.next_swap_at += self.half_window;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbabilisticProtection {
    owner: LockOwner,
    bank: u32,
    rows_per_region: u32,
    regions: u32,
    p_mark: f64,
    blast: u32,
    /// Marked-rows table: one region-relative aggressor address per region.
    mrt: Vec<Option<u32>>,
    rng: SimRng,
    refresher: VictimRefresher,
    /// Region whose mark is currently being serviced, with its row.
    in_service: Option<(u32, u32)>,
    scan: u32,
    tracking: Option<Tracking>,
}

impl ProbabilisticProtection {
    pub fn plain(bank: u32, geom: &Geometry, p_mark: f64, blast: u32, rng: SimRng) -> Self {
        Self {
            owner: LockOwner::RowHammerProbabilistic,
            bank,
            rows_per_region: geom.rows_per_region(),
            regions: geom.regions_per_bank,
            p_mark,
            blast,
            mrt: vec![None; geom.regions_per_bank as usize],
            rng,
            refresher: VictimRefresher::new(LockOwner::RowHammerProbabilistic, bank),
            in_service: None,
            scan: 0,
            tracking: None,
        }
    }

    /// Tracking variant: `cbf_bits` counters per filter, threshold `act_max`,
    /// rolling window of `l_rtw` cycles.
    #[allow(clippy::too_many_arguments)]
    pub fn tracked(
        bank: u32,
        geom: &Geometry,
        p_mark: f64,
        blast: u32,
        act_max: u64,
        l_rtw: u64,
        cbf_bits: u64,
        cbf_hashes: u32,
        seed: u64,
        rng: SimRng,
    ) -> Self {
        let half = (l_rtw / 2).max(1);
        let mut eng = Self::plain(bank, geom, p_mark, blast, rng);
        eng.owner = LockOwner::RowHammerTracked;
        eng.refresher = VictimRefresher::new(LockOwner::RowHammerTracked, bank);
        eng.tracking = Some(Tracking {
            cbfs: [
                CountingBloomFilter::new(cbf_bits, cbf_hashes, seed),
                CountingBloomFilter::new(cbf_bits, cbf_hashes, seed ^ 0x5DEE_CE66),
            ],
            active: 0,
            act_max,
            half_window: half,
            next_swap_at: half,
        });
        eng
    }

    pub fn marked(&self, region: u32) -> Option<u32> {
        self.mrt[region as usize]
    }

    /// Active-filter estimate for a row (tracking variant only).
    pub fn estimate(&self, row: u32) -> Option<u32> {
        self.tracking
            .as_ref()
            .map(|t| t.cbfs[t.active].estimate(u64::from(row)))
    }

    fn mark(&mut self, row: u32, out: &mut Vec<MaintEvent>) {
        let region = row / self.rows_per_region;
        // A newer mark overwrites any prior mark in the same region.
        self.mrt[region as usize] = Some(row % self.rows_per_region);
        out.push(MaintEvent::AggressorMarked {
            bank: self.bank,
            row,
        });
    }

    /// Next marked region in round-robin order after the last serviced one.
    fn next_marked(&self) -> Option<(u32, u32)> {
        (1..=self.regions).find_map(|i| {
            let region = (self.scan + i) % self.regions;
            self.mrt[region as usize]
                .map(|rel| (region, region * self.rows_per_region + rel))
        })
    }
}

impl Engine for ProbabilisticProtection {
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
        let mut wake = u64::MAX;
        if let Some(t) = &mut self.tracking {
            t.lazy_swap(now);
            wake = t.next_swap_at;
        }
        loop {
            let (w, finished) = self.refresher.step(chip, now, p, self.blast, out);
            if let Some(aggr) = finished {
                if let Some((region, row)) = self.in_service.take() {
                    debug_assert_eq!(row, aggr);
                    // Invalidate the serviced mark unless it was overwritten
                    // by a newer aggressor while the victims refreshed.
                    if self.mrt[region as usize] == Some(row % self.rows_per_region) {
                        self.mrt[region as usize] = None;
                    }
                    self.scan = region;
                }
                continue;
            }
            if self.refresher.idle() && self.in_service.is_none() {
                if let Some((region, row)) = self.next_marked() {
                    self.in_service = Some((region, row));
                    self.refresher.push(row);
                    continue;
                }
            }
            return Ok(wake.min(w));
        }
    }

    fn on_act(&mut self, row: u32, now: u64, out: &mut Vec<MaintEvent>) {
        if let Some(t) = &mut self.tracking {
            t.lazy_swap(now);
            t.cbfs[0].insert(u64::from(row));
            t.cbfs[1].insert(u64::from(row));
            if u64::from(t.cbfs[t.active].estimate(u64::from(row))) <= t.act_max {
                return;
            }
        }
        if self.rng.chance(self.p_mark) {
            self.mark(row, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::Geometry;
    use crate::rng::SimRng;

    fn desk() -> Geometry {
        Geometry::default()
    }

    #[test]
    fn p_mark_zero_never_marks_and_one_always_marks() {
        let g = desk();
        let mut out = Vec::new();
        let mut never =
            ProbabilisticProtection::plain(0, &g, 0.0, 1, SimRng::substream(1, "prp"));
        let mut always =
            ProbabilisticProtection::plain(0, &g, 1.0, 1, SimRng::substream(1, "prp"));
        for row in 0..100 {
            never.on_act(row, 0, &mut out);
        }
        assert!(out.is_empty());
        for row in 0..100 {
            always.on_act(row, 0, &mut out);
        }
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn mark_rate_matches_binomial_oracle() {
        // 1e6 activations at P_mark = 1%: the count must sit within 3 sigma
        // of the binomial mean, i.e. 10_000 +/- 3*sqrt(1e6*0.01*0.99).
        let g = desk();
        let mut eng = ProbabilisticProtection::plain(0, &g, 0.01, 1, SimRng::substream(17, "prp"));
        let mut out = Vec::new();
        for i in 0..1_000_000u32 {
            eng.on_act(i % g.rows_per_bank(), 0, &mut out);
        }
        let marks = out.len() as f64;
        let sigma = (1_000_000.0f64 * 0.01 * 0.99).sqrt();
        assert!(
            (marks - 10_000.0).abs() <= 3.0 * sigma,
            "marks {marks} outside 3-sigma band"
        );
    }

    #[test]
    fn newer_mark_overwrites_region_entry() {
        let g = desk();
        let mut eng = ProbabilisticProtection::plain(0, &g, 1.0, 1, SimRng::substream(3, "prp"));
        let mut out = Vec::new();
        eng.on_act(10, 0, &mut out);
        assert_eq!(eng.marked(0), Some(10));
        eng.on_act(37, 0, &mut out);
        assert_eq!(eng.marked(0), Some(37));
    }

    #[test]
    fn marked_row_gets_neighbors_refreshed_then_unmarked() {
        let g = desk();
        let p = TimingParams::default();
        let mut chip = Chip::new(&g, true);
        let mut eng = ProbabilisticProtection::plain(0, &g, 1.0, 1, SimRng::substream(5, "prp"));
        let mut out = Vec::new();
        eng.on_act(100, 0, &mut out);
        out.clear();
        let mut now = 1;
        for _ in 0..10 {
            let wake = eng.step(&mut chip, now, &p, &mut out).unwrap();
            if eng.marked(0).is_none() && eng.refresher.idle() {
                break;
            }
            now = wake.max(now + 1);
        }
        let refreshed: Vec<u32> = out
            .iter()
            .filter_map(|e| match e {
                MaintEvent::RowsRefreshed { rows, .. } => Some(rows.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        assert_eq!(refreshed, vec![99, 101]);
        assert_eq!(eng.marked(0), None);
        assert!(chip.locked_region(0).is_none(), "lock released");
    }

    #[test]
    fn cross_region_victims_lock_both_regions_sequentially() {
        let g = desk();
        let p = TimingParams::default();
        let mut chip = Chip::new(&g, true);
        let mut eng = ProbabilisticProtection::plain(0, &g, 1.0, 2, SimRng::substream(7, "prp"));
        let mut out = Vec::new();
        // Last row of region 0: victims 510,511 (region 0) and 512,513
        // (region 1).
        let aggressor = g.rows_per_region() - 1;
        eng.on_act(aggressor, 0, &mut out);
        out.clear();
        let mut now = 1;
        let mut steps = 0;
        while eng.marked(0).is_some() || !eng.refresher.idle() {
            let wake = eng.step(&mut chip, now, &p, &mut out).unwrap();
            if eng.marked(0).is_none() && eng.refresher.idle() {
                break;
            }
            now = wake.max(now + 1);
            steps += 1;
            assert!(steps < 100, "service must terminate");
        }
        let groups: Vec<Vec<u32>> = out
            .iter()
            .filter_map(|e| match e {
                MaintEvent::RowsRefreshed { rows, .. } => Some(rows.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(groups, vec![vec![509, 510], vec![512, 513]]);
    }

    #[test]
    fn tracked_variant_requires_estimate_above_threshold() {
        let g = desk();
        let mut eng = ProbabilisticProtection::tracked(
            0,
            &g,
            1.0,
            1,
            8,
            1 << 40,
            1024,
            4,
            11,
            SimRng::substream(11, "prp+"),
        );
        let mut out = Vec::new();
        // Eight activations reach the threshold but do not exceed it.
        for _ in 0..8 {
            eng.on_act(42, 0, &mut out);
        }
        assert!(out.is_empty(), "not eligible at estimate == act_max");
        eng.on_act(42, 0, &mut out);
        assert_eq!(out.len(), 1, "ninth activation exceeds the threshold");
    }

    #[test]
    fn estimates_reset_across_half_window_swaps() {
        let g = desk();
        let mut eng = ProbabilisticProtection::tracked(
            0,
            &g,
            1.0,
            1,
            4,
            1000,
            1024,
            4,
            13,
            SimRng::substream(13, "prp+"),
        );
        let mut out = Vec::new();
        for _ in 0..20 {
            eng.on_act(7, 10, &mut out);
        }
        assert!(eng.estimate(7).unwrap() >= 20);
        // After one swap the surviving filter still holds the history...
        eng.on_act(7, 510, &mut out);
        assert!(eng.estimate(7).unwrap() >= 21);
        // ...after the second swap the 20-insert history has aged out: only
        // the inserts made since the previous swap remain visible.
        out.clear();
        eng.on_act(7, 1020, &mut out);
        assert_eq!(eng.estimate(7).unwrap(), 2);
        assert!(out.is_empty());
    }
}
