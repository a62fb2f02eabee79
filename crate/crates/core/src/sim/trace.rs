use std::io::Write;
use std::time::Duration;

use serde::Serialize;

use crate::attention::RegionStats;
use crate::error::Result;
use crate::packer::{PackReport, PolicyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub frame_index: usize,
    /// Keys visible to each current-frame query while this frame was generated.
    pub attended_keys: usize,
    /// Cache rows after the policy handled this frame.
    pub occupancy: usize,
    pub dropped_frames: usize,
    /// One entry per refinement step.
    pub region_stats: Vec<RegionStats>,
    pub report: PackReport,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub policy: PolicyKind,
    pub window: usize,
    pub seed: u64,
    pub anchors: usize,
    pub frames: Vec<FrameTrace>,
}

#[derive(Debug, Serialize)]
struct Summary {
    policy: String,
    window: usize,
    seed: u64,
    anchors: usize,
    frames: usize,
    total_attended_keys: usize,
    final_attended_keys: usize,
    final_occupancy: usize,
    peak_occupancy: usize,
    dropped_frames: usize,
    wall_time_ms: f64,
}

impl GenerationTrace {
    pub const CSV_HEADER: [&'static str; 7] = [
        "frame_index",
        "attended_keys",
        "occupancy",
        "kept_per_frame",
        "removed_masked",
        "removed_by_budget",
        "dropped_frames",
    ];

    pub fn total_attended_keys(&self) -> usize {
        self.frames.iter().map(|f| f.attended_keys).sum()
    }

    pub fn occupancies(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.occupancy).collect()
    }

    /// Per-frame CSV. Wall time is left out so that equal seeds give equal bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for f in &self.frames {
            w.write_record([
                f.frame_index.to_string(),
                f.attended_keys.to_string(),
                f.occupancy.to_string(),
                f.report.kept_field(),
                f.report.removed_masked.to_string(),
                f.report.removed_by_budget.to_string(),
                f.dropped_frames.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Pack reports alone, `frame_index,kept_per_frame,removed_masked,removed_by_budget,occupancy`.
    pub fn write_reports_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(PackReport::CSV_HEADER)?;
        for f in &self.frames {
            w.write_record(f.report.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Region statistics, `frame_index,step,layer,region,mean`.
    pub fn write_stats_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame_index", "step", "layer", "region", "mean"])?;
        for f in &self.frames {
            for s in &f.region_stats {
                for (region, mean) in &s.means {
                    w.write_record([
                        f.frame_index.to_string(),
                        s.step.to_string(),
                        s.layer.to_string(),
                        region.to_string(),
                        mean.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        let summary = Summary {
            policy: self.policy.to_string(),
            window: self.window,
            seed: self.seed,
            anchors: self.anchors,
            frames: self.frames.len(),
            total_attended_keys: self.total_attended_keys(),
            final_attended_keys: self.frames.last().map_or(0, |f| f.attended_keys),
            final_occupancy: self.frames.last().map_or(0, |f| f.occupancy),
            peak_occupancy: self.frames.iter().map(|f| f.occupancy).max().unwrap_or(0),
            dropped_frames: self.frames.last().map_or(0, |f| f.dropped_frames),
            wall_time_ms: self.frames.iter().map(|f| f.wall_time.as_secs_f64() * 1e3).sum(),
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// Mean attention on each history frame by temporal distance while
    /// generating `frame_index`, averaged over that frame's steps.
    pub fn history_by_distance_at(&self, frame_index: usize) -> Vec<(usize, f64)> {
        let Some(f) = self.frames.iter().find(|f| f.frame_index == frame_index) else {
            return Vec::new();
        };
        let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
        for s in &f.region_stats {
            for (d, m) in s.history_by_distance(frame_index) {
                *acc.entry(d).or_default() += m / f.region_stats.len() as f64;
            }
        }
        acc.into_iter().collect()
    }

    /// [`history_by_distance_at`](Self::history_by_distance_at) for the last
    /// frame, where every distance is visible under the same key count.
    pub fn final_history_by_distance(&self) -> Vec<(usize, f64)> {
        self.frames
            .last()
            .map_or_else(Vec::new, |f| self.history_by_distance_at(f.frame_index))
    }
}
