use std::fmt::Write as _;

use crate::fuzzer::CampaignResult;
use crate::stats::{mean, median};

/// Aggregate of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub mean: f64,
    pub median: f64,
    pub trials: usize,
    /// Trials that hit the budget first; their value is a lower bound.
    pub censored: usize,
}

/// Mean metric per (state bits, code width) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTable {
    pub metric: String,
    pub state_bits: Vec<u32>,
    pub code_widths: Vec<u32>,
    /// Row-major: one row per state-bit count.
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapTable {
    /// Builds the table from per-cell `(value, censored)` samples.
    pub fn from_samples(
        metric: impl Into<String>,
        state_bits: &[u32],
        code_widths: &[u32],
        mut samples: impl FnMut(u32, u32) -> Vec<(f64, bool)>,
    ) -> Self {
        let mut cells = Vec::with_capacity(state_bits.len() * code_widths.len());
        for &n in state_bits {
            for &m in code_widths {
                let s = samples(n, m);
                let values: Vec<f64> = s.iter().map(|(v, _)| *v).collect();
                cells.push(HeatmapCell {
                    mean: mean(&values).unwrap_or(f64::NAN),
                    median: median(&values).unwrap_or(f64::NAN),
                    trials: s.len(),
                    censored: s.iter().filter(|(_, c)| *c).count(),
                });
            }
        }
        HeatmapTable { metric: metric.into(), state_bits: state_bits.to_vec(), code_widths: code_widths.to_vec(), cells }
    }

    pub fn cell(&self, state_bits: u32, code_width: u32) -> Option<&HeatmapCell> {
        let r = self.state_bits.iter().position(|&n| n == state_bits)?;
        let c = self.code_widths.iter().position(|&m| m == code_width)?;
        self.cells.get(r * self.code_widths.len() + c)
    }

    /// Cell-wise `numerator.mean / denominator.mean`. A cell is censored if
    /// either input cell is.
    pub fn ratio(numerator: &HeatmapTable, denominator: &HeatmapTable) -> HeatmapTable {
        let cells = numerator
            .cells
            .iter()
            .zip(&denominator.cells)
            .map(|(a, b)| HeatmapCell {
                mean: a.mean / b.mean,
                median: a.median / b.median,
                trials: a.trials.min(b.trials),
                censored: a.censored + b.censored,
            })
            .collect();
        HeatmapTable {
            metric: format!("{}/{}", numerator.metric, denominator.metric),
            state_bits: numerator.state_bits.clone(),
            code_widths: numerator.code_widths.clone(),
            cells,
        }
    }

    pub const CSV_HEADER: &'static str = "state_bits,num_states,code_width,trials,mean,median,censored";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (r, &n) in self.state_bits.iter().enumerate() {
            for (c, &m) in self.code_widths.iter().enumerate() {
                let cell = &self.cells[r * self.code_widths.len() + c];
                let _ = writeln!(
                    out,
                    "{n},{},{m},{},{},{},{}",
                    1u64 << n,
                    cell.trials,
                    cell.mean,
                    cell.median,
                    cell.censored
                );
            }
        }
        out
    }

    /// Grid of means; `*` marks cells with censored trials (lower bounds).
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| states \\ code width |");
        for m in &self.code_widths {
            let _ = write!(out, " {m} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.code_widths.len()));
        out.push('\n');
        for (r, &n) in self.state_bits.iter().enumerate() {
            let _ = write!(out, "| {} |", 1u64 << n);
            for c in 0..self.code_widths.len() {
                let cell = &self.cells[r * self.code_widths.len() + c];
                let mark = if cell.censored > 0 { "*" } else { "" };
                let _ = write!(out, " {:.4e}{mark} |", cell.mean);
            }
            out.push('\n');
        }
        out
    }
}

/// One row of a consolidated coverage trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub execs: u64,
    pub sim_cycles: f64,
    pub edges_covered: f64,
    pub fsm_fraction: f64,
    /// Runs still going at this point (others contribute their final value).
    pub active_runs: usize,
}

/// Averages the coverage trajectories of several runs on a common exec
/// axis. Each run contributes its latest sample at or before every point;
/// a finished run carries its last sample forward.
pub fn report_coverage_trace(results: &[&CampaignResult]) -> Vec<TraceRow> {
    let mut axis: Vec<u64> = results.iter().flat_map(|r| r.trajectory.iter().map(|s| s.execs)).collect();
    axis.sort_unstable();
    axis.dedup();
    let mut cursors = vec![0usize; results.len()];
    let mut rows = Vec::with_capacity(axis.len());
    for &x in &axis {
        let (mut cyc, mut edges, mut fsm, mut active, mut n) = (0.0, 0.0, 0.0, 0, 0u32);
        for (r, cur) in results.iter().zip(cursors.iter_mut()) {
            let t = &r.trajectory;
            while *cur + 1 < t.len() && t[*cur + 1].execs <= x {
                *cur += 1;
            }
            let Some(s) = t.get(*cur).filter(|s| s.execs <= x) else {
                continue;
            };
            cyc += s.sim_cycles as f64;
            edges += s.edges_covered as f64;
            fsm += s.fsm_fraction;
            n += 1;
            if t.last().is_some_and(|l| l.execs >= x) {
                active += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let k = f64::from(n);
        rows.push(TraceRow { execs: x, sim_cycles: cyc / k, edges_covered: edges / k, fsm_fraction: fsm / k, active_runs: active });
    }
    rows
}

pub const TRACE_CSV_HEADER: &str = "execs,sim_cycles,edges_covered,fsm_fraction,active_runs";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.execs, r.sim_cycles, r.edges_covered, r.fsm_fraction, r.active_runs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzer::TrajectorySample;

    fn run(points: &[(u64, usize)]) -> CampaignResult {
        CampaignResult {
            execs: points.last().unwrap().0,
            sim_cycles: 0,
            wall_us: 0,
            first_crash_wall_us: None,
            crashes: vec![],
            queue: vec![],
            trajectory: points
                .iter()
                .map(|&(execs, edges)| TrajectorySample {
                    execs,
                    sim_cycles: execs * 10,
                    wall_us: 0,
                    edges_covered: edges,
                    fsm_fraction: 0.0,
                })
                .collect(),
            fsm_progress: vec![],
            fsm_states: None,
            covered_edges: vec![],
        }
    }

    #[test]
    fn heatmap_cells_and_csv() {
        let t = HeatmapTable::from_samples("cycles", &[1, 2], &[1, 2, 3], |n, m| {
            vec![(f64::from(n * 10 + m), false), (f64::from(n * 10 + m) + 2.0, n == 2)]
        });
        assert_eq!(t.cells.len(), 6);
        assert_eq!(t.cell(2, 3).unwrap().mean, 24.0);
        assert_eq!(t.cell(2, 3).unwrap().censored, 1);
        assert!(t.cell(3, 1).is_none());
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("\n2,4,3,2,24,24,1\n"));
        assert!(t.to_markdown().contains("2.4000e1*"));
        let r = HeatmapTable::ratio(&t, &t);
        assert!(r.cells.iter().all(|c| c.mean == 1.0));
    }

    #[test]
    fn trace_carries_finished_runs_forward() {
        let a = run(&[(10, 1), (20, 3), (30, 4)]);
        let b = run(&[(10, 2), (20, 2)]);
        let rows = report_coverage_trace(&[&a, &b]);
        let edges: Vec<f64> = rows.iter().map(|r| r.edges_covered).collect();
        assert_eq!(edges, vec![1.5, 2.5, 3.0]);
        assert_eq!(rows[2].active_runs, 1);
        assert_eq!(rows[0].sim_cycles, 100.0);
    }

    #[test]
    fn trace_is_monotone_for_monotone_runs() {
        let a = run(&[(5, 1), (15, 2), (25, 9)]);
        let b = run(&[(10, 3), (20, 3), (40, 5)]);
        let rows = report_coverage_trace(&[&a, &b]);
        assert!(rows.windows(2).all(|w| w[0].edges_covered <= w[1].edges_covered));
        // b has no sample at 5 yet, so only a contributes
        assert_eq!(rows[0].edges_covered, 1.0);
    }
}
