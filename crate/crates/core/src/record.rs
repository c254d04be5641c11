//! Sampled trajectories over hybrid time domains and their CSV encoding.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Subnetwork;
use crate::state::{SaddleState, BLOCK_NAMES};

/// First line of every trajectory CSV.
pub const CSV_SCHEMA_LINE: &str = "# nashflow trajectory v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub j: u64,
    pub payoff: f64,
    pub gap: Option<f64>,
    /// `V` for flows, `Ṽ` for hybrid runs.
    pub lyapunov: Option<f64>,
    /// False when the hybrid timers disagree and `Ṽ` is only diagnostic.
    pub lyapunov_valid: bool,
    pub block_norms: [f64; 8],
    pub dist_x: f64,
    pub dist_y: f64,
    /// Timers of both subnetworks (first then second); empty for flows.
    pub timers: Vec<f64>,
    pub state: Option<Vec<f64>>,
}

impl Sample {
    pub fn tau_min(&self) -> Option<f64> {
        self.timers.iter().copied().reduce(f64::min)
    }

    pub fn tau_max(&self) -> Option<f64> {
        self.timers.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerReset {
    pub subnetwork: u8,
    pub agent: usize,
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    /// Jump counter before the jump.
    pub j: u64,
    pub trigger: (Subnetwork, usize),
    pub resets: Vec<TimerReset>,
}

/// A maximal cascade of jumps at one flow instant that starts and ends with
/// all timers in agreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Restart {
    pub t: f64,
    pub j_before: u64,
    pub j_after: u64,
    pub gap: f64,
    pub lyapunov_before: f64,
    pub lyapunov_after: f64,
}

/// Start of a flow interval with synchronized timers; `c = r·Ṽ` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStart {
    pub t: f64,
    pub j: u64,
    pub c: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub events: Vec<JumpEvent>,
    pub restarts: Vec<Restart>,
    pub epochs: Vec<EpochStart>,
    pub diverged: bool,
    /// Hybrid time at which divergence was detected.
    pub divergence: Option<(f64, u64)>,
    /// Flow steps taken.
    pub steps: u64,
    pub final_state: Option<SaddleState>,
    pub final_timers: Vec<f64>,
    /// Worst per-step increase `(V_next - V) / max(1, V)` and its time, when
    /// every step was monitored.
    pub worst_lyapunov_step: Option<(f64, f64)>,
}

impl TrajectoryRecord {
    pub(crate) fn note_lyapunov_step(&mut self, t: f64, before: f64, after: f64) {
        let rel = (after - before) / before.abs().max(1.0);
        match self.worst_lyapunov_step {
            Some((w, _)) if w >= rel => {}
            _ => self.worst_lyapunov_step = Some((rel, t)),
        }
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn terminal_gap(&self) -> Option<f64> {
        self.samples.iter().rev().find_map(|s| s.gap)
    }

    pub fn jump_count(&self) -> usize {
        self.events.len()
    }

    /// `(t, gap)` pairs for samples that carry a gap.
    pub fn gap_series(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .filter_map(|s| s.gap.map(|g| (s.t, g)))
            .collect()
    }

    /// Smallest `t + j` after which every recorded sample has its timers in
    /// `[T0, T]·1 ∪ {T0, T}^n` (within `tol`). `None` if the last sample is
    /// still outside, or if there are no timers.
    pub fn observed_consensus_time(&self, lower: f64, upper: f64, tol: f64) -> Option<f64> {
        if self.samples.iter().all(|s| s.timers.is_empty()) {
            return None;
        }
        let mut first_ok: Option<f64> = None;
        for s in &self.samples {
            if timers_synchronized(&s.timers, lower, upper, tol) {
                first_ok.get_or_insert(s.t + s.j as f64);
            } else {
                first_ok = None;
            }
        }
        first_ok
    }

    /// Writes samples and jump events, merged in hybrid-time order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_csv_to(&mut file)
    }

    pub fn write_csv_to<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{CSV_SCHEMA_LINE}")?;
        let state_len = self
            .samples
            .iter()
            .find_map(|s| s.state.as_ref().map(|v| v.len()))
            .unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "kind", "t", "j", "payoff", "gap", "lyapunov", "lyapunov_valid",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(BLOCK_NAMES.iter().map(|b| format!("norm_{b}")));
        header.extend(
            ["dist_x", "dist_y", "tau_min", "tau_max", "trigger", "resets"]
                .iter()
                .map(|s| s.to_string()),
        );
        header.extend((0..state_len).map(|i| format!("z{i}")));
        w.write_record(&header)?;

        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        let mut events = self.events.iter().peekable();
        let width = header.len();
        let write_event = |w: &mut csv::Writer<&mut W>, e: &JumpEvent| -> Result<()> {
            let mut row = vec![String::new(); width];
            row[0] = "jump".into();
            row[1] = fmt(e.t);
            row[2] = e.j.to_string();
            row[19] = format!("{}:{}", e.trigger.0.number(), e.trigger.1);
            row[20] = e
                .resets
                .iter()
                .map(|r| format!("{}:{}:{}->{}", r.subnetwork, r.agent, fmt(r.old), fmt(r.new)))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record(&row)?;
            Ok(())
        };
        for s in &self.samples {
            while let Some(e) = events.peek() {
                if (e.t, e.j) < (s.t, s.j) {
                    write_event(&mut w, e)?;
                    events.next();
                } else {
                    break;
                }
            }
            let mut row = vec![
                "sample".to_string(),
                fmt(s.t),
                s.j.to_string(),
                fmt(s.payoff),
                opt(s.gap),
                opt(s.lyapunov),
                s.lyapunov_valid.to_string(),
            ];
            row.extend(s.block_norms.iter().map(|&v| fmt(v)));
            row.push(fmt(s.dist_x));
            row.push(fmt(s.dist_y));
            row.push(opt(s.tau_min()));
            row.push(opt(s.tau_max()));
            row.push(String::new());
            row.push(String::new());
            match &s.state {
                Some(z) => row.extend(z.iter().map(|&v| fmt(v))),
                None => row.extend(std::iter::repeat(String::new()).take(state_len)),
            }
            w.write_record(&row)?;
        }
        for e in events {
            write_event(&mut w, e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation, so identical runs give identical files.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Membership of a timer vector in `[T0, T]·1 ∪ {T0, T}^n` within `tol`.
pub fn timers_synchronized(timers: &[f64], lower: f64, upper: f64, tol: f64) -> bool {
    if timers.is_empty() {
        return true;
    }
    let min = timers.iter().copied().fold(f64::INFINITY, f64::min);
    let max = timers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= tol {
        return true;
    }
    timers
        .iter()
        .all(|&t| (t - lower).abs() <= tol || (t - upper).abs() <= tol)
}
