//! Per-command latency marks and their four-way decomposition.
//!
//! Every mark is stamped by the server clock on receipt, so components are
//! plain differences on one timeline:
//!
//! | component | from                 | to                     |
//! |-----------|----------------------|------------------------|
//! | L1        | user request         | wizard input           |
//! | L2        | wizard input         | goal active            |
//! | L3        | goal active          | first motion perceived |
//! | L4        | repair requested     | repair active          |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{LogEvent, Stream};
use crate::model::CommandId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkKind {
    UserRequest,
    WizardInput,
    GoalActive,
    FirstMotionPerceived,
    RepairRequested,
    RepairActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyMark {
    pub command_id: CommandId,
    pub kind: MarkKind,
    pub t_mono_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub command_id: CommandId,
    pub l1_ms: Option<i64>,
    pub l2_ms: i64,
    pub l3_ms: Option<i64>,
    pub l4_ms: Option<i64>,
}

impl LatencyBreakdown {
    /// `L1 + L2 + L3` when all three exist.
    pub fn end_to_end(&self) -> Option<i64> {
        Some(self.l1_ms? + self.l2_ms + self.l3_ms?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatencyError {
    #[error("command {command_id} already has a {kind:?} mark")]
    DuplicateMark { command_id: CommandId, kind: MarkKind },
    #[error("command {0} lacks a wizard-input or goal-active mark")]
    IncompleteTrace(CommandId),
    #[error("log contains no latency marks")]
    EmptyLog,
}

/// Append-only mark store; the first mark of each kind wins.
#[derive(Debug, Clone, Default)]
pub struct LatencyStore {
    by_command: BTreeMap<CommandId, BTreeMap<MarkKind, u64>>,
}

impl LatencyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark(&mut self, m: LatencyMark) -> Result<(), LatencyError> {
        let marks = self.by_command.entry(m.command_id).or_default();
        if marks.contains_key(&m.kind) {
            return Err(LatencyError::DuplicateMark {
                command_id: m.command_id,
                kind: m.kind,
            });
        }
        marks.insert(m.kind, m.t_mono_ms);
        Ok(())
    }

    pub fn has(&self, command_id: CommandId, kind: MarkKind) -> bool {
        self.by_command
            .get(&command_id)
            .is_some_and(|m| m.contains_key(&kind))
    }

    pub fn marks_for(&self, command_id: CommandId) -> Vec<LatencyMark> {
        self.by_command
            .get(&command_id)
            .map(|m| {
                m.iter()
                    .map(|(&kind, &t_mono_ms)| LatencyMark {
                        command_id,
                        kind,
                        t_mono_ms,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn breakdown(&self, command_id: CommandId) -> Result<LatencyBreakdown, LatencyError> {
        compute_breakdown(command_id, &self.marks_for(command_id))
    }
}

/// Decomposes one command's marks. Components whose endpoints are missing
/// are `None`; wizard input and goal activation are required.
pub fn compute_breakdown(command_id: CommandId, marks: &[LatencyMark]) -> Result<LatencyBreakdown, LatencyError> {
    let at = |kind: MarkKind| {
        marks
            .iter()
            .find(|m| m.command_id == command_id && m.kind == kind)
            .map(|m| m.t_mono_ms as i64)
    };
    let diff = |a: MarkKind, b: MarkKind| Some(at(b)? - at(a)?);
    let l2_ms = diff(MarkKind::WizardInput, MarkKind::GoalActive)
        .ok_or(LatencyError::IncompleteTrace(command_id))?;
    Ok(LatencyBreakdown {
        command_id,
        l1_ms: diff(MarkKind::UserRequest, MarkKind::WizardInput),
        l2_ms,
        l3_ms: diff(MarkKind::GoalActive, MarkKind::FirstMotionPerceived),
        l4_ms: diff(MarkKind::RepairRequested, MarkKind::RepairActive),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub count: usize,
    pub min: i64,
    pub median: f64,
    /// Nearest-rank 95th percentile.
    pub p95: i64,
    pub max: i64,
}

impl ComponentStats {
    pub fn from_samples(samples: &[i64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_unstable();
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
        };
        let rank = (95 * n).div_ceil(100);
        Some(ComponentStats {
            count: n,
            min: v[0],
            median,
            p95: v[rank - 1],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub commands: usize,
    /// Commands lacking wizard-input or goal-active marks.
    pub incomplete: usize,
    pub l1: Option<ComponentStats>,
    pub l2: Option<ComponentStats>,
    pub l3: Option<ComponentStats>,
    pub l4: Option<ComponentStats>,
    /// Commands with all four request-to-motion marks.
    pub end_to_end_checked: usize,
    /// Commands where `L1 + L2 + L3` differs from the end-to-end delay.
    pub end_to_end_violations: Vec<CommandId>,
    pub breakdowns: Vec<LatencyBreakdown>,
}

/// Aggregates every `latency_mark` event in a session log.
pub fn report(events: &[LogEvent]) -> Result<LatencyReport, LatencyError> {
    let marks: Vec<LatencyMark> = events
        .iter()
        .filter(|e| e.stream == Stream::LatencyMark)
        .filter_map(|e| e.decode().ok())
        .collect();
    report_marks(&marks)
}

pub fn report_marks(marks: &[LatencyMark]) -> Result<LatencyReport, LatencyError> {
    if marks.is_empty() {
        return Err(LatencyError::EmptyLog);
    }
    let mut store = LatencyStore::new();
    for m in marks {
        // Duplicates were already reported when the session recorded them.
        let _ = store.mark(*m);
    }

    let mut breakdowns = Vec::new();
    let mut incomplete = 0;
    let mut l4_only = Vec::new();
    let mut checked = 0;
    let mut violations = Vec::new();
    for &cmd in store.by_command.keys() {
        let at = |k| store.by_command[&cmd].get(&k).map(|&t| t as i64);
        match store.breakdown(cmd) {
            Ok(b) => {
                if let (Some(sum), Some(req), Some(seen)) = (
                    b.end_to_end(),
                    at(MarkKind::UserRequest),
                    at(MarkKind::FirstMotionPerceived),
                ) {
                    checked += 1;
                    if sum != seen - req {
                        violations.push(cmd);
                    }
                }
                breakdowns.push(b);
            }
            Err(_) => {
                incomplete += 1;
                if let (Some(a), Some(b)) = (at(MarkKind::RepairRequested), at(MarkKind::RepairActive)) {
                    l4_only.push(b - a);
                }
            }
        }
    }

    let collect = |f: fn(&LatencyBreakdown) -> Option<i64>| {
        let v: Vec<i64> = breakdowns.iter().filter_map(f).collect();
        ComponentStats::from_samples(&v)
    };
    let mut l4: Vec<i64> = breakdowns.iter().filter_map(|b| b.l4_ms).collect();
    l4.extend(l4_only);
    Ok(LatencyReport {
        commands: store.by_command.len(),
        incomplete,
        l1: collect(|b| b.l1_ms),
        l2: collect(|b| Some(b.l2_ms)),
        l3: collect(|b| b.l3_ms),
        l4: ComponentStats::from_samples(&l4),
        end_to_end_checked: checked,
        end_to_end_violations: violations,
        breakdowns,
    })
}

impl LatencyReport {
    /// Aligned plain-text table, one row per component.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>8} {:>8} {:>8} {:>8}",
            "component", "count", "min", "median", "p95", "max"
        );
        let rows = [
            ("L1", &self.l1),
            ("L2", &self.l2),
            ("L3", &self.l3),
            ("L4", &self.l4),
        ];
        for (name, stats) in rows {
            match stats {
                Some(s) => {
                    let _ = writeln!(
                        out,
                        "{:<10} {:>6} {:>8} {:>8.1} {:>8} {:>8}",
                        name, s.count, s.min, s.median, s.p95, s.max
                    );
                }
                None => {
                    let _ = writeln!(out, "{:<10} {:>6} {:>8} {:>8} {:>8} {:>8}", name, 0, "-", "-", "-", "-");
                }
            }
        }
        let _ = writeln!(
            out,
            "commands: {}  incomplete: {}  end-to-end checked: {}  violations: {}",
            self.commands,
            self.incomplete,
            self.end_to_end_checked,
            self.end_to_end_violations.len()
        );
        out
    }
}
