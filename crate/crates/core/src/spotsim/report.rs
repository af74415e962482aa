use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use super::cost::{cost, savings, Money, PricingModel};
use super::{CheckpointPolicy, FitTarget, SimParams};
use crate::ledger::RunLedger;
use crate::time::{format_hms, parse_hms};
use crate::workload::DEFAULT_STAGE_NAMES;

/// One run: per-stage wall times, total, and how it was protected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub stage_times: Vec<(String, Duration)>,
    pub total: Duration,
    pub eviction: String,
    pub ckpt_type: String,
    /// Whether the coordinator supervised the run.
    pub coordinated: bool,
}

impl ReportRow {
    pub fn from_ledger(ledger: &RunLedger, eviction: &str, ckpt_type: &str) -> Self {
        ReportRow {
            stage_times: ledger.stage_times.clone(),
            total: ledger.makespan(),
            eviction: eviction.to_string(),
            ckpt_type: ckpt_type.to_string(),
            coordinated: true,
        }
    }
}

fn row(stages: [&str; 5], total: &str, eviction: &str, ckpt: &str, coordinated: bool) -> ReportRow {
    ReportRow {
        stage_times: DEFAULT_STAGE_NAMES
            .iter()
            .zip(stages)
            .map(|(n, t)| (n.to_string(), parse_hms(t).expect("valid duration")))
            .collect(),
        total: parse_hms(total).expect("valid duration"),
        eviction: eviction.to_string(),
        ckpt_type: ckpt.to_string(),
        coordinated,
    }
}

/// The eight recorded metaSPAdes runs (D8s v3 spot instance), in table order.
pub fn metaspades_runs() -> Vec<ReportRow> {
    alloc::vec![
        row(["33:50", "38:53", "39:51", "40:19", "30:33"], "3:03:26", "N/A", "N/A", false),
        row(["33:57", "39:03", "41:35", "40:41", "31:01"], "3:05:32", "N/A", "N/A", true),
        row(["33:33", "40:15", "57:16", "38:56", "46:14"], "3:36:14", "Every 90 min", "Application", true),
        row(["29:22", "1:05:25", "1:03:03", "59:25", "51:07"], "4:28:22", "Every 60 min", "Application", true),
        row(["32:52", "37:03", "41:15", "39:53", "28:32"], "2:59:35", "Every 90 min", "Transparent 30 min", true),
        row(["32:45", "38:13", "41:58", "39:50", "32:22"], "3:05:08", "Every 90 min", "Transparent 15 min", true),
        row(["32:40", "38:52", "41:10", "39:45", "28:34"], "3:01:01", "Every 60 min", "Transparent 30 min", true),
        row(["31:10", "38:15", "42:05", "40:01", "30:29"], "3:02:00", "Every 60 min", "Transparent 15 min", true),
    ]
}

/// `Every 90 min` → 90 min. `N/A` and anything unrecognised → no evictions.
pub fn parse_eviction_label(label: &str) -> Option<Duration> {
    let mins: u64 = label.strip_prefix("Every ")?.strip_suffix(" min")?.trim().parse().ok()?;
    Some(Duration::from_secs(mins * 60))
}

/// `Application` → boundary-only, `Transparent 30 min` → every 30 min,
/// `N/A` → none.
pub fn parse_ckpt_label(label: &str) -> Option<CheckpointPolicy> {
    match label {
        "Application" => Some(CheckpointPolicy::BoundaryOnly),
        "N/A" => Some(CheckpointPolicy::None),
        _ => {
            let mins: u64 = label.strip_prefix("Transparent ")?.strip_suffix(" min")?.trim().parse().ok()?;
            Some(CheckpointPolicy::Periodic(Duration::from_secs(mins * 60)))
        }
    }
}

/// The recorded runs that saw evictions, as scenarios over the bare run's
/// stage durations with their observed totals.
pub fn recorded_fit_targets() -> Vec<FitTarget> {
    let runs = metaspades_runs();
    let stages: Vec<Duration> = runs[0].stage_times.iter().map(|(_, d)| *d).collect();
    runs.iter()
        .filter_map(|r| {
            let every = parse_eviction_label(&r.eviction)?;
            let policy = parse_ckpt_label(&r.ckpt_type)?;
            Some(FitTarget { params: SimParams::new(stages.clone(), policy).every(every), observed: r.total })
        })
        .collect()
}

/// The headline savings figures, computed from the recorded runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordedClaims {
    /// The uncoordinated bare run priced on demand.
    pub baseline_on_demand: Money,
    /// Application checkpoints under 90 min evictions on spot, against the baseline.
    pub app90_vs_baseline: f64,
    /// Transparent 30 min checkpoints under 90 min evictions on spot, against
    /// the 60 min application run priced on demand.
    pub transparent90_vs_app60_on_demand: f64,
    /// The same spot run against the baseline, the literal reading.
    pub transparent90_vs_baseline: f64,
}

fn find<'a>(runs: &'a [ReportRow], eviction: &str, ckpt: &str) -> &'a ReportRow {
    runs.iter().find(|r| r.eviction == eviction && r.ckpt_type == ckpt).expect("recorded run present")
}

pub fn recorded_claims(pricing: &PricingModel) -> RecordedClaims {
    let runs = metaspades_runs();
    let spot = |r: &ReportRow| cost(r.total, pricing.spot_rate);
    let od = |r: &ReportRow| cost(r.total, pricing.on_demand_rate);
    let baseline = od(&runs[0]);
    let app90 = spot(find(&runs, "Every 90 min", "Application"));
    let app60_od = od(find(&runs, "Every 60 min", "Application"));
    let tr90 = spot(find(&runs, "Every 90 min", "Transparent 30 min"));
    let pct = |c, b| savings(c, b).expect("non-zero baseline");
    RecordedClaims {
        baseline_on_demand: baseline,
        app90_vs_baseline: pct(app90, baseline),
        transparent90_vs_app60_on_demand: pct(tr90, app60_od),
        transparent90_vs_baseline: pct(tr90, baseline),
    }
}

/// A table of runs priced at spot and on-demand rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub pricing: PricingModel,
}

fn csv_field(v: &str) -> String {
    if v.contains(',') || v.contains('"') || v.contains('\n') {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

impl Report {
    pub fn new(rows: Vec<ReportRow>, pricing: PricingModel) -> Self {
        Report { rows, pricing }
    }

    /// Stage column names, in first-seen order across rows.
    pub fn stage_columns(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            for (n, _) in &r.stage_times {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        if names.is_empty() {
            names = DEFAULT_STAGE_NAMES.iter().map(|n| n.to_string()).collect();
        }
        names
    }

    fn stage_cell(row: &ReportRow, name: &str) -> String {
        row.stage_times
            .iter()
            .find(|(n, _)| n == name)
            .map_or_else(|| "-".to_string(), |(_, d)| format_hms(*d))
    }

    /// `k33,k55,k77,k99,k127,total,eviction,ckpt_type,spot_cost,ondemand_cost`
    pub fn to_csv(&self) -> String {
        let stages = self.stage_columns();
        let mut header: Vec<String> = stages.iter().map(|s| s.to_lowercase()).collect();
        header.extend(["total", "eviction", "ckpt_type", "spot_cost", "ondemand_cost"].map(String::from));
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = stages.iter().map(|s| Self::stage_cell(r, s)).collect();
            cells.push(format_hms(r.total));
            cells.push(csv_field(&r.eviction));
            cells.push(csv_field(&r.ckpt_type));
            cells.push(format!("{:.3}", cost(r.total, self.pricing.spot_rate).dollars()));
            cells.push(format!("{:.3}", cost(r.total, self.pricing.on_demand_rate).dollars()));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Aligned text with costs rounded to cents.
    pub fn to_text(&self) -> String {
        let stages = self.stage_columns();
        let mut header: Vec<String> = stages.clone();
        header.extend(["Total", "Eviction", "Checkpoint Type", "Coordinator", "Spot Cost", "On-demand Cost"].map(String::from));
        let mut table: Vec<Vec<String>> = alloc::vec![header];
        for r in &self.rows {
            let mut cells: Vec<String> = stages.iter().map(|s| Self::stage_cell(r, s)).collect();
            cells.push(format_hms(r.total));
            cells.push(r.eviction.clone());
            cells.push(r.ckpt_type.clone());
            cells.push(if r.coordinated { "ON" } else { "OFF" }.to_string());
            cells.push(cost(r.total, self.pricing.spot_rate).to_string());
            cells.push(cost(r.total, self.pricing.on_demand_rate).to_string());
            table.push(cells);
        }
        let cols = table[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &table {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}", w = *w))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
