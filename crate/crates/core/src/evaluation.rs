//! Scoring detector output against ground truth.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::aggregation::{ChangeMetric, ClusterKey};
use crate::detector::Label;
use crate::error::{Error, Result};
use crate::types::{PipelineConfig, Timestamp, DAY_HOURS, HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

/// Point-wise match of labels against truth hours.
///
/// With `tolerance = 0` an anomaly label is a true positive iff its hour is
/// in the truth. With a tolerance of `k` hours an anomaly is a true positive
/// if a truth hour lies within `k` hours of it, and a truth hour is missed if
/// no anomaly lies within `k` hours of it. Positive outliers count as normal.
///
/// Every truth hour must have a label.
pub fn confusion(
    labels: &[(Timestamp, Label)],
    truth: &BTreeSet<Timestamp>,
    tolerance_hours: u32,
) -> Result<Confusion> {
    let labeled: BTreeSet<Timestamp> = labels.iter().map(|(t, _)| *t).collect();
    if labeled.len() != labels.len() {
        return Err(Error::HourMismatch("duplicate label hours".into()));
    }
    if let Some(missing) = truth.iter().find(|t| !labeled.contains(t)) {
        return Err(Error::HourMismatch(format!(
            "truth hour {missing} has no label"
        )));
    }
    let tol = u64::from(tolerance_hours) * HOUR;
    let near = |set: &BTreeSet<Timestamp>, t: Timestamp| {
        set.range(Timestamp(t.secs().saturating_sub(tol))..=Timestamp(t.secs() + tol))
            .next()
            .is_some()
    };
    let anomalies: BTreeSet<Timestamp> = labels
        .iter()
        .filter(|(_, l)| l.is_anomaly())
        .map(|(t, _)| *t)
        .collect();
    let tp = anomalies.iter().filter(|&&t| near(truth, t)).count();
    let fp = anomalies.len() - tp;
    let fn_ = truth.iter().filter(|&&t| !near(&anomalies, t)).count();
    Ok(Confusion { tp, fp, fn_ })
}

/// Detection delay for one incident, i.e. one run of consecutive truth hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IncidentLatency {
    pub start: Timestamp,
    pub duration_hours: u64,
    /// Hours from the first incident hour to the first anomaly inside it.
    pub latency_hours: Option<u64>,
}

fn truth_runs(truth: &BTreeSet<Timestamp>) -> Vec<(Timestamp, u64)> {
    let mut runs: Vec<(Timestamp, u64)> = Vec::new();
    for &t in truth {
        match runs.last_mut() {
            Some((start, len)) if start.secs() + *len * HOUR == t.secs() => *len += 1,
            _ => runs.push((t, 1)),
        }
    }
    runs
}

pub fn latencies(
    labels: &[(Timestamp, Label)],
    truth: &BTreeSet<Timestamp>,
) -> Vec<IncidentLatency> {
    let anomalies: BTreeSet<Timestamp> = labels
        .iter()
        .filter(|(_, l)| l.is_anomaly())
        .map(|(t, _)| *t)
        .collect();
    truth_runs(truth)
        .into_iter()
        .map(|(start, duration_hours)| {
            let end = Timestamp(start.secs() + duration_hours * HOUR);
            IncidentLatency {
                start,
                duration_hours,
                latency_hours: anomalies
                    .range(start..end)
                    .next()
                    .map(|t| (t.secs() - start.secs()) / HOUR),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cluster: Option<ClusterKey>,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub config_snapshot: PipelineConfig,
    pub latencies: Vec<IncidentLatency>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Score one cluster's labels. Truth hours without a label (training
    /// period, gaps) are left out and mentioned in the notes.
    pub fn evaluate(
        cluster: Option<ClusterKey>,
        labels: &[(Timestamp, Label)],
        truth: &BTreeSet<Timestamp>,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let labeled: BTreeSet<Timestamp> = labels.iter().map(|(t, _)| *t).collect();
        let (scored, dropped): (BTreeSet<Timestamp>, BTreeSet<Timestamp>) =
            truth.iter().partition(|t| labeled.contains(t));
        let mut notes = Vec::new();
        if !dropped.is_empty() {
            notes.push(format!(
                "{} truth hours have no label (training period or gaps) and are not scored",
                dropped.len()
            ));
        }
        let confusion = confusion(labels, &scored, cfg.eval_tolerance)?;
        if confusion.tp + confusion.fp == 0 {
            notes.push("no anomalies flagged; precision reported as 0".into());
        }
        if scored.is_empty() {
            notes.push("no anomalous hours in truth; recall reported as 0".into());
        }
        Ok(EvalReport {
            cluster,
            confusion,
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            config_snapshot: cfg.clone(),
            latencies: latencies(labels, &scored),
            notes,
        })
    }

    /// Largest latency, or `None` if an incident was never flagged.
    pub fn worst_latency(&self) -> Option<u64> {
        self.latencies
            .iter()
            .map(|l| l.latency_hours)
            .try_fold(0, |acc, l| l.map(|l| acc.max(l)))
    }

    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        let name = self
            .cluster
            .map_or_else(|| "all".to_string(), |k| k.to_string());
        writeln!(out, "cluster:   {name}").unwrap();
        writeln!(out, "TP={} FP={} FN={}", c.tp, c.fp, c.fn_).unwrap();
        writeln!(
            out,
            "precision={:.4} recall={:.4} f1={:.4}",
            self.precision, self.recall, self.f1
        )
        .unwrap();
        for l in &self.latencies {
            match l.latency_hours {
                Some(h) => writeln!(
                    out,
                    "incident at {} ({}h): detected after {h}h",
                    l.start, l.duration_hours
                ),
                None => writeln!(
                    out,
                    "incident at {} ({}h): missed",
                    l.start, l.duration_hours
                ),
            }
            .unwrap();
        }
        for note in &self.notes {
            writeln!(out, "note: {note}").unwrap();
        }
        writeln!(out, "config_hash={}", self.config_snapshot.hash()).unwrap();
        out
    }
}

pub const REPORT_CSV_HEADER: &str = "cluster,tp,fp,fn,precision,recall,f1,config_hash";
pub const LATENCY_CSV_HEADER: &str = "cluster,incident_start,duration_hours,latency_hours";

/// One row per report.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        let name = r
            .cluster
            .map_or_else(|| "all".to_string(), |k| k.to_string());
        writeln!(
            out,
            "{name},{},{},{},{},{},{},{}",
            r.confusion.tp,
            r.confusion.fp,
            r.confusion.fn_,
            r.precision,
            r.recall,
            r.f1,
            r.config_snapshot.hash()
        )
        .unwrap();
    }
    out
}

pub fn latencies_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{LATENCY_CSV_HEADER}\n");
    for r in reports {
        let name = r
            .cluster
            .map_or_else(|| "all".to_string(), |k| k.to_string());
        for l in &r.latencies {
            let lat = l.latency_hours.map(|h| h.to_string()).unwrap_or_default();
            writeln!(out, "{name},{},{},{lat}", l.start, l.duration_hours).unwrap();
        }
    }
    out
}

/// Median absolute deviation around the median. `None` for no data.
pub fn median_absolute_deviation(values: &[f64]) -> Option<f64> {
    let med = median(values.to_vec())?;
    median(values.iter().map(|v| (v - med).abs()).collect())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    pub p: u32,
    pub mad_all: f64,
    pub mad_stable: f64,
    /// `mad_stable / mad_all`; 1 when both are 0.
    pub ratio: f64,
}

/// Dispersion of the all-campaign and stable-only change metrics, per period,
/// ignoring hours an incident touches (the incident itself and its echo one
/// period later).
pub fn stability_report(
    pairs: &[(&ChangeMetric, &ChangeMetric)],
    incident_hours: &BTreeSet<Timestamp>,
) -> Result<Vec<StabilityRow>> {
    pairs
        .iter()
        .map(|(all, stable)| {
            if all.p != stable.p {
                return Err(Error::Invalid(format!(
                    "period mismatch: {} vs {}",
                    all.p, stable.p
                )));
            }
            let p = all.p;
            let lag = i64::from(p) * DAY_HOURS as i64;
            let touched = |t: Timestamp| {
                incident_hours.contains(&t)
                    || t.add_hours(-lag)
                        .is_some_and(|e| incident_hours.contains(&e))
            };
            let values = |m: &ChangeMetric| -> Vec<f64> {
                m.present()
                    .filter(|(t, _)| !touched(*t))
                    .map(|(_, v)| v)
                    .collect()
            };
            let mad = |m: &ChangeMetric| {
                median_absolute_deviation(&values(m)).ok_or_else(|| {
                    Error::Invalid(format!("no incident-free points in the p={p} metric"))
                })
            };
            let (mad_all, mad_stable) = (mad(all)?, mad(stable)?);
            let ratio = if mad_all == 0.0 && mad_stable == 0.0 {
                1.0
            } else {
                mad_stable / mad_all
            };
            Ok(StabilityRow {
                p,
                mad_all,
                mad_stable,
                ratio,
            })
        })
        .collect()
}

pub fn stability_to_csv(rows: &[StabilityRow]) -> String {
    let mut out = String::from("p,mad_all,mad_stable,ratio\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.p, r.mad_all, r.mad_stable, r.ratio).unwrap();
    }
    out
}
