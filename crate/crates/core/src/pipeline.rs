//! End-to-end wiring: stream persistence, stable-set refresh, per-cluster
//! change metrics, detection and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::aggregation::{
    aggregate_cluster, aggregate_members, change_metric, downsample_hourly, ChangeMetric,
    ClusterKey,
};
use crate::detector::{detect_series, DetectorConfig, LabeledPoint};
use crate::error::{Error, Result};
use crate::evaluation::{stability_report, EvalReport, StabilityRow};
use crate::simulator::{GroundTruth, Scenario, Simulation};
use crate::stability::{refresh_stable_set, StableSet};
use crate::tsdb::{FileStore, PutLine};
use crate::types::{
    CampaignRecord, CampaignStatus, HourlySeries, PipelineConfig, TargetingCriterion, Timestamp,
    DAY_HOURS,
};

/// Metric name campaign streams are stored under, tagged `campaign=<id>`.
pub const CAMPAIGN_METRIC: &str = "campaign.impressions";

pub const PORTFOLIO_CSV_HEADER: &str = "id,currency,status,start,end,targeting,channel";

/// `id,currency,status,start,end,targeting,channel` with `;`-separated targeting.
pub fn portfolio_to_csv(portfolio: &[CampaignRecord]) -> String {
    let mut out = format!("{PORTFOLIO_CSV_HEADER}\n");
    for c in portfolio {
        let targeting: Vec<&str> = c.targeting.iter().map(|t| t.as_str()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.id,
            c.currency,
            c.status,
            c.start,
            c.end.map(|e| e.to_string()).unwrap_or_default(),
            targeting.join(";"),
            c.channel
        )
        .unwrap();
    }
    out
}

pub fn portfolio_from_csv(text: &str) -> Result<Vec<CampaignRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(PORTFOLIO_CSV_HEADER) {
        return Err(Error::Invalid(format!(
            "portfolio file must start with `{PORTFOLIO_CSV_HEADER}`"
        )));
    }
    let mut seen = BTreeSet::new();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let ctx = |e: Error| Error::Invalid(format!("portfolio line {}: {e}", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            let [id, currency, status, start, end, targeting, channel] = fields[..] else {
                return Err(ctx(Error::Invalid("expected 7 fields".into())));
            };
            let end = match end {
                "" => None,
                e => Some(e.parse().map_err(ctx)?),
            };
            let targeting = targeting
                .split(';')
                .filter(|t| !t.is_empty())
                .map(str::parse::<TargetingCriterion>)
                .collect::<Result<Vec<_>>>()
                .map_err(ctx)?;
            let record = CampaignRecord::new(
                id,
                currency,
                status.parse::<CampaignStatus>().map_err(ctx)?,
                start.parse().map_err(ctx)?,
                end,
                targeting,
                channel.parse().map_err(ctx)?,
            )
            .map_err(ctx)?;
            if !seen.insert(record.id.clone()) {
                return Err(ctx(Error::Invalid(format!("duplicate id {}", record.id))));
            }
            Ok(record)
        })
        .collect()
}

fn campaign_tags(id: &str) -> BTreeMap<String, String> {
    BTreeMap::from([("campaign".to_string(), id.to_string())])
}

/// One put line per present hour, stamped at the start of the hour.
pub fn streams_to_put_lines(streams: &BTreeMap<String, HourlySeries>) -> Vec<PutLine> {
    streams
        .iter()
        .flat_map(|(id, s)| {
            s.present()
                .map(move |(t, v)| PutLine::new(CAMPAIGN_METRIC, t, v, campaign_tags(id)))
        })
        .collect()
}

/// Hourly series of every campaign in the portfolio that has data in the store.
pub fn load_streams(
    store: &FileStore,
    portfolio: &[CampaignRecord],
) -> Result<BTreeMap<String, HourlySeries>> {
    let loaded: Vec<Result<(String, HourlySeries)>> = portfolio
        .par_iter()
        .map(|c| {
            let raw = store.read(CAMPAIGN_METRIC, &campaign_tags(&c.id), None)?;
            Ok((c.id.clone(), downsample_hourly(&raw)))
        })
        .collect();
    let mut streams = BTreeMap::new();
    for item in loaded {
        let (id, series) = item?;
        if !series.is_empty() {
            streams.insert(id, series);
        }
    }
    Ok(streams)
}

/// First hour the detector can label: one longest period of history for the
/// difference plus the training span.
pub fn go_live(data_start: Timestamp, cfg: &PipelineConfig) -> Timestamp {
    let hours = i64::from(cfg.max_p()) * DAY_HOURS as i64 + cfg.training_len as i64;
    data_start.add_hours(hours).expect("forward shift")
}

/// Output of one detection pass over all clusters.
#[derive(Debug, Clone)]
pub struct DetectionRun {
    pub stable: StableSet,
    /// Stable-only change metric per `(cluster, p)`.
    pub metrics: BTreeMap<(ClusterKey, u32), ChangeMetric>,
    /// Labels of the `detect_p` metric per cluster.
    pub labels: BTreeMap<ClusterKey, Vec<LabeledPoint>>,
    pub warnings: Vec<String>,
}

impl DetectionRun {
    pub fn labels_for(&self, cluster: ClusterKey) -> &[LabeledPoint] {
        self.labels.get(&cluster).map_or(&[], Vec::as_slice)
    }

    pub fn anomaly_hours(&self, cluster: ClusterKey) -> BTreeSet<Timestamp> {
        self.labels_for(cluster)
            .iter()
            .filter(|p| p.label().is_anomaly())
            .map(|p| p.hour)
            .collect()
    }
}

/// Refresh the stable set at `stable_at`, then build change metrics for every
/// cluster and period and run the detector on the `detect_p` metric.
pub fn run_detection(
    portfolio: &[CampaignRecord],
    streams: &BTreeMap<String, HourlySeries>,
    stable_at: Timestamp,
    cfg: &PipelineConfig,
) -> Result<DetectionRun> {
    cfg.validate()?;
    let stable = refresh_stable_set(portfolio, streams, stable_at, cfg);
    let mut warnings = stable.warnings.clone();
    let detector_cfg = DetectorConfig::from(cfg);

    let per_cluster: Vec<(ClusterKey, Vec<ChangeMetric>, Result<Vec<LabeledPoint>>)> =
        ClusterKey::all()
            .into_par_iter()
            .map(|key| {
                let series = aggregate_cluster(&stable, key, portfolio, streams);
                let metrics: Vec<ChangeMetric> = cfg
                    .p_values
                    .iter()
                    .map(|&p| change_metric(&series, p, key))
                    .collect();
                let target = metrics
                    .iter()
                    .find(|m| m.p == cfg.detect_p)
                    .expect("validated");
                let labels = detect_series(target, detector_cfg, cfg.training_len);
                (key, metrics, labels)
            })
            .collect();

    let mut metrics = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for (key, ms, result) in per_cluster {
        for m in ms {
            metrics.insert((key, m.p), m);
        }
        match result {
            Ok(points) => {
                labels.insert(key, points);
            }
            Err(Error::InsufficientTraining { needed, available }) => {
                let w = format!(
                    "cluster {key}: {available} change-metric points, {needed} needed for training; not monitored"
                );
                log::warn!("{w}");
                warnings.push(w);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DetectionRun {
        stable,
        metrics,
        labels,
        warnings,
    })
}

/// Score every monitored cluster against the truth.
pub fn evaluate_run(
    run: &DetectionRun,
    truth: &GroundTruth,
    cfg: &PipelineConfig,
) -> Result<Vec<EvalReport>> {
    run.labels
        .iter()
        .map(|(key, points)| {
            let labels: Vec<(Timestamp, _)> = points.iter().map(|p| (p.hour, p.label())).collect();
            EvalReport::evaluate(Some(*key), &labels, &truth.hours_for(*key), cfg)
        })
        .collect()
}

/// MAD of the stable-only versus the all-campaign change metric of one
/// cluster, per configured period, away from incident hours.
pub fn stability_comparison(
    portfolio: &[CampaignRecord],
    streams: &BTreeMap<String, HourlySeries>,
    stable: &StableSet,
    cluster: ClusterKey,
    incident_hours: &BTreeSet<Timestamp>,
    cfg: &PipelineConfig,
) -> Result<Vec<StabilityRow>> {
    let everyone: BTreeSet<String> = portfolio.iter().map(|c| c.id.clone()).collect();
    let all_series = aggregate_members(&everyone, cluster, portfolio, streams);
    let stable_series = aggregate_cluster(stable, cluster, portfolio, streams);
    let metrics: Vec<(ChangeMetric, ChangeMetric)> = cfg
        .p_values
        .iter()
        .map(|&p| {
            (
                change_metric(&all_series, p, cluster),
                change_metric(&stable_series, p, cluster),
            )
        })
        .collect();
    let pairs: Vec<(&ChangeMetric, &ChangeMetric)> = metrics.iter().map(|(a, s)| (a, s)).collect();
    stability_report(&pairs, incident_hours)
}

/// A simulated scenario pushed through detection and scoring.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub simulation: Simulation,
    pub detection: DetectionRun,
    pub reports: Vec<EvalReport>,
}

impl ScenarioRun {
    pub fn report_for(&self, cluster: ClusterKey) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.cluster == Some(cluster))
    }
}

/// Simulate, refresh the stable set at go-live and detect on every cluster.
pub fn run_scenario(scenario: &Scenario, cfg: &PipelineConfig) -> Result<ScenarioRun> {
    let simulation = scenario.simulate()?;
    let portfolio = simulation.records();
    let stable_at = go_live(scenario.horizon.start, cfg);
    let detection = run_detection(&portfolio, &simulation.streams, stable_at, cfg)?;
    let reports = evaluate_run(&detection, &simulation.truth, cfg)?;
    Ok(ScenarioRun {
        simulation,
        detection,
        reports,
    })
}

/// Earliest first hour across the streams.
pub fn data_start(streams: &BTreeMap<String, HourlySeries>) -> Option<Timestamp> {
    streams
        .values()
        .filter(|s| !s.is_empty())
        .map(HourlySeries::start_hour)
        .min()
}
