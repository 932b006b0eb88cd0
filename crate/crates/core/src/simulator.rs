//! Deterministic synthetic portfolios, seasonal metric streams and labeled
//! incidents.
//!
//! Every campaign draws from its own ChaCha stream seeded from the scenario
//! seed and the campaign id, so generation order and parallelism never change
//! the output.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;

use crate::aggregation::{clusters_of, ClusterKey};
use crate::error::{Error, Result};
use crate::types::{
    CampaignRecord, CampaignStatus, HourlySeries, MediaChannel, TargetingCriterion, Timestamp,
    DAY_HOURS, HOUR,
};

/// Lognormal sigma of the stable template. Keeps the expected week-over-week
/// window correlation well above 0.9.
pub const STABLE_NOISE: f64 = 0.05;
pub const HEAVY_NOISE: f64 = 1.0;
/// Erratic campaigns jump to a new log-uniform level this often.
pub const ERRATIC_REGIME_HOURS: usize = 2;

/// Relative traffic by weekday, Monday first.
const WEEKLY_PROFILE: [f64; 7] = [1.0, 1.05, 1.05, 1.0, 0.95, 0.8, 0.75];

/// Simulated hour range `[start, start + hours)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    pub start: Timestamp,
    pub hours: usize,
}

impl Horizon {
    pub fn new(start: Timestamp, hours: usize) -> Result<Self> {
        if !start.is_hour_aligned() {
            return Err(Error::Invalid(format!(
                "horizon start {start} is not hour aligned"
            )));
        }
        Ok(Horizon { start, hours })
    }

    pub fn end(&self) -> Timestamp {
        Timestamp(self.start.secs() + self.hours as u64 * HOUR)
    }

    pub fn hour(&self, offset: usize) -> Timestamp {
        Timestamp(self.start.secs() + offset as u64 * HOUR)
    }
}

/// How a simulated campaign's traffic behaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    /// Seasonal profile with small lognormal noise.
    Stable { noise: f64 },
    /// Seasonal profile buried in large lognormal noise.
    HeavyNoise { noise: f64 },
    /// Level jumps to a random multiple every [`ERRATIC_REGIME_HOURS`].
    Erratic { noise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCampaign {
    pub record: CampaignRecord,
    pub behavior: Behavior,
    /// Mean hourly value before seasonality.
    pub base_level: f64,
    /// Diurnal swing as a fraction of the level.
    pub diurnal_amplitude: f64,
    /// Whether the campaign was built to end up in the stable set.
    pub expected_stable: bool,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derived_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, then mixed with the run seed
    let h = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    });
    splitmix(seed ^ splitmix(h))
}

/// Unstable campaigns cycle through these ways of failing.
#[derive(Debug, Clone, Copy)]
enum Flaw {
    Currency,
    Paused,
    Recent,
    HeavyNoise,
    Erratic,
}

const FLAWS: [Flaw; 5] = [
    Flaw::Currency,
    Flaw::Paused,
    Flaw::Recent,
    Flaw::HeavyNoise,
    Flaw::Erratic,
];

/// `round(n · stable_fraction)` campaigns are USD, active, long-running and
/// stable; the rest each fail one setup rule or carry uncorrelated traffic.
/// Channels are assigned round robin so every channel gets stable members.
pub fn generate_portfolio(
    n: usize,
    stable_fraction: f64,
    seed: u64,
    horizon: &Horizon,
) -> Result<Vec<SimCampaign>> {
    if n == 0 {
        return Err(Error::Invalid("portfolio size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&stable_fraction) {
        return Err(Error::Invalid(format!(
            "stable_fraction must lie in [0, 1], got {stable_fraction}"
        )));
    }
    let n_stable = (n as f64 * stable_fraction).round() as usize;
    let width = n.to_string().len().max(3);
    let long_ago = horizon
        .start
        .add_hours(-(30 * DAY_HOURS as i64))
        .unwrap_or(Timestamp(0));
    // too young to pass the duration rule anywhere inside the horizon
    let recent = horizon
        .end()
        .add_hours(-(3 * DAY_HOURS as i64))
        .unwrap_or(horizon.start)
        .max(horizon.start);

    (0..n)
        .map(|i| {
            let id = format!("c{i:0width$}");
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, &id));
            let criteria = rng.random_range(1..=3);
            let mut targeting = BTreeSet::new();
            while targeting.len() < criteria {
                targeting.insert(TargetingCriterion::ALL[rng.random_range(0..6)]);
            }
            let channel = MediaChannel::ALL[i % MediaChannel::ALL.len()];
            let base_level = rng.random_range(50.0..150.0);
            let diurnal_amplitude = rng.random_range(0.4..0.7);

            let (currency, status, start, behavior) = if i < n_stable {
                (
                    "USD",
                    CampaignStatus::Active,
                    long_ago,
                    Behavior::Stable {
                        noise: STABLE_NOISE,
                    },
                )
            } else {
                let stable = Behavior::Stable {
                    noise: STABLE_NOISE,
                };
                match FLAWS[(i - n_stable) % FLAWS.len()] {
                    Flaw::Currency => ("EUR", CampaignStatus::Active, long_ago, stable),
                    Flaw::Paused => ("USD", CampaignStatus::Paused, long_ago, stable),
                    Flaw::Recent => ("USD", CampaignStatus::Active, recent, stable),
                    Flaw::HeavyNoise => (
                        "USD",
                        CampaignStatus::Active,
                        long_ago,
                        Behavior::HeavyNoise { noise: HEAVY_NOISE },
                    ),
                    Flaw::Erratic => (
                        "USD",
                        CampaignStatus::Active,
                        long_ago,
                        Behavior::Erratic { noise: 0.2 },
                    ),
                }
            };
            let record =
                CampaignRecord::new(id, currency, status, start, None, targeting, channel)?;
            Ok(SimCampaign {
                record,
                behavior,
                base_level,
                diurnal_amplitude,
                expected_stable: i < n_stable,
            })
        })
        .collect()
}

/// Diurnal times weekly shape, periodic in the hour of the week.
pub fn seasonal_profile(hour: Timestamp, diurnal_amplitude: f64) -> f64 {
    let hours = hour.secs() / HOUR;
    let hour_of_day = (hours % DAY_HOURS) as f64;
    // 1970-01-01 was a Thursday
    let weekday = ((hours / DAY_HOURS + 3) % 7) as usize;
    let diurnal = 1.0 + diurnal_amplitude * (TAU * (hour_of_day - 9.0) / 24.0).sin();
    diurnal * WEEKLY_PROFILE[weekday]
}

/// Hourly traffic of one campaign over the horizon, starting at the later of
/// the horizon start and the campaign start.
pub fn simulate_metric(c: &SimCampaign, horizon: &Horizon, seed: u64) -> HourlySeries {
    let first = horizon.start.max(ceil_hour(c.record.start));
    if first >= horizon.end() {
        return HourlySeries::empty(horizon.start);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed ^ 0x5EED, &c.record.id));
    let hours = ((horizon.end().secs() - first.secs()) / HOUR) as usize;

    let lognormal =
        |s: f64| (s > 0.0).then(|| LogNormal::new(-s * s / 2.0, s).expect("positive sigma"));
    let mut regime = 1.0;
    let values = (0..hours).map(|i| {
        let hour = Timestamp(first.secs() + i as u64 * HOUR);
        let shape = c.base_level * seasonal_profile(hour, c.diurnal_amplitude);
        let noise = match c.behavior {
            Behavior::Stable { noise } | Behavior::HeavyNoise { noise } => noise,
            Behavior::Erratic { noise } => {
                if i % ERRATIC_REGIME_HOURS == 0 {
                    regime = rng.random_range(-3.0f64..1.0).exp();
                }
                noise
            }
        };
        let factor = lognormal(noise).map_or(1.0, |d| d.sample(&mut rng));
        shape * regime * factor
    });
    HourlySeries::from_values(first, values.collect::<Vec<_>>()).expect("finite positive values")
}

fn ceil_hour(t: Timestamp) -> Timestamp {
    Timestamp(t.secs().div_ceil(HOUR) * HOUR)
}

/// Streams for every campaign, keyed by id.
pub fn simulate_portfolio(
    campaigns: &[SimCampaign],
    horizon: &Horizon,
    seed: u64,
) -> BTreeMap<String, HourlySeries> {
    campaigns
        .par_iter()
        .map(|c| (c.record.id.clone(), simulate_metric(c, horizon, seed)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncidentKind {
    /// Resolved by itself.
    Transient,
    /// Persists until fixed.
    Persistent,
}

impl IncidentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IncidentKind::Transient => "transient",
            IncidentKind::Persistent => "persistent",
        }
    }
}

/// A delivery drop: affected campaigns' values are multiplied by
/// `1 - severity` over `[start, start + duration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidentSpec {
    pub start: Timestamp,
    pub duration_hours: u32,
    pub severity: f64,
    pub scope: BTreeSet<ClusterKey>,
    pub kind: IncidentKind,
}

impl IncidentSpec {
    pub fn end(&self) -> Timestamp {
        Timestamp(self.start.secs() + u64::from(self.duration_hours) * HOUR)
    }

    pub fn hours(&self) -> impl Iterator<Item = Timestamp> + '_ {
        (0..u64::from(self.duration_hours)).map(|h| Timestamp(self.start.secs() + h * HOUR))
    }

    pub fn covers(&self, hour: Timestamp) -> bool {
        self.start <= hour && hour < self.end()
    }

    pub fn validate(&self, horizon: &Horizon) -> Result<()> {
        if self.duration_hours == 0 {
            return Err(Error::Invalid("incident duration must be positive".into()));
        }
        if !(self.severity > 0.0 && self.severity <= 1.0) {
            return Err(Error::Invalid(format!(
                "incident severity must lie in (0, 1], got {}",
                self.severity
            )));
        }
        if self.scope.is_empty() {
            return Err(Error::Invalid("incident scope is empty".into()));
        }
        if !self.start.is_hour_aligned() || self.start < horizon.start || self.end() > horizon.end()
        {
            return Err(Error::Invalid(format!(
                "incident [{}, {}) is outside the simulated range [{}, {})",
                self.start,
                self.end(),
                horizon.start,
                horizon.end()
            )));
        }
        Ok(())
    }
}

/// Hours each cluster's change metric is anomalous. Echo hours one period
/// after an incident are not anomalous.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub anomalous_hours: BTreeMap<ClusterKey, BTreeSet<Timestamp>>,
}

impl GroundTruth {
    pub fn from_incidents(specs: &[IncidentSpec]) -> Self {
        let mut anomalous_hours: BTreeMap<ClusterKey, BTreeSet<Timestamp>> = BTreeMap::new();
        for spec in specs {
            for key in &spec.scope {
                anomalous_hours
                    .entry(*key)
                    .or_default()
                    .extend(spec.hours());
            }
        }
        GroundTruth { anomalous_hours }
    }

    pub fn hours_for(&self, cluster: ClusterKey) -> BTreeSet<Timestamp> {
        self.anomalous_hours
            .get(&cluster)
            .cloned()
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.anomalous_hours.values().all(BTreeSet::is_empty)
    }

    /// Hours anomalous in at least one cluster.
    pub fn all_hours(&self) -> BTreeSet<Timestamp> {
        self.anomalous_hours.values().flatten().copied().collect()
    }

    /// `cluster,p,hour`, one row per anomalous hour of each `(cluster, p)` metric.
    pub fn to_csv(&self, p_values: &[u32]) -> String {
        let mut out = String::from("cluster,p,hour\n");
        for (cluster, hours) in &self.anomalous_hours {
            for p in p_values {
                for h in hours {
                    writeln!(out, "{cluster},{p},{h}").unwrap();
                }
            }
        }
        out
    }

    /// Rows for period `p` only.
    pub fn from_csv(text: &str, p: u32) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("cluster,p,hour") {
            return Err(Error::Invalid(
                "truth file must start with `cluster,p,hour`".into(),
            ));
        }
        let mut anomalous_hours: BTreeMap<ClusterKey, BTreeSet<Timestamp>> = BTreeMap::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Invalid(format!("truth line {}: {line:?}", i + 2));
            let mut parts = line.split(',');
            let (Some(cluster), Some(period), Some(hour), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            if period.parse::<u32>().map_err(|_| bad())? != p {
                continue;
            }
            anomalous_hours
                .entry(cluster.parse()?)
                .or_default()
                .insert(hour.parse().map_err(|_| bad())?);
        }
        Ok(GroundTruth { anomalous_hours })
    }
}

/// Suppress affected campaigns during each incident and derive the truth.
/// A campaign is affected when any of its clusters is in the incident scope.
pub fn inject_incidents(
    mut streams: BTreeMap<String, HourlySeries>,
    campaigns: &[CampaignRecord],
    specs: &[IncidentSpec],
    horizon: &Horizon,
) -> Result<(BTreeMap<String, HourlySeries>, GroundTruth)> {
    for spec in specs {
        spec.validate(horizon)?;
    }
    for c in campaigns {
        let clusters = clusters_of(c);
        let hits: Vec<&IncidentSpec> = specs
            .iter()
            .filter(|s| !s.scope.is_disjoint(&clusters))
            .collect();
        if hits.is_empty() {
            continue;
        }
        let Some(series) = streams.get(&c.id) else {
            continue;
        };
        let values = series
            .iter()
            .map(|(hour, v)| {
                v.map(|v| {
                    hits.iter()
                        .filter(|s| s.covers(hour))
                        .fold(v, |v, s| v * (1.0 - s.severity))
                })
            })
            .collect();
        let suppressed = HourlySeries::new(series.start_hour(), values)?;
        streams.insert(c.id.clone(), suppressed);
    }
    Ok((streams, GroundTruth::from_incidents(specs)))
}

/// Portfolio size, horizon and incidents of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub campaigns: usize,
    pub stable_fraction: f64,
    pub seed: u64,
    pub horizon: Horizon,
    /// Cluster whose change metric is scored.
    pub eval_cluster: ClusterKey,
    pub incidents: Vec<IncidentSpec>,
}

/// Monday 2015-06-29 00:00 UTC.
pub const DEFAULT_START: Timestamp = Timestamp(1_435_536_000);

impl Scenario {
    /// Fourteen weeks and one hour of traffic, so the week-over-week metric
    /// has 2185 points. Three incidents last hours, one lasts a full week.
    pub fn default_incidents() -> Self {
        let display = ClusterKey::Channel(MediaChannel::Display);
        let start = DEFAULT_START;
        let at = |day: u64, hour: u64| Timestamp(start.secs() + (day * DAY_HOURS + hour) * HOUR);
        let incident = |start, duration_hours, severity, extra: &[ClusterKey], kind| IncidentSpec {
            start,
            duration_hours,
            severity,
            scope: std::iter::once(display)
                .chain(extra.iter().copied())
                .collect(),
            kind,
        };
        Scenario {
            campaigns: 100,
            stable_fraction: 0.5,
            seed: 42,
            horizon: Horizon {
                start,
                hours: 14 * 7 * 24 + 1,
            },
            eval_cluster: display,
            incidents: vec![
                incident(at(20, 10), 4, 0.6, &[], IncidentKind::Transient),
                incident(
                    at(38, 14),
                    3,
                    0.8,
                    &[ClusterKey::Targeting(TargetingCriterion::Device)],
                    IncidentKind::Persistent,
                ),
                incident(at(52, 9), 168, 0.4, &[], IncidentKind::Persistent),
                incident(
                    at(80, 20),
                    2,
                    1.0,
                    &[ClusterKey::Channel(MediaChannel::Video)],
                    IncidentKind::Transient,
                ),
            ],
        }
    }

    pub fn without_incidents(mut self) -> Self {
        self.incidents.clear();
        self
    }

    /// Parse the scenario text format:
    ///
    /// ```text
    /// campaigns = 100
    /// stable_fraction = 0.5
    /// seed = 42
    /// start = 1435536000
    /// hours = 2353
    /// eval_cluster = channel:display
    /// incident = at=490 duration=4 severity=0.6 scope=channel:display kind=transient
    /// ```
    ///
    /// `at` is an hour offset from `start`. Omitted keys take the defaults of
    /// [`Scenario::default_incidents`]; listing any incident replaces the
    /// default incidents, and `incidents = none` removes them.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sc = Scenario::default_incidents();
        let mut raw_incidents = Vec::new();
        let mut no_incidents = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Config(format!("scenario line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(value: &str) -> Option<T> {
                value.parse().ok()
            }
            let num_err = || bad(format!("bad value {value:?} for {key}"));
            match key {
                "campaigns" => sc.campaigns = num(value).ok_or_else(num_err)?,
                "stable_fraction" => sc.stable_fraction = num(value).ok_or_else(num_err)?,
                "seed" => sc.seed = num(value).ok_or_else(num_err)?,
                "start" => {
                    sc.horizon.start = value.parse().map_err(|e: Error| bad(e.to_string()))?
                }
                "hours" => sc.horizon.hours = num(value).ok_or_else(num_err)?,
                "eval_cluster" => {
                    sc.eval_cluster = value.parse().map_err(|e: Error| bad(e.to_string()))?
                }
                "incident" => raw_incidents.push((lineno + 1, value.to_string())),
                "incidents" if value == "none" => no_incidents = true,
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        if no_incidents && !raw_incidents.is_empty() {
            return Err(Error::Config(
                "`incidents = none` conflicts with incident lines".into(),
            ));
        }
        if no_incidents {
            sc.incidents.clear();
        }
        // offsets are relative to the final `start`
        if !raw_incidents.is_empty() {
            sc.incidents = raw_incidents
                .into_iter()
                .map(|(lineno, value)| {
                    parse_incident(&value, sc.horizon.start)
                        .map_err(|e| Error::Config(format!("scenario line {lineno}: {e}")))
                })
                .collect::<Result<_>>()?;
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.campaigns == 0 {
            return Err(Error::Config("campaigns must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.stable_fraction) {
            return Err(Error::Config("stable_fraction must lie in [0, 1]".into()));
        }
        if !self.horizon.start.is_hour_aligned() || self.horizon.hours == 0 {
            return Err(Error::Config(
                "horizon must be hour aligned and non-empty".into(),
            ));
        }
        for spec in &self.incidents {
            spec.validate(&self.horizon)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Canonical text form, parseable by [`Scenario::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "campaigns = {}\nstable_fraction = {}\nseed = {}\nstart = {}\nhours = {}\neval_cluster = {}\n",
            self.campaigns,
            self.stable_fraction,
            self.seed,
            self.horizon.start,
            self.horizon.hours,
            self.eval_cluster
        );
        if self.incidents.is_empty() {
            out.push_str("incidents = none\n");
        }
        for s in &self.incidents {
            let scope: Vec<String> = s.scope.iter().map(ClusterKey::to_string).collect();
            writeln!(
                out,
                "incident = at={} duration={} severity={} scope={} kind={}",
                s.start.hours_since(self.horizon.start),
                s.duration_hours,
                s.severity,
                scope.join(","),
                s.kind.as_str()
            )
            .unwrap();
        }
        out
    }

    /// Portfolio and incident-suppressed streams with their ground truth.
    pub fn simulate(&self) -> Result<Simulation> {
        let campaigns = generate_portfolio(
            self.campaigns,
            self.stable_fraction,
            self.seed,
            &self.horizon,
        )?;
        let clean = simulate_portfolio(&campaigns, &self.horizon, self.seed);
        let records: Vec<CampaignRecord> = campaigns.iter().map(|c| c.record.clone()).collect();
        let (streams, truth) = inject_incidents(clean, &records, &self.incidents, &self.horizon)?;
        Ok(Simulation {
            campaigns,
            streams,
            truth,
        })
    }
}

fn parse_incident(value: &str, start: Timestamp) -> Result<IncidentSpec> {
    let mut at = None;
    let mut duration = None;
    let mut severity = None;
    let mut scope = None;
    let mut kind = IncidentKind::Transient;
    for field in value.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad incident field {field:?}")))?;
        let bad = || Error::Config(format!("bad incident value {field:?}"));
        match k {
            "at" => at = Some(v.parse::<i64>().map_err(|_| bad())?),
            "duration" => duration = Some(v.parse::<u32>().map_err(|_| bad())?),
            "severity" => severity = Some(v.parse::<f64>().map_err(|_| bad())?),
            "scope" => {
                scope = Some(
                    v.split(',')
                        .map(str::parse)
                        .collect::<Result<BTreeSet<ClusterKey>>>()?,
                )
            }
            "kind" => {
                kind = match v {
                    "transient" => IncidentKind::Transient,
                    "persistent" => IncidentKind::Persistent,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(Error::Config(format!("unknown incident field {k:?}"))),
        }
    }
    let missing = |name| Error::Config(format!("incident is missing {name}"));
    let at = at.ok_or_else(|| missing("at"))?;
    Ok(IncidentSpec {
        start: start
            .add_hours(at)
            .ok_or_else(|| Error::Config(format!("incident offset {at} is before the epoch")))?,
        duration_hours: duration.ok_or_else(|| missing("duration"))?,
        severity: severity.ok_or_else(|| missing("severity"))?,
        scope: scope.ok_or_else(|| missing("scope"))?,
        kind,
    })
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub campaigns: Vec<SimCampaign>,
    pub streams: BTreeMap<String, HourlySeries>,
    pub truth: GroundTruth,
}

impl Simulation {
    pub fn records(&self) -> Vec<CampaignRecord> {
        self.campaigns.iter().map(|c| c.record.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::{check_setup, pearson_correlation, window_vector};
    use crate::types::PipelineConfig;

    fn horizon(weeks: usize) -> Horizon {
        Horizon::new(DEFAULT_START, weeks * 168).unwrap()
    }

    #[test]
    fn portfolio_examples() {
        let h = horizon(4);
        let all = generate_portfolio(10, 1.0, 1, &h).unwrap();
        let now = h.hour(14 * 24);
        assert_eq!(all.len(), 10);
        assert!(all.iter().all(|c| check_setup(&c.record, now, 7)));
        assert!(generate_portfolio(0, 0.5, 1, &h).is_err());

        let a = generate_portfolio(100, 0.5, 42, &h).unwrap();
        let b = generate_portfolio(100, 0.5, 42, &h).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|c| c.expected_stable).count(), 50);
        let ids: BTreeSet<_> = a.iter().map(|c| &c.record.id).collect();
        assert_eq!(ids.len(), 100);
        assert_ne!(a, generate_portfolio(100, 0.5, 43, &h).unwrap());
    }

    #[test]
    fn noiseless_metric_is_weekly_periodic() {
        let h = horizon(3);
        let mut c = generate_portfolio(1, 1.0, 3, &h).unwrap().remove(0);
        c.behavior = Behavior::Stable { noise: 0.0 };
        let s = simulate_metric(&c, &h, 3);
        assert_eq!(s.len(), 3 * 168);
        let v = s.values();
        for i in 168..v.len() {
            assert_eq!(v[i], v[i - 168]);
        }
        assert_eq!(simulate_metric(&c, &h, 3), s);
    }

    #[test]
    fn same_seed_same_series() {
        let h = horizon(2);
        for c in generate_portfolio(10, 0.5, 9, &h).unwrap() {
            assert_eq!(simulate_metric(&c, &h, 9), simulate_metric(&c, &h, 9));
            assert_ne!(simulate_metric(&c, &h, 9), simulate_metric(&c, &h, 10));
        }
    }

    #[test]
    fn stable_template_correlates_week_over_week() {
        // Monte-Carlo over 100 seeds, correlation of the last day with the
        // same day one week earlier.
        let h = horizon(4);
        let mut total = 0.0;
        for seed in 0..100 {
            let c = generate_portfolio(1, 1.0, seed, &h).unwrap().remove(0);
            let s = simulate_metric(&c, &h, seed);
            let end = h.hour(4 * 168 - 1);
            let v1 = window_vector(&s, end, 24).unwrap();
            let v2 = window_vector(&s, end.add_hours(-168).unwrap(), 24).unwrap();
            total += pearson_correlation(&v1, &v2).unwrap();
        }
        assert!(total / 100.0 > 0.9, "mean correlation {}", total / 100.0);
    }

    #[test]
    fn recent_campaigns_start_late() {
        let h = horizon(3);
        let portfolio = generate_portfolio(20, 0.0, 5, &h).unwrap();
        let recent = portfolio.iter().find(|c| c.record.start > h.start).unwrap();
        let s = simulate_metric(recent, &h, 5);
        assert_eq!(s.start_hour(), recent.record.start);
        assert_eq!(s.len(), 72);
        assert!(!check_setup(
            &recent.record,
            h.end(),
            PipelineConfig::default().min_duration_days
        ));
    }

    fn one_incident(severity: f64) -> IncidentSpec {
        IncidentSpec {
            start: DEFAULT_START.add_hours(30).unwrap(),
            duration_hours: 5,
            severity,
            scope: BTreeSet::from([ClusterKey::Channel(MediaChannel::Display)]),
            kind: IncidentKind::Transient,
        }
    }

    #[test]
    fn incidents_suppress_and_label() {
        let h = horizon(2);
        let campaigns = generate_portfolio(8, 1.0, 11, &h).unwrap();
        let records: Vec<_> = campaigns.iter().map(|c| c.record.clone()).collect();
        let clean = simulate_portfolio(&campaigns, &h, 11);

        let (same, truth) = inject_incidents(clean.clone(), &records, &[], &h).unwrap();
        assert_eq!(same, clean);
        assert!(truth.is_empty());

        let spec = one_incident(1.0);
        let (hit, truth) =
            inject_incidents(clean.clone(), &records, std::slice::from_ref(&spec), &h).unwrap();
        for c in &records {
            let affected = c.channel == MediaChannel::Display;
            for (hour, v) in hit[&c.id].iter() {
                let before = clean[&c.id].get(hour);
                if affected && spec.covers(hour) {
                    assert_eq!(v, Some(0.0));
                } else {
                    assert_eq!(v, before);
                }
            }
        }
        let display = truth.hours_for(ClusterKey::Channel(MediaChannel::Display));
        assert_eq!(display, spec.hours().collect());
        assert!(truth
            .hours_for(ClusterKey::Channel(MediaChannel::Video))
            .is_empty());

        let (mild, _) =
            inject_incidents(clean.clone(), &records, &[one_incident(0.3)], &h).unwrap();
        for id in clean.keys() {
            for ((_, a), (_, b)) in mild[id].iter().zip(hit[id].iter()) {
                assert!(b.unwrap() <= a.unwrap());
            }
        }

        let mut late = one_incident(0.5);
        late.start = h.end();
        assert!(inject_incidents(clean.clone(), &records, &[late], &h).is_err());
        let mut zero = one_incident(0.5);
        zero.duration_hours = 0;
        assert!(inject_incidents(clean, &records, &[zero], &h).is_err());
    }

    #[test]
    fn truth_csv_round_trip() {
        let truth = GroundTruth::from_incidents(&[one_incident(0.5)]);
        let csv = truth.to_csv(&[1, 7]);
        assert_eq!(csv.lines().count(), 1 + 2 * 5);
        assert_eq!(GroundTruth::from_csv(&csv, 7).unwrap(), truth);
        assert!(GroundTruth::from_csv("hour\n", 7).is_err());
    }

    #[test]
    fn default_scenario_shape() {
        let sc = Scenario::default_incidents();
        assert_eq!(sc.horizon.hours - 7 * 24, 2185);
        assert_eq!(sc.incidents.len(), 4);
        assert_eq!(
            sc.incidents
                .iter()
                .filter(|i| i.duration_hours < 24)
                .count(),
            3
        );
        assert_eq!(
            sc.incidents
                .iter()
                .filter(|i| i.duration_hours == 168)
                .count(),
            1
        );
        let truth = GroundTruth::from_incidents(&sc.incidents);
        assert_eq!(truth.hours_for(sc.eval_cluster).len(), 4 + 3 + 168 + 2);
        assert_eq!(Scenario::parse(&sc.to_text()).unwrap(), sc);
    }

    #[test]
    fn scenario_parse_errors() {
        assert!(Scenario::parse("campaigns = 0").is_err());
        assert!(Scenario::parse("bogus = 1").is_err());
        assert!(Scenario::parse("campaigns = ten").is_err());
        assert!(Scenario::parse("incident = at=5 duration=2 severity=0.5").is_err());
        assert!(Scenario::parse(
            "hours = 10\nincident = at=5 duration=9 severity=0.5 scope=channel:video"
        )
        .is_err());
        let sc = Scenario::parse("campaigns = 12\nhours = 400\nincident = at=300 duration=2 severity=0.5 scope=channel:video kind=persistent").unwrap();
        assert_eq!(sc.campaigns, 12);
        assert_eq!(sc.incidents.len(), 1);
        assert_eq!(sc.incidents[0].start, DEFAULT_START.add_hours(300).unwrap());
        assert_eq!(sc.incidents[0].kind, IncidentKind::Persistent);
        assert!(Scenario::parse("incidents = some").is_err());
        assert!(Scenario::parse(
            "incidents = none\nincident = at=300 duration=2 severity=0.5 scope=channel:video"
        )
        .is_err());
    }

    #[test]
    fn scenario_text_round_trips() {
        for sc in [
            Scenario::default_incidents(),
            Scenario::default_incidents().without_incidents(),
        ] {
            assert_eq!(Scenario::parse(&sc.to_text()).unwrap(), sc);
        }
    }
}
