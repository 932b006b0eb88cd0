//! Shared domain types, UTC hour arithmetic and the pipeline configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::detector::{BetaPolicy, NegativeRule};
use crate::error::{Error, Result};

/// Seconds per hour. Hours are fixed-length UTC hours; there is no DST handling.
pub const HOUR: u64 = 3600;
pub const DAY_HOURS: u64 = 24;

/// Unix-epoch seconds, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn from_secs(secs: u64) -> Self {
        Timestamp(secs)
    }

    pub const fn secs(self) -> u64 {
        self.0
    }

    pub fn is_hour_aligned(self) -> bool {
        self.0.is_multiple_of(HOUR)
    }

    /// Shift by a signed number of hours; `None` if the result would be negative.
    pub fn add_hours(self, hours: i64) -> Option<Timestamp> {
        let delta = hours.checked_mul(HOUR as i64)?;
        let secs = (self.0 as i64).checked_add(delta)?;
        u64::try_from(secs).ok().map(Timestamp)
    }

    /// Whole hours from `earlier` to `self` (may be negative).
    pub fn hours_since(self, earlier: Timestamp) -> i64 {
        (self.0 as i64 - earlier.0 as i64).div_euclid(HOUR as i64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Invalid(format!("bad timestamp {s:?}")));
        }
        s.parse::<u64>()
            .map(Timestamp)
            .map_err(|_| Error::Invalid(format!("timestamp out of range {s:?}")))
    }
}

/// Largest multiple of 3600 not after `t`.
pub fn hour_floor(t: Timestamp) -> Timestamp {
    Timestamp(t.0 - t.0 % HOUR)
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Invalid(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        s
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CampaignStatus {
    Active,
    Paused,
    Stopped,
}

string_enum!(CampaignStatus {
    Active => "active",
    Paused => "paused",
    Stopped => "stopped",
});

/// The targeting criteria campaigns are clustered by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TargetingCriterion {
    Demographic,
    Contextual,
    Behavioral,
    Dayparting,
    Device,
    SiteList,
}

string_enum!(TargetingCriterion {
    Demographic => "demographic",
    Contextual => "contextual",
    Behavioral => "behavioral",
    Dayparting => "dayparting",
    Device => "device",
    SiteList => "sitelist",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MediaChannel {
    Display,
    Video,
    Mobile,
    Social,
}

string_enum!(MediaChannel {
    Display => "display",
    Video => "video",
    Mobile => "mobile",
    Social => "social",
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignRecord {
    pub id: String,
    /// ISO-4217 code.
    pub currency: String,
    pub status: CampaignStatus,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    pub targeting: BTreeSet<TargetingCriterion>,
    pub channel: MediaChannel,
}

impl CampaignRecord {
    pub fn new(
        id: impl Into<String>,
        currency: impl Into<String>,
        status: CampaignStatus,
        start: Timestamp,
        end: Option<Timestamp>,
        targeting: impl IntoIterator<Item = TargetingCriterion>,
        channel: MediaChannel,
    ) -> Result<Self> {
        let record = CampaignRecord {
            id: id.into(),
            currency: currency.into(),
            status,
            start,
            end,
            targeting: targeting.into_iter().collect(),
            channel,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(char::is_whitespace) || self.id.contains(',') {
            return Err(Error::Invalid(format!("bad campaign id {:?}", self.id)));
        }
        if self.targeting.is_empty() {
            return Err(Error::Invalid(format!(
                "campaign {} has no targeting criteria",
                self.id
            )));
        }
        if let Some(end) = self.end {
            if end <= self.start {
                return Err(Error::Invalid(format!(
                    "campaign {} ends before it starts",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Timestamped samples of one metric, deduplicated and in increasing time order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawSeries {
    pub metric_name: String,
    pub tags: BTreeMap<String, String>,
    pub points: Vec<(Timestamp, f64)>,
}

impl RawSeries {
    pub fn new(
        metric_name: impl Into<String>,
        tags: BTreeMap<String, String>,
        points: Vec<(Timestamp, f64)>,
    ) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invalid(
                "raw series timestamps must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::Invalid(
                "raw series contains a non-finite value".into(),
            ));
        }
        Ok(RawSeries {
            metric_name: metric_name.into(),
            tags,
            points,
        })
    }
}

/// One slot per UTC hour starting at `start_hour`; `None` marks a gap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HourlySeries {
    start_hour: Timestamp,
    values: Vec<Option<f64>>,
}

impl HourlySeries {
    /// Trailing gaps are dropped.
    pub fn new(start_hour: Timestamp, mut values: Vec<Option<f64>>) -> Result<Self> {
        if !start_hour.is_hour_aligned() {
            return Err(Error::Invalid(format!(
                "series start {start_hour} is not hour aligned"
            )));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "hourly series contains a non-finite value".into(),
            ));
        }
        while matches!(values.last(), Some(None)) {
            values.pop();
        }
        Ok(HourlySeries { start_hour, values })
    }

    pub fn from_values(
        start_hour: Timestamp,
        values: impl IntoIterator<Item = f64>,
    ) -> Result<Self> {
        Self::new(start_hour, values.into_iter().map(Some).collect())
    }

    pub fn empty(start_hour: Timestamp) -> Self {
        HourlySeries {
            start_hour: hour_floor(start_hour),
            values: Vec::new(),
        }
    }

    pub fn start_hour(&self) -> Timestamp {
        self.start_hour
    }

    /// First hour past the last slot.
    pub fn end_hour(&self) -> Timestamp {
        Timestamp(self.start_hour.0 + self.values.len() as u64 * HOUR)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn get(&self, hour: Timestamp) -> Option<f64> {
        self.index_of(hour).and_then(|i| self.values[i])
    }

    pub fn index_of(&self, hour: Timestamp) -> Option<usize> {
        if hour < self.start_hour || !hour.is_hour_aligned() {
            return None;
        }
        let idx = ((hour.0 - self.start_hour.0) / HOUR) as usize;
        (idx < self.values.len()).then_some(idx)
    }

    /// `(hour, slot)` pairs in time order.
    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, Option<f64>)> + '_ {
        let start = self.start_hour.0;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (Timestamp(start + i as u64 * HOUR), *v))
    }

    pub fn present(&self) -> impl Iterator<Item = (Timestamp, f64)> + '_ {
        self.iter().filter_map(|(t, v)| v.map(|v| (t, v)))
    }

    /// Slots up to and including `last_hour`.
    pub fn until(&self, last_hour: Timestamp) -> HourlySeries {
        let keep = if last_hour < self.start_hour {
            0
        } else {
            (((last_hour.0 - self.start_hour.0) / HOUR) as usize + 1).min(self.values.len())
        };
        let mut values = self.values[..keep].to_vec();
        while matches!(values.last(), Some(None)) {
            values.pop();
        }
        HourlySeries {
            start_hour: self.start_hour,
            values,
        }
    }

    pub fn scale(&self, factor: f64) -> HourlySeries {
        HourlySeries {
            start_hour: self.start_hour,
            values: self.values.iter().map(|v| v.map(|v| v * factor)).collect(),
        }
    }
}

/// Tunables for every pipeline stage. Serialized as flat `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Correlation window length in hours.
    pub l: usize,
    /// Seasonality periods in days.
    pub p_values: Vec<u32>,
    /// Correlation a campaign must exceed to count as stable.
    pub delta: f64,
    /// Hours between the current hour and the end of the correlation windows.
    pub x: u32,
    /// Detector decay factor.
    pub alpha: f64,
    pub beta_max: f64,
    pub shrink_window: usize,
    pub training_len: usize,
    pub min_duration_days: u32,
    pub sigma_floor: f64,
    pub beta_policy: BetaPolicy,
    pub negative_rule: NegativeRule,
    /// Period of the change metric fed to the detector.
    pub detect_p: u32,
    /// Hour tolerance when matching labels to ground truth.
    pub eval_tolerance: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            l: 24,
            p_values: vec![1, 7],
            delta: 0.8,
            x: 2,
            alpha: 0.99,
            beta_max: 3.0,
            shrink_window: 168,
            training_len: 168,
            min_duration_days: 7,
            sigma_floor: 1e-12,
            beta_policy: BetaPolicy::PerStep,
            negative_rule: NegativeRule::BelowMean,
            detect_p: 7,
            eval_tolerance: 0,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "l",
    "p_values",
    "delta",
    "x",
    "alpha",
    "beta_max",
    "shrink_window",
    "training_len",
    "min_duration_days",
    "sigma_floor",
    "beta_policy",
    "negative_rule",
    "detect_p",
    "eval_tolerance",
];

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.l < 2 {
            return fail(format!("l must be at least 2 hours, got {}", self.l));
        }
        if self.p_values.is_empty() || self.p_values.contains(&0) {
            return fail("p_values must be a non-empty list of positive day counts".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.beta_max.is_finite() && self.beta_max > 0.0) {
            return fail(format!("beta_max must be positive, got {}", self.beta_max));
        }
        if self.shrink_window == 0 {
            return fail("shrink_window must be positive".into());
        }
        if self.training_len == 0 {
            return fail("training_len must be positive".into());
        }
        if !(self.sigma_floor.is_finite() && self.sigma_floor >= 0.0) {
            return fail(format!(
                "sigma_floor must be >= 0, got {}",
                self.sigma_floor
            ));
        }
        if !self.p_values.contains(&self.detect_p) {
            return fail(format!(
                "detect_p {} is not one of p_values {:?}",
                self.detect_p, self.p_values
            ));
        }
        Ok(())
    }

    pub fn max_p(&self) -> u32 {
        self.p_values.iter().copied().max().unwrap_or(0)
    }

    /// Parse `key=value` lines over the defaults. Blank lines and `#` comments
    /// are skipped; unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "l" => self.l = parse_field(key, value)?,
            "p_values" => {
                self.p_values = value
                    .split(',')
                    .map(|p| parse_field(key, p.trim()))
                    .collect::<Result<_>>()?
            }
            "delta" => self.delta = parse_field(key, value)?,
            "x" => self.x = parse_field(key, value)?,
            "alpha" => self.alpha = parse_field(key, value)?,
            "beta_max" => self.beta_max = parse_field(key, value)?,
            "shrink_window" => self.shrink_window = parse_field(key, value)?,
            "training_len" => self.training_len = parse_field(key, value)?,
            "min_duration_days" => self.min_duration_days = parse_field(key, value)?,
            "sigma_floor" => self.sigma_floor = parse_field(key, value)?,
            "beta_policy" => self.beta_policy = parse_field(key, value)?,
            "negative_rule" => self.negative_rule = parse_field(key, value)?,
            "detect_p" => self.detect_p = parse_field(key, value)?,
            "eval_tolerance" => self.eval_tolerance = parse_field(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} (expected one of {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let p_values = self
            .p_values
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "l={}\np_values={}\ndelta={}\nx={}\nalpha={}\nbeta_max={}\nshrink_window={}\n\
             training_len={}\nmin_duration_days={}\nsigma_floor={:e}\nbeta_policy={}\n\
             negative_rule={}\ndetect_p={}\neval_tolerance={}\n",
            self.l,
            p_values,
            self.delta,
            self.x,
            self.alpha,
            self.beta_max,
            self.shrink_window,
            self.training_len,
            self.min_duration_days,
            self.sigma_floor,
            self.beta_policy,
            self.negative_rule,
            self.detect_p,
            self.eval_tolerance,
        )
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }
}
