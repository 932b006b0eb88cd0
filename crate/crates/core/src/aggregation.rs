//! Clustering, hourly downsampling and seasonal differencing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::stability::StableSet;
use crate::types::{
    hour_floor, CampaignRecord, HourlySeries, MediaChannel, RawSeries, TargetingCriterion,
    Timestamp, DAY_HOURS, HOUR,
};

/// A group of campaigns monitored as one aggregated metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClusterKey {
    Targeting(TargetingCriterion),
    Channel(MediaChannel),
}

impl ClusterKey {
    /// All ten keys: six targeting criteria then four channels.
    pub fn all() -> Vec<ClusterKey> {
        TargetingCriterion::ALL
            .iter()
            .map(|&t| ClusterKey::Targeting(t))
            .chain(MediaChannel::ALL.iter().map(|&c| ClusterKey::Channel(c)))
            .collect()
    }

    /// Filesystem-friendly form, e.g. `channel-display`.
    pub fn file_stem(&self) -> String {
        self.to_string().replace(':', "-")
    }

    pub fn from_file_stem(stem: &str) -> Result<Self> {
        stem.replacen('-', ":", 1).parse()
    }
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterKey::Targeting(t) => write!(f, "targeting:{t}"),
            ClusterKey::Channel(c) => write!(f, "channel:{c}"),
        }
    }
}

impl FromStr for ClusterKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("targeting", t)) => Ok(ClusterKey::Targeting(t.parse()?)),
            Some(("channel", c)) => Ok(ClusterKey::Channel(c.parse()?)),
            _ => Err(Error::Invalid(format!(
                "bad cluster key {s:?} (expected targeting:<criterion> or channel:<channel>)"
            ))),
        }
    }
}

/// One targeting key per criterion plus the channel key.
pub fn clusters_of(c: &CampaignRecord) -> BTreeSet<ClusterKey> {
    c.targeting
        .iter()
        .map(|&t| ClusterKey::Targeting(t))
        .chain(std::iter::once(ClusterKey::Channel(c.channel)))
        .collect()
}

/// Sum every raw point into its UTC hour. Hours without points are gaps.
pub fn downsample_hourly(raw: &RawSeries) -> HourlySeries {
    let (Some(first), Some(last)) = (raw.points.first(), raw.points.last()) else {
        return HourlySeries::empty(Timestamp(0));
    };
    let start = hour_floor(first.0);
    let slots = ((hour_floor(last.0).secs() - start.secs()) / HOUR) as usize + 1;
    let mut values = vec![None; slots];
    for &(t, v) in &raw.points {
        let idx = ((hour_floor(t).secs() - start.secs()) / HOUR) as usize;
        *values[idx].get_or_insert(0.0) += v;
    }
    HourlySeries::new(start, values).expect("hour-aligned sums of finite values")
}

/// Slot-wise sum over the stable members of `key`.
pub fn aggregate_cluster(
    stable: &StableSet,
    key: ClusterKey,
    portfolio: &[CampaignRecord],
    per_campaign: &BTreeMap<String, HourlySeries>,
) -> HourlySeries {
    aggregate_members(&stable.campaign_ids, key, portfolio, per_campaign)
}

/// Slot-wise sum over the campaigns in `ids` that belong to `key`.
///
/// A member's gap contributes nothing; a slot is a gap only when every member
/// has a gap there. Members are summed in id order so the result does not
/// depend on how the inputs were ordered.
pub fn aggregate_members(
    ids: &BTreeSet<String>,
    key: ClusterKey,
    portfolio: &[CampaignRecord],
    per_campaign: &BTreeMap<String, HourlySeries>,
) -> HourlySeries {
    let members: BTreeSet<&str> = portfolio
        .iter()
        .filter(|c| ids.contains(&c.id) && clusters_of(c).contains(&key))
        .map(|c| c.id.as_str())
        .collect();
    let series: Vec<&HourlySeries> = members
        .iter()
        .filter_map(|id| per_campaign.get(*id))
        .filter(|s| !s.is_empty())
        .collect();
    if series.is_empty() {
        log::warn!("cluster {key}: no members with data, aggregate is empty");
        return HourlySeries::empty(Timestamp(0));
    }

    let start = series.iter().map(|s| s.start_hour()).min().unwrap();
    let end = series.iter().map(|s| s.end_hour()).max().unwrap();
    let mut values = vec![None; ((end.secs() - start.secs()) / HOUR) as usize];
    for s in series {
        let offset = ((s.start_hour().secs() - start.secs()) / HOUR) as usize;
        for (i, v) in s.values().iter().enumerate() {
            if let Some(v) = v {
                *values[offset + i].get_or_insert(0.0) += v;
            }
        }
    }
    HourlySeries::new(start, values).expect("sums of valid series")
}

/// Hourly seasonal difference `d_t = m_t - m_{t - p days}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMetric {
    pub cluster: ClusterKey,
    /// Period in days.
    pub p: u32,
    pub start_hour: Timestamp,
    pub d: Vec<Option<f64>>,
}

impl ChangeMetric {
    pub fn iter(&self) -> impl Iterator<Item = (Timestamp, Option<f64>)> + '_ {
        let start = self.start_hour.secs();
        self.d
            .iter()
            .enumerate()
            .map(move |(i, v)| (Timestamp(start + i as u64 * HOUR), *v))
    }

    pub fn present(&self) -> impl Iterator<Item = (Timestamp, f64)> + '_ {
        self.iter().filter_map(|(t, v)| v.map(|v| (t, v)))
    }

    pub fn present_count(&self) -> usize {
        self.d.iter().flatten().count()
    }

    pub fn get(&self, hour: Timestamp) -> Option<f64> {
        if hour < self.start_hour {
            return None;
        }
        let idx = ((hour.secs() - self.start_hour.secs()) / HOUR) as usize;
        self.d.get(idx).copied().flatten()
    }

    /// `hour,value` with an empty value field for absent slots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hour,value\n");
        for (t, v) in self.iter() {
            match v {
                Some(v) => writeln!(out, "{t},{v}"),
                None => writeln!(out, "{t},"),
            }
            .unwrap();
        }
        out
    }
}

pub fn change_metric(m: &HourlySeries, p: u32, cluster: ClusterKey) -> ChangeMetric {
    assert!(p > 0, "seasonality period must be positive");
    let lag = p as usize * DAY_HOURS as usize;
    let values = m.values();
    if values.len() <= lag {
        log::warn!(
            "cluster {cluster}: {} hours is too short for a {p}-day difference",
            values.len()
        );
    }
    let d = (0..values.len())
        .map(
            |i| match (i.checked_sub(lag).and_then(|j| values[j]), values[i]) {
                (Some(past), Some(now)) => Some(now - past),
                _ => None,
            },
        )
        .collect();
    ChangeMetric {
        cluster,
        p,
        start_hour: m.start_hour(),
        d,
    }
}
