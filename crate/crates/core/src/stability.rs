//! Selection of behaviorally stable campaigns.
//!
//! A campaign is stable when its setup passes the fixed rules in
//! [`check_setup`] and, for every configured period `p`, the last `l` hours
//! (ending `x` hours before now) correlate with the same `l` hours `p` days
//! earlier above `delta`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{
    hour_floor, CampaignRecord, CampaignStatus, HourlySeries, PipelineConfig, Timestamp, DAY_HOURS,
    HOUR,
};

pub const REQUIRED_CURRENCY: &str = "USD";

#[derive(Debug, Clone, PartialEq)]
pub struct StableSet {
    pub campaign_ids: BTreeSet<String>,
    pub computed_at: Timestamp,
    pub config_snapshot: PipelineConfig,
    pub warnings: Vec<String>,
}

impl StableSet {
    pub fn contains(&self, id: &str) -> bool {
        self.campaign_ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.campaign_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.campaign_ids.is_empty()
    }

    /// One id per line under a `#` header carrying the refresh time and config hash.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# computed_at={} config_hash={}\n",
            self.computed_at,
            self.config_snapshot.hash()
        );
        for id in &self.campaign_ids {
            let _ = writeln!(out, "{id}");
        }
        out
    }

    /// Reads back the ids and refresh time of [`StableSet::to_text`] output.
    /// The config itself is not stored in the file, only its hash.
    pub fn ids_from_text(text: &str) -> Result<(Timestamp, BTreeSet<String>)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty stable-set file".into()))?;
        let computed_at = header
            .strip_prefix("# computed_at=")
            .and_then(|rest| rest.split_whitespace().next())
            .ok_or_else(|| Error::Invalid(format!("bad stable-set header {header:?}")))?
            .parse()?;
        let ids = lines
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        Ok((computed_at, ids))
    }
}

/// Setup rules: US dollars, active, running for more than `min_duration_days`
/// and not yet ended.
pub fn check_setup(c: &CampaignRecord, now: Timestamp, min_duration_days: u32) -> bool {
    let min_secs = u64::from(min_duration_days) * DAY_HOURS * HOUR;
    c.currency.eq_ignore_ascii_case(REQUIRED_CURRENCY)
        && c.status == CampaignStatus::Active
        && now.secs().saturating_sub(c.start.secs()) > min_secs
        && c.end.is_none_or(|end| end > now)
}

/// The `l` hourly values ending at `end_hour` inclusive, or `None` if any of
/// them is a gap or outside the series.
pub fn window_vector(s: &HourlySeries, end_hour: Timestamp, l: usize) -> Option<Vec<f64>> {
    if l == 0 {
        return None;
    }
    let first = end_hour.add_hours(-(l as i64 - 1))?;
    let start_idx = s.index_of(first)?;
    let slots = s.values().get(start_idx..start_idx + l)?;
    slots.iter().copied().collect()
}

/// Sample Pearson correlation. `None` when either side has zero variance.
///
/// Panics if the vectors differ in length.
pub fn pearson_correlation(v1: &[f64], v2: &[f64]) -> Option<f64> {
    assert_eq!(v1.len(), v2.len(), "pearson_correlation: length mismatch");
    let n = v1.len();
    if n < 2 {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (m1, m2) = (mean(v1), mean(v2));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in v1.iter().zip(v2) {
        let (da, db) = (a - m1, b - m2);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if is_flat(sxx, v1) || is_flat(syy, v2) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

// Sum of squared deviations indistinguishable from rounding noise.
fn is_flat(ss: f64, v: &[f64]) -> bool {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ss <= v.len() as f64 * (1e-12 * scale).powi(2)
}

/// Correlation gate over every configured period; all must exceed `delta`.
pub fn is_stable(series: &HourlySeries, now: Timestamp, cfg: &PipelineConfig) -> bool {
    let Some(end) = hour_floor(now).add_hours(-i64::from(cfg.x)) else {
        return false;
    };
    let Some(recent) = window_vector(series, end, cfg.l) else {
        return false;
    };
    cfg.p_values.iter().all(|&p| {
        end.add_hours(-(i64::from(p) * DAY_HOURS as i64))
            .and_then(|past_end| window_vector(series, past_end, cfg.l))
            .and_then(|past| pearson_correlation(&recent, &past))
            .is_some_and(|c| c > cfg.delta)
    })
}

/// Campaigns passing both the setup rules and the correlation gate at `now`.
pub fn refresh_stable_set(
    portfolio: &[CampaignRecord],
    series_lookup: &BTreeMap<String, HourlySeries>,
    now: Timestamp,
    cfg: &PipelineConfig,
) -> StableSet {
    let verdicts: Vec<(&str, Result<bool, String>)> = portfolio
        .par_iter()
        .map(|c| {
            if !check_setup(c, now, cfg.min_duration_days) {
                return (c.id.as_str(), Ok(false));
            }
            match series_lookup.get(&c.id) {
                Some(series) => (c.id.as_str(), Ok(is_stable(series, now, cfg))),
                None => (
                    c.id.as_str(),
                    Err(format!("campaign {}: no metric series, excluded", c.id)),
                ),
            }
        })
        .collect();

    let mut campaign_ids = BTreeSet::new();
    let mut warnings = Vec::new();
    for (id, verdict) in verdicts {
        match verdict {
            Ok(true) => {
                campaign_ids.insert(id.to_string());
            }
            Ok(false) => {}
            Err(w) => {
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    StableSet {
        campaign_ids,
        computed_at: now,
        config_snapshot: cfg.clone(),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{MediaChannel, TargetingCriterion};
    use proptest::prelude::*;

    const DAY: u64 = 86_400;

    fn campaign(currency: &str, status: CampaignStatus, start: Timestamp) -> CampaignRecord {
        CampaignRecord::new(
            "c",
            currency,
            status,
            start,
            None,
            [TargetingCriterion::Behavioral],
            MediaChannel::Display,
        )
        .unwrap()
    }

    #[test]
    fn setup_rules() {
        let now = Timestamp(100 * DAY);
        let started = Timestamp(70 * DAY);
        assert!(check_setup(
            &campaign("USD", CampaignStatus::Active, started),
            now,
            7
        ));
        assert!(!check_setup(
            &campaign("EUR", CampaignStatus::Active, started),
            now,
            7
        ));
        assert!(!check_setup(
            &campaign("USD", CampaignStatus::Paused, started),
            now,
            7
        ));
        assert!(!check_setup(
            &campaign("USD", CampaignStatus::Stopped, started),
            now,
            7
        ));
        assert!(!check_setup(
            &campaign("USD", CampaignStatus::Active, now),
            now,
            7
        ));
        // exactly 7 days is not "more than" 7 days
        let edge = Timestamp(93 * DAY);
        assert!(!check_setup(
            &campaign("USD", CampaignStatus::Active, edge),
            now,
            7
        ));
        assert!(check_setup(
            &campaign("USD", CampaignStatus::Active, Timestamp(93 * DAY - 1)),
            now,
            7
        ));
        let mut ended = campaign("USD", CampaignStatus::Active, started);
        ended.end = Some(now);
        assert!(!check_setup(&ended, now, 7));
        ended.end = Some(Timestamp(now.0 + 1));
        assert!(check_setup(&ended, now, 7));
    }

    #[test]
    fn window_slices() {
        let s = HourlySeries::from_values(Timestamp(0), (0..48).map(f64::from)).unwrap();
        let w = window_vector(&s, Timestamp(47 * HOUR), 24).unwrap();
        assert_eq!(w, (24..48).map(f64::from).collect::<Vec<_>>());
        assert!(window_vector(&s, Timestamp(48 * HOUR), 24).is_none());
        assert!(window_vector(&s, Timestamp(22 * HOUR), 24).is_none());
        assert_eq!(window_vector(&s, Timestamp(23 * HOUR), 24).unwrap()[0], 0.0);

        let mut values: Vec<Option<f64>> = (0..48).map(|v| Some(v as f64)).collect();
        values[30] = None;
        let gapped = HourlySeries::new(Timestamp(0), values).unwrap();
        assert!(window_vector(&gapped, Timestamp(47 * HOUR), 24).is_none());
        assert!(window_vector(&gapped, Timestamp(29 * HOUR), 24).is_some());
    }

    #[test]
    fn pearson_examples() {
        let v = [1.0, 4.0, 2.0, 8.0, 5.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((pearson_correlation(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_correlation(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        // numpy.corrcoef([1,2,3,4],[1,2,3,5])[0,1]
        let r = pearson_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.982_707_629_823_990_8).abs() < 1e-12);
        assert_eq!(pearson_correlation(&[0.1; 24], &v.repeat(5)[..24]), None);
        assert_eq!(pearson_correlation(&[1.0], &[2.0]), None);
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn pearson_length_mismatch_panics() {
        pearson_correlation(&[1.0, 2.0], &[1.0, 2.0, 3.0]);
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn pearson_symmetric((a, b) in vec_pair()) {
            prop_assert_eq!(pearson_correlation(&a, &b), pearson_correlation(&b, &a));
        }

        #[test]
        fn pearson_affine_invariant((a, b) in vec_pair(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let moved: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            match (pearson_correlation(&a, &b), pearson_correlation(&moved, &b)) {
                (Some(r1), Some(r2)) => prop_assert!((r1 - r2).abs() < 1e-9),
                (r1, r2) => prop_assert_eq!(r1.is_none(), r2.is_none()),
            }
        }

        #[test]
        fn periodic_series_stable_and_monotone_in_delta(
            day in prop::collection::vec(1.0f64..50.0, 24),
            week in prop::collection::vec(0.5f64..1.5, 7),
            delta in 0.01f64..0.99,
        ) {
            // period one week; only p=7 is guaranteed to be exact
            let values = (0..24 * 7 * 3).map(|h| day[h % 24] * week[(h / 24) % 7]);
            let s = HourlySeries::from_values(Timestamp(0), values).unwrap();
            let cfg = PipelineConfig { p_values: vec![7], detect_p: 7, delta, ..Default::default() };
            let now = Timestamp(24 * 7 * 3 * HOUR);
            let flat = day.iter().all(|v| (v - day[0]).abs() < 1e-9);
            prop_assume!(!flat);
            prop_assert!(is_stable(&s, now, &cfg));
            let looser = PipelineConfig { delta: delta / 2.0, ..cfg };
            prop_assert!(is_stable(&s, now, &looser));
        }
    }

    #[test]
    fn stable_examples() {
        let cfg = PipelineConfig::default();
        let hours = 24 * 21;
        let daily =
            HourlySeries::from_values(Timestamp(0), (0..hours).map(|h| 10.0 + (h % 24) as f64))
                .unwrap();
        let now = Timestamp(hours as u64 * HOUR);
        assert!(is_stable(&daily, now, &cfg));

        let constant = HourlySeries::from_values(Timestamp(0), vec![5.0; hours]).unwrap();
        assert!(!is_stable(&constant, now, &cfg));

        // not enough history for the weekly window
        let short =
            HourlySeries::from_values(Timestamp(0), (0..24 * 5).map(|h| 10.0 + (h % 24) as f64))
                .unwrap();
        assert!(!is_stable(&short, Timestamp(24 * 5 * HOUR), &cfg));
    }

    #[test]
    fn refresh_examples() {
        let cfg = PipelineConfig::default();
        let now = Timestamp(40 * DAY);
        let empty = refresh_stable_set(&[], &BTreeMap::new(), now, &cfg);
        assert!(empty.is_empty());
        assert_eq!(empty.computed_at, now);

        let mut c = campaign("USD", CampaignStatus::Active, Timestamp(0));
        c.id = "periodic".into();
        let mut missing = c.clone();
        missing.id = "missing".into();
        let series = HourlySeries::from_values(
            Timestamp(0),
            (0..40 * 24).map(|h| 3.0 + ((h % 24) as f64 / 4.0).sin()),
        )
        .unwrap();
        let lookup = BTreeMap::from([("periodic".to_string(), series)]);
        let set = refresh_stable_set(&[c, missing], &lookup, now, &cfg);
        assert_eq!(set.campaign_ids, BTreeSet::from(["periodic".to_string()]));
        assert_eq!(set.warnings.len(), 1);

        let text = set.to_text();
        assert!(text.starts_with(&format!("# computed_at={} config_hash={}", now, cfg.hash())));
        let (at, ids) = StableSet::ids_from_text(&text).unwrap();
        assert_eq!(at, now);
        assert_eq!(ids, set.campaign_ids);
    }
}
