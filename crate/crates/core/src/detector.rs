//! Streaming detector for drops in a change metric.
//!
//! The state is three exponentially decayed sums (`X`, `X²`, `n`) giving a
//! running Gaussian estimate `μ = X/n`, `σ² = X²/n − μ²`. A point outside
//! `μ ± βσ` is an outlier and is kept out of the sums; only outliers below the
//! mean are anomalies. `β` starts at `beta_max` and shrinks in proportion to
//! the share of anomalies in a moving window of recent labels:
//!
//! ```text
//! β = beta_max · N_normal / (N_normal + N_abnormal)
//! ```
//!
//! so a sustained incident narrows the normal range and keeps being flagged
//! instead of being absorbed into the baseline.

use std::collections::VecDeque;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::aggregation::ChangeMetric;
use crate::error::{Error, Result};
use crate::types::{PipelineConfig, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomaly,
    /// Above the normal range. Reported as non-anomalous.
    PositiveOutlier,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
            Label::PositiveOutlier => "positive_outlier",
        }
    }

    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomaly" => Ok(Label::Anomaly),
            "positive_outlier" => Ok(Label::PositiveOutlier),
            _ => Err(Error::Invalid(format!("unknown label {s:?}"))),
        }
    }
}

/// When `β` is recomputed from the label window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BetaPolicy {
    /// After every step, so `β` recovers as anomalies leave the window.
    #[default]
    PerStep,
    /// Only when an anomaly is flagged; `β` never grows back on its own.
    OnAnomaly,
}

/// Which side of an out-of-range point counts as an anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NegativeRule {
    /// `d_t < μ`
    #[default]
    BelowMean,
    /// `d_t < 0`
    BelowZero,
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ }) => {
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        s
                    ))),
                }
            }
        }
    };
}

text_enum!(BetaPolicy { PerStep => "per_step", OnAnomaly => "on_anomaly" });
text_enum!(NegativeRule { BelowMean => "below_mean", BelowZero => "below_zero" });

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub beta_max: f64,
    pub shrink_window: usize,
    pub sigma_floor: f64,
    pub beta_policy: BetaPolicy,
    pub negative_rule: NegativeRule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::from(&PipelineConfig::default())
    }
}

impl From<&PipelineConfig> for DetectorConfig {
    fn from(cfg: &PipelineConfig) -> Self {
        DetectorConfig {
            alpha: cfg.alpha,
            beta_max: cfg.beta_max,
            shrink_window: cfg.shrink_window,
            sigma_floor: cfg.sigma_floor,
            beta_policy: cfg.beta_policy,
            negative_rule: cfg.negative_rule,
        }
    }
}

/// `beta_max · N_normal / (N_normal + N_abnormal)` over the window. Positive
/// outliers count as normal. An empty window gives `beta_max`.
pub fn shrink_beta<'a>(window: impl IntoIterator<Item = &'a Label>, beta_max: f64) -> f64 {
    let (mut normal, mut total) = (0usize, 0usize);
    for label in window {
        total += 1;
        if !label.is_anomaly() {
            normal += 1;
        }
    }
    if total == 0 {
        return beta_max;
    }
    beta_max * normal as f64 / total as f64
}

/// Outcome of one step, with the statistics the decision was made against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub label: Label,
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
}

impl Step {
    pub fn lower(&self) -> f64 {
        self.mu - self.beta * self.sigma
    }

    pub fn upper(&self) -> f64 {
        self.mu + self.beta * self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    sum: f64,
    sum_sq: f64,
    weight: f64,
    beta: f64,
    window: VecDeque<Label>,
    cfg: DetectorConfig,
}

impl DetectorState {
    /// Estimate the running sums from anomaly-free training data. Training
    /// points are folded in with the same decayed recurrence as later ones.
    pub fn init(training: &[f64], cfg: DetectorConfig) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::InsufficientTraining {
                needed: 1,
                available: 0,
            });
        }
        if let Some(bad) = training.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite training value {bad}")));
        }
        let mut state = DetectorState {
            sum: 0.0,
            sum_sq: 0.0,
            weight: 0.0,
            beta: cfg.beta_max,
            window: VecDeque::with_capacity(cfg.shrink_window),
            cfg,
        };
        for &d in training {
            state.absorb(d);
        }
        Ok(state)
    }

    fn absorb(&mut self, d: f64) {
        let a = self.cfg.alpha;
        self.sum = a * self.sum + d;
        self.sum_sq = a * self.sum_sq + d * d;
        self.weight = a * self.weight + 1.0;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.weight
    }

    /// Decayed population standard deviation, before the floor is applied.
    pub fn std_dev(&self) -> f64 {
        let mean = self.mean();
        (self.sum_sq / self.weight - mean * mean).max(0.0).sqrt()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(X, X², n)`.
    pub fn sums(&self) -> (f64, f64, f64) {
        (self.sum, self.sum_sq, self.weight)
    }

    pub fn window(&self) -> &VecDeque<Label> {
        &self.window
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Label one point and advance the state. Outliers on either side leave
    /// the running sums untouched.
    pub fn step(&mut self, d: f64) -> Step {
        debug_assert!(
            d.is_finite(),
            "gaps and non-finite values must be skipped upstream"
        );
        let mu = self.mean();
        let sigma = self.std_dev().max(self.cfg.sigma_floor);
        let beta = self.beta;

        let label = if (d - mu).abs() > beta * sigma {
            let negative = match self.cfg.negative_rule {
                NegativeRule::BelowMean => d < mu,
                NegativeRule::BelowZero => d < 0.0,
            };
            if negative {
                Label::Anomaly
            } else {
                Label::PositiveOutlier
            }
        } else {
            self.absorb(d);
            Label::Normal
        };

        self.push_window(if label.is_anomaly() {
            Label::Anomaly
        } else {
            Label::Normal
        });
        if self.cfg.beta_policy == BetaPolicy::PerStep || label.is_anomaly() {
            self.beta = shrink_beta(&self.window, self.cfg.beta_max);
        }

        Step {
            label,
            mu,
            sigma,
            beta,
        }
    }

    fn push_window(&mut self, label: Label) {
        if self.window.len() == self.cfg.shrink_window {
            self.window.pop_front();
        }
        self.window.push_back(label);
    }
}

/// A labeled change-metric point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub hour: Timestamp,
    pub value: f64,
    pub step: Step,
}

impl LabeledPoint {
    pub fn label(&self) -> Label {
        self.step.label
    }
}

/// Train on the first `training_len` present points, then label the rest in
/// time order. Absent slots are skipped without touching the state.
pub fn detect_series(
    d: &ChangeMetric,
    cfg: DetectorConfig,
    training_len: usize,
) -> Result<Vec<LabeledPoint>> {
    let present: Vec<(Timestamp, f64)> = d.present().collect();
    if present.len() < training_len || training_len == 0 {
        return Err(Error::InsufficientTraining {
            needed: training_len.max(1),
            available: present.len(),
        });
    }
    let (training, rest) = present.split_at(training_len);
    let training: Vec<f64> = training.iter().map(|p| p.1).collect();
    let mut state = DetectorState::init(&training, cfg)?;
    Ok(rest
        .iter()
        .map(|&(hour, value)| LabeledPoint {
            hour,
            value,
            step: state.step(value),
        })
        .collect())
}

/// `hour,value,mu,sigma,beta,label`
pub fn labels_to_csv(points: &[LabeledPoint]) -> String {
    let mut out = String::from("hour,value,mu,sigma,beta,label\n");
    for p in points {
        let s = &p.step;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.hour, p.value, s.mu, s.sigma, s.beta, s.label
        )
        .unwrap();
    }
    out
}

/// `hour,lower,upper` with bounds `μ ∓ βσ`.
pub fn bounds_to_csv(points: &[LabeledPoint]) -> String {
    let mut out = String::from("hour,lower,upper\n");
    for p in points {
        writeln!(out, "{},{},{}", p.hour, p.step.lower(), p.step.upper()).unwrap();
    }
    out
}

pub fn labels_from_csv(text: &str) -> Result<Vec<LabeledPoint>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("hour,value,mu,sigma,beta,label") => {}
        other => return Err(Error::Invalid(format!("bad labels header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Invalid(format!("labels line {}: {line:?}", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            let [hour, value, mu, sigma, beta, label] = fields[..] else {
                return Err(bad());
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LabeledPoint {
                hour: hour.parse().map_err(|_| bad())?,
                value: num(value)?,
                step: Step {
                    label: label.parse()?,
                    mu: num(mu)?,
                    sigma: num(sigma)?,
                    beta: num(beta)?,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::ClusterKey;
    use crate::types::{MediaChannel, HOUR};
    use proptest::prelude::*;

    fn cfg(alpha: f64) -> DetectorConfig {
        DetectorConfig {
            alpha,
            ..DetectorConfig::default()
        }
    }

    /// Standard-normal-ish state: μ = 0, σ = 1, β = 3.
    fn unit_state() -> DetectorState {
        DetectorState::init(&[-1.0, 1.0], cfg(1.0)).unwrap()
    }

    #[test]
    fn init_examples() {
        let s = DetectorState::init(&[4.2; 50], cfg(0.9)).unwrap();
        assert!((s.mean() - 4.2).abs() < 1e-12);
        assert!(s.std_dev() < 1e-6);
        assert_eq!(s.beta(), 3.0);
        assert!(s.window().is_empty());

        // batch moments of [1,2,3,4]: mean 2.5, E[x²] = 30/4
        let s = DetectorState::init(&[1.0, 2.0, 3.0, 4.0], cfg(1.0)).unwrap();
        assert!((s.mean() - 2.5).abs() < 1e-15);
        assert!((s.std_dev() - (30.0f64 / 4.0 - 6.25).sqrt()).abs() < 1e-15);
        assert!((s.std_dev() - 1.118_033_988_749_895).abs() < 1e-12);

        let s = DetectorState::init(&[1.0, 7.0, -3.5], cfg(0.0)).unwrap();
        assert_eq!(s.mean(), -3.5);
        assert_eq!(s.std_dev(), 0.0);

        assert!(matches!(
            DetectorState::init(&[], cfg(1.0)),
            Err(Error::InsufficientTraining { .. })
        ));
    }

    #[test]
    fn step_examples() {
        let mut s = unit_state();
        let sums = s.sums();
        let step = s.step(-5.0);
        assert_eq!(step.label, Label::Anomaly);
        assert_eq!((step.mu, step.sigma, step.beta), (0.0, 1.0, 3.0));
        assert_eq!(s.sums(), sums);
        assert!(
            (s.beta() - 0.0).abs() < 1e-15,
            "single anomaly in a window of one"
        );

        let mut s = unit_state();
        let step = s.step(5.0);
        assert_eq!(step.label, Label::PositiveOutlier);
        assert_eq!(s.sums(), sums);
        assert_eq!(s.beta(), 3.0);

        let mut s = unit_state();
        assert_eq!(s.step(2.9).label, Label::Normal);
        assert_ne!(s.sums(), sums);
        // threshold is strict: exactly βσ away is normal
        let mut s = unit_state();
        assert_eq!(s.step(-3.0).label, Label::Normal);
    }

    #[test]
    fn below_zero_rule() {
        let mut s = DetectorState::init(
            &[10.0, 12.0],
            DetectorConfig {
                alpha: 1.0,
                negative_rule: NegativeRule::BelowZero,
                ..DetectorConfig::default()
            },
        )
        .unwrap();
        // below μ - 3σ but still positive
        assert_eq!(s.step(1.0).label, Label::PositiveOutlier);
        assert_eq!(s.step(-1.0).label, Label::Anomaly);
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink_beta(&[Label::Normal; 10], 3.0), 3.0);
        let half = [
            Label::Anomaly,
            Label::Normal,
            Label::Anomaly,
            Label::PositiveOutlier,
        ];
        assert_eq!(shrink_beta(&half, 3.0), 1.5);
        let mut window = vec![Label::Anomaly; 40];
        window.extend([Label::Normal; 128]);
        assert!((shrink_beta(&window, 3.0) - 3.0 * 128.0 / 168.0).abs() < 1e-15);
        assert!((shrink_beta(&window, 3.0) - 2.285_714_285_714_285_5).abs() < 1e-12);
        assert_eq!(shrink_beta(&[], 3.0), 3.0);
    }

    #[test]
    fn beta_policies() {
        let per_step = DetectorConfig {
            alpha: 1.0,
            shrink_window: 4,
            ..DetectorConfig::default()
        };
        let literal = DetectorConfig {
            beta_policy: BetaPolicy::OnAnomaly,
            ..per_step
        };
        let training: Vec<f64> = (0..20)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let mut a = DetectorState::init(&training, per_step).unwrap();
        let mut b = DetectorState::init(&training, literal).unwrap();
        for s in [&mut a, &mut b] {
            s.step(-100.0);
            s.step(-100.0);
        }
        assert_eq!(a.beta(), b.beta());
        assert!(a.beta() < 3.0);
        for s in [&mut a, &mut b] {
            for _ in 0..4 {
                s.step(0.5);
            }
        }
        assert_eq!(a.beta(), 3.0);
        assert!(b.beta() < 3.0, "literal policy only updates on anomalies");
    }

    #[test]
    fn detect_series_examples() {
        let key = ClusterKey::Channel(MediaChannel::Display);
        let zeros = ChangeMetric {
            cluster: key,
            p: 7,
            start_hour: Timestamp(0),
            d: vec![Some(0.0); 400],
        };
        let out = detect_series(&zeros, DetectorConfig::default(), 168).unwrap();
        assert_eq!(out.len(), 400 - 168);
        assert!(out.iter().all(|p| p.label() == Label::Normal));
        assert_eq!(out[0].hour, Timestamp(168 * HOUR));

        let mut gapped = zeros.clone();
        gapped.d[300] = None;
        let out = detect_series(&gapped, DetectorConfig::default(), 168).unwrap();
        assert_eq!(out.len(), 400 - 169);
        assert!(out.iter().all(|p| p.hour != Timestamp(300 * HOUR)));

        assert!(matches!(
            detect_series(&zeros, DetectorConfig::default(), 401),
            Err(Error::InsufficientTraining {
                needed: 401,
                available: 400
            })
        ));
    }

    #[test]
    fn labels_csv_round_trip() {
        let points = vec![
            LabeledPoint {
                hour: Timestamp(3600),
                value: -2.5,
                step: Step {
                    label: Label::Anomaly,
                    mu: 0.1,
                    sigma: 0.7,
                    beta: 2.75,
                },
            },
            LabeledPoint {
                hour: Timestamp(7200),
                value: 9.0,
                step: Step {
                    label: Label::PositiveOutlier,
                    mu: 0.1,
                    sigma: 0.7,
                    beta: 3.0,
                },
            },
        ];
        let csv = labels_to_csv(&points);
        assert!(csv.starts_with("hour,value,mu,sigma,beta,label\n3600,-2.5,0.1,0.7,2.75,anomaly\n"));
        assert_eq!(labels_from_csv(&csv).unwrap(), points);
        assert!(labels_from_csv("hour,value\n").is_err());
        let bounds = bounds_to_csv(&points[..1]);
        assert_eq!(
            bounds,
            format!(
                "hour,lower,upper\n3600,{},{}\n",
                0.1 - 2.75 * 0.7,
                0.1 + 2.75 * 0.7
            )
        );
    }

    proptest! {
        #[test]
        fn invariants_hold_on_arbitrary_streams(
            training in prop::collection::vec(-50.0f64..50.0, 1..50),
            stream in prop::collection::vec(-200.0f64..200.0, 0..300),
            alpha in 0.0f64..=1.0,
            window in 1usize..50,
        ) {
            let cfg = DetectorConfig { alpha, shrink_window: window, ..DetectorConfig::default() };
            let mut s = DetectorState::init(&training, cfg).unwrap();
            for d in stream {
                let step = s.step(d);
                prop_assert!(step.mu.is_finite() && step.sigma.is_finite());
                prop_assert!((0.0..=3.0).contains(&step.beta));
                if step.label == Label::Anomaly {
                    prop_assert!(d < step.mu);
                }
                prop_assert!((0.0..=3.0).contains(&s.beta()));
                if !s.window().contains(&Label::Anomaly) {
                    prop_assert_eq!(s.beta(), 3.0);
                }
                prop_assert!(s.window().len() <= window);
                prop_assert_eq!(s.beta(), shrink_beta(s.window(), 3.0));
            }
        }

        #[test]
        fn outliers_do_not_touch_sums(
            training in prop::collection::vec(-5.0f64..5.0, 2..40),
            prefix in prop::collection::vec(-5.0f64..5.0, 0..40),
            spike in prop::sample::select(vec![-1e6, 1e6]),
            next in -5.0f64..5.0,
        ) {
            let cfg = DetectorConfig { alpha: 0.97, ..DetectorConfig::default() };
            let mut with = DetectorState::init(&training, cfg).unwrap();
            let mut without = with.clone();
            for &d in &prefix {
                with.step(d);
                without.step(d);
            }
            let label = with.step(spike).label;
            prop_assert_ne!(label, Label::Normal);
            prop_assert_eq!(with.sums(), without.sums());
            // the spike shrinks `with`'s beta, so `next` may only be an outlier there
            let a = with.step(next).label;
            let b = without.step(next).label;
            if a == b {
                prop_assert_eq!(with.sums(), without.sums());
            }
        }

        #[test]
        fn lower_beta_never_clears_an_anomaly(
            training in prop::collection::vec(-5.0f64..5.0, 2..40),
            d in -30.0f64..30.0,
            b1 in 0.0f64..3.0,
            b2 in 0.0f64..3.0,
        ) {
            let (hi, lo) = if b1 >= b2 { (b1, b2) } else { (b2, b1) };
            let base = DetectorState::init(&training, DetectorConfig::default()).unwrap();
            let (mut wide, mut narrow) = (base.clone(), base);
            wide.beta = hi;
            narrow.beta = lo;
            if wide.step(d).label == Label::Anomaly {
                prop_assert_eq!(narrow.step(d).label, Label::Anomaly);
            }
        }
    }
}
