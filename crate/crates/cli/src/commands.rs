use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fleetwatch_core::detector::{bounds_to_csv, labels_from_csv, labels_to_csv, LabeledPoint};
use fleetwatch_core::evaluation::{latencies_to_csv, reports_to_csv};
use fleetwatch_core::pipeline::{
    data_start, go_live, load_streams, portfolio_from_csv, portfolio_to_csv, run_detection,
    stability_comparison, streams_to_put_lines,
};
use fleetwatch_core::{
    encode_put, hour_floor, CampaignRecord, ClusterKey, EvalReport, FileStore, GroundTruth,
    HourlySeries, PipelineConfig, PutLine, Scenario, StableSet,
};

use crate::output::{list_files, read_input, Output, RunManifest};
use crate::{
    ConfigArgs, DetectArgs, EvalArgs, ExportArgs, Failure, ReportArgs, SimulateArgs, EXIT_ALERT,
};

const PORTFOLIO_FILE: &str = "portfolio.csv";
const STORE_DIR: &str = "store";
const CONFIG_FILE: &str = "config.txt";
const STABLE_SET_FILE: &str = "stable_set.txt";
const LABELS_DIR: &str = "labels";

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::parse(&read_input(path, "config file")?)?,
        None => PipelineConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Config a `detect` run was made with.
fn run_config(run: &Path) -> Result<PipelineConfig, Failure> {
    Ok(PipelineConfig::parse(&read_input(
        &run.join(CONFIG_FILE),
        "detect config",
    )?)?)
}

fn load_data(
    data: &Path,
) -> Result<(Vec<CampaignRecord>, BTreeMap<String, HourlySeries>), Failure> {
    let portfolio = portfolio_from_csv(&read_input(&data.join(PORTFOLIO_FILE), "portfolio")?)?;
    let store_dir = data.join(STORE_DIR);
    if !store_dir.is_dir() {
        return Err(Failure::usage(format!(
            "no store at {}",
            store_dir.display()
        )));
    }
    let streams = load_streams(&FileStore::open(store_dir)?, &portfolio)?;
    if streams.is_empty() {
        return Err(Failure::usage(format!(
            "no traffic for any portfolio campaign under {}",
            data.display()
        )));
    }
    Ok((portfolio, streams))
}

/// Label files of a `detect` run, keyed by cluster.
fn load_labels(
    run: &Path,
    only: &[ClusterKey],
) -> Result<BTreeMap<ClusterKey, Vec<LabeledPoint>>, Failure> {
    let dir = run.join(LABELS_DIR);
    if !dir.is_dir() {
        return Err(Failure::usage(format!(
            "no labels directory at {}",
            dir.display()
        )));
    }
    let mut labels = BTreeMap::new();
    for rel in list_files(&dir)? {
        let Some(stem) = rel.to_str().and_then(|s| s.strip_suffix(".csv")) else {
            continue;
        };
        let key = ClusterKey::from_file_stem(stem)?;
        if only.is_empty() || only.contains(&key) {
            let path = dir.join(&rel);
            labels.insert(key, labels_from_csv(&read_input(&path, "labels file")?)?);
        }
    }
    if labels.is_empty() {
        return Err(Failure::usage(format!(
            "no label files under {}",
            dir.display()
        )));
    }
    Ok(labels)
}

pub fn simulate(a: &SimulateArgs) -> Result<u8, Failure> {
    let mut scenario = match &a.scenario {
        Some(path) => Scenario::parse(&read_input(path, "scenario file")?)?,
        None => Scenario::default_incidents(),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let cfg = load_config(&a.config)?;
    let root = &a.out.out;
    let store_dir = root.join(STORE_DIR);
    if store_dir.exists() {
        if !a.force {
            return Err(Failure::usage(format!(
                "{} already exists; pass --force to replace it",
                store_dir.display()
            )));
        }
        fs::remove_dir_all(&store_dir).map_err(|e| Failure::io(&store_dir, e))?;
    }
    let mut out = Output::create(root)?;

    let sim = scenario.simulate()?;
    out.lap("simulate");

    let lines = streams_to_put_lines(&sim.streams);
    FileStore::open(&store_dir)?.append_all(&lines)?;
    for rel in list_files(&store_dir)? {
        out.track(Path::new(STORE_DIR).join(rel));
    }
    out.write(PORTFOLIO_FILE, &portfolio_to_csv(&sim.records()))?;
    out.write("truth.csv", &sim.truth.to_csv(&cfg.p_values))?;
    out.write("scenario.txt", &scenario.to_text())?;
    let engineered: String = sim
        .campaigns
        .iter()
        .filter(|c| c.expected_stable)
        .map(|c| format!("{}\n", c.record.id))
        .collect();
    out.write("expected_stable.txt", &engineered)?;
    out.lap("write");

    let mut manifest = RunManifest::new("simulate", root);
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(scenario.seed);
    manifest.scenario_path = a.scenario.as_ref().map(|p| p.display().to_string());
    out.finish(manifest)?;
    println!(
        "simulated {} campaigns over {} hours: {} put lines, {} anomalous truth hours -> {}",
        sim.campaigns.len(),
        scenario.horizon.hours,
        lines.len(),
        sim.truth.all_hours().len(),
        root.display()
    );
    Ok(0)
}

pub fn detect(a: &DetectArgs) -> Result<u8, Failure> {
    let mut cfg = load_config(&a.config)?;
    if let Some(policy) = a.beta_policy {
        cfg.beta_policy = policy;
    }
    let root = &a.out.out;
    let mut out = Output::create(root)?;
    let (portfolio, mut streams) = load_data(&a.data)?;
    out.lap("load");

    // Monitor mode sees only complete hours before `now`.
    let last_hour = a.now.and_then(|now| hour_floor(now).add_hours(-1));
    let stable_at = match (a.now, last_hour) {
        (Some(now), Some(last)) => {
            streams = streams
                .into_iter()
                .map(|(id, s)| (id, s.until(last)))
                .filter(|(_, s)| !s.is_empty())
                .collect();
            now
        }
        (Some(now), None) => return Err(Failure::usage(format!("--now {now} is before any data"))),
        (None, _) => go_live(data_start(&streams).expect("non-empty streams"), &cfg),
    };
    let run = run_detection(&portfolio, &streams, stable_at, &cfg)?;
    out.lap("detect");

    for (key, points) in &run.labels {
        let stem = key.file_stem();
        out.write(format!("{LABELS_DIR}/{stem}.csv"), &labels_to_csv(points))?;
        out.write(format!("bounds/{stem}.csv"), &bounds_to_csv(points))?;
    }
    for ((key, p), metric) in &run.metrics {
        out.write(
            format!("metrics/{}_p{p}.csv", key.file_stem()),
            &metric.to_csv(),
        )?;
    }
    out.write(STABLE_SET_FILE, &run.stable.to_text())?;
    out.write(CONFIG_FILE, &cfg.to_text())?;
    let warnings: String = run.warnings.iter().map(|w| format!("{w}\n")).collect();
    out.write("warnings.txt", &warnings)?;

    let mut alerts = Vec::new();
    if let Some(last) = last_hour {
        for (key, points) in &run.labels {
            if points
                .last()
                .is_some_and(|p| p.hour == last && p.label().is_anomaly())
            {
                alerts.push(*key);
            }
        }
        let text: String = alerts.iter().map(|k| format!("{k} {last}\n")).collect();
        out.write("alerts.txt", &text)?;
    }
    out.lap("write");

    let mut manifest = RunManifest::new("detect", root);
    manifest.config_hash = Some(cfg.hash());
    manifest.settings = BTreeMap::from([
        (
            "mode".into(),
            if a.now.is_some() { "monitor" } else { "batch" }.into(),
        ),
        ("beta_policy".into(), cfg.beta_policy.to_string()),
        ("stable_at".into(), stable_at.to_string()),
        ("data".into(), a.data.display().to_string()),
    ]);
    out.finish(manifest)?;

    println!(
        "{} of {} campaigns stable at {stable_at}",
        run.stable.len(),
        portfolio.len()
    );
    for (key, points) in &run.labels {
        let anomalies = points.iter().filter(|p| p.label().is_anomaly()).count();
        println!(
            "{:<24} {:>6} labeled {:>6} anomalies",
            key.to_string(),
            points.len(),
            anomalies
        );
    }
    for key in &alerts {
        println!("ALERT {key}");
    }
    Ok(if alerts.is_empty() { 0 } else { EXIT_ALERT })
}

pub fn eval(a: &EvalArgs) -> Result<u8, Failure> {
    let cfg = run_config(&a.labels)?;
    let truth = GroundTruth::from_csv(&read_input(&a.truth, "truth file")?, cfg.detect_p)?;
    let labels = load_labels(&a.labels, &a.cluster)?;
    let root = &a.out.out;
    let mut out = Output::create(root)?;

    let reports = labels
        .iter()
        .map(|(key, points)| {
            let pairs: Vec<_> = points.iter().map(|p| (p.hour, p.label())).collect();
            EvalReport::evaluate(Some(*key), &pairs, &truth.hours_for(*key), &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.lap("evaluate");

    let text = reports
        .iter()
        .map(EvalReport::to_text)
        .collect::<Vec<_>>()
        .join("\n");
    out.write("eval_report.txt", &text)?;
    out.write("eval_report.csv", &reports_to_csv(&reports))?;
    out.write("latencies.csv", &latencies_to_csv(&reports))?;
    out.lap("write");

    let mut manifest = RunManifest::new("eval", root);
    manifest.config_hash = Some(cfg.hash());
    manifest.settings = BTreeMap::from([
        ("labels".into(), a.labels.display().to_string()),
        ("truth".into(), a.truth.display().to_string()),
    ]);
    out.finish(manifest)?;
    print!("{text}");
    Ok(0)
}

pub const EXPORT_METRICS: [&str; 4] = [
    "fleetwatch.change",
    "fleetwatch.lower",
    "fleetwatch.upper",
    "fleetwatch.anomaly",
];

pub fn export(a: &ExportArgs) -> Result<u8, Failure> {
    let cfg = run_config(&a.run)?;
    let labels = load_labels(&a.run, &[])?;
    let root = &a.out.out;
    let mut out = Output::create(root)?;

    let mut lines = Vec::new();
    for (key, points) in &labels {
        let tags = [
            ("cluster".to_string(), key.file_stem()),
            ("p".to_string(), cfg.detect_p.to_string()),
        ];
        for p in points {
            let flag = if p.label().is_anomaly() { 1.0 } else { 0.0 };
            let values = [p.value, p.step.lower(), p.step.upper(), flag];
            for (metric, value) in EXPORT_METRICS.iter().zip(values) {
                lines.push(PutLine::new(*metric, p.hour, value, tags.clone()));
            }
        }
    }
    let mut text = String::new();
    for line in &lines {
        writeln!(
            text,
            "{}",
            encode_put(line).map_err(fleetwatch_core::Error::from)?
        )
        .unwrap();
    }
    out.write("export.put", &text)?;
    if let Some(store) = &a.store {
        FileStore::open(store)?.append_all(&lines)?;
    }
    out.lap("export");

    let mut manifest = RunManifest::new("export", root);
    manifest.config_hash = Some(cfg.hash());
    manifest.settings = BTreeMap::from([("run".into(), a.run.display().to_string())]);
    out.finish(manifest)?;
    println!("exported {} put lines", lines.len());
    Ok(0)
}

pub fn report(a: &ReportArgs) -> Result<u8, Failure> {
    let cfg = run_config(&a.run)?;
    let (computed_at, campaign_ids) =
        StableSet::ids_from_text(&read_input(&a.run.join(STABLE_SET_FILE), "stable set")?)?;
    let stable = StableSet {
        campaign_ids,
        computed_at,
        config_snapshot: cfg.clone(),
        warnings: Vec::new(),
    };
    let (portfolio, streams) = load_data(&a.data)?;
    let incident_hours = match &a.truth {
        Some(path) => {
            GroundTruth::from_csv(&read_input(path, "truth file")?, cfg.detect_p)?.all_hours()
        }
        None => Default::default(),
    };
    let clusters = if a.cluster.is_empty() {
        ClusterKey::all()
    } else {
        a.cluster.clone()
    };
    let root = &a.out.out;
    let mut out = Output::create(root)?;

    let mut csv = String::from("cluster,p,mad_all,mad_stable,ratio\n");
    let mut table = format!(
        "{:<24} {:>3} {:>12} {:>12} {:>8}\n",
        "cluster", "p", "mad_all", "mad_stable", "ratio"
    );
    for key in clusters {
        let rows =
            match stability_comparison(&portfolio, &streams, &stable, key, &incident_hours, &cfg) {
                Ok(rows) => rows,
                Err(e) => {
                    log::warn!("cluster {key}: {e}");
                    continue;
                }
            };
        for r in rows {
            writeln!(
                csv,
                "{key},{},{},{},{}",
                r.p, r.mad_all, r.mad_stable, r.ratio
            )
            .unwrap();
            writeln!(
                table,
                "{:<24} {:>3} {:>12.3} {:>12.3} {:>8.4}",
                key.to_string(),
                r.p,
                r.mad_all,
                r.mad_stable,
                r.ratio
            )
            .unwrap();
        }
    }
    out.write("stability.csv", &csv)?;
    out.write("stability.txt", &table)?;
    out.lap("report");

    let mut manifest = RunManifest::new("report", root);
    manifest.config_hash = Some(cfg.hash());
    manifest.settings = BTreeMap::from([
        ("data".into(), a.data.display().to_string()),
        ("run".into(), a.run.display().to_string()),
    ]);
    out.finish(manifest)?;
    print!("{table}");
    Ok(0)
}
