//! Put-line wire format and a file-backed series store.
//!
//! A put line is
//!
//! ```text
//! put <metric> <timestamp> <value> <k1>=<v1> <k2>=<v2> ...
//! ```
//!
//! with single spaces between fields, second-resolution timestamps and values
//! in shortest round-trip decimal form (`2`, not `2.0`).
//!
//! The store keeps one append-only file of put lines per series (metric plus
//! tag set). Reads replay the file and keep the last value written for each
//! timestamp.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::{Error, Result};
use crate::types::{hour_floor, RawSeries, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PutError {
    #[error("expected opcode `put`, found {0:?}")]
    WrongOpcode(String),
    #[error("missing {0}")]
    MissingField(&'static str),
    #[error("empty field (fields are separated by exactly one space)")]
    EmptyField,
    #[error("malformed timestamp {0:?}")]
    BadTimestamp(String),
    #[error("malformed value {0:?}")]
    BadValue(String),
    #[error("malformed tag {0:?}")]
    BadTag(String),
    #[error("duplicate tag key {0:?}")]
    DuplicateTag(String),
    #[error("invalid metric name {0:?}")]
    BadMetric(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PutLine {
    pub metric: String,
    pub timestamp: Timestamp,
    pub value: f64,
    /// Wire order is preserved.
    pub tags: Vec<(String, String)>,
}

impl PutLine {
    pub fn new(
        metric: impl Into<String>,
        timestamp: Timestamp,
        value: f64,
        tags: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        PutLine {
            metric: metric.into(),
            timestamp,
            value,
            tags: tags.into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PutError> {
        if self.metric.is_empty() || self.metric.contains(char::is_whitespace) {
            return Err(PutError::BadMetric(self.metric.clone()));
        }
        if !self.value.is_finite() {
            return Err(PutError::BadValue(self.value.to_string()));
        }
        let mut seen = Vec::with_capacity(self.tags.len());
        for (k, v) in &self.tags {
            if !valid_tag_part(k) || !valid_tag_part(v) {
                return Err(PutError::BadTag(format!("{k}={v}")));
            }
            if seen.contains(&k) {
                return Err(PutError::DuplicateTag(k.clone()));
            }
            seen.push(k);
        }
        Ok(())
    }

    /// Tags sorted by key, `k1=v1,k2=v2`. Identifies the series regardless of wire order.
    pub fn canonical_tags(&self) -> String {
        canonical_tags(self.tags.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

fn valid_tag_part(s: &str) -> bool {
    !s.is_empty() && !s.contains(char::is_whitespace) && !s.contains('=')
}

fn canonical_tags<'a>(tags: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    let sorted: BTreeMap<&str, &str> = tags.collect();
    sorted
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode_put(p: &PutLine) -> Result<String, PutError> {
    p.validate()?;
    let mut line = format!("put {} {} {}", p.metric, p.timestamp, p.value);
    for (k, v) in &p.tags {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(v);
    }
    Ok(line)
}

pub fn parse_put(line: &str) -> Result<PutLine, PutError> {
    let mut fields = line.split(' ');
    match fields.next() {
        Some("put") => {}
        Some("") | None => return Err(PutError::MissingField("opcode")),
        Some(other) => return Err(PutError::WrongOpcode(other.to_string())),
    }
    let mut next = |name: &'static str| match fields.next() {
        None => Err(PutError::MissingField(name)),
        Some("") => Err(PutError::EmptyField),
        Some(f) => Ok(f),
    };
    let metric = next("metric")?;
    let ts = next("timestamp")?;
    let value = next("value")?;

    let timestamp = ts
        .parse::<Timestamp>()
        .map_err(|_| PutError::BadTimestamp(ts.to_string()))?;
    // Rust's float parser also accepts `inf`/`nan`; only finite values are valid.
    let value = value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| PutError::BadValue(value.to_string()))?;

    let mut tags: Vec<(String, String)> = Vec::new();
    for field in fields {
        if field.is_empty() {
            return Err(PutError::EmptyField);
        }
        let (k, v) = field
            .split_once('=')
            .filter(|(k, v)| valid_tag_part(k) && valid_tag_part(v))
            .ok_or_else(|| PutError::BadTag(field.to_string()))?;
        if tags.iter().any(|(seen, _)| seen == k) {
            return Err(PutError::DuplicateTag(k.to_string()));
        }
        tags.push((k.to_string(), v.to_string()));
    }
    let put = PutLine {
        metric: metric.to_string(),
        timestamp,
        value,
        tags,
    };
    put.validate()?;
    Ok(put)
}

/// Directory of append-only put-line files, one per series.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, metric: &str, canonical_tags: &str) -> PathBuf {
        let key = format!("{metric}{{{canonical_tags}}}");
        self.root.join(format!("{}.put", escape_file_name(&key)))
    }

    pub fn append(&self, p: &PutLine) -> Result<()> {
        self.append_all(std::slice::from_ref(p))
    }

    /// Append lines in order, opening each series file once.
    pub fn append_all(&self, lines: &[PutLine]) -> Result<()> {
        let mut encoded: Vec<(PathBuf, String)> = Vec::with_capacity(lines.len());
        for p in lines {
            let line = encode_put(p)?;
            encoded.push((self.path_for(&p.metric, &p.canonical_tags()), line));
        }
        let mut writers: HashMap<PathBuf, BufWriter<File>> = HashMap::new();
        for (path, line) in encoded {
            if !writers.contains_key(&path) {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                writers.insert(path.clone(), BufWriter::new(file));
            }
            let w = writers.get_mut(&path).unwrap();
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        for (path, mut w) in writers {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Points of one series whose hour falls in `hours` (all points if `None`),
    /// duplicate timestamps resolved to the last value written.
    pub fn read(
        &self,
        metric: &str,
        tags: &BTreeMap<String, String>,
        hours: Option<Range<Timestamp>>,
    ) -> Result<RawSeries> {
        let canonical = canonical_tags(tags.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        let path = self.path_for(metric, &canonical);
        let mut points = BTreeMap::new();
        for put in read_lines(&path)? {
            let hour = hour_floor(put.timestamp);
            if hours.as_ref().is_none_or(|r| r.contains(&hour)) {
                points.insert(put.timestamp, put.value);
            }
        }
        RawSeries::new(metric, tags.clone(), points.into_iter().collect())
    }

    /// Every series in the store as `(metric, tags)`, sorted.
    pub fn keys(&self) -> Result<Vec<(String, BTreeMap<String, String>)>> {
        let mut keys = Vec::new();
        for path in self.files()? {
            if let Some(first) = read_lines(&path)?.into_iter().next() {
                keys.push((first.metric, first.tags.into_iter().collect()));
            }
        }
        keys.sort();
        keys.dedup();
        Ok(keys)
    }

    fn files(&self) -> Result<Vec<PathBuf>> {
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&self.root, e))?.path();
            if path.extension().is_some_and(|e| e == "put") {
                files.push(path);
            }
        }
        files.sort();
        Ok(files)
    }
}

/// Committed lines of a series file. A final line without its newline is an
/// unfinished write and is ignored.
fn read_lines(path: &Path) -> Result<Vec<PutLine>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let committed = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => return Ok(Vec::new()),
    };
    committed
        .split('\n')
        .enumerate()
        .map(|(i, line)| {
            parse_put(line).map_err(|source| Error::CorruptStore {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

fn escape_file_name(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for b in key.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REFERENCE_LINE: &str = "put proc.net.tcp.connections 1417642359 2 remote_host=50.116.234.5 direction=in state=established domain=sjc2 host=app454";

    fn tags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn example() -> PutLine {
        PutLine::new(
            "proc.net.tcp.connections",
            Timestamp(1_417_642_359),
            2.0,
            tags(&[
                ("remote_host", "50.116.234.5"),
                ("direction", "in"),
                ("state", "established"),
                ("domain", "sjc2"),
                ("host", "app454"),
            ]),
        )
    }

    #[test]
    fn encodes_reference_line() {
        assert_eq!(encode_put(&example()).unwrap(), REFERENCE_LINE);
        assert_eq!(parse_put(REFERENCE_LINE).unwrap(), example());
        let minimal = PutLine::new("m", Timestamp(0), 1.5, []);
        assert_eq!(encode_put(&minimal).unwrap(), "put m 0 1.5");
        assert_eq!(parse_put("put m 0 1.5").unwrap(), minimal);
        assert_eq!(
            encode_put(&PutLine::new("m", Timestamp(1), -0.25, [])).unwrap(),
            "put m 1 -0.25"
        );
        assert_eq!(
            encode_put(&PutLine::new("m", Timestamp(1), 1e21, [])).unwrap(),
            "put m 1 1000000000000000000000"
        );
    }

    #[test]
    fn encode_rejects_bad_fields() {
        let mut p = example();
        p.metric = "has space".into();
        assert!(matches!(encode_put(&p), Err(PutError::BadMetric(_))));
        let mut p = example();
        p.tags.push(("host".into(), "x".into()));
        assert_eq!(encode_put(&p), Err(PutError::DuplicateTag("host".into())));
        let mut p = example();
        p.tags[0].1 = "a=b".into();
        assert!(matches!(encode_put(&p), Err(PutError::BadTag(_))));
        let mut p = example();
        p.value = f64::NAN;
        assert!(matches!(encode_put(&p), Err(PutError::BadValue(_))));
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert_eq!(
            parse_put("get m 0 1"),
            Err(PutError::WrongOpcode("get".into()))
        );
        assert_eq!(parse_put(""), Err(PutError::MissingField("opcode")));
        assert_eq!(parse_put("put m 0"), Err(PutError::MissingField("value")));
        assert_eq!(parse_put("put m"), Err(PutError::MissingField("timestamp")));
        assert_eq!(parse_put("put m 0 x"), Err(PutError::BadValue("x".into())));
        assert_eq!(
            parse_put("put m 0 inf"),
            Err(PutError::BadValue("inf".into()))
        );
        assert_eq!(
            parse_put("put m -1 1"),
            Err(PutError::BadTimestamp("-1".into()))
        );
        assert_eq!(
            parse_put("put m +1 1"),
            Err(PutError::BadTimestamp("+1".into()))
        );
        assert_eq!(
            parse_put("put m 1.5 1"),
            Err(PutError::BadTimestamp("1.5".into()))
        );
        assert_eq!(parse_put("put  m 0 1"), Err(PutError::EmptyField));
        assert_eq!(parse_put("put m 0 1 "), Err(PutError::EmptyField));
        assert_eq!(
            parse_put("put m 0 1 a=1 a=2"),
            Err(PutError::DuplicateTag("a".into()))
        );
        assert_eq!(parse_put("put m 0 1 a"), Err(PutError::BadTag("a".into())));
        assert_eq!(
            parse_put("put m 0 1 =x"),
            Err(PutError::BadTag("=x".into()))
        );
    }

    fn token() -> impl Strategy<Value = String> {
        "[A-Za-z0-9._/:-]{1,12}"
    }

    fn put_line() -> impl Strategy<Value = PutLine> {
        (
            token(),
            0u64..4_000_000_000,
            prop_oneof![
                (-1e6f64..1e6),
                (-1_000_000i64..1_000_000).prop_map(|v| v as f64),
                any::<f64>().prop_filter("finite", |v| v.is_finite()),
            ],
            prop::collection::btree_map(token(), token(), 0..6),
        )
            .prop_flat_map(|(metric, ts, value, tagmap)| {
                let pairs: Vec<(String, String)> = tagmap.into_iter().collect();
                Just(pairs).prop_shuffle().prop_map(move |tags| PutLine {
                    metric: metric.clone(),
                    timestamp: Timestamp(ts),
                    value,
                    tags,
                })
            })
    }

    proptest! {
        #[test]
        fn put_round_trip(p in put_line()) {
            let line = encode_put(&p).unwrap();
            let back = parse_put(&line).unwrap();
            prop_assert_eq!(back.value.to_bits(), p.value.to_bits());
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(encode_put(&back).unwrap(), line);
        }
    }

    #[test]
    fn store_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let t = tags(&[("host", "a"), ("dc", "x")]);
        store
            .append(&PutLine::new("m", Timestamp(10), 1.0, t.clone()))
            .unwrap();
        store
            .append(&PutLine::new("m", Timestamp(10), 2.0, t.clone()))
            .unwrap();
        // same series written with tags in another order
        let swapped: Vec<_> = t.iter().rev().cloned().collect();
        store
            .append(&PutLine::new("m", Timestamp(5), 7.0, swapped))
            .unwrap();
        let key: BTreeMap<String, String> = t.into_iter().collect();
        let series = store.read("m", &key, None).unwrap();
        assert_eq!(
            series.points,
            vec![(Timestamp(5), 7.0), (Timestamp(10), 2.0)]
        );

        let other = BTreeMap::from([("host".to_string(), "b".to_string())]);
        assert!(store.read("m", &other, None).unwrap().points.is_empty());
        assert_eq!(store.keys().unwrap(), vec![("m".to_string(), key)]);
    }

    #[test]
    fn store_hour_range_and_partial_tail() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let lines: Vec<PutLine> = (0..5)
            .map(|h| PutLine::new("m", Timestamp(h * 3600 + 59), h as f64, []))
            .collect();
        store.append_all(&lines).unwrap();
        let none = BTreeMap::new();
        let mid = store
            .read("m", &none, Some(Timestamp(3600)..Timestamp(3 * 3600)))
            .unwrap();
        assert_eq!(
            mid.points,
            vec![(Timestamp(3659), 1.0), (Timestamp(7259), 2.0)]
        );

        // an unterminated write is not visible yet
        let path = store.path_for("m", "");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "put m 99999 1").unwrap();
        assert_eq!(store.read("m", &none, None).unwrap().points.len(), 5);
        writeln!(f).unwrap();
        assert_eq!(store.read("m", &none, None).unwrap().points.len(), 6);

        fs::write(&path, "put m 1 1\ngarbage\n").unwrap();
        let err = store.read("m", &none, None).unwrap_err();
        assert!(matches!(err, Error::CorruptStore { line: 2, .. }), "{err}");
    }

    #[test]
    fn file_names_are_escaped() {
        assert_eq!(escape_file_name("a.b{x=1,y=/}"), "a.b%7Bx%3D1%2Cy%3D%2F%7D");
    }
}
