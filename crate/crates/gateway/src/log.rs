use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use biasscreen_core::corpus::Label;
use biasscreen_core::screener::ScreenResult;
use serde::{Deserialize, Serialize};

/// One line of the request log. Holds a digest of the request, never its text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub timestamp_ms: u64,
    pub request_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client: Option<String>,
    pub status: u16,
    pub findings: usize,
    pub per_class: BTreeMap<String, usize>,
    pub latency_ms: f64,
}

impl RequestLogEntry {
    pub fn new(request_digest: String, client: Option<String>, status: u16, result: Option<&ScreenResult>, latency_ms: f64) -> Self {
        let mut per_class = BTreeMap::new();
        if let Some(r) = result {
            for f in &r.findings {
                *per_class.entry(f.label.as_str().to_string()).or_insert(0) += 1;
            }
        }
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        Self {
            timestamp_ms,
            request_digest,
            client,
            status,
            findings: result.map_or(0, |r| r.findings.len()),
            per_class,
            latency_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

/// Aggregates over every entry in the log, including earlier runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub ok: usize,
    pub client_errors: usize,
    pub server_errors: usize,
    pub findings: usize,
    /// Findings per flagged class.
    pub per_class: BTreeMap<String, usize>,
    /// Over successful requests; zeros when there are none.
    pub latency_ms: Latency,
}

#[derive(Debug, Default)]
struct Totals {
    total: usize,
    ok: usize,
    client_errors: usize,
    server_errors: usize,
    findings: usize,
    per_class: BTreeMap<String, usize>,
    latencies: Vec<f64>,
}

impl Totals {
    fn add(&mut self, e: &RequestLogEntry) {
        self.total += 1;
        match e.status {
            200..=299 => {
                self.ok += 1;
                self.latencies.push(e.latency_ms);
            }
            400..=499 => self.client_errors += 1,
            _ => self.server_errors += 1,
        }
        self.findings += e.findings;
        for (k, v) in &e.per_class {
            *self.per_class.entry(k.clone()).or_insert(0) += v;
        }
    }

    fn stats(&self) -> Stats {
        let mut per_class: BTreeMap<String, usize> =
            Label::ALL.iter().filter(|l| **l != Label::Unbiased).map(|l| (l.as_str().to_string(), 0)).collect();
        for (k, v) in &self.per_class {
            *per_class.entry(k.clone()).or_insert(0) += v;
        }
        let mut lat = self.latencies.clone();
        lat.sort_by(f64::total_cmp);
        Stats {
            total: self.total,
            ok: self.ok,
            client_errors: self.client_errors,
            server_errors: self.server_errors,
            findings: self.findings,
            per_class,
            latency_ms: Latency {
                p50: nearest_rank(&lat, 0.50),
                p90: nearest_rank(&lat, 0.90),
                p99: nearest_rank(&lat, 0.99),
                max: lat.last().copied().unwrap_or(0.0),
            },
        }
    }
}

/// Nearest-rank percentile of sorted values; 0 for an empty slice.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Append-only JSONL log. Every append is flushed before it returns.
pub struct RequestLog {
    path: PathBuf,
    inner: Mutex<(File, Totals)>,
}

impl RequestLog {
    /// Opens or creates the log, replaying existing entries into the totals.
    /// Unparseable lines are skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut totals = Totals::default();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<RequestLogEntry>(&line) {
                    Ok(e) => totals.add(&e),
                    Err(e) => log::warn!("{}:{}: skipping log line: {e}", path.display(), i + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, inner: Mutex::new((file, totals)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &RequestLogEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).expect("log entry serializes");
        line.push('\n');
        let mut guard = self.inner.lock().expect("request log lock");
        let (file, totals) = &mut *guard;
        file.write_all(line.as_bytes())?;
        file.flush()?;
        file.sync_data()?;
        totals.add(entry);
        Ok(())
    }

    pub fn stats(&self) -> Stats {
        self.inner.lock().expect("request log lock").1.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(status: u16, latency: f64, classes: &[(&str, usize)]) -> RequestLogEntry {
        RequestLogEntry {
            timestamp_ms: 1,
            request_digest: "d".into(),
            client: None,
            status,
            findings: classes.iter().map(|c| c.1).sum(),
            per_class: classes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            latency_ms: latency,
        }
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.5), 5.0);
        assert_eq!(nearest_rank(&v, 0.9), 9.0);
        assert_eq!(nearest_rank(&v, 0.99), 10.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&[], 0.5), 0.0);
    }

    #[test]
    fn totals_survive_reopening() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/requests.jsonl");
        let log = RequestLog::open(&path).unwrap();
        let empty = log.stats();
        assert_eq!(empty.total, 0);
        assert_eq!(empty.per_class.len(), 4);
        log.append(&entry(200, 3.0, &[("AGE", 1)])).unwrap();
        log.append(&entry(413, 0.1, &[])).unwrap();
        log.append(&entry(200, 5.0, &[("AGE", 2), ("RACE", 1)])).unwrap();
        let before = log.stats();
        drop(log);
        std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"not json\n").unwrap();
        let after = RequestLog::open(&path).unwrap().stats();
        assert_eq!(before, after);
        assert_eq!((after.total, after.ok, after.client_errors, after.findings), (3, 2, 1, 4));
        assert_eq!(after.per_class["AGE"], 3);
        assert_eq!(after.latency_ms.max, 5.0);
    }
}
