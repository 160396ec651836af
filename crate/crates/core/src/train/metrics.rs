use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// One logged iteration. `test_acc` is present on evaluation events only and
/// `wall_ms` only when wall-clock logging is switched on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss_cls: f64,
    pub loss_ts: f64,
    pub loss_total: f64,
    pub train_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

/// Append-only log with strictly increasing iterations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    records: Vec<MetricRecord>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<(), TrainError> {
        if let Some(last) = self.records.last() {
            if record.iter <= last.iter {
                return Err(TrainError::Config(format!(
                    "metric iteration {} does not follow {}",
                    record.iter, last.iter
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn last_test_acc(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_acc)
    }

    /// Mean `loss_ts` over records whose iteration lies in `lo..=hi`.
    pub fn mean_loss_ts(&self, lo: usize, hi: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| (lo..=hi).contains(&r.iter))
            .map(|r| r.loss_ts)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrainError> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec = serde_json::from_str(line).map_err(|e| TrainError::Config(format!("metrics line {}: {e}", i + 1)))?;
            m.push(rec)?;
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| TrainError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: usize, ts: f64) -> MetricRecord {
        MetricRecord {
            iter,
            lr: 0.1,
            loss_cls: 1.0,
            loss_ts: ts,
            loss_total: 1.0 + ts,
            train_acc: 0.5,
            test_acc: None,
            wall_ms: None,
        }
    }

    #[test]
    fn iterations_must_increase() {
        let mut m = Metrics::new();
        m.push(rec(1, 0.0)).unwrap();
        assert!(m.push(rec(1, 0.0)).is_err());
        m.push(rec(5, 0.0)).unwrap();
        assert_eq!(m.records().len(), 2);
    }

    #[test]
    fn jsonl_round_trip_omits_absent_fields() {
        let mut m = Metrics::new();
        m.push(rec(1, 0.25)).unwrap();
        m.push(MetricRecord {
            test_acc: Some(0.75),
            ..rec(2, 0.125)
        })
        .unwrap();
        let text = m.to_jsonl();
        assert!(!text.lines().next().unwrap().contains("test_acc"));
        assert!(!text.contains("wall_ms"));
        assert_eq!(Metrics::from_jsonl(&text).unwrap(), m);
        assert_eq!(m.last_test_acc(), Some(0.75));
        assert_eq!(m.mean_loss_ts(1, 2), Some(0.1875));
        assert_eq!(m.mean_loss_ts(3, 9), None);
    }
}
