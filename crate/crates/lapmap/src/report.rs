//! Structured experiment records: configuration, metrics, and the full
//! iteration history of a fit, serializable as versioned line-oriented
//! text.
//!
//! The text form has two parts separated by `---`: a *header* holding
//! wall-clock facts (timestamp, elapsed seconds) and a *payload* holding
//! everything reproducible. Runs with equal config and seed produce
//! byte-identical payloads; the header is explicitly outside that contract.

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_objective: f64,
    /// Present on evaluation iterations only.
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub command: String,
    pub seed: u64,
    /// Header field; excluded from the deterministic payload.
    pub timestamp_unix: u64,
    /// Header field; excluded from the deterministic payload.
    pub wall_seconds: f64,
    /// Ordered `key = value` configuration echoes.
    pub config: Vec<(String, String)>,
    /// Ordered named results.
    pub metrics: Vec<(String, f64)>,
    pub iterations: Vec<IterationRecord>,
}

impl ExperimentReport {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ExperimentReport {
            command: command.into(),
            seed,
            timestamp_unix,
            wall_seconds: 0.0,
            config: Vec::new(),
            metrics: Vec::new(),
            iterations: Vec::new(),
        }
    }

    pub fn set_config(&mut self, key: impl Into<String>, value: impl std::fmt::Display) {
        self.config.push((key.into(), value.to_string()));
    }

    pub fn set_metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), value));
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// The deterministic part: everything below the header separator.
    /// Floats are written in shortest round-trip form, so equal runs give
    /// equal bytes and parsing back loses nothing.
    pub fn payload_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command {}\n", self.command));
        out.push_str(&format!("seed {}\n", self.seed));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k} = {v}\n"));
        }
        for (k, v) in &self.metrics {
            out.push_str(&format!("metric.{k} = {v:?}\n"));
        }
        out.push_str(&format!("iterations {}\n", self.iterations.len()));
        out.push_str("iteration,train_objective,val_rmse\n");
        for rec in &self.iterations {
            match rec.val_rmse {
                Some(v) => out.push_str(&format!(
                    "{},{:?},{:?}\n",
                    rec.iteration, rec.train_objective, v
                )),
                None => out.push_str(&format!("{},{:?},\n", rec.iteration, rec.train_objective)),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "report_version {REPORT_VERSION}\ntimestamp_unix {}\nwall_seconds {:?}\n---\n{}",
            self.timestamp_unix,
            self.wall_seconds,
            self.payload_string()
        )
    }

    /// Parses the output of [`to_text`](Self::to_text). `origin` labels
    /// errors (a path or description).
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.into(),
            line: line + 1,
            message,
        };

        let (ln, first) = lines
            .next()
            .ok_or_else(|| Error::EmptyFile { path: origin.into() })?;
        let version = first
            .strip_prefix("report_version ")
            .ok_or_else(|| parse_err(ln, "expected `report_version <n>`".into()))?;
        if version.trim() != REPORT_VERSION.to_string() {
            return Err(Error::VersionMismatch {
                found: version.trim().to_string(),
                supported: REPORT_VERSION,
            });
        }

        let mut report = ExperimentReport {
            command: String::new(),
            seed: 0,
            timestamp_unix: 0,
            wall_seconds: 0.0,
            config: Vec::new(),
            metrics: Vec::new(),
            iterations: Vec::new(),
        };

        // Header until the separator.
        for (ln, line) in lines.by_ref() {
            if line == "---" {
                break;
            }
            if let Some(v) = line.strip_prefix("timestamp_unix ") {
                report.timestamp_unix = v
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad timestamp: {e}")))?;
            } else if let Some(v) = line.strip_prefix("wall_seconds ") {
                report.wall_seconds = v
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad wall_seconds: {e}")))?;
            } else {
                return Err(parse_err(ln, format!("unknown header line `{line}`")));
            }
        }

        // Payload.
        let mut expected_iterations: Option<usize> = None;
        let mut in_table = false;
        for (ln, line) in lines {
            if in_table {
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.splitn(3, ',');
                let iteration = parts
                    .next()
                    .unwrap()
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad iteration: {e}")))?;
                let train_objective = parts
                    .next()
                    .ok_or_else(|| parse_err(ln, "missing train_objective".into()))?
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad train_objective: {e}")))?;
                let val_field = parts
                    .next()
                    .ok_or_else(|| parse_err(ln, "missing val_rmse field".into()))?;
                let val_rmse = if val_field.is_empty() {
                    None
                } else {
                    Some(
                        val_field
                            .parse()
                            .map_err(|e| parse_err(ln, format!("bad val_rmse: {e}")))?,
                    )
                };
                report.iterations.push(IterationRecord {
                    iteration,
                    train_objective,
                    val_rmse,
                });
            } else if let Some(v) = line.strip_prefix("command ") {
                report.command = v.to_string();
            } else if let Some(v) = line.strip_prefix("seed ") {
                report.seed = v
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad seed: {e}")))?;
            } else if let Some(rest) = line.strip_prefix("config.") {
                let (k, v) = rest
                    .split_once(" = ")
                    .ok_or_else(|| parse_err(ln, "expected `config.<key> = <value>`".into()))?;
                report.config.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("metric.") {
                let (k, v) = rest
                    .split_once(" = ")
                    .ok_or_else(|| parse_err(ln, "expected `metric.<key> = <value>`".into()))?;
                let value = v
                    .parse()
                    .map_err(|e| parse_err(ln, format!("bad metric value: {e}")))?;
                report.metrics.push((k.to_string(), value));
            } else if let Some(v) = line.strip_prefix("iterations ") {
                expected_iterations = Some(
                    v.trim()
                        .parse()
                        .map_err(|e| parse_err(ln, format!("bad iteration count: {e}")))?,
                );
            } else if line == "iteration,train_objective,val_rmse" {
                in_table = true;
            } else if !line.is_empty() {
                return Err(parse_err(ln, format!("unknown payload line `{line}`")));
            }
        }
        if let Some(expected) = expected_iterations {
            if expected != report.iterations.len() {
                return Err(Error::Parse {
                    path: origin.into(),
                    line: 0,
                    message: format!(
                        "iteration table has {} rows, header declared {expected}",
                        report.iterations.len()
                    ),
                });
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_report(seed: u64) -> ExperimentReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = ExperimentReport::new("complete", seed);
        r.wall_seconds = rng.gen_range(0.0..100.0);
        r.set_config("k", 30);
        r.set_config("mu", 1e-5);
        r.set_config("optimizer", "adaptive");
        r.set_metric("test_rmse", rng.gen_range(0.0..1.0));
        r.set_metric("val_rmse", rng.gen::<f64>() * 1e-7);
        for i in 0..50 {
            r.iterations.push(IterationRecord {
                iteration: i * 100,
                train_objective: rng.gen_range(0.0..10.0),
                val_rmse: if i % 5 == 0 { Some(rng.gen()) } else { None },
            });
        }
        r
    }

    #[test]
    fn round_trip_is_lossless() {
        for seed in 0..20 {
            let r = sample_report(seed);
            let back = ExperimentReport::from_text(&r.to_text(), "mem").unwrap();
            assert_eq!(r, back);
        }
    }

    #[test]
    fn long_loss_curve_full_precision() {
        let mut r = ExperimentReport::new("fit", 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10_000 {
            r.iterations.push(IterationRecord {
                iteration: i,
                train_objective: rng.gen::<f64>() * 10f64.powi(rng.gen_range(-30..10)),
                val_rmse: None,
            });
        }
        let back = ExperimentReport::from_text(&r.to_text(), "mem").unwrap();
        for (a, b) in r.iterations.iter().zip(&back.iterations) {
            assert_eq!(a.train_objective.to_bits(), b.train_objective.to_bits());
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = sample_report(0).to_text().replace("report_version 1", "report_version 2");
        match ExperimentReport::from_text(&text, "mem") {
            Err(Error::VersionMismatch { found, .. }) => assert_eq!(found, "2"),
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn payload_excludes_header_facts() {
        let mut a = sample_report(3);
        let mut b = a.clone();
        a.timestamp_unix = 1;
        b.timestamp_unix = 999;
        a.wall_seconds = 0.5;
        b.wall_seconds = 77.0;
        assert_eq!(a.payload_string(), b.payload_string());
        assert_ne!(a.to_text(), b.to_text());
    }

    #[test]
    fn malformed_lines_carry_location() {
        let text = "report_version 1\ntimestamp_unix 0\nwall_seconds 0.0\n---\nnonsense here\n";
        match ExperimentReport::from_text(text, "some/file") {
            Err(Error::Parse { path, line, .. }) => {
                assert_eq!(path, std::path::PathBuf::from("some/file"));
                assert_eq!(line, 5);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn iteration_count_mismatch_detected() {
        let mut r = sample_report(4);
        r.iterations.truncate(10);
        let text = r.to_text().replace("iterations 10", "iterations 11");
        assert!(ExperimentReport::from_text(&text, "mem").is_err());
    }

    #[test]
    fn config_values_may_contain_equals() {
        let mut r = ExperimentReport::new("eval", 9);
        r.set_config("note", "a = b = c");
        let back = ExperimentReport::from_text(&r.to_text(), "mem").unwrap();
        assert_eq!(back.config_value("note"), Some("a = b = c"));
    }
}
