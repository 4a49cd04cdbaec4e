//! Trace files: CSV rows under a commented header that embeds the schema
//! version, the run identity, and the resolved configuration verbatim.

use super::ExperimentError;
use std::fmt::Write as _;
use std::path::Path;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config_digest: String,
    /// Canonical config text, one line per entry.
    pub config_lines: Vec<String>,
    pub diverged: bool,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceFile {
    pub fn new(
        experiment: &str,
        seed: u64,
        config_digest: &str,
        config_text: &str,
        columns: &[&str],
    ) -> Self {
        TraceFile {
            schema_version: TRACE_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            seed,
            config_digest: config_digest.to_string(),
            config_lines: config_text.lines().map(|l| l.to_string()).collect(),
            diverged: false,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Value of a config entry embedded in the header, if present.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        for line in &self.config_lines {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(v.trim());
                }
            }
        }
        None
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# schema_version={}", self.schema_version);
        let _ = writeln!(out, "# experiment={}", self.experiment);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# config_digest={}", self.config_digest);
        let _ = writeln!(out, "# diverged={}", self.diverged);
        for line in &self.config_lines {
            let _ = writeln!(out, "# config {line}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut schema_version = None;
        let mut experiment = None;
        let mut seed = None;
        let mut config_digest = None;
        let mut diverged = false;
        let mut config_lines = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let bad = |what: &str| {
                ExperimentError::Trace(format!("line {}: {what}", line_no + 1))
            };
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("config ") {
                    config_lines.push(v.to_string());
                } else if let Some((k, v)) = rest.split_once('=') {
                    match k {
                        "schema_version" => {
                            schema_version =
                                Some(v.parse().map_err(|_| bad("bad schema_version"))?)
                        }
                        "experiment" => experiment = Some(v.to_string()),
                        "seed" => seed = Some(v.parse().map_err(|_| bad("bad seed"))?),
                        "config_digest" => config_digest = Some(v.to_string()),
                        "diverged" => {
                            diverged = v.parse().map_err(|_| bad("bad diverged flag"))?
                        }
                        _ => return Err(bad("unknown header field")),
                    }
                } else {
                    return Err(bad("malformed header line"));
                }
            } else if line.trim().is_empty() {
                continue;
            } else if columns.is_none() {
                columns = Some(line.split(',').map(|c| c.trim().to_string()).collect());
            } else {
                let row: Result<Vec<f64>, _> =
                    line.split(',').map(|c| c.trim().parse::<f64>()).collect();
                rows.push(row.map_err(|_| bad("bad numeric cell"))?);
            }
        }
        let schema_version =
            schema_version.ok_or_else(|| ExperimentError::Trace("missing schema_version".into()))?;
        if schema_version != TRACE_SCHEMA_VERSION {
            return Err(ExperimentError::SchemaVersion {
                found: schema_version,
                expected: TRACE_SCHEMA_VERSION,
            });
        }
        let columns =
            columns.ok_or_else(|| ExperimentError::Trace("missing column header".into()))?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(ExperimentError::Trace(format!("row {} width mismatch", i + 1)));
            }
        }
        Ok(TraceFile {
            schema_version,
            experiment: experiment
                .ok_or_else(|| ExperimentError::Trace("missing experiment".into()))?,
            seed: seed.ok_or_else(|| ExperimentError::Trace("missing seed".into()))?,
            config_digest: config_digest
                .ok_or_else(|| ExperimentError::Trace("missing config_digest".into()))?,
            config_lines,
            diverged,
            columns,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

/// 17 significant digits, enough to reproduce any f64 exactly.
pub fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // Integral values (iteration counters, ranks) stay readable.
        format!("{}", v as i64)
    } else {
        format!("{v:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip_preserves_floats() {
        let mut t = TraceFile::new(
            "kernel-psd",
            9,
            "0123456789abcdef",
            "experiment = kernel-psd\ndim = 48\n",
            &["k", "srank", "value"],
        );
        t.push_row(vec![1.0, 48.0, 0.1 + 0.2]);
        t.push_row(vec![2.0, 47.0, std::f64::consts::PI]);
        let text = t.render();
        let back = TraceFile::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.rows[0][2], 0.1 + 0.2);
        assert_eq!(back.config_value("dim"), Some("48"));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let mut t = TraceFile::new("kernel-psd", 1, "x", "", &["k"]);
        t.schema_version = 2;
        let err = TraceFile::parse(&t.render()).unwrap_err();
        assert!(matches!(err, ExperimentError::SchemaVersion { .. }));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let text = "# schema_version=1\n# experiment=e\n# seed=1\n# config_digest=d\nk,v\n1,2,3\n";
        assert!(TraceFile::parse(text).is_err());
    }
}
