//! CSV and JSON writers. Every file starts with the run metadata.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use voltube_core::curves::tech_constants;
use voltube_core::model::HypothesisReport;
use voltube_core::ModelSpec;

use crate::config::LoadedConfig;
use crate::CliError;

/// Run metadata embedded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: &'static str,
    pub scheme: &'static str,
    pub n_paths: usize,
    pub n_steps: usize,
    pub c2: f64,
    /// Lipschitz envelope constant actually used.
    pub l: f64,
    pub l_overridden: bool,
    /// Hypothesis violations, present only for runs with `--allow-unverified`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis_violations: Option<ViolationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationSummary {
    pub regularity: usize,
    pub growth: usize,
    pub sampled_points: usize,
    pub first: Vec<String>,
}

impl ViolationSummary {
    pub fn from_report(report: &HypothesisReport) -> Self {
        let first = report
            .r_violations
            .iter()
            .map(|v| format!("{v:?}"))
            .chain(report.g_violations.iter().map(|v| format!("{v:?}")))
            .take(5)
            .collect();
        Self {
            regularity: report.r_violations.len(),
            growth: report.g_violations.len(),
            sampled_points: report.sampled_points,
            first,
        }
    }
}

impl Metadata {
    pub fn new(
        subcommand: &str,
        loaded: &LoadedConfig,
        spec: &ModelSpec,
        violations: Option<ViolationSummary>,
    ) -> Self {
        let run = loaded.config.run;
        Self {
            subcommand: subcommand.to_string(),
            config_sha256: loaded.sha256.clone(),
            seed: run.seed,
            version: env!("CARGO_PKG_VERSION"),
            scheme: run.scheme.name(),
            n_paths: run.n_paths,
            n_steps: run.n_steps,
            c2: spec.envelope.c2,
            l: tech_constants(spec).l,
            l_overridden: spec.envelope.l_override.is_some(),
            hypothesis_violations: violations,
        }
    }

    fn comment_lines(&self) -> String {
        let value = serde_json::to_value(self).expect("metadata serialises");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                let text = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                let _ = writeln!(out, "# {k}: {text}");
            }
        }
        out
    }
}

/// 17 significant digits, so values round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table: mandatory header, `\n` line endings, metadata as leading `#` lines.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, meta: &Metadata) -> String {
        let mut out = meta.comment_lines();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes outputs into one directory, honouring the configured formats.
pub struct Writer {
    dir: PathBuf,
    csv: bool,
    json: bool,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, formats: &[String]) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            csv: formats.iter().any(|f| f == "csv"),
            json: formats.iter().any(|f| f == "json"),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table, meta: &Metadata) -> Result<(), CliError> {
        if self.csv {
            self.write(name, &table.render(meta))?;
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T, meta: &Metadata) -> Result<(), CliError> {
        if self.json {
            #[derive(Serialize)]
            struct Doc<'a, T> {
                metadata: &'a Metadata,
                result: &'a T,
            }
            let mut text = serde_json::to_string_pretty(&Doc { metadata: meta, result })
                .map_err(|e| CliError::Io(e.to_string()))?;
            text.push('\n');
            self.write(name, &text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_opt(None), "");
    }
}
