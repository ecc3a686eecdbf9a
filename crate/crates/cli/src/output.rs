use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliResult;

/// Provenance written at the top of every table.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub canonical_config: String,
}

impl Provenance {
    fn header(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tool = \"taskcode {}\"", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# command = \"{}\"", self.command);
        let _ = writeln!(out, "# config_sha256 = \"{}\"", self.config_sha256);
        let _ = writeln!(out, "# seed = {}", self.seed);
        out.push_str("# --- config ---\n");
        for line in self.canonical_config.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("# --- end config ---\n");
        out
    }
}

/// Twelve significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.11e}")
}

/// Collects output files in creation order.
pub struct OutputDir {
    root: PathBuf,
    provenance: Provenance,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path, provenance: Provenance) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_owned(), provenance, files: Vec::new() })
    }

    pub fn table(&mut self, name: &str, columns: &[String], rows: &[Vec<String>]) -> CliResult<()> {
        let mut out = self.provenance.header();
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), columns.len());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        self.raw(name, &out)
    }

    pub fn raw(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::write(self.root.join(name), contents)?;
        self.files.push(name.to_owned());
        Ok(())
    }

    /// Writes `manifest.toml` listing every file, itself included.
    pub fn finish(mut self, times: Option<(u64, u64)>) -> CliResult<Vec<String>> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool_version: &'a str,
            command: &'a str,
            config_sha256: &'a str,
            seed: u64,
            #[serde(skip_serializing_if = "Option::is_none")]
            started_unix: Option<u64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            finished_unix: Option<u64>,
            files: &'a [String],
        }
        self.files.push("manifest.toml".to_owned());
        let p = &self.provenance;
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: p.command,
            config_sha256: &p.config_sha256,
            seed: p.seed,
            started_unix: times.map(|t| t.0),
            finished_unix: times.map(|t| t.1),
            files: &self.files,
        };
        let mut text = toml::to_string(&manifest).expect("manifest serialises");
        text.push_str("\n[config]\n");
        text.push_str(&indent_config(&p.canonical_config));
        fs::write(self.root.join("manifest.toml"), text)?;
        Ok(self.files)
    }
}

/// Re-roots the config's tables under `[config]`.
fn indent_config(canonical: &str) -> String {
    let mut out = String::new();
    for line in canonical.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("[[") {
            let _ = writeln!(out, "[[config.{rest}");
        } else if let Some(rest) = trimmed.strip_prefix('[') {
            let _ = writeln!(out, "[config.{rest}");
        } else {
            let _ = writeln!(out, "{line}");
        }
    }
    out
}
