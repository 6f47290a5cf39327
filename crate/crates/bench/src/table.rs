//! Numeric CSV tables with a `#`-prefixed provenance footer.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub commit: String,
}

impl Provenance {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Self { config_sha256, seed, commit: commit_id() }
    }
}

/// `git rev-parse HEAD` of the working directory, or `unknown`.
pub fn commit_id() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new(), provenance: Provenance::default() }
    }

    /// Appends a row; panics if it does not match the header width.
    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).with_context(|| format!("no column `{name}`"))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Rows whose `name` column equals `value` exactly.
    pub fn filter(&self, name: &str, value: f64) -> Result<Vec<&Vec<f64>>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().filter(|r| r[j] == value).collect())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf)?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        {
            let mut wr = csv::Writer::from_writer(&mut w);
            wr.write_record(&self.header)?;
            for row in &self.rows {
                if row.len() != self.header.len() {
                    bail!("table is not rectangular");
                }
                wr.write_record(row.iter().map(|v| format_value(*v)))?;
            }
            wr.flush()?;
        }
        let p = &self.provenance;
        writeln!(w, "# config_sha256={}", p.config_sha256)?;
        writeln!(w, "# seed={}", p.seed)?;
        writeln!(w, "# commit={}", p.commit)?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    /// Inverse of [`CsvTable::write_to`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut body = String::new();
        let mut provenance = Provenance::default();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.trim().split_once('=').unwrap_or((rest.trim(), ""));
                match k {
                    "config_sha256" => provenance.config_sha256 = v.into(),
                    "seed" => provenance.seed = v.parse().context("footer seed")?,
                    "commit" => provenance.commit = v.into(),
                    _ => {}
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut rd = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(j, s)| s.parse::<f64>().with_context(|| format!("row {}, column `{}`: `{s}` is not numeric", i + 1, header[j])))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows, provenance })
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        // Shortest representation that round-trips.
        format!("{v}")
    }
}
