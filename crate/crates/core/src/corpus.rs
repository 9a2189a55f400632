//! Ingestion and validation of per-file metric observations.
//!
//! The modeled response is `lcbo = ln(cbo + 1)`: coupling counts of zero are
//! legal, and the +1 keeps them in the domain while mapping 0 to 0. Project
//! indices are assigned in first-appearance order so a fixed input always
//! produces the same index layout.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Expected CSV header, in order.
pub const CSV_HEADER: [&str; 4] = ["project", "file", "role", "cbo"];

/// Role token that maps to the x = 1 indicator.
pub const TARGET_ROLE: &str = "controller";

/// One file's observation: owning project, role indicator, raw coupling count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricRecord {
    pub project: String,
    pub file: String,
    /// True when the file plays the target architectural role.
    pub controller: bool,
    pub cbo: u32,
}

impl MetricRecord {
    pub fn new(project: impl Into<String>, file: impl Into<String>, controller: bool, cbo: u32) -> Result<Self> {
        let project = project.into();
        let file = file.into();
        if project.is_empty() {
            return Err(Error::InvalidRecord("empty project id".into()));
        }
        if file.is_empty() {
            return Err(Error::InvalidRecord("empty file id".into()));
        }
        Ok(Self { project, file, controller, cbo })
    }

    /// The binary predictor x ∈ {0, 1}.
    pub fn x(&self) -> f64 {
        if self.controller {
            1.0
        } else {
            0.0
        }
    }

    /// The modeled response ln(cbo + 1).
    pub fn lcbo(&self) -> f64 {
        (f64::from(self.cbo) + 1.0).ln()
    }
}

/// Per-project counts and response mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectStats {
    pub project: String,
    pub n_files: usize,
    pub n_controllers: usize,
    pub mean_lcbo: f64,
}

/// A validated, immutable collection of records grouped by project.
#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<MetricRecord>,
    lcbo: Vec<f64>,
    projects: Vec<String>,
    project_index: HashMap<String, usize>,
    project_of: Vec<usize>,
}

impl Corpus {
    /// Builds a corpus from records, indexing projects in first-appearance order.
    pub fn from_records(records: Vec<MetricRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidRecord("corpus has no records".into()));
        }
        let mut projects: Vec<String> = Vec::new();
        let mut project_index: HashMap<String, usize> = HashMap::new();
        let mut project_of = Vec::with_capacity(records.len());
        let mut lcbo = Vec::with_capacity(records.len());
        for r in &records {
            if r.project.is_empty() || r.file.is_empty() {
                return Err(Error::InvalidRecord("empty project or file id".into()));
            }
            let j = *project_index.entry(r.project.clone()).or_insert_with(|| {
                projects.push(r.project.clone());
                projects.len() - 1
            });
            project_of.push(j);
            lcbo.push(r.lcbo());
        }
        Ok(Self { records, lcbo, projects, project_index, project_of })
    }

    /// Reads a `project,file,role,cbo` CSV. Any role token other than
    /// `controller` (case-insensitive) maps to x = 0.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::read_csv(file, path)
    }

    /// Reads corpus CSV from any source; `path` is used in error messages.
    pub fn read_csv(reader: impl std::io::Read, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers = rdr
            .headers()
            .map_err(|e| malformed(&path, 1, format!("cannot read header: {e}")))?
            .clone();
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(malformed(&path, 1, format!("expected header `project,file,role,cbo`, got `{}`", got.join(","))));
        }

        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(&path, line, format!("{e}"))
            })?;
            let line = row.position().map_or(0, |p| p.line());
            if row.len() != 4 {
                return Err(malformed(&path, line, format!("expected 4 columns, got {}", row.len())));
            }
            let project = row[0].to_string();
            let file = row[1].to_string();
            let controller = row[2].eq_ignore_ascii_case(TARGET_ROLE);
            let cbo: u32 = row[3]
                .parse()
                .map_err(|_| malformed(&path, line, format!("cbo must be a non-negative integer, got `{}`", &row[3])))?;
            let record = MetricRecord::new(project, file, controller, cbo)
                .map_err(|e| malformed(&path, line, e.to_string()))?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(malformed(&path, 1, "no data rows".into()));
        }
        Self::from_records(records)
    }

    /// Writes the corpus back out in the input CSV format.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", CSV_HEADER.join(","))?;
        for r in &self.records {
            let role = if r.controller { TARGET_ROLE } else { "" };
            writeln!(w, "{},{},{},{}", r.project, r.file, role, r.cbo)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|source| Error::Io { path: path.to_owned(), source })
    }

    /// Keeps only projects containing at least one target-role record and
    /// re-indexes the survivors contiguously.
    pub fn filter_projects_with_role(&self) -> Result<Self> {
        let mut has_role = vec![false; self.projects.len()];
        for r in &self.records {
            if r.controller {
                has_role[self.project_index[&r.project]] = true;
            }
        }
        let kept: Vec<MetricRecord> = self
            .records
            .iter()
            .filter(|r| has_role[self.project_index[&r.project]])
            .cloned()
            .collect();
        if kept.is_empty() {
            return Err(Error::NoProjectsWithRole);
        }
        Self::from_records(kept)
    }

    /// Per-project file counts, role counts, and mean response.
    pub fn project_stats(&self) -> Vec<ProjectStats> {
        let mut stats: Vec<ProjectStats> = self
            .projects
            .iter()
            .map(|p| ProjectStats { project: p.clone(), n_files: 0, n_controllers: 0, mean_lcbo: 0.0 })
            .collect();
        for (r, &j) in self.records.iter().zip(&self.project_of) {
            stats[j].n_files += 1;
            if r.controller {
                stats[j].n_controllers += 1;
            }
            stats[j].mean_lcbo += r.lcbo();
        }
        for s in &mut stats {
            s.mean_lcbo /= s.n_files as f64;
        }
        stats
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    /// Log-transformed response, aligned with `records()`.
    pub fn lcbo(&self) -> &[f64] {
        &self.lcbo
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_projects(&self) -> usize {
        self.projects.len()
    }

    /// Project ids in first-appearance order.
    pub fn projects(&self) -> &[String] {
        &self.projects
    }

    pub fn project_index(&self, project: &str) -> Option<usize> {
        self.project_index.get(project).copied()
    }

    /// Contiguous project index per record, aligned with `records()`.
    pub fn project_of(&self) -> &[usize] {
        &self.project_of
    }
}

fn malformed(path: &Path, line: u64, message: String) -> Error {
    Error::MalformedRow { path: path.to_owned(), line, message }
}
