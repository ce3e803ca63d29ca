//! Benchmark suite definitions: a named list of model instances with
//! controller sizes, restart counts, and reference values to compare against.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use crate::output::csv_escape;

#[derive(Debug, Deserialize)]
struct SuiteFile {
    name: String,
    entries: Vec<EntryFile>,
}

#[derive(Debug, Deserialize)]
struct EntryFile {
    problem: String,
    /// Model path, relative to the suite file.
    model: String,
    /// Controller size pairs to run, e.g. `[[1,1],[2,2]]`.
    sizes: Vec<[usize; 2]>,
    restarts: usize,
    /// Reference value the problem is known to reach.
    reference: f64,
    /// Allowed shortfall: an entry passes when best >= reference - tolerance.
    tolerance: f64,
    /// Optional extra gate on the best run's final likelihood.
    #[serde(default)]
    min_likelihood: Option<f64>,
    /// Optional per-entry cap on EM iterations (default: solver default).
    #[serde(default)]
    max_iters: Option<usize>,
}

/// A validated suite with model paths resolved.
pub struct BenchSuite {
    pub name: String,
    pub entries: Vec<BenchEntry>,
}

pub struct BenchEntry {
    pub problem: String,
    pub model_path: PathBuf,
    pub sizes: Vec<(usize, usize)>,
    pub restarts: usize,
    pub reference: f64,
    pub tolerance: f64,
    pub min_likelihood: Option<f64>,
    pub max_iters: Option<usize>,
}

impl BenchSuite {
    pub fn load(path: &Path) -> anyhow::Result<BenchSuite> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading suite {}", path.display()))?;
        let file: SuiteFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing suite {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        for e in file.entries {
            if e.restarts == 0 {
                anyhow::bail!("suite entry {}: restarts must be >= 1", e.problem);
            }
            if e.sizes.is_empty() {
                anyhow::bail!("suite entry {}: needs at least one controller size", e.problem);
            }
            if e.sizes.iter().flatten().any(|&n| n == 0) {
                anyhow::bail!("suite entry {}: controller sizes must be >= 1", e.problem);
            }
            if !(e.tolerance >= 0.0) {
                anyhow::bail!("suite entry {}: tolerance must be >= 0", e.problem);
            }
            let model_path = base.join(&e.model);
            if !model_path.is_file() {
                anyhow::bail!(
                    "suite entry {}: model file {} does not exist",
                    e.problem,
                    model_path.display()
                );
            }
            entries.push(BenchEntry {
                problem: e.problem,
                model_path,
                sizes: e.sizes.iter().map(|&[a, b]| (a, b)).collect(),
                restarts: e.restarts,
                reference: e.reference,
                tolerance: e.tolerance,
                min_likelihood: e.min_likelihood,
                max_iters: e.max_iters,
            });
        }
        Ok(BenchSuite { name: file.name, entries })
    }
}

/// One CSV row per (entry, size, restart).
pub struct BenchRow {
    pub problem: String,
    pub n1: usize,
    pub n2: usize,
    pub restart: usize,
    pub iters: usize,
    pub likelihood: f64,
    pub value: f64,
    pub ms: f64,
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("problem,n1,n2,restart,iters,likelihood,value,ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_escape(&r.problem),
            r.n1,
            r.n2,
            r.restart,
            r.iters,
            r.likelihood,
            r.value,
            r.ms
        ));
    }
    out
}
