//! Run traces and their JSON-lines persistence.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doe::Dataset;
use crate::error::{Error, Result};
use crate::problem::EvaluationRecord;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "message")]
pub enum RunStatus {
    Completed,
    /// Stopped at an iteration boundary by the wall-clock cap.
    Truncated,
    Aborted(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackKind {
    /// No start ended inside the approximated feasible domain.
    NoFeasibleStart,
    /// The in-fill coincided with an existing point and was replaced.
    DuplicateGuard,
    /// A surrogate could not be trained; the in-fill is random.
    FitFailure,
}

/// One enrichment step (SEGO) or one generation (Evol).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Last point added in this step.
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    pub fit_time_s: f64,
    pub solve_time_s: f64,
    pub eval_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<FallbackKind>,
    /// `eval_index` of the first record produced by this step.
    pub first_eval: usize,
    pub n_evals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_experts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub solver: String,
    pub seed: u64,
    pub problem: String,
    /// Records that came from the initial design, warm start included.
    pub n_initial: usize,
    pub dataset: Dataset,
    pub log: Vec<IterationLog>,
    pub config: serde_json::Value,
    pub status: RunStatus,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Header {
        solver: String,
        seed: u64,
        problem: String,
        n_initial: usize,
        config: serde_json::Value,
    },
    Iteration(IterationLog),
    Footer {
        status: RunStatus,
        n_records: usize,
    },
}

impl RunTrace {
    pub fn records(&self) -> &[EvaluationRecord] {
        &self.dataset.records
    }

    /// Initial-design block shared by every solver of one seed.
    pub fn initial_records(&self) -> &[EvaluationRecord] {
        &self.dataset.records[..self.n_initial.min(self.dataset.len())]
    }

    /// Cumulative time at which each record became available: evaluation
    /// times of the initial design, then per step the fit and in-fill
    /// solve times followed by that step's evaluations. The records of a
    /// multi-point step run concurrently and share the step's end time.
    pub fn cumulative_times(&self) -> Vec<f64> {
        let records = self.records();
        let mut out = Vec::with_capacity(records.len());
        let mut t = 0.0;
        let mut next = 0;
        for r in &records[..self.n_initial.min(records.len())] {
            t += r.wall_time_s;
            out.push(t);
            next += 1;
        }
        for entry in &self.log {
            t += entry.fit_time_s + entry.solve_time_s;
            let end = (entry.first_eval + entry.n_evals).min(records.len());
            if next < end {
                t += records[next..end].iter().map(|r| r.wall_time_s).fold(0.0, f64::max);
                out.extend(std::iter::repeat_n(t, end - next));
                next = end;
            }
        }
        while next < records.len() {
            t += records[next].wall_time_s;
            out.push(t);
            next += 1;
        }
        out
    }

    /// Writes `history.jsonl` and `trace.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_history(&self.dataset.records, &dir.join(HISTORY_FILE))?;
        let mut w = BufWriter::new(File::create(dir.join(TRACE_FILE))?);
        let header = TraceLine::Header {
            solver: self.solver.clone(),
            seed: self.seed,
            problem: self.problem.clone(),
            n_initial: self.n_initial,
            config: self.config.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for entry in &self.log {
            writeln!(w, "{}", serde_json::to_string(&TraceLine::Iteration(entry.clone()))?)?;
        }
        let footer = TraceLine::Footer {
            status: self.status.clone(),
            n_records: self.dataset.len(),
        };
        writeln!(w, "{}", serde_json::to_string(&footer)?)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a trace directory. A missing `trace.jsonl` is accepted for
    /// imported histories: the solver and seed then come from the path.
    pub fn read(dir: &Path) -> Result<Self> {
        let records = read_history(&dir.join(HISTORY_FILE))?;
        let trace_path = dir.join(TRACE_FILE);
        let mut solver = dir
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut seed = dir
            .file_name()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let mut problem = String::new();
        let mut n_initial = 0;
        let mut config = serde_json::Value::Null;
        let mut log = Vec::new();
        let mut status = RunStatus::Completed;
        if trace_path.exists() {
            for (i, line) in BufReader::new(File::open(&trace_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: TraceLine = serde_json::from_str(&line)
                    .map_err(|e| Error::Report(format!("{}:{}: {e}", trace_path.display(), i + 1)))?;
                match parsed {
                    TraceLine::Header {
                        solver: s,
                        seed: sd,
                        problem: p,
                        n_initial: k,
                        config: c,
                    } => {
                        solver = s;
                        seed = sd;
                        problem = p;
                        n_initial = k;
                        config = c;
                    }
                    TraceLine::Iteration(e) => log.push(e),
                    TraceLine::Footer { status: s, .. } => status = s,
                }
            }
        }
        let mut dataset = Dataset::new(problem.clone(), seed);
        for r in records {
            if r.eval_index != dataset.len() {
                return Err(Error::Report(format!(
                    "{}: eval_index {} breaks the contiguous sequence",
                    dir.display(),
                    r.eval_index
                )));
            }
            dataset.push(r);
        }
        Ok(Self {
            solver,
            seed,
            problem,
            n_initial,
            dataset,
            log,
            config,
            status,
        })
    }
}

pub fn write_history(records: &[EvaluationRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Report(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}
