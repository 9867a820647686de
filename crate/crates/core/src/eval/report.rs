//! Per-task aggregation and method comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stats::paired_ttest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Text,
    None,
    Point,
    TightBox,
    LooseBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task: String,
    pub sample_id: String,
    pub dsc: f64,
    pub prompt_mode: PromptMode,
}

impl EvalRecord {
    pub fn new(task: impl Into<String>, sample_id: impl Into<String>, dsc: f64, prompt_mode: PromptMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&dsc) {
            return Err(Error::InvalidData(format!("dsc {dsc} outside [0, 1]")));
        }
        Ok(Self {
            task: task.into(),
            sample_id: sample_id.into(),
            dsc,
            prompt_mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub name: String,
    pub per_task: BTreeMap<String, f64>,
    /// Unweighted mean of the per-task means.
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    /// `overall(a) - overall(b)`.
    pub delta: f64,
    pub t: f64,
    pub p: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub tasks: Vec<String>,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

fn sorted_mean(values: &mut [f64]) -> f64 {
    // Sorting makes the sum independent of record order.
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn summarize(name: &str, records: &[EvalRecord]) -> MethodSummary {
    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task.clone()).or_default().push(r.dsc);
    }
    let per_task: BTreeMap<String, f64> = by_task
        .into_iter()
        .map(|(t, mut v)| (t, sorted_mean(&mut v)))
        .collect();
    let overall = per_task.values().sum::<f64>() / per_task.len().max(1) as f64;
    MethodSummary {
        name: name.to_string(),
        per_task,
        overall,
    }
}

/// Aggregates each method's records per task, then compares every pair of
/// methods with a paired t-test over per-task means.
pub fn aggregate_report(methods: &[(String, Vec<EvalRecord>)]) -> Result<TaskReport> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to aggregate".into()));
    }
    let summaries: Vec<MethodSummary> = methods.iter().map(|(n, r)| summarize(n, r)).collect();
    let tasks: Vec<String> = summaries[0].per_task.keys().cloned().collect();
    if tasks.is_empty() {
        return Err(Error::InvalidArgument(format!("method {} has no records", summaries[0].name)));
    }
    for s in &summaries[1..] {
        if s.per_task.keys().ne(tasks.iter()) {
            return Err(Error::InvalidData(format!(
                "method {} covers a different task set than {}",
                s.name, summaries[0].name
            )));
        }
    }
    let mut comparisons = Vec::new();
    for (i, a) in summaries.iter().enumerate() {
        for b in &summaries[i + 1..] {
            let xa: Vec<f64> = a.per_task.values().copied().collect();
            let xb: Vec<f64> = b.per_task.values().copied().collect();
            let (t, p, degenerate) = if xa.len() >= 2 {
                let r = paired_ttest(&xa, &xb)?;
                (r.t, r.p, r.degenerate)
            } else {
                (f64::NAN, f64::NAN, false)
            };
            comparisons.push(Comparison {
                a: a.name.clone(),
                b: b.name.clone(),
                delta: a.overall - b.overall,
                t,
                p,
                degenerate,
            });
        }
    }
    Ok(TaskReport {
        tasks,
        methods: summaries,
        comparisons,
    })
}

#[derive(Debug, Deserialize, Serialize)]
struct TableRow {
    task: String,
    method: String,
    dsc: f64,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Csv(e),
    })
}

/// Reads a `task,method,dsc` CSV (DSC as a fraction) into per-method
/// records, keeping methods in first-appearance order.
pub fn read_table_csv(path: &Path) -> Result<Vec<(String, Vec<EvalRecord>)>> {
    let mut reader = open_reader(path)?;
    let mut methods: Vec<(String, Vec<EvalRecord>)> = Vec::new();
    for row in reader.deserialize() {
        let row: TableRow = row?;
        let rec = EvalRecord::new(row.task.clone(), row.task, row.dsc, PromptMode::Text)?;
        match methods.iter_mut().find(|(m, _)| *m == row.method) {
            Some((_, v)) => v.push(rec),
            None => methods.push((row.method, vec![rec])),
        }
    }
    Ok(methods)
}

/// Writes per-sample records of one or more methods in long format.
pub fn write_records_csv(path: &Path, methods: &[(String, Vec<EvalRecord>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task", "method", "sample_id", "prompt_mode", "dsc"])?;
    for (method, records) in methods {
        for r in records {
            let mode = serde_json::to_value(r.prompt_mode)?;
            w.write_record([
                r.task.as_str(),
                method.as_str(),
                r.sample_id.as_str(),
                mode.as_str().unwrap_or_default(),
                &r.dsc.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    task: String,
    method: String,
    sample_id: String,
    prompt_mode: PromptMode,
    dsc: f64,
}

/// Reads records written by [`write_records_csv`], grouped by method.
pub fn read_records_csv(path: &Path) -> Result<Vec<(String, Vec<EvalRecord>)>> {
    let mut reader = open_reader(path)?;
    let mut methods: Vec<(String, Vec<EvalRecord>)> = Vec::new();
    for row in reader.deserialize() {
        let row: RecordRow = row?;
        let rec = EvalRecord::new(row.task, row.sample_id, row.dsc, row.prompt_mode)?;
        match methods.iter_mut().find(|(m, _)| *m == row.method) {
            Some((_, v)) => v.push(rec),
            None => methods.push((row.method, vec![rec])),
        }
    }
    Ok(methods)
}

impl TaskReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn comparison(&self, a: &str, b: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.a == a && c.b == b)
    }

    /// Long-format CSV of per-task means plus an `Average` row per method.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["task", "method", "mean_dsc"])?;
        for task in &self.tasks {
            for m in &self.methods {
                w.write_record([task.as_str(), m.name.as_str(), &format!("{:.6}", m.per_task[task])])?;
            }
        }
        for m in &self.methods {
            w.write_record(["Average", m.name.as_str(), &format!("{:.6}", m.overall)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Plain-text table in percent, tasks as rows and methods as columns.
    pub fn to_text(&self) -> String {
        let task_w = self.tasks.iter().map(|t| t.len()).chain([7]).max().unwrap_or(7);
        let col_w: Vec<usize> = self.methods.iter().map(|m| m.name.len().max(7)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<task_w$}", "Tasks");
        for (m, w) in self.methods.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$}", m.name);
        }
        out.push('\n');
        let rule = task_w + col_w.iter().map(|w| w + 2).sum::<usize>();
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for task in &self.tasks {
            let _ = write!(out, "{task:<task_w$}");
            for (m, w) in self.methods.iter().zip(&col_w) {
                let _ = write!(out, "  {:>w$.2}", 100.0 * m.per_task[task]);
            }
            out.push('\n');
        }
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        let _ = write!(out, "{:<task_w$}", "Average");
        for (m, w) in self.methods.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$.2}", 100.0 * m.overall);
        }
        out.push('\n');
        if !self.comparisons.is_empty() {
            out.push('\n');
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "{} - {}: delta {:+.2}  t = {:.3}  p = {:.4}{}",
                    c.a,
                    c.b,
                    100.0 * c.delta,
                    c.t,
                    c.p,
                    if c.degenerate { " (zero variance)" } else { "" }
                );
            }
        }
        out
    }
}
