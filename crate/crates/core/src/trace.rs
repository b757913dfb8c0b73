//! Run traces: newline-delimited JSON (a metadata line, then one line per
//! cycle) with a CSV mirror for plotting.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostSnapshot;
use crate::driver::{CycleStats, StopReason};
use crate::error::{Error, Result};

pub const TRACE_FORMAT: &str = "offo-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub config_hash: String,
    pub git_revision: Option<String>,
    pub seed: u64,
    pub problem: String,
    pub cells: usize,
    pub solver: String,
    pub dim: usize,
    pub levels: usize,
    pub subdomains: usize,
    pub overlap: usize,
    pub variant: Option<String>,
    pub level_dims: Vec<usize>,
    pub subdomain_dims: Vec<usize>,
    /// How curvature products are charged, e.g. one evaluation per analytic product.
    pub curvature_charge: String,
    pub event_e: Option<bool>,
    pub stop: StopReason,
    pub converged: bool,
    /// Full configuration the run was produced from.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub d_norm: Option<f64>,
    pub xi_norm: f64,
    /// Filled by the reporting pass after each cycle, never read by solvers.
    pub objective: Option<f64>,
    pub cost: f64,
    pub grid_cost: f64,
    pub subdomain_cost: f64,
    pub fine_evals: u64,
    pub level_evals: Vec<u64>,
    pub subdomain_evals: Vec<u64>,
    pub unequal_subdomains: bool,
    pub wall_seconds: f64,
}

impl CycleRecord {
    pub fn from_stats(stats: &CycleStats, objective: Option<f64>) -> Self {
        let c: &CostSnapshot = &stats.cost;
        Self {
            cycle: stats.cycle,
            d_norm: stats.d_norm.is_finite().then_some(stats.d_norm),
            xi_norm: stats.xi_norm,
            objective,
            cost: c.total(),
            grid_cost: c.grid_cost(),
            subdomain_cost: c.subdomain_cost(),
            fine_evals: c.fine_evals(),
            level_evals: c.level_evals.clone(),
            subdomain_evals: c.subdomain_evals.clone(),
            unequal_subdomains: c.unequal_subdomain_counts(),
            wall_seconds: stats.wall_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub cycles: Vec<CycleRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Meta(TraceMeta),
    Cycle(CycleRecord),
}

impl Trace {
    pub fn num_cycles(&self) -> usize {
        self.cycles.len().saturating_sub(1)
    }

    pub fn last(&self) -> Option<&CycleRecord> {
        self.cycles.last()
    }

    pub fn final_cost(&self) -> f64 {
        self.last().map_or(0.0, |c| c.cost)
    }

    pub fn final_xi(&self) -> f64 {
        self.last().map_or(f64::NAN, |c| c.xi_norm)
    }

    pub fn write_ndjson(&self, mut out: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let mut line = |l: &Line| -> Result<()> {
            let s = serde_json::to_string(l).map_err(|e| Error::Trace(e.to_string()))?;
            writeln!(out, "{s}").map_err(io)
        };
        line(&Line::Meta(self.meta.clone()))?;
        for c in &self.cycles {
            line(&Line::Cycle(c.clone()))?;
        }
        Ok(())
    }

    pub fn read_ndjson(input: impl BufRead) -> Result<Self> {
        let mut meta = None;
        let mut cycles = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| Error::Trace(format!("line {}: {e}", i + 1)))?;
            match parsed {
                Line::Meta(m) if meta.is_none() => meta = Some(m),
                Line::Meta(_) => return Err(Error::Trace(format!("line {}: second metadata record", i + 1))),
                Line::Cycle(c) => cycles.push(c),
            }
        }
        let meta = meta.ok_or_else(|| Error::Trace("no metadata record".into()))?;
        if meta.format != TRACE_FORMAT {
            return Err(Error::Trace(format!("unsupported trace format `{}`", meta.format)));
        }
        Ok(Self { meta, cycles })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let err = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "cycle",
            "d_norm",
            "xi_norm",
            "objective",
            "cost",
            "grid_cost",
            "subdomain_cost",
            "fine_evals",
            "unequal_subdomains",
            "wall_seconds",
        ])
        .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cycles {
            w.write_record([
                c.cycle.to_string(),
                opt(c.d_norm),
                c.xi_norm.to_string(),
                opt(c.objective),
                c.cost.to_string(),
                c.grid_cost.to_string(),
                c.subdomain_cost.to_string(),
                c.fine_evals.to_string(),
                c.unequal_subdomains.to_string(),
                c.wall_seconds.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `<stem>.ndjson` and `<stem>.csv`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", stem.display()));
        if let Some(dir) = stem.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(io)?;
            }
        }
        let nd = std::fs::File::create(stem.with_extension("ndjson")).map_err(io)?;
        self.write_ndjson(std::io::BufWriter::new(nd))?;
        let csv = std::fs::File::create(stem.with_extension("csv")).map_err(io)?;
        self.write_csv(std::io::BufWriter::new(csv))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_ndjson(std::io::BufReader::new(f)).map_err(|e| Error::Trace(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
pub(crate) fn sample_trace() -> Trace {
    let meta = TraceMeta {
        format: TRACE_FORMAT.into(),
        config_hash: "ab".repeat(32),
        git_revision: None,
        seed: 3,
        problem: "membrane".into(),
        cells: 16,
        solver: "ml".into(),
        dim: 272,
        levels: 2,
        subdomains: 0,
        overlap: 0,
        variant: None,
        level_dims: vec![272, 72],
        subdomain_dims: vec![],
        curvature_charge: "hess-vec:1".into(),
        event_e: Some(true),
        stop: StopReason::Absolute,
        converged: true,
        config: serde_json::json!({"seed": 3}),
    };
    let cycles = (0..4)
        .map(|k| CycleRecord {
            cycle: k,
            d_norm: (k > 0).then_some(0.1 / 3f64.powi(k as i32)),
            xi_norm: 0.7 / 7f64.powi(k as i32),
            objective: Some(-0.1 - 1e-17 * k as f64),
            cost: k as f64 * 9.25,
            grid_cost: k as f64 * 9.25,
            subdomain_cost: 0.0,
            fine_evals: 8 * k as u64,
            level_evals: vec![8 * k as u64, 5 * k as u64],
            subdomain_evals: vec![],
            unequal_subdomains: false,
            wall_seconds: 1e-3 * k as f64,
        })
        .collect();
    Trace { meta, cycles }
}
