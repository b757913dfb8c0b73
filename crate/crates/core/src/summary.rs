//! Cost tables from saved traces.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::Trace;

/// One trace reduced to the quantities that appear in the tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub problem: String,
    pub cells: usize,
    pub solver: String,
    pub levels: usize,
    pub subdomains: usize,
    pub overlap: usize,
    pub variant: String,
    pub seed: u64,
    pub cycles: usize,
    pub cost: f64,
    pub final_xi: f64,
    pub converged: bool,
    pub unequal_subdomains: bool,
}

impl SummaryRow {
    pub fn from_trace(t: &Trace) -> Self {
        let m = &t.meta;
        Self {
            problem: m.problem.clone(),
            cells: m.cells,
            solver: m.solver.clone(),
            levels: m.levels,
            subdomains: m.subdomains,
            overlap: m.overlap,
            variant: m.variant.clone().unwrap_or_default(),
            seed: m.seed,
            cycles: t.num_cycles(),
            cost: t.final_cost(),
            final_xi: t.final_xi(),
            converged: m.converged,
            unequal_subdomains: t.last().is_some_and(|c| c.unequal_subdomains),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One line per trace.
    List,
    /// Cost against the number of levels.
    Levels,
    /// Cost over subdomains (columns) and overlap (rows).
    Subdomains,
    /// Decomposition against hybrid cost over subdomains.
    Hybrid,
}

pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub layout: Layout,
}

fn fmt_cost(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn render_grid(title: &str, corner: &str, cols: &[String], rows: &[(String, Vec<String>)]) -> String {
    let mut widths: Vec<usize> = std::iter::once(corner.len())
        .chain(cols.iter().map(String::len))
        .collect();
    for (label, cells) in rows {
        widths[0] = widths[0].max(label.len());
        for (i, c) in cells.iter().enumerate() {
            widths[i + 1] = widths[i + 1].max(c.len());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let line = |first: &str, rest: &[String]| {
        let mut s = format!("{first:<w$}", w = widths[0]);
        for (i, c) in rest.iter().enumerate() {
            let _ = write!(s, "  {c:>w$}", w = widths[i + 1]);
        }
        s
    };
    let _ = writeln!(out, "{}", line(corner, cols));
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * cols.len()));
    for (label, cells) in rows {
        let _ = writeln!(out, "{}", line(label, cells));
    }
    out
}

/// Mean cost and cycle count of the rows matching `pred`; `-` when none.
fn cell(rows: &[SummaryRow], pred: impl Fn(&SummaryRow) -> bool) -> (String, String) {
    let hits: Vec<&SummaryRow> = rows.iter().filter(|r| pred(r)).collect();
    if hits.is_empty() {
        return ("-".into(), "-".into());
    }
    let n = hits.len() as f64;
    let cost = hits.iter().map(|r| r.cost).sum::<f64>() / n;
    let cycles = hits.iter().map(|r| r.cycles as f64).sum::<f64>() / n;
    let mark = if hits.iter().all(|r| r.converged) { "" } else { "*" };
    (format!("{}{mark}", fmt_cost(cost)), format!("{cycles:.0}{mark}"))
}

impl Summary {
    /// Refuses traces of different problems or mesh sizes.
    pub fn new(traces: &[Trace]) -> Result<Self> {
        let first = traces.first().ok_or_else(|| Error::Config("no traces to summarize".into()))?;
        for t in traces {
            if (t.meta.problem.as_str(), t.meta.cells) != (first.meta.problem.as_str(), first.meta.cells) {
                return Err(Error::Config(format!(
                    "cannot mix problems in one table: {} ({} cells) and {} ({} cells)",
                    first.meta.problem, first.meta.cells, t.meta.problem, t.meta.cells
                )));
            }
        }
        let rows: Vec<SummaryRow> = traces.iter().map(SummaryRow::from_trace).collect();
        let solvers: BTreeSet<&str> = rows.iter().map(|r| r.solver.as_str()).collect();
        let only = |allowed: &[&str]| solvers.iter().all(|s| allowed.contains(s));
        let layout = if rows.len() == 1 {
            Layout::List
        } else if only(&["adagb2", "ml"]) {
            Layout::Levels
        } else if only(&["dd"]) {
            Layout::Subdomains
        } else if only(&["dd", "ml-dd"]) {
            Layout::Hybrid
        } else {
            Layout::List
        };
        Ok(Self { rows, layout })
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn render_text(&self) -> String {
        let r0 = &self.rows[0];
        let head = format!("{} ({} cells per side)", r0.problem, r0.cells);
        let mut out = match self.layout {
            Layout::List => self.render_list(&head),
            Layout::Levels => {
                let levels: BTreeSet<usize> = self.rows.iter().map(|r| r.levels).collect();
                let cols: Vec<String> = levels.iter().map(|l| format!("{l} lev")).collect();
                let mut costs = Vec::new();
                let mut cycles = Vec::new();
                for &l in &levels {
                    let (c, k) = cell(&self.rows, |r| r.levels == l);
                    costs.push(c);
                    cycles.push(k);
                }
                render_grid(
                    &format!("{head}: cost against levels"),
                    "",
                    &cols,
                    &[("cost".into(), costs), ("cycles".into(), cycles)],
                )
            }
            Layout::Subdomains => {
                let ms: BTreeSet<usize> = self.rows.iter().map(|r| r.subdomains).collect();
                let os: BTreeSet<usize> = self.rows.iter().map(|r| r.overlap).collect();
                let variants: BTreeSet<&str> = self.rows.iter().map(|r| r.variant.as_str()).collect();
                let cols: Vec<String> = ms.iter().map(|m| format!("M={m}")).collect();
                let mut grid = Vec::new();
                for v in &variants {
                    for &o in &os {
                        let cells = ms
                            .iter()
                            .map(|&m| cell(&self.rows, |r| r.variant == *v && r.overlap == o && r.subdomains == m).0)
                            .collect();
                        grid.push((format!("{v} o={o}"), cells));
                    }
                }
                render_grid(&format!("{head}: cost against subdomains"), "", &cols, &grid)
            }
            Layout::Hybrid => {
                let ms: BTreeSet<usize> = self.rows.iter().map(|r| r.subdomains).collect();
                let cols: Vec<String> = ms.iter().map(|m| format!("M={m}")).collect();
                let mut grid = Vec::new();
                for s in ["dd", "ml-dd"] {
                    let (mut costs, mut cycles) = (Vec::new(), Vec::new());
                    for &m in &ms {
                        let (c, k) = cell(&self.rows, |r| r.solver == s && r.subdomains == m);
                        costs.push(c);
                        cycles.push(k);
                    }
                    grid.push((format!("{s} cost"), costs));
                    grid.push((format!("{s} cycles"), cycles));
                }
                render_grid(&format!("{head}: decomposition and hybrid cost"), "", &cols, &grid)
            }
        };
        if self.rows.iter().any(|r| !r.converged) {
            out.push_str("* not converged within the cycle budget\n");
        }
        if self.rows.iter().any(|r| r.unequal_subdomains) {
            out.push_str("note: subdomain evaluation counts differ; the largest count is charged\n");
        }
        out
    }

    fn render_list(&self, head: &str) -> String {
        let cols: Vec<String> = ["levels", "M", "overlap", "variant", "seed", "cycles", "cost", "final xi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<(String, Vec<String>)> = self
            .rows
            .iter()
            .map(|r| {
                let mark = if r.converged { "" } else { "*" };
                (
                    r.solver.clone(),
                    vec![
                        r.levels.to_string(),
                        r.subdomains.to_string(),
                        r.overlap.to_string(),
                        if r.variant.is_empty() { "-".into() } else { r.variant.clone() },
                        r.seed.to_string(),
                        format!("{}{mark}", r.cycles),
                        fmt_cost(r.cost),
                        format!("{:.3e}", r.final_xi),
                    ],
                )
            })
            .collect();
        render_grid(head, "solver", &cols, &rows)
    }

    /// One machine-readable row per trace.
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::sample_trace;

    fn with(solver: &str, levels: usize, m: usize, o: usize, cost: f64) -> Trace {
        let mut t = sample_trace();
        t.meta.solver = solver.into();
        t.meta.levels = levels;
        t.meta.subdomains = m;
        t.meta.overlap = o;
        if m > 0 {
            t.meta.variant = Some("wras".into());
        }
        t.cycles.last_mut().unwrap().cost = cost;
        t
    }

    #[test]
    fn single_trace_is_one_row() {
        let s = Summary::new(&[sample_trace()]).unwrap();
        assert_eq!(s.layout, Layout::List);
        let text = s.render_text();
        assert_eq!(text.lines().filter(|l| l.starts_with("ml ")).count(), 1, "{text}");
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn levels_row() {
        let traces: Vec<Trace> = (2..=5).map(|l| with("ml", l, 0, 0, 100.0 / l as f64)).collect();
        let s = Summary::new(&traces).unwrap();
        assert_eq!(s.layout, Layout::Levels);
        let text = s.render_text();
        assert!(text.contains("5 lev"), "{text}");
        let cost_line = text.lines().find(|l| l.starts_with("cost")).unwrap();
        assert_eq!(cost_line.split_whitespace().count(), 5);
    }

    #[test]
    fn subdomain_grid() {
        let mut traces = Vec::new();
        for m in [2, 4, 8] {
            for o in [0, 2, 4] {
                traces.push(with("dd", 1, m, o, (m * 10 + o) as f64));
            }
        }
        let s = Summary::new(&traces).unwrap();
        assert_eq!(s.layout, Layout::Subdomains);
        let text = s.render_text();
        let body: Vec<&str> = text.lines().filter(|l| l.starts_with("wras o=")).collect();
        assert_eq!(body.len(), 3);
        assert!(body[1].ends_with("82.0"), "{text}");
    }

    #[test]
    fn hybrid_table() {
        let traces = vec![with("dd", 1, 2, 2, 50.0), with("ml-dd", 2, 2, 2, 20.0)];
        let s = Summary::new(&traces).unwrap();
        assert_eq!(s.layout, Layout::Hybrid);
        assert!(s.render_text().contains("ml-dd cost"));
    }

    #[test]
    fn mixed_problems_refused() {
        let mut other = sample_trace();
        other.meta.problem = "minsurf".into();
        assert!(Summary::new(&[sample_trace(), other]).is_err());
        assert!(Summary::new(&[]).is_err());
    }
}
