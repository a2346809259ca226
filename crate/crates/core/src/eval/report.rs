use std::fmt::Write as _;

use crate::data::Point;

use super::EvalError;

const AVERAGE: &str = "average";

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMetrics {
    pub name: String,
    pub ade: f64,
    pub fde: f64,
    pub nde: Option<f64>,
    /// Forecast (window, target) pairs.
    pub n_targets: usize,
    pub n_windows: usize,
    /// Pairs whose true window is non-linear.
    pub n_nonlinear: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub sequences: Vec<SequenceMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new(sequences: Vec<SequenceMetrics>) -> Self {
        EvalReport { sequences }
    }

    /// Unweighted mean over sequences, the way per-video tables average.
    pub fn average(&self) -> Option<SequenceMetrics> {
        if self.sequences.is_empty() {
            return None;
        }
        Some(SequenceMetrics {
            name: AVERAGE.into(),
            ade: mean(self.sequences.iter().map(|s| s.ade))?,
            fde: mean(self.sequences.iter().map(|s| s.fde))?,
            nde: mean(self.sequences.iter().filter_map(|s| s.nde)),
            n_targets: self.sequences.iter().map(|s| s.n_targets).sum(),
            n_windows: self.sequences.iter().map(|s| s.n_windows).sum(),
            n_nonlinear: self.sequences.iter().map(|s| s.n_nonlinear).sum(),
        })
    }

    /// `sequence,metric,value,n_targets,n_windows`; the NDE row counts
    /// non-linear pairs in its `n_targets` column. Values use the shortest
    /// representation that parses back to the same float.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,metric,value,n_targets,n_windows\n");
        let rows = self.sequences.iter().cloned().chain(self.average());
        for s in rows {
            let _ = writeln!(out, "{},ADE,{},{},{}", s.name, s.ade, s.n_targets, s.n_windows);
            let _ = writeln!(out, "{},FDE,{},{},{}", s.name, s.fde, s.n_targets, s.n_windows);
            if let Some(nde) = s.nde {
                let _ = writeln!(out, "{},NDE,{},{},{}", s.name, nde, s.n_nonlinear, s.n_windows);
            }
        }
        out
    }

    /// Inverse of [`EvalReport::to_csv`]; the average rows are recomputed,
    /// not read.
    pub fn parse_csv(text: &str) -> Result<Self, EvalError> {
        let mut sequences: Vec<SequenceMetrics> = Vec::new();
        let bad = |line: usize, reason: &str| EvalError::Report {
            line,
            reason: reason.to_string(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if i == 0 {
                if raw.trim() != "sequence,metric,value,n_targets,n_windows" {
                    return Err(bad(line, "unexpected header"));
                }
                continue;
            }
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(line, "expected 5 fields"));
            }
            let name = fields[0];
            if name == AVERAGE {
                continue;
            }
            let value: f64 = fields[2].parse().map_err(|_| bad(line, "bad value"))?;
            let count: usize = fields[3].parse().map_err(|_| bad(line, "bad n_targets"))?;
            let windows: usize = fields[4].parse().map_err(|_| bad(line, "bad n_windows"))?;
            let entry = match sequences.iter_mut().position(|s| s.name == name) {
                Some(k) => &mut sequences[k],
                None => {
                    sequences.push(SequenceMetrics {
                        name: name.to_string(),
                        ade: f64::NAN,
                        fde: f64::NAN,
                        nde: None,
                        n_targets: 0,
                        n_windows: windows,
                        n_nonlinear: 0,
                    });
                    sequences.last_mut().expect("just pushed")
                }
            };
            match fields[1] {
                "ADE" => {
                    entry.ade = value;
                    entry.n_targets = count;
                }
                "FDE" => entry.fde = value,
                "NDE" => {
                    entry.nde = Some(value);
                    entry.n_nonlinear = count;
                }
                _ => return Err(bad(line, "unknown metric")),
            }
        }
        if let Some(s) = sequences.iter().find(|s| s.ade.is_nan() || s.fde.is_nan()) {
            return Err(EvalError::Report {
                line: 0,
                reason: format!("sequence `{}` lacks an ADE or FDE row", s.name),
            });
        }
        Ok(EvalReport { sequences })
    }

    /// Metrics as rows, sequences as columns, plus the average column.
    pub fn to_table(&self) -> String {
        let columns: Vec<SequenceMetrics> = self.sequences.iter().cloned().chain(self.average()).collect();
        let width = columns.iter().map(|c| c.name.len()).max().unwrap_or(0).max(8);
        let mut out = format!("{:<6}", "Metric");
        for c in &columns {
            let _ = write!(out, " | {:>width$}", c.name);
        }
        out.push('\n');
        let metrics: [(&str, fn(&SequenceMetrics) -> Option<f64>); 3] =
            [("ADE", |s| Some(s.ade)), ("NDE", |s| s.nde), ("FDE", |s| Some(s.fde))];
        for (label, get) in metrics {
            let _ = write!(out, "{label:<6}");
            for c in &columns {
                match get(c) {
                    Some(v) => {
                        let _ = write!(out, " | {v:>width$.4}");
                    }
                    None => {
                        let _ = write!(out, " | {:>width$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One forecast point next to the truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionRow {
    pub window: usize,
    pub frame: u64,
    pub target: u64,
    pub pred: Point,
    pub truth: Point,
}

impl PredictionRow {
    pub const HEADER: &'static str = "window,frame,target,pred_x,pred_y,true_x,true_y";

    pub fn to_csv(rows: &[PredictionRow]) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.window, r.frame, r.target, r.pred.x, r.pred.y, r.truth.x, r.truth.y
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<PredictionRow>, EvalError> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let bad = |reason: &str| EvalError::Report {
                line,
                reason: reason.to_string(),
            };
            if i == 0 {
                if raw.trim() != Self::HEADER {
                    return Err(bad("unexpected header"));
                }
                continue;
            }
            if raw.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = raw.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad("bad number"));
            rows.push(PredictionRow {
                window: f[0].parse().map_err(|_| bad("bad window"))?,
                frame: f[1].parse().map_err(|_| bad("bad frame"))?,
                target: f[2].parse().map_err(|_| bad("bad target"))?,
                pred: Point::new(num(3)?, num(4)?),
                truth: Point::new(num(5)?, num(6)?),
            });
        }
        Ok(rows)
    }
}
