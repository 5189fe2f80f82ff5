//! Core time-series containers and CSV trace I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Relative tolerance on the time grid when inferring `dt` from a file.
const GRID_TOLERANCE: f64 = 1e-9;

/// One uniformly sampled univariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub values: Vec<f64>,
    /// Sampling interval in seconds.
    pub dt: f64,
    pub name: String,
}

impl Signal {
    pub fn new(values: Vec<f64>, dt: f64, name: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("signal must be nonempty".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Signal {
            values,
            dt,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    /// Same sampling grid, different samples.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Signal::new(values, self.dt, self.name.clone())
    }
}

/// Synchronized signals from one process run, sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateTrace {
    pub signals: Vec<Signal>,
    pub run_id: String,
    pub recipe_id: String,
}

impl MultivariateTrace {
    pub fn new(
        signals: Vec<Signal>,
        run_id: impl Into<String>,
        recipe_id: impl Into<String>,
    ) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::Invalid(
                "trace must contain at least one signal".into(),
            ));
        }
        let (len0, dt0) = (signals[0].len(), signals[0].dt);
        for s in &signals[1..] {
            if s.len() != len0 || s.dt != dt0 {
                return Err(Error::Invalid(format!(
                    "signal '{}' has len {} dt {}, expected len {} dt {}",
                    s.name,
                    s.len(),
                    s.dt,
                    len0,
                    dt0
                )));
            }
        }
        Ok(MultivariateTrace {
            signals,
            run_id: run_id.into(),
            recipe_id: recipe_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.signals[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.signals[0].dt
    }

    pub fn signal(&self, name: &str) -> Option<&Signal> {
        self.signals.iter().find(|s| s.name == name)
    }
}

/// A sub-sequence cut around one sample of a parent signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindow {
    /// Index of the window center in the parent signal.
    pub center_index: usize,
    pub half_width_samples: usize,
    pub samples: Vec<f64>,
}

impl TimeWindow {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Loads a trace from CSV: first column is a uniform time grid in
/// seconds, remaining columns are signals named by the header.
pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<MultivariateTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV file".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() < 2 {
        return Err(Error::Format(
            "CSV must have a time column and at least one value column".into(),
        ));
    }

    let ncols = names.len();
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ncols - 1];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != ncols {
            return Err(Error::Format(format!(
                "row {}: expected {} fields, got {}",
                row + 2,
                ncols,
                fields.len()
            )));
        }
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!(
                    "row {}, column '{}': bad number '{}'",
                    row + 2,
                    names[col],
                    field
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "row {}, column '{}': non-finite value",
                    row + 2,
                    names[col]
                )));
            }
            if col == 0 {
                times.push(v);
            } else {
                columns[col - 1].push(v);
            }
        }
    }

    if times.len() < 2 {
        return Err(Error::Format("need at least two rows to infer dt".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Format(format!(
            "non-increasing time grid, dt = {dt}"
        )));
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > GRID_TOLERANCE * dt.max(1.0) {
            return Err(Error::Format(format!(
                "non-uniform time grid at row {}: step {} != {}",
                i + 3,
                step,
                dt
            )));
        }
    }

    let run_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let signals = names[1..]
        .iter()
        .zip(columns)
        .map(|(name, values)| Signal::new(values, dt, *name))
        .collect::<Result<Vec<_>>>()?;
    MultivariateTrace::new(signals, run_id, "")
}

/// Writes a trace in the format accepted by [`load_trace_csv`].
///
/// Samples are printed with Rust's shortest round-trip `f64` formatting,
/// so a save/load cycle reproduces values exactly.
pub fn save_trace_csv(trace: &MultivariateTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("time");
    for s in &trace.signals {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push('\n');
    for i in 0..trace.len() {
        let _ = write!(out, "{}", i as f64 * trace.dt());
        for s in &trace.signals {
            let _ = write!(out, ",{}", s.values[i]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
