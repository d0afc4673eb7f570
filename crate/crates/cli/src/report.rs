//! JSON run reports and CSV curve sidecars.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Where an expected value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Stated in the source construction.
    Paper,
    /// Holds by definition or by a one-line argument.
    Trivial,
    /// An independent closed form or finite computation.
    DerivedOracle,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Value,
    pub expected: Value,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub provenance: Provenance,
}

/// A curve written as `<experiment>_<name>.csv` with columns `index,value,bound`.
#[derive(Debug, Clone)]
pub struct Curve {
    pub name: String,
    pub rows: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub curves: Vec<String>,
    /// Free-form findings such as formula-discrepancy records.
    pub notes: Vec<Value>,
    pub pass: bool,
    pub wall_time_s: f64,
    pub finished_at_unix_s: u64,
}

/// JSON number for finite values, a string otherwise.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(format!("{x}")), Value::Number)
}

#[derive(Debug, Default)]
pub struct Recorder {
    pub checks: Vec<Check>,
    pub curves: Vec<Curve>,
    pub notes: Vec<Value>,
}

impl Recorder {
    /// `|value − expected| ≤ tolerance`.
    pub fn close(&mut self, name: impl Into<String>, value: f64, expected: f64, tolerance: f64, provenance: Provenance) {
        let pass = (value - expected).abs() <= tolerance;
        self.push(name, num(value), num(expected), Some(tolerance), pass, provenance);
    }

    /// `value ≤ bound`.
    pub fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64, provenance: Provenance) {
        let pass = value <= bound;
        self.push(name, num(value), Value::String(format!("<= {bound:e}")), Some(bound), pass, provenance);
    }

    /// `value ≥ bound`.
    pub fn at_least(&mut self, name: impl Into<String>, value: f64, bound: f64, provenance: Provenance) {
        let pass = value >= bound;
        self.push(name, num(value), Value::String(format!(">= {bound:e}")), Some(bound), pass, provenance);
    }

    pub fn flag(&mut self, name: impl Into<String>, value: bool, expected: bool, provenance: Provenance) {
        self.push(name, Value::Bool(value), Value::Bool(expected), None, value == expected, provenance);
    }

    pub fn label(&mut self, name: impl Into<String>, value: &str, expected: &str, provenance: Provenance) {
        self.push(
            name,
            Value::String(value.into()),
            Value::String(expected.into()),
            None,
            value == expected,
            provenance,
        );
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        value: Value,
        expected: Value,
        tolerance: Option<f64>,
        pass: bool,
        provenance: Provenance,
    ) {
        self.checks.push(Check {
            name: name.into(),
            value,
            expected,
            tolerance,
            pass,
            provenance,
        });
    }

    pub fn curve(&mut self, name: impl Into<String>, rows: Vec<(f64, f64, f64)>) {
        self.curves.push(Curve { name: name.into(), rows });
    }
}

impl Report {
    /// Writes `<experiment>.json` and the curve sidecars into `dir`.
    pub fn write(&self, dir: &Path, curves: &[Curve]) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for c in curves {
            let path = dir.join(format!("{}_{}.csv", self.experiment, c.name));
            let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
            w.write_record(["index", "value", "bound"]).map_err(io)?;
            for (i, v, b) in &c.rows {
                w.write_record([format!("{i}"), format!("{v:e}"), format!("{b:e}")]).map_err(io)?;
            }
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        let path = dir.join(format!("{}.json", self.experiment));
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn failing(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_become_strings() {
        assert_eq!(num(f64::INFINITY), Value::String("inf".into()));
        assert_eq!(num(0.5), serde_json::json!(0.5));
    }

    #[test]
    fn recorder_pass_logic() {
        let mut r = Recorder::default();
        r.close("a", 1.0, 1.0 + 1e-12, 1e-10, Provenance::Trivial);
        r.at_most("b", 2.0, 1.0, Provenance::Trivial);
        r.at_least("c", 2.0, 1.0, Provenance::Trivial);
        r.label("d", "x", "y", Provenance::Trivial);
        let pass: Vec<bool> = r.checks.iter().map(|c| c.pass).collect();
        assert_eq!(pass, vec![true, false, true, false]);
    }
}
