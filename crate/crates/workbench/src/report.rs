//! Bench output: one CSV row per measurement plus named pass/fail checks.

use std::io::Write;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub config_id: String,
    pub mode: String,
    pub metric: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, config_id: &str, mode: impl ToString, metric: &str, value: f64, unit: &str) {
        self.rows.push(Row {
            config_id: config_id.to_string(),
            mode: mode.to_string(),
            metric: metric.to_string(),
            value,
            unit: unit.to_string(),
        });
    }

    /// Records a conservation check; the CLI exits non-zero if any fails.
    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
        self.checks.extend(other.checks);
    }

    /// First value recorded for `(config_id, mode, metric)`.
    pub fn value(&self, config_id: &str, mode: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.config_id == config_id && r.mode == mode && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_header() {
        let mut r = Report::new();
        r.push("c1", "HYBRID", "makespan", 12.5, "ms");
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "config_id,mode,metric,value,unit\nc1,HYBRID,makespan,12.5,ms\n");
        assert_eq!(r.value("c1", "HYBRID", "makespan"), Some(12.5));
    }

    #[test]
    fn stats() {
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn checks_gate_success() {
        let mut r = Report::new();
        r.check("a", true, "");
        assert!(r.all_passed());
        r.check("b", false, "lost 1");
        assert!(!r.all_passed());
    }
}
