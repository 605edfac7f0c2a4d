//! Per-task lifecycle timings and their per-method aggregates.

use std::collections::BTreeMap;
use std::io::Write;

use super::task::TaskId;

#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleRow {
    pub task_id: TaskId,
    pub method: String,
    pub analysis_ms: f64,
    pub schedule_ms: f64,
    pub execution_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    /// Mean and sample standard deviation.
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stat {
            mean,
            stddev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodStats {
    pub method: String,
    pub count: usize,
    pub analysis: Stat,
    pub schedule: Stat,
    pub execution: Stat,
}

/// Rows for tasks that went through all three phases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LifecycleReport {
    pub rows: Vec<LifecycleRow>,
}

impl LifecycleReport {
    pub fn per_method(&self) -> Vec<MethodStats> {
        let mut by: BTreeMap<&str, Vec<&LifecycleRow>> = BTreeMap::new();
        for r in &self.rows {
            by.entry(&r.method).or_default().push(r);
        }
        by.into_iter()
            .map(|(m, rows)| {
                let col = |f: fn(&LifecycleRow) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                MethodStats {
                    method: m.to_string(),
                    count: rows.len(),
                    analysis: col(|r| r.analysis_ms),
                    schedule: col(|r| r.schedule_ms),
                    execution: col(|r| r.execution_ms),
                }
            })
            .collect()
    }

    /// One row per task, then a `mean` and a `stddev` row per method.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["task_id", "method", "analysis_ms", "schedule_ms", "execution_ms"])?;
        for r in &self.rows {
            out.write_record([
                r.task_id.to_string(),
                r.method.clone(),
                format!("{:.6}", r.analysis_ms),
                format!("{:.6}", r.schedule_ms),
                format!("{:.6}", r.execution_ms),
            ])?;
        }
        for m in self.per_method() {
            for (label, pick) in [("mean", (|s: Stat| s.mean) as fn(Stat) -> f64), ("stddev", |s: Stat| s.stddev)] {
                out.write_record([
                    label.to_string(),
                    m.method.clone(),
                    format!("{:.6}", pick(m.analysis)),
                    format!("{:.6}", pick(m.schedule)),
                    format!("{:.6}", pick(m.execution)),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_match_hand_computed_values() {
        let s = Stat::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.mean, 5.0);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[3.0]).stddev, 0.0);
    }

    #[test]
    fn csv_has_rows_then_aggregates() {
        let rows = (1..=100)
            .map(|i| LifecycleRow {
                task_id: i,
                method: "m".into(),
                analysis_ms: 1.0,
                schedule_ms: 2.0,
                execution_ms: i as f64,
            })
            .collect();
        let rep = LifecycleReport { rows };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "task_id,method,analysis_ms,schedule_ms,execution_ms");
        assert_eq!(lines.len(), 1 + 100 + 2);
        assert!(lines[101].starts_with("mean,m,1.000000,2.000000,50.500000"));
        assert!(lines[102].starts_with("stddev,m,0.000000,0.000000,"));
    }
}
