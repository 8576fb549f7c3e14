use std::fmt::Write as _;
use std::path::Path;

use lde_core::eval::Estimate;

use crate::error::{io_err, Result};

/// Evaluation results, written both as `key = value` lines and as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, f64, Option<f64>)>,
}

impl Report {
    pub fn value(&mut self, metric: impl Into<String>, value: f64) -> &mut Self {
        self.entries.push((metric.into(), value, None));
        self
    }

    pub fn estimate(&mut self, metric: impl Into<String>, e: &Estimate) -> &mut Self {
        self.entries.push((metric.into(), e.mean, Some(e.std_error)));
        self
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.entries.iter().find(|(m, ..)| m == metric).map(|e| e.1)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (metric, value, se) in &self.entries {
            let _ = writeln!(out, "{metric} = {value}");
            if let Some(se) = se {
                let _ = writeln!(out, "{metric}.stderr = {se}");
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,stderr\n");
        for (metric, value, se) in &self.entries {
            let se = se.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{metric},{value},{se}");
        }
        out
    }

    /// Writes `<stem>.txt` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_text()).map_err(io_err(&txt))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(io_err(&csv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_formats() {
        let mut r = Report::default();
        r.value("sigma", 0.25).estimate(
            "loglik",
            &Estimate {
                mean: -1.5,
                std_error: 0.1,
                count: 10,
            },
        );
        assert_eq!(r.to_text(), "sigma = 0.25\nloglik = -1.5\nloglik.stderr = 0.1\n");
        assert_eq!(r.to_csv(), "metric,value,stderr\nsigma,0.25,\nloglik,-1.5,0.1\n");
        assert_eq!(r.get("loglik"), Some(-1.5));
    }
}
