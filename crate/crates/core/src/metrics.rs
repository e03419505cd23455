//! Evaluation summaries over labeled target data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of [`MetricsReport::to_csv`]. One row per class, then a row
/// with `class = all`; the last three columns repeat on every row.
pub const METRICS_COLUMNS: [&str; 8] = [
    "config_hash",
    "class",
    "samples",
    "correct",
    "accuracy",
    "final_reward",
    "chosen_epoch",
    "wall_seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    /// Classes present in the labels, ascending.
    pub per_class: Vec<ClassAccuracy>,
    pub overall_accuracy: f64,
    pub final_reward: f64,
    pub chosen_epoch: u32,
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn from_predictions(
        config_hash: &str,
        pred: &[usize],
        labels: &[usize],
        final_reward: f64,
        chosen_epoch: u32,
        wall_seconds: f64,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("no labeled samples to evaluate".into()));
        }
        if pred.len() != labels.len() {
            return Err(Error::dim(
                "metrics",
                format!("{} predictions for {} labels", pred.len(), labels.len()),
            ));
        }
        let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (&p, &y) in pred.iter().zip(labels) {
            let e = counts.entry(y).or_default();
            e.0 += 1;
            e.1 += (p == y) as usize;
        }
        let per_class = counts
            .into_iter()
            .map(|(class, (samples, correct))| ClassAccuracy {
                class,
                samples,
                correct,
                accuracy: correct as f64 / samples as f64,
            })
            .collect();
        let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(MetricsReport {
            config_hash: config_hash.to_string(),
            per_class,
            overall_accuracy: correct as f64 / labels.len() as f64,
            final_reward,
            chosen_epoch,
            wall_seconds,
        })
    }

    pub fn samples(&self) -> usize {
        self.per_class.iter().map(|c| c.samples).sum()
    }

    /// Per-class accuracies weighted by class frequency.
    pub fn weighted_class_mean(&self) -> f64 {
        let n = self.samples() as f64;
        self.per_class.iter().map(|c| c.accuracy * c.samples as f64 / n).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = METRICS_COLUMNS.join(",");
        out.push('\n');
        let tail = format!("{},{},{}", self.final_reward, self.chosen_epoch, self.wall_seconds);
        for c in &self.per_class {
            let _ = writeln!(out, "{},{},{},{},{},{tail}", self.config_hash, c.class, c.samples, c.correct, c.accuracy);
        }
        let correct: usize = self.per_class.iter().map(|c| c.correct).sum();
        let _ = writeln!(
            out,
            "{},all,{},{correct},{},{tail}",
            self.config_hash,
            self.samples(),
            self.overall_accuracy
        );
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_class_rows_and_overall() {
        let labels = [0, 0, 1, 1, 1, 3];
        let pred = [0, 1, 1, 1, 0, 3];
        let r = MetricsReport::from_predictions("h", &pred, &labels, 0.5, 2, 0.0).unwrap();
        assert_eq!(r.per_class.len(), 3);
        assert_eq!(r.per_class[1].correct, 2);
        assert!((r.overall_accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.weighted_class_mean() - r.overall_accuracy).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let r = MetricsReport::from_predictions("abc", &[0, 1], &[0, 0], 1.0, 4, 1.5).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_COLUMNS.join(","));
        assert_eq!(lines[1], "abc,0,2,1,0.5,1,4,1.5");
        assert_eq!(lines[2], "abc,all,2,1,0.5,1,4,1.5");
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            MetricsReport::from_predictions("h", &[], &[], 0.0, 1, 0.0),
            Err(Error::Empty(_))
        ));
    }
}
