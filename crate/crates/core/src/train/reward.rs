//! Agreement reward, the per-epoch trace and the stopping rule.

use std::fmt::Write as _;
use std::path::Path;

use super::config::TrainConfig;
use super::schedule::StepId;
use crate::error::{Error, Result};

/// Fraction of positions where the two prediction lists agree.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("agreement", format!("{} vs {} predictions", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("reward needs at least one target sample".into()));
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    agreement(pred, labels)
}

/// One row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: u32,
    /// Agreement `V`, measured right after S1.
    pub reward: f64,
    /// Final contrastive losses of `G_s` and `G_t`.
    pub contrastive: Option<[f64; 2]>,
    /// Mean loss of each step, in [`StepId::ALL`] order.
    pub step_losses: [f64; 6],
    pub checkpoint: String,
    pub target_accuracy: Option<f64>,
}

impl TraceRow {
    /// Sum of the six interactive losses.
    pub fn total_loss(&self) -> f64 {
        self.step_losses.iter().sum()
    }

    pub fn loss(&self, step: StepId) -> f64 {
        self.step_losses[step.index()]
    }
}

/// Column order of trace CSV files.
pub const TRACE_COLUMNS: [&str; 14] = [
    "config_hash",
    "epoch",
    "reward",
    "l_con_s",
    "l_con_t",
    "l_s_s",
    "mmd_s",
    "l_t_t",
    "mmd_t",
    "l_t_s",
    "l_st_t",
    "total_loss",
    "checkpoint",
    "target_accuracy",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardTrace {
    pub config_hash: String,
    pub rows: Vec<TraceRow>,
}

impl RewardTrace {
    pub fn new(config_hash: impl Into<String>) -> Self {
        RewardTrace {
            config_hash: config_hash.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!(
                    "trace epochs must increase: {} after {}",
                    row.epoch, last.epoch
                )));
            }
        }
        if !(0.0..=1.0).contains(&row.reward) {
            return Err(Error::InvalidArgument(format!("reward {} outside [0, 1]", row.reward)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reward).collect()
    }

    /// Epoch with maximal reward; ties go to the earliest.
    pub fn best_by_reward(&self) -> Option<&TraceRow> {
        self.rows.iter().fold(None, |best: Option<&TraceRow>, r| match best {
            Some(b) if b.reward >= r.reward => Some(b),
            _ => Some(r),
        })
    }

    /// Epoch with minimal total interactive loss; ties go to the earliest.
    pub fn best_by_loss(&self) -> Option<&TraceRow> {
        self.rows.iter().fold(None, |best: Option<&TraceRow>, r| match best {
            Some(b) if b.total_loss() <= r.total_loss() => Some(b),
            _ => Some(r),
        })
    }

    /// Epoch with maximal target accuracy, when accuracies were recorded.
    pub fn best_by_accuracy(&self) -> Option<&TraceRow> {
        let mut best: Option<&TraceRow> = None;
        for r in &self.rows {
            let acc = r.target_accuracy?;
            if best.is_none_or(|b| acc > b.target_accuracy.unwrap()) {
                best = Some(r);
            }
        }
        best
    }

    /// Accuracy of the epochs chosen by the max-reward and min-loss rules
    /// against the best achievable epoch. `None` without recorded accuracies.
    pub fn selection(&self) -> Option<Selection> {
        let best = self.best_by_accuracy()?;
        let v = self.best_by_reward()?;
        let l = self.best_by_loss()?;
        Some(Selection {
            best_epoch: best.epoch,
            best_accuracy: best.target_accuracy?,
            reward_epoch: v.epoch,
            reward_accuracy: v.target_accuracy?,
            loss_epoch: l.epoch,
            loss_accuracy: l.target_accuracy?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = TRACE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let (cs, ct) = match r.contrastive {
                Some([a, b]) => (a.to_string(), b.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = write!(out, "{},{},{},{cs},{ct}", self.config_hash, r.epoch, r.reward);
            for l in r.step_losses {
                let _ = write!(out, ",{l}");
            }
            let _ = writeln!(out, ",{},{},{}", r.total_loss(), r.checkpoint, opt(r.target_accuracy));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Outcome of the two model-selection rules on one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub best_epoch: u32,
    pub best_accuracy: f64,
    pub reward_epoch: u32,
    pub reward_accuracy: f64,
    pub loss_epoch: u32,
    pub loss_accuracy: f64,
}

impl Selection {
    pub fn reward_regret(&self) -> f64 {
        self.best_accuracy - self.reward_accuracy
    }

    pub fn loss_regret(&self) -> f64 {
        self.best_accuracy - self.loss_accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop {
        /// Epoch of the checkpoint to keep.
        best_epoch: u32,
        /// Whether the latest reward reached `V*` (otherwise the budget ran out).
        reached_target: bool,
    },
}

/// Stops when the latest reward reaches `V*` or the epoch budget is spent;
/// the chosen model is the max-reward checkpoint.
pub fn stopping_check(trace: &RewardTrace, cfg: &TrainConfig) -> StopDecision {
    let (Some(last), Some(best)) = (trace.rows.last(), trace.best_by_reward()) else {
        return StopDecision::Continue;
    };
    let reached_target = last.reward >= cfg.desired_reward;
    if reached_target || trace.rows.len() >= cfg.epochs {
        StopDecision::Stop {
            best_epoch: best.epoch,
            reached_target,
        }
    } else {
        StopDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rewards: &[f64]) -> RewardTrace {
        let mut t = RewardTrace::new("h");
        for (i, &v) in rewards.iter().enumerate() {
            t.push(TraceRow {
                epoch: i as u32 + 1,
                reward: v,
                contrastive: None,
                step_losses: [1.0; 6],
                checkpoint: format!("epoch-{:03}", i + 1),
                target_accuracy: None,
            })
            .unwrap();
        }
        t
    }

    fn cfg(epochs: usize, v: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            desired_reward: v,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn hand_counted_agreement() {
        assert!((agreement(&[1, 2, 3], &[1, 2, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(agreement(&[], &[]).is_err());
    }

    #[test]
    fn stops_when_target_reached() {
        let d = stopping_check(&trace(&[0.5, 0.9]), &cfg(10, 0.85));
        assert_eq!(
            d,
            StopDecision::Stop {
                best_epoch: 2,
                reached_target: true
            }
        );
        assert_eq!(stopping_check(&trace(&[0.5]), &cfg(10, 0.85)), StopDecision::Continue);
    }

    #[test]
    fn budget_exhausted_returns_argmax() {
        let v = [0.1, 0.2, 0.3, 0.8, 0.5, 0.6, 0.7, 0.8, 0.4, 0.2];
        let d = stopping_check(&trace(&v), &cfg(10, 0.95));
        assert_eq!(
            d,
            StopDecision::Stop {
                best_epoch: 4,
                reached_target: false
            }
        );
        let mono = [0.1, 0.2, 0.3];
        assert!(matches!(
            stopping_check(&trace(&mono), &cfg(3, 0.95)),
            StopDecision::Stop { best_epoch: 3, .. }
        ));
    }

    #[test]
    fn selection_regrets() {
        let mut t = trace(&[0.4, 0.9, 0.7]);
        for (r, (acc, loss)) in t.rows.iter_mut().zip([(0.5, 3.0), (0.6, 2.0), (0.8, 1.0)]) {
            r.target_accuracy = Some(acc);
            r.step_losses = [loss / 6.0; 6];
        }
        let s = t.selection().unwrap();
        assert_eq!((s.best_epoch, s.reward_epoch, s.loss_epoch), (3, 2, 3));
        assert!((s.reward_regret() - 0.2).abs() < 1e-12);
        assert_eq!(s.loss_regret(), 0.0);
        assert!(trace(&[0.5]).selection().is_none());
    }

    #[test]
    fn epochs_must_increase() {
        let mut t = trace(&[0.5]);
        let mut row = t.rows[0].clone();
        assert!(t.push(row.clone()).is_err());
        row.epoch = 2;
        row.reward = 1.5;
        assert!(t.push(row).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = trace(&[0.5, 1.0]).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], TRACE_COLUMNS.join(","));
        assert_eq!(lines[1], "h,1,0.5,,,1,1,1,1,1,1,6,epoch-001,");
        assert!(lines.iter().all(|l| l.split(',').count() == TRACE_COLUMNS.len()));
    }
}
