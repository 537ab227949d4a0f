use std::fmt::Write;

use crate::chart::TargetSpec;

pub const METRICS_HEADER: &str = "iteration,step,global_step,reward_accuracy,reward_format,\
reward_length,reward_total,mean_abs_igra,cgra_volatility_5,cgra_volatility_21,\
cgra_volatility_63,cgra_price_5,cgra_price_21,cgra_price_63,mean_uncertainty,loss,\
train_accuracy,format_valid,mean_tokens";

pub const TIMING_HEADER: &str = "global_step,seconds";

/// Batch means for one training step. `cgra[k]` is the cross-group
/// advantage of target `TargetSpec::ALL[k]`, absent when no group of that
/// target was in the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub step: usize,
    pub global_step: usize,
    pub reward_accuracy: f64,
    pub reward_format: f64,
    pub reward_length: f64,
    pub reward_total: f64,
    pub mean_abs_igra: f64,
    pub cgra: [Option<f64>; 6],
    pub mean_uncertainty: f64,
    /// Mean over the inner epochs of −J.
    pub loss: f64,
    pub train_accuracy: f64,
    pub format_valid: f64,
    pub mean_tokens: f64,
}

impl MetricsRow {
    pub fn cgra_for(&self, target: TargetSpec) -> Option<f64> {
        self.cgra[target.index()]
    }

    /// CSV line matching [`METRICS_HEADER`]; shortest round-trip float text.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{},{}", self.iteration, self.step, self.global_step);
        for v in [
            self.reward_accuracy,
            self.reward_format,
            self.reward_length,
            self.reward_total,
            self.mean_abs_igra,
        ] {
            write!(s, ",{v}").unwrap();
        }
        for c in &self.cgra {
            match c {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        for v in [
            self.mean_uncertainty,
            self.loss,
            self.train_accuracy,
            self.format_valid,
            self.mean_tokens,
        ] {
            write!(s, ",{v}").unwrap();
        }
        s
    }
}
