use std::fmt::Write as _;

use crate::config::KeyValues;
use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

/// One record per completed epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpochRecord>,
}

impl TrainReport {
    /// CSV with header `epoch,lr,train_loss,train_acc,val_acc,seconds`.
    /// Without `wall_time` the seconds column is written as 0 so that
    /// repeated runs produce identical files.
    pub fn to_csv(&self, wall_time: bool) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,val_acc,seconds\n");
        for r in &self.rows {
            let seconds = if wall_time { r.seconds } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_acc, seconds
            );
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    /// Stores every row except wall time under `report.<epoch>`.
    pub(crate) fn write_to(&self, kv: &mut KeyValues) -> Result<()> {
        for r in &self.rows {
            kv.set(
                &format!("report.{}", r.epoch),
                format!("{},{},{},{}", r.lr, r.train_loss, r.train_acc, r.val_acc),
            )?;
        }
        Ok(())
    }

    pub(crate) fn read_from(kv: &KeyValues, epochs: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let key = format!("report.{epoch}");
            let values: Vec<f64> = kv.list(&key)?.unwrap_or_default();
            let &[lr, train_loss, train_acc, val_acc] = values.as_slice() else {
                bail!(Format, "checkpoint lacks a complete {key} entry");
            };
            rows.push(EpochRecord {
                epoch,
                lr,
                train_loss,
                train_acc,
                val_acc,
                seconds: 0.0,
            });
        }
        Ok(Self { rows })
    }
}

/// True when the mean loss over a sliding `window`-epoch window never
/// increases as the window advances. Advancing by one epoch swaps
/// `losses[i - window]` for `losses[i]`, so the test is made on those pairs.
pub fn window_means_non_increasing(losses: &[f64], window: usize) -> bool {
    let window = window.max(1);
    (window..losses.len()).all(|i| losses[i] <= losses[i - window])
}
