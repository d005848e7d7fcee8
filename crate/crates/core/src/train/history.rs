use std::fmt::Write as _;

/// Header of the history file.
pub const HISTORY_HEADER: &str = "epoch,train_loss,val_soft_dice,val_pixel_acc,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u64,
    pub train_loss: f64,
    /// `None` when there is no validation data.
    pub val_soft_dice: Option<f64>,
    pub val_pixel_acc: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// Comma-separated line without newline. Losses and scores use the
    /// shortest round-trip representation; a missing score is `nan`.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            opt(self.val_soft_dice),
            opt(self.val_pixel_acc),
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{}", r.to_line());
        }
        s
    }

    /// Highest validation soft Dice over all epochs.
    pub fn best_val_dice(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.val_soft_dice)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}
