use std::io::Write;

use serde::Serialize;

/// One completed round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// Mean per-sample cross-entropy over the raw batches seen this round.
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Mean matching loss of the representatives built this round.
    pub matching_loss: Option<f64>,
    /// Mean residual norm after those builds.
    pub tau_norm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub records: Vec<RoundRecord>,
    /// Wall-clock seconds per round; informational only.
    pub round_seconds: Vec<f64>,
}

pub const CSV_HEADER: [&str; 5] = ["round", "train_loss", "test_accuracy", "matching_loss", "tau_norm"];

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunMetrics {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_accuracy)
    }

    /// Highest evaluated accuracy and its round; earliest round wins ties.
    pub fn best_accuracy(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.test_accuracy.map(|a| (r.round, a)))
            .fold(None, |best, (r, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((r, a)),
            })
    }

    pub fn mean_matching_loss(&self) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter_map(|r| r.matching_loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Per-round metrics; empty cells where a column does not apply.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.train_loss.to_string(),
                cell(r.test_accuracy),
                cell(r.matching_loss),
                cell(r.tau_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Standard deviation of round-to-round accuracy changes over the last
    /// `window` evaluated rounds.
    pub fn accuracy_jitter(&self, window: usize) -> Option<f64> {
        let acc: Vec<f64> = self.records.iter().filter_map(|r| r.test_accuracy).collect();
        let tail = &acc[acc.len().saturating_sub(window)..];
        if tail.len() < 3 {
            return None;
        }
        let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
        Some(var.sqrt())
    }
}
