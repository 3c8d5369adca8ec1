use std::fmt::Write as _;

/// One optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    /// `<stage>.<source>`, e.g. `stage2_full.text`.
    pub group: String,
    /// Rate of the stage's global schedule.
    pub lr: f64,
    pub loss_text: Option<f64>,
    pub loss_speech: Option<f64>,
}

/// A corpus ran out and was reshuffled.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochEvent {
    pub step: u64,
    pub group: String,
    pub epoch: u64,
}

/// Append-only training record of a run. Steps count across stages.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
    /// Per-shared-block rates of layerwise stages.
    pub layer_lrs: Vec<(u64, Vec<f64>)>,
    pub epochs: Vec<EpochEvent>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsLog {
    pub fn next_step(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.step + 1)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("step,group,lr,loss_text,loss_speech\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.step,
                r.group,
                r.lr,
                opt(r.loss_text),
                opt(r.loss_speech)
            );
        }
        out
    }

    pub fn layer_lr_csv(&self) -> Option<String> {
        let width = self.layer_lrs.first()?.1.len();
        let mut out = String::from("step");
        for i in 0..width {
            let _ = write!(out, ",shared.{i}");
        }
        out.push('\n');
        for (step, lrs) in &self.layer_lrs {
            let cells: Vec<String> = lrs.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{step},{}", cells.join(","));
        }
        Some(out)
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("step,group,epoch\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.step, e.group, e.epoch);
        }
        out
    }

    /// Mean of the last `n` recorded values of one loss column.
    pub fn recent_loss(&self, n: usize, speech: bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .rev()
            .filter_map(|r| if speech { r.loss_speech } else { r.loss_text })
            .take(n)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
