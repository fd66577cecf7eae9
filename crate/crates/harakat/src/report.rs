//! Evaluation report rendering.

use harakat_core::eval::MetricsReport;
use serde::Serialize;

/// The JSON document printed by `evaluate --json`.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationOutput<'a> {
    pub checkpoint: Option<String>,
    pub manifest: String,
    pub reports: &'a [MetricsReport],
}

/// One aligned row per report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>8} {:>10} {:>9}\n",
        "mode", "WER", "CER", "sentences", "failures"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>8.4} {:>8.4} {:>10} {:>9}\n",
            r.mode.as_str(),
            r.wer,
            r.cer,
            r.n_sentences,
            r.failures
        ));
    }
    out
}
