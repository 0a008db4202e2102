//! Plain-text and CSV/JSON report rendering.

use std::fmt::Write as _;

use serde::Serialize;
use sheettoken_core::flops::{
    estimate_flops, reference_caveat, FlopsConfig, REFERENCE_ENCODER_GFLOPS,
    REFERENCE_RETRIEVER_GFLOPS,
};

use crate::pipeline::AblationReport;

/// One row of the `eval` table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub stage: u8,
    pub split: &'static str,
    pub accuracy: f64,
    pub entropy: f64,
}

pub fn render_metric_table(rows: &[MetricRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:<6} {:>10} {:>10}", "stage", "split", "accuracy", "entropy");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6} {:<6} {:>10.4} {:>10.4}",
            r.stage, r.split, r.accuracy, r.entropy
        );
    }
    out
}

/// The cost table in the efficiency-report layout, our analytic numbers next
/// to the reference figures with the different-backbone caveat.
pub fn render_flops_report(cfg: &FlopsConfig) -> String {
    let est = estimate_flops(cfg);
    let mut out = String::new();
    let _ = writeln!(out, "{est}");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<28} {:>22} {:>22}",
        "model", "encoder cost", "graph/head cost"
    );
    let _ = writeln!(
        out,
        "{:<28} {:>15.6} GFLOPs {:>15.6} GFLOPs",
        "this implementation",
        est.gflops_encoder(),
        est.gflops_graph()
    );
    let _ = writeln!(
        out,
        "{:<28} {:>15.1} GFLOPs {:>15.1} GFLOPs",
        "reference (transformer)", REFERENCE_ENCODER_GFLOPS, REFERENCE_RETRIEVER_GFLOPS
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "note: {}", reference_caveat());
    out
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = String::from("variant,seed,accuracy,entropy\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.variant, r.seed, r.accuracy, r.entropy);
    }
    for (variant, acc, ent) in &report.means {
        let _ = writeln!(out, "{variant},mean,{acc:.6},{ent:.6}");
    }
    out
}

pub fn ablation_json(report: &AblationReport) -> String {
    serde_json::to_string_pretty(report).expect("serializable")
}

pub fn ablation_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<22} {:>10} {:>10}", "variant", "accuracy", "entropy");
    for (variant, acc, ent) in &report.means {
        let _ = writeln!(out, "{variant:<22} {acc:>10.4} {ent:>10.4}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flops_report_cites_reference_figures_with_caveat() {
        let text = render_flops_report(&FlopsConfig::default());
        assert!(text.contains("45.9"));
        assert!(text.contains("235.0"));
        assert!(text.contains("different backbone"));
    }
}
