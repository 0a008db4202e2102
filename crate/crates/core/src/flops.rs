//! Analytic forward-pass FLOPs estimator.
//!
//! Counting rules: a matmul of (a x b) by (b x c) contributes `2abc`,
//! elementwise operations contribute their element counts, transcendentals
//! count as one op per element. Totals are sums over the breakdown, so they
//! are additive by construction and monotone in every size parameter.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Sizes the estimate is computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsConfig {
    /// Hashed features per serialized sheet (gather-sum width).
    pub features_per_sheet: u64,
    /// Token dimension d.
    pub dim: u64,
    /// Candidate workspace size m.
    pub workspace: u64,
    /// Adjacency channels K.
    pub channels: u64,
    /// Composition stages T.
    pub stages: u64,
    /// Propagation layers L.
    pub layers: u64,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        FlopsConfig {
            features_per_sheet: 220,
            dim: 128,
            workspace: 25,
            channels: 4,
            stages: 3,
            layers: 2,
        }
    }
}

/// Analytic cost report: encoder per pairwise sample, graph side per query.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopsEstimate {
    pub encoder_flops: u64,
    pub graph_flops: u64,
    /// (operation, flops); names are prefixed `encoder/` or `graph/` and the
    /// two totals equal the sums of their prefixes.
    pub breakdown: Vec<(String, u64)>,
}

/// Cost of a single matmul `(a x b) * (b x c)`.
pub fn matmul_flops(a: u64, b: u64, c: u64) -> u64 {
    2 * a * b * c
}

pub fn estimate_flops(cfg: &FlopsConfig) -> FlopsEstimate {
    let d = cfg.dim;
    let f = cfg.features_per_sheet;
    let m = cfg.workspace;
    let k = cfg.channels;
    let t = cfg.stages;
    let l = cfg.layers;

    let mut breakdown: Vec<(String, u64)> = Vec::new();

    // Stage 1, one pairwise sample = two sheet embeddings plus the pair head.
    let per_embed_gather = f * d;
    let per_embed_proj = 2 * (matmul_flops(1, d, d) + 2 * d); // two affine layers + bias/relu
    let per_embed_norm = 3 * d;
    breakdown.push(("encoder/feature_gather_sum".into(), 2 * per_embed_gather));
    breakdown.push(("encoder/projection".into(), 2 * per_embed_proj));
    breakdown.push(("encoder/l2_normalize".into(), 2 * per_embed_norm));
    breakdown.push(("encoder/pair_features".into(), 3 * d)); // diff, abs, product
    breakdown.push((
        "encoder/pair_head".into(),
        matmul_flops(1, 4 * d, d) + 2 * d + matmul_flops(1, d, 2) + 2,
    ));
    breakdown.push(("encoder/softmax".into(), 8));

    // Stage 2, one query over an m-candidate workspace.
    breakdown.push(("graph/semantic_channel".into(), m * m * (2 * d + 2)));
    breakdown.push(("graph/query_channel".into(), m * (2 * d + 1) + m * m));
    breakdown.push(("graph/schema_channel".into(), m * m));
    breakdown.push(("graph/shape_channel".into(), 8 * m * m));
    breakdown.push(("graph/channel_mixing".into(), t * (k * 2 * m * m + 5 * k)));
    breakdown.push((
        "graph/composition".into(),
        (t - 1) * matmul_flops(m, m, m),
    ));
    breakdown.push(("graph/row_normalize".into(), 3 * m * m));
    breakdown.push((
        "graph/propagation".into(),
        l * (matmul_flops(m, m, d) + matmul_flops(m, d, d) + m * d),
    ));
    breakdown.push((
        "graph/query_pooling".into(),
        matmul_flops(1, d, m) + 6 * m + matmul_flops(1, m, d),
    ));
    breakdown.push((
        "graph/node_head".into(),
        // per-candidate features (two cosines, degree, pooling weight)
        m * (2 * (2 * d + 3) + m + 2)
            + m * (matmul_flops(1, 4, d) + 2 * d + 2 * d + 1)
            + 4 * m,
    ));

    let encoder_flops = prefixed_total(&breakdown, "encoder/");
    let graph_flops = prefixed_total(&breakdown, "graph/");
    FlopsEstimate {
        encoder_flops,
        graph_flops,
        breakdown,
    }
}

fn prefixed_total(breakdown: &[(String, u64)], prefix: &str) -> u64 {
    breakdown
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .map(|(_, v)| v)
        .sum()
}

impl FlopsEstimate {
    /// Rechecks the totals-equal-sum invariant.
    pub fn totals_consistent(&self) -> bool {
        self.encoder_flops == prefixed_total(&self.breakdown, "encoder/")
            && self.graph_flops == prefixed_total(&self.breakdown, "graph/")
    }

    pub fn gflops_encoder(&self) -> f64 {
        self.encoder_flops as f64 / 1e9
    }

    pub fn gflops_graph(&self) -> f64 {
        self.graph_flops as f64 / 1e9
    }
}

/// Reference figures reported for the transformer-backbone configuration,
/// printed next to our analytic numbers for context.
pub const REFERENCE_ENCODER_GFLOPS: f64 = 45.9;
pub const REFERENCE_RETRIEVER_GFLOPS: f64 = 235.0;

impl core::fmt::Display for FlopsEstimate {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "{:<32} {:>16}", "operation", "FLOPs")?;
        for (name, v) in &self.breakdown {
            writeln!(f, "{name:<32} {v:>16}")?;
        }
        writeln!(
            f,
            "{:<32} {:>16}  ({:.6} GFLOPs)",
            "encoder total (per sample)",
            self.encoder_flops,
            self.gflops_encoder()
        )?;
        write!(
            f,
            "{:<32} {:>16}  ({:.6} GFLOPs)",
            "graph total (per query)",
            self.graph_flops,
            self.gflops_graph()
        )
    }
}

/// One-line sanity helper used by reports.
pub fn reference_caveat() -> String {
    format!(
        "reference (transformer backbone): encoder ~{REFERENCE_ENCODER_GFLOPS} GFLOPs/sample, \
         retriever ~{REFERENCE_RETRIEVER_GFLOPS} GFLOPs/query; ours uses a different backbone, \
         so absolute figures are not comparable"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_matmul_rule() {
        assert_eq!(matmul_flops(2, 3, 4), 48);
    }

    #[test]
    fn totals_equal_breakdown_sums() {
        let est = estimate_flops(&FlopsConfig::default());
        assert!(est.totals_consistent());
        assert!(est.encoder_flops > 0 && est.graph_flops > 0);
    }

    #[test]
    fn totals_are_monotone_in_sizes() {
        let base = estimate_flops(&FlopsConfig::default());
        for grow in [
            FlopsConfig {
                workspace: 50,
                ..FlopsConfig::default()
            },
            FlopsConfig {
                dim: 256,
                ..FlopsConfig::default()
            },
            FlopsConfig {
                stages: 4,
                ..FlopsConfig::default()
            },
            FlopsConfig {
                layers: 3,
                ..FlopsConfig::default()
            },
        ] {
            let est = estimate_flops(&grow);
            assert!(est.graph_flops >= base.graph_flops);
            assert!(est.encoder_flops >= base.encoder_flops);
        }
    }
}
