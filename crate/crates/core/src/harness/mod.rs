//! Synthetic shifts, evaluation metrics, LOOCV adjustment of baselines and
//! the benchmark runner tying everything together.

mod benchmark;
mod loocv;
mod metrics;
mod synth;

pub use benchmark::{
    classifier_error, compare_losses, estimate_shift, evaluate_shift, run_benchmark, run_manifests, BenchmarkOutput, EvalOptions,
    EvaluationRecord, LossComparison, LossRow, ShiftEstimates, ShiftFailure, SuiteConfig, SuiteShift,
};
pub use loocv::{
    apply_adjustment, fit_adjustment, loocv_adjust, AdjustedPrediction, AdjustmentMode, AdjustmentParams,
    LoocvFold, LoocvReport, SCALE_BOUND, SHIFT_BOUND,
};
pub use metrics::{
    conditional_overestimation, coverage, mae, pair_conditional_overestimation, pair_coverage, pair_mae,
    MethodMetrics, MetricsSummary,
};
pub use synth::{fit_centroid_head, generate_synthetic_shift, SynthConfig};

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for a named component: `seed + fnv1a64(name)` (wrapping).
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    seed.wrapping_add(stable_hash(component))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(stable_hash(""), 0xcbf29ce484222325);
        assert_eq!(stable_hash("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(derive_seed(1, ""), 0xcbf29ce484222326);
        assert_ne!(derive_seed(0, "shift/1"), derive_seed(0, "shift/2"));
    }
}
