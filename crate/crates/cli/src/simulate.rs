use std::time::Instant;

use vtc_core::attention_sim::Decoder;
use vtc_core::costmodel::{cost_report, retained_ratio};
use vtc_core::dyn_kv::{Pruner, RetentionDecision};
use vtc_core::tokenstream::{load_trace, synth_grid_with, synth_text, CompressionConfig, TextTokens, VisualTokenGrid};
use vtc_core::ttm::apply_ttm;

use crate::report::{mean, RunReport, StepRecord, TokenSummary};
use crate::spec::{RunSpec, Source};
use crate::{build_stamp, HarnessError, REPORT_SCHEMA_VERSION};

pub(crate) fn load_source(spec: &RunSpec) -> Result<(VisualTokenGrid<f32>, TextTokens<f32>), HarnessError> {
    match &spec.source {
        Source::Synthetic {
            frames,
            tokens_per_frame,
            dim,
            text_tokens,
            perturbation,
        } => Ok((
            synth_grid_with(spec.config.seed, *frames, *tokens_per_frame, *dim, *perturbation),
            synth_text(spec.config.seed, *text_tokens, *dim),
        )),
        Source::Trace { path } => {
            let trace = load_trace(path)?;
            if trace.grid.hidden_dim() != spec.dims.hidden {
                return Err(HarnessError::Config(format!(
                    "trace hidden dim {} differs from the model hidden size {}",
                    trace.grid.hidden_dim(),
                    spec.dims.hidden
                )));
            }
            Ok((trace.grid, trace.text))
        }
    }
}

pub(crate) fn token_summary(
    total: usize,
    text_tokens: usize,
    survivors: usize,
    quota: usize,
    config: &CompressionConfig,
    merge_records: usize,
) -> TokenSummary {
    let (ideal1, ideal2) = retained_ratio(config.k_rate, config.p_rate);
    TokenSummary {
        visual_total: total,
        text_tokens,
        stage1_survivors: survivors,
        retention_quota: quota,
        retained_ratio_stage1: survivors as f64 / total as f64,
        retained_ratio_final: quota as f64 / total as f64,
        ideal_ratio_stage1: ideal1,
        ideal_ratio_final: ideal2,
        merge_records,
    }
}

/// Prefill with temporal merging, then `spec.steps` cached decode steps under
/// `spec.strategy`. The `none` strategy disables both compression stages.
pub fn simulate(spec: &RunSpec) -> Result<RunReport, HarnessError> {
    spec.validate()?;
    let (grid, text) = load_source(spec)?;
    let config = spec.effective_config();
    let ttm = apply_ttm(&grid, &config);
    let decoder = Decoder::<f32>::new(spec.dims, config.seed, config.scale);
    let (mut cache, mut state) = decoder.prefill(
        &ttm.ids,
        &ttm.rows,
        &text,
        config.eval_layer,
        config.p_rate,
        spec.prefill,
    )?;
    let mut pruner = Pruner::new(spec.strategy, config);
    pruner.check_invariants = spec.check_invariants;
    let deepest = spec.dims.layers - 1;

    let mut steps = Vec::with_capacity(spec.steps);
    for _ in 0..spec.steps {
        let started = Instant::now();
        let out = decoder.decode_step(&mut state, &mut cache, &mut pruner)?;
        let elapsed = started.elapsed();
        let (readmitted, evicted) = pruner
            .last
            .as_ref()
            .map_or((0, 0), |d: &RetentionDecision| (d.readmitted.len(), d.evicted.len()));
        steps.push(StepRecord {
            step: out.snapshot.step,
            token: Some(out.token),
            readmitted,
            evicted,
            active_visual: cache.active_visual_rows(deepest),
            jaccard_vs_one_shot: None,
            latency_us: spec.timing.then_some(elapsed.as_secs_f64() * 1e6),
        });
    }

    let tokens = token_summary(
        grid.len(),
        text.count(),
        ttm.len(),
        cache.quota(),
        &config,
        ttm.records.len(),
    );
    let flops = cost_report(
        &config,
        &spec.dims,
        grid.frames(),
        grid.tokens_per_frame(),
        text.count() as u64,
        spec.steps as u64,
    )?;
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        build: build_stamp(),
        command: "simulate",
        spec: spec.clone(),
        tokens,
        flops,
        mean_swap_churn: mean(steps.iter().map(|s| (s.readmitted + s.evicted) as f64)).unwrap_or(0.0),
        mean_step_latency_us: mean(steps.iter().filter_map(|s| s.latency_us)),
        steps,
        audit_log: cache.audit_log().to_vec(),
        merge_records: ttm.records,
    })
}
