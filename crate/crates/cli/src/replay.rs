use vtc_core::attention_sim::{AttentionSnapshot, ModelDims};
use vtc_core::costmodel::cost_report;
use vtc_core::dyn_kv::{jaccard, DualCache, Pruner, Strategy};
use vtc_core::tokenstream::{load_trace, CompressionConfig, Trace};
use vtc_core::ttm::apply_ttm;

use crate::report::{mean, RunReport, StepRecord};
use crate::simulate::token_summary;
use crate::spec::{RunSpec, Source};
use crate::{build_stamp, HarnessError, REPORT_SCHEMA_VERSION};

/// Number of consecutive steps, starting at 0, with an attention block at `layer`.
pub fn available_steps(trace: &Trace, layer: u32) -> usize {
    let mut step = 0u32;
    while trace.attention_row(step, layer).is_some() {
        step += 1;
    }
    step as usize
}

/// Model dimensions implied by a trace; the feed-forward width only affects
/// the FLOPs estimate.
pub fn trace_dims(trace: &Trace, ffn_inner: Option<usize>) -> Result<ModelDims, HarnessError> {
    let hidden = trace.grid.hidden_dim();
    Ok(ModelDims::new(
        trace.layers as usize,
        hidden,
        ffn_inner.unwrap_or(4 * hidden),
        trace.heads as usize,
    )?)
}

/// Drives the run's strategy and a one-shot baseline from recorded attention
/// rows, reporting the per-step Jaccard overlap of their retained sets. Under
/// the `none` strategy no tokens are merged and the baseline prunes the full set.
pub fn replay(spec: &RunSpec) -> Result<RunReport, HarnessError> {
    let Source::Trace { path } = &spec.source else {
        return Err(HarnessError::Config("replay needs a trace source".into()));
    };
    let trace = load_trace(path)?;
    replay_trace(spec, &trace)
}

/// [`replay`] on an already loaded trace.
pub fn replay_trace(spec: &RunSpec, trace: &Trace) -> Result<RunReport, HarnessError> {
    spec.validate()?;
    if trace.grid.hidden_dim() != spec.dims.hidden || trace.layers as usize != spec.dims.layers {
        return Err(HarnessError::Config(
            "model dimensions differ from the trace's hidden size or layer count".into(),
        ));
    }
    let config = spec.effective_config();
    let layer = config.eval_layer;
    let tpf = trace.grid.tokens_per_frame();
    let ttm = apply_ttm(&trace.grid, &config);
    let mut cache = DualCache::<f32>::ids_only(spec.dims.layers, ttm.ids.clone(), layer, config.p_rate)?;
    let baseline_config = CompressionConfig {
        p_rate: spec.config.p_rate,
        ..config
    };
    let mut baseline = DualCache::<f32>::ids_only(spec.dims.layers, ttm.ids.clone(), layer, baseline_config.p_rate)?;
    let mut pruner = Pruner::new(spec.strategy, config);
    pruner.check_invariants = spec.check_invariants;
    let mut one_shot = Pruner::new(Strategy::OneShot, baseline_config);
    one_shot.check_invariants = spec.check_invariants;
    let deepest = spec.dims.layers - 1;

    let mut steps = Vec::with_capacity(spec.steps);
    for step in 0..spec.steps {
        let row = trace
            .attention_row(step as u32, layer as u32)
            .ok_or(HarnessError::MissingAttentionBlock {
                step: step as u32,
                layer: layer as u32,
            })?;
        let scores: Vec<f64> = ttm.ids.iter().map(|id| f64::from(row[id.row(tpf)])).collect();
        let visual_mass: f64 = scores.iter().sum();
        let snapshot = AttentionSnapshot {
            step,
            layer,
            ids: ttm.ids.clone(),
            scores,
            other_mass: (1.0 - visual_mass).max(0.0),
        };
        cache.set_step(step);
        baseline.set_step(step);
        pruner.apply(&snapshot, &mut cache)?;
        one_shot.apply(&snapshot, &mut baseline)?;
        let (readmitted, evicted) = pruner
            .last
            .as_ref()
            .map_or((0, 0), |d| (d.readmitted.len(), d.evicted.len()));
        steps.push(StepRecord {
            step,
            token: None,
            readmitted,
            evicted,
            active_visual: cache.active_visual_rows(deepest),
            jaccard_vs_one_shot: Some(jaccard(cache.retained(), baseline.retained())),
            latency_us: None,
        });
    }

    let tokens = token_summary(
        trace.grid.len(),
        trace.text.count(),
        ttm.len(),
        cache.quota(),
        &config,
        ttm.records.len(),
    );
    let flops = cost_report(
        &config,
        &spec.dims,
        trace.grid.frames(),
        tpf,
        trace.text.count() as u64,
        spec.steps as u64,
    )?;
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        build: build_stamp(),
        command: "replay",
        spec: spec.clone(),
        tokens,
        flops,
        mean_swap_churn: mean(steps.iter().map(|s| (s.readmitted + s.evicted) as f64)).unwrap_or(0.0),
        mean_step_latency_us: None,
        steps,
        audit_log: cache.audit_log().to_vec(),
        merge_records: ttm.records,
    })
}
