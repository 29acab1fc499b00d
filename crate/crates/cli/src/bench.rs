use std::time::Instant;

use serde::Serialize;
use vtc_core::attention_sim::{Decoder, DecoderState, ModelDims};
use vtc_core::dyn_kv::{DualCache, Pruner, Strategy};
use vtc_core::tokenstream::{synth_grid_with, CompressionConfig, DEFAULT_PERTURBATION};
use vtc_core::ttm::apply_ttm;

use crate::report::median;
use crate::{build_stamp, HarnessError, REPORT_SCHEMA_VERSION};

/// Decode-latency benchmark between a baseline and a candidate strategy.
///
/// Caches are filled with seeded random rows instead of a prefill pass. The
/// `none` strategy always runs on the full token set; other strategies apply
/// temporal merging at `config.k_rate` and prune at `config.p_rate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSpec {
    pub dims: ModelDims,
    pub config: CompressionConfig,
    pub frames: usize,
    pub tokens_per_frame: usize,
    pub text_tokens: usize,
    pub baseline: Strategy,
    pub candidate: Strategy,
    pub warmup_steps: usize,
    pub batches: usize,
    pub steps_per_batch: usize,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.dims.validate()?;
        self.config.validate_for_layers(self.dims.layers)?;
        if self.frames == 0 || self.tokens_per_frame == 0 {
            return Err(HarnessError::Config("frames and tokens per frame must be >= 1".into()));
        }
        if self.batches == 0 || self.steps_per_batch == 0 {
            return Err(HarnessError::Config("batches and steps per batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRun {
    pub strategy: Strategy,
    pub visual_rows_full: usize,
    pub survivors: usize,
    /// Visual rows attended by the deepest layer after the last step.
    pub active_visual_rows: usize,
    /// Largest attended K+V footprint over all layers: rows × width × 4 bytes × 2.
    pub peak_active_bytes: usize,
    pub peak_parked_bytes: usize,
    pub batch_mean_step_us: Vec<f64>,
    pub median_step_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub build: String,
    pub spec: BenchSpec,
    pub baseline: BenchRun,
    pub candidate: BenchRun,
    /// Baseline ÷ candidate median step time.
    pub speedup: f64,
    /// Candidate ÷ baseline active visual rows in the deepest layer.
    pub cache_row_ratio: f64,
}

struct Runner {
    strategy: Strategy,
    cache: DualCache<f32>,
    state: DecoderState<f32>,
    pruner: Pruner,
    full: usize,
    survivors: usize,
    peak_active: usize,
    peak_parked: usize,
    batches: Vec<f64>,
}

impl Runner {
    fn new(spec: &BenchSpec, decoder: &Decoder<f32>, strategy: Strategy) -> Result<Self, HarnessError> {
        let mut config = spec.config;
        if strategy == Strategy::None {
            config.k_rate = 0.0;
            config.p_rate = 0.0;
        }
        let grid = synth_grid_with::<f32>(config.seed, spec.frames, spec.tokens_per_frame, 4, DEFAULT_PERTURBATION);
        let ids = apply_ttm(&grid, &config).ids;
        let survivors = ids.len();
        let (cache, state) =
            decoder.synthetic_cache(ids, spec.text_tokens, config.eval_layer, config.p_rate, config.seed)?;
        let mut pruner = Pruner::new(strategy, config);
        pruner.check_invariants = false;
        Ok(Self {
            strategy,
            cache,
            state,
            pruner,
            full: grid.len(),
            survivors,
            peak_active: 0,
            peak_parked: 0,
            batches: Vec::new(),
        })
    }

    fn step(&mut self, decoder: &Decoder<f32>) -> Result<(), HarnessError> {
        decoder.decode_step(&mut self.state, &mut self.cache, &mut self.pruner)?;
        self.peak_active = self.peak_active.max(self.cache.active_bytes());
        self.peak_parked = self.peak_parked.max(self.cache.parked_bytes());
        Ok(())
    }

    fn batch(&mut self, decoder: &Decoder<f32>, steps: usize) -> Result<(), HarnessError> {
        let started = Instant::now();
        for _ in 0..steps {
            self.step(decoder)?;
        }
        self.batches.push(started.elapsed().as_secs_f64() * 1e6 / steps as f64);
        Ok(())
    }

    fn finish(self, layers: usize) -> BenchRun {
        BenchRun {
            strategy: self.strategy,
            visual_rows_full: self.full,
            survivors: self.survivors,
            active_visual_rows: self.cache.active_visual_rows(layers - 1),
            peak_active_bytes: self.peak_active,
            peak_parked_bytes: self.peak_parked,
            median_step_us: median(self.batches.clone()).unwrap_or(0.0),
            batch_mean_step_us: self.batches,
        }
    }
}

/// Interleaves timed batches of both strategies so slow drifts in machine
/// load affect them equally; speedup compares median batch means.
pub fn bench(spec: &BenchSpec) -> Result<BenchReport, HarnessError> {
    spec.validate()?;
    let decoder = Decoder::<f32>::new(spec.dims, spec.config.seed, spec.config.scale);
    let mut runners = [
        Runner::new(spec, &decoder, spec.baseline)?,
        Runner::new(spec, &decoder, spec.candidate)?,
    ];
    for r in runners.iter_mut() {
        for _ in 0..spec.warmup_steps {
            r.step(&decoder)?;
        }
    }
    for _ in 0..spec.batches {
        for r in runners.iter_mut() {
            r.batch(&decoder, spec.steps_per_batch)?;
        }
    }
    let [base, cand] = runners;
    let (base, cand) = (base.finish(spec.dims.layers), cand.finish(spec.dims.layers));
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        build: build_stamp(),
        spec: spec.clone(),
        speedup: base.median_step_us / cand.median_step_us,
        cache_row_ratio: cand.active_visual_rows as f64 / base.active_visual_rows as f64,
        baseline: base,
        candidate: cand,
    })
}
