//! The stage loop: sample → gradient → sensitivity → refresh/retain →
//! AdamW delta → masked update, with evaluation, logging and snapshots.

use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use super::config::RunConfig;
use super::log::to_csv;
use super::snapshot;
use super::summary::{summarize, RunSummary};
use crate::epi::{
    diff_masks, probe_static_mask, refresh_policy, select_mask, IsolationMask, MaskStrategy, ProbeConfig,
    RefreshDecision, SensitivityState,
};
use crate::error::{EpiError, Result};
use crate::metrics::{quartile_buckets, tgc, MetricRecord};
use crate::model::{evaluate, loss_and_gradient, ModelSpec};
use crate::optim::{apply_masked_update, AdamW, LrSchedule};
use crate::params::ParamStore;
use crate::rng::{Rng, SeedTree};
use crate::tasks::{build_stream, make_conflict_suite, sample_batch, TaskSpec, TaskStream};

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<MetricRecord>,
    /// Mask snapshots in step order (empty for unmasked methods).
    pub snapshots: Vec<IsolationMask>,
    pub store: ParamStore,
}

/// Step-by-step training state for one (config, seed) pair.
pub struct Trainer {
    config: RunConfig,
    seed: u64,
    spec: ModelSpec,
    tasks: Vec<TaskSpec>,
    stream: TaskStream,
    strategy: MaskStrategy,
    store: ParamStore,
    sensitivity: SensitivityState,
    optimizer: AdamW,
    mask: IsolationMask,
    /// First non-empty mask; the reference for drift.
    initial_mask: Option<IsolationMask>,
    last_refresh: Option<IsolationMask>,
    buckets: Vec<(String, Range<usize>)>,
    data_rng: Rng,
    mask_rng: Rng,
    schedule: Option<LrSchedule>,
    step: u64,
    stage: usize,
    local_step: usize,
    records: Vec<MetricRecord>,
    snapshots: Vec<IsolationMask>,
}

impl Trainer {
    /// Builds the suite, stream, model and (for the static baseline) the
    /// probe mask, then logs the step-0 evaluation. `config.seeds` is
    /// ignored in favour of `seed`.
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        config.seeds = vec![seed];
        let seeds = SeedTree::new(seed);
        let spec = config.model_spec();
        let tasks = make_conflict_suite(&mut seeds.stream("tasks"), &config.suite)?;
        let mut store = ParamStore::zeros(spec.partition()?);
        store.gaussian_init(&mut seeds.stream("init"), config.model.init_scale)?;
        let ordering = config.method.ordering(config.ordering);
        let stream = build_stream(&tasks, ordering, &seeds, config.steps_per_stage, config.eval_size)?;
        let d = store.dim();
        let strategy = config.strategy();
        let buckets = quartile_buckets(store.partition());

        let mut trainer = Trainer {
            sensitivity: SensitivityState::new(d, config.beta)?,
            optimizer: AdamW::new(config.optimizer, d)?,
            mask: IsolationMask::empty(d),
            initial_mask: None,
            last_refresh: None,
            buckets,
            data_rng: seeds.stream("data"),
            mask_rng: seeds.stream("mask"),
            schedule: None,
            step: 0,
            stage: 0,
            local_step: 0,
            records: Vec::new(),
            snapshots: Vec::new(),
            config,
            seed,
            spec,
            tasks,
            stream,
            strategy,
            store,
        };
        if strategy == MaskStrategy::Static {
            let probe = ProbeConfig {
                steps: trainer.config.probe_steps,
                batch_size: trainer.config.batch_size,
                beta: trainer.config.beta,
                p: trainer.config.p,
                layer_norm: trainer.config.layer_norm,
                optimizer: trainer.config.optimizer,
                warmup_fraction: trainer.config.warmup_fraction,
                schedule: trainer.config.schedule,
            };
            let outcome = probe_static_mask(&trainer.spec, &trainer.store, &trainer.tasks, &probe, &seeds)?;
            trainer.mask = outcome.mask;
            trainer.log(None, "mask_popcount", trainer.mask.popcount() as f64);
            trainer.snapshot();
        }
        trainer.evaluate_all()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn stream(&self) -> &TaskStream {
        &self.stream
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn sensitivity(&self) -> &SensitivityState {
        &self.sensitivity
    }

    pub fn mask(&self) -> &IsolationMask {
        &self.mask
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.strategy
    }

    /// Completed update steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.stream.total_steps() as u64
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    /// Runs one update; errors carry the step they happened at.
    pub fn step_once(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(EpiError::InvalidArgument("run already finished".into()));
        }
        let t = self.step + 1;
        self.advance(t).map_err(|e| EpiError::RunAborted {
            step: t as usize,
            source: Box::new(e),
        })
    }

    /// Steps until `step` updates are complete (or the run ends).
    pub fn run_until(&mut self, step: u64) -> Result<()> {
        while self.step < step.min(self.total_steps()) {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn finish(mut self, wall_time_secs: f64) -> Result<RunOutput> {
        self.run_until(u64::MAX)?;
        let summary = summarize(&self.records, &self.config, wall_time_secs)?;
        Ok(RunOutput {
            summary,
            records: self.records,
            snapshots: self.snapshots,
            store: self.store,
        })
    }

    fn advance(&mut self, t: u64) -> Result<()> {
        let stage = self.stream.stages[self.stage].clone();
        if self.local_step == 0 {
            if self.stage > 0 && self.config.reset_sensitivity_on_stage {
                self.sensitivity.reset();
            }
            self.schedule = Some(LrSchedule::new(
                self.config.optimizer.lr,
                self.config.warmup_fraction,
                stage.steps,
                self.config.schedule,
            )?);
        }
        self.local_step += 1;

        let task = stage.draw_task(&mut self.data_rng);
        let batch = sample_batch(&self.tasks[task], &mut self.data_rng, self.config.batch_size)?;
        let (loss, grad) = loss_and_gradient(&self.spec, &self.store, &batch)?;
        self.step = t;
        self.log(Some(task), "loss", loss);
        self.sensitivity.accumulate(&grad)?;
        if self.is_dynamic() && refresh_policy(t, self.config.refresh_interval)? == RefreshDecision::Refresh {
            self.refresh(t)?;
        }
        let lr = self.schedule.as_ref().expect("schedule set at stage start").lr_at(self.local_step);
        let delta = self.optimizer.delta(&grad, self.store.values(), lr)?;
        apply_masked_update(&mut self.store, &delta, &self.mask.bits)?;

        let stage_end = self.local_step == stage.steps;
        if stage_end || t.is_multiple_of(self.config.snapshot_every as u64) {
            self.evaluate_all()?;
            if self.strategy != MaskStrategy::None {
                self.snapshot();
            }
        }
        if stage_end {
            for &task in &stage.tasks {
                if self.stream.owning_stage(task) == Some(self.stage) {
                    let perf = evaluate(&self.spec, &self.store, &self.stream.eval_sets[task])?;
                    self.log(Some(task), "perf_initial", perf);
                }
            }
            self.stage += 1;
            self.local_step = 0;
        }
        Ok(())
    }

    fn is_dynamic(&self) -> bool {
        matches!(
            self.strategy,
            MaskStrategy::Epi | MaskStrategy::PerLayerBudget | MaskStrategy::GlobalRaw | MaskStrategy::Random
        )
    }

    fn refresh(&mut self, t: u64) -> Result<()> {
        let next = select_mask(
            &self.sensitivity,
            self.config.p,
            self.strategy,
            self.store.partition(),
            &mut self.mask_rng,
            t,
        )?;
        let transition = diff_masks(&self.mask, &next)?;
        self.log(None, "mask_popcount", next.popcount() as f64);
        self.log(None, "mask_locked", transition.locked.len() as f64);
        self.log(None, "mask_freed", transition.freed.len() as f64);
        if let Some(prev) = &self.last_refresh {
            let flips = prev.bits.xor(&next.bits)?;
            let rates: Vec<(String, f64)> = self
                .buckets
                .iter()
                .map(|(label, range)| {
                    let pct = flips.count_ones_in(range.clone()) as f64 / range.len() as f64 * 100.0;
                    (format!("flip:{label}"), pct)
                })
                .collect();
            for (name, pct) in rates {
                self.log(None, &name, pct);
            }
        }
        self.last_refresh = Some(next.clone());
        self.mask = next;
        self.snapshot();
        Ok(())
    }

    /// Records the current mask once per step, plus its overlap with the
    /// first non-empty mask.
    fn snapshot(&mut self) {
        let mut mask = self.mask.clone();
        mask.step = self.step;
        if self.snapshots.last().is_some_and(|s| s.step == mask.step) {
            return;
        }
        if self.initial_mask.is_none() && mask.popcount() > 0 {
            self.initial_mask = Some(mask.clone());
        }
        if let Some(init) = &self.initial_mask {
            let j = crate::metrics::jaccard(&init.bits, &mask.bits).unwrap_or(0.0);
            self.log(None, "jaccard_initial", j);
        }
        self.snapshots.push(mask);
    }

    fn evaluate_all(&mut self) -> Result<()> {
        for task in 0..self.tasks.len() {
            let perf = evaluate(&self.spec, &self.store, &self.stream.eval_sets[task])?;
            self.log(Some(task), "perf", perf);
        }
        for (i, j) in self.config.suite.conflict_pairs.clone() {
            let (_, gi) = loss_and_gradient(&self.spec, &self.store, &self.stream.eval_sets[i])?;
            let (_, gj) = loss_and_gradient(&self.spec, &self.store, &self.stream.eval_sets[j])?;
            match tgc(&gi, &gj) {
                Ok(v) => self.log(None, &format!("tgc:{i}-{j}"), v),
                Err(EpiError::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn log(&mut self, task_id: Option<usize>, name: &str, value: f64) {
        self.records.push(MetricRecord {
            step: self.step,
            stage: self.stage.min(self.stream.stages.len() - 1),
            task_id,
            name: name.to_string(),
            value,
        });
    }
}

/// Runs one seed to completion in memory.
pub fn train_run(config: &RunConfig, seed: u64) -> Result<RunOutput> {
    let start = Instant::now();
    let trainer = Trainer::new(config, seed)?;
    let mut out = trainer.finish(0.0)?;
    out.summary.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Writes a run's artifacts under `dir`: `metrics.csv`, `summary.json`,
/// `config.json`, `partition.json` and `snapshots/mask_<step>.epim`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    let write = |name: &str, body: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| EpiError::io(path, e))
    };
    let snap_dir = dir.join("snapshots");
    std::fs::create_dir_all(&snap_dir).map_err(|e| EpiError::io(&snap_dir, e))?;
    write("metrics.csv", to_csv(&out.records)?.as_bytes())?;
    write("summary.json", serde_json::to_string_pretty(&out.summary)?.as_bytes())?;
    write("config.json", serde_json::to_string_pretty(&out.summary.config)?.as_bytes())?;
    write("partition.json", serde_json::to_string_pretty(out.store.partition())?.as_bytes())?;
    for mask in &out.snapshots {
        snapshot::write(&snap_dir.join(snapshot::file_name(mask.step)), mask)?;
    }
    Ok(())
}

/// Runs every configured seed, each into `<output_dir>/seed_<n>`.
pub fn run_all(config: &RunConfig) -> Result<Vec<RunSummary>> {
    use rayon::prelude::*;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = train_run(config, seed)?;
            let dir = config.output_dir.join(format!("seed_{seed}"));
            write_run(&dir, &out)?;
            Ok(out.summary)
        })
        .collect()
}
