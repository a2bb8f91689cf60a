//! Experiment orchestration: the alternating search loop, run artifacts and
//! the analysis stages that read them back.
//!
//! A run directory holds `manifest.json`, the controller and pool
//! checkpoints and the CSV artifacts. Every random draw comes from a stream
//! split off the run seed in a fixed order, so the same config and seed give
//! byte-identical CSVs.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cellspace::{random_architecture, Architecture, SearchSpace, StepKind};
use crate::childnet::{
    evaluate_ppl, init_pool, reward_of_ppl, shared_train_epoch, ChildDims, SharedPool, TaskData, TrainConfig,
    BUNDLED_CORPUS,
};
use crate::controller::{
    init_controller, sample_architecture, teacher_forced_trace, ControllerDims, ControllerParams, ControllerTrainer,
    PGConfig, SampleTrace, StepStats,
};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};
use crate::replay::{ReplayBuffer, ReplaySchedule};
use crate::simlab::{
    collapse_score, correlation_table, read_records_csv, similarity_records, write_records_csv, CorrelationTable,
    GedOptions, TrainType,
};

pub const MANIFEST: &str = "manifest.json";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const ARGMAX_PROFILE: &str = "argmax_profile.csv";
pub const PPL_DISTRIBUTION: &str = "ppl_distribution.csv";
pub const HIDDEN_STATES: &str = "hidden_states.csv";
pub const SIMILARITY_RECORDS: &str = "similarity_records.csv";
pub const CORRELATION_TABLE: &str = "correlation_table.csv";
pub const REPLAY_BUFFER: &str = "replay_buffer.csv";
pub const CONTROLLER_CKPT: &str = "controller.json";
pub const POOL_CKPT: &str = "pool.json";
pub const FINAL_MODEL_CKPT: &str = "final_model.json";

pub const CSV_ARTIFACTS: [&str; 6] = [
    TRAINING_LOG,
    ARGMAX_PROFILE,
    PPL_DISTRIBUTION,
    HIDDEN_STATES,
    SIMILARITY_RECORDS,
    CORRELATION_TABLE,
];

const MANIFEST_FORMAT: &str = "enas-lab-run";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub dims: ControllerDims,
    pub pg: PGConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChildConfig {
    pub dims: ChildDims,
    pub train: TrainConfig,
    /// Trailing share of the corpus held out for validation.
    pub valid_fraction: f64,
}

impl Default for ChildConfig {
    fn default() -> Self {
        ChildConfig {
            dims: ChildDims::default(),
            train: TrainConfig::default(),
            valid_fraction: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub schedule: ReplaySchedule,
    /// Divides every schedule count (capacity, store, replace, sample).
    pub divisor: usize,
    /// Share of each tick's fresh entries drawn from the controller at tick
    /// time; the rest are the epoch's most recent controller-step samples.
    pub current_fraction: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            schedule: ReplaySchedule::default(),
            divisor: 10,
            current_fraction: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: TrainType,
    pub seed: u64,
    pub space: SearchSpace,
    pub controller: ControllerConfig,
    pub child: ChildConfig,
    pub replay: ReplayConfig,
    pub epochs: usize,
    pub controller_steps_per_epoch: usize,
    pub controller_batch: usize,
    pub eval_samples: usize,
    /// Reward slice length in BPTT windows from the start of the validation stream.
    pub reward_windows: usize,
    /// Training epochs for the from-scratch model in `derive-final`.
    pub final_epochs: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: TrainType::Unsupervised,
            seed: 0,
            space: SearchSpace::default(),
            controller: ControllerConfig::default(),
            child: ChildConfig::default(),
            replay: ReplayConfig::default(),
            epochs: 20,
            controller_steps_per_epoch: 50,
            controller_batch: 8,
            eval_samples: 100,
            reward_windows: 10,
            final_epochs: 5,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        self.space.check()?;
        self.controller.pg.check()?;
        self.child.train.check()?;
        self.replay_schedule()?;
        if !(0.0..1.0).contains(&self.child.valid_fraction) {
            return Err(Error::Config("valid_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.replay.current_fraction) {
            return Err(Error::Config("current_fraction must lie in [0, 1]".into()));
        }
        if self.controller_batch == 0 || self.reward_windows == 0 {
            return Err(Error::Config("controller_batch and reward_windows must be positive".into()));
        }
        if self.eval_samples < 3 {
            return Err(Error::Config("eval_samples must be at least 3".into()));
        }
        Ok(())
    }

    pub fn replay_schedule(&self) -> Result<ReplaySchedule> {
        self.replay.schedule.scaled(self.replay.divisor)
    }

    fn task_data(&self) -> Result<TaskData> {
        TaskData::from_bytes(BUNDLED_CORPUS, self.child.valid_fraction)
    }
}

/// Whether a mode ever updates the controller.
pub fn trains_controller(mode: TrainType) -> bool {
    matches!(mode, TrainType::Supervised | TrainType::Unsupervised)
}

/// Independent random streams derived from the run seed.
struct Streams {
    controller_init: Rng,
    pool_init: Rng,
    shared: Rng,
    policy: Rng,
    replay: Rng,
    eval: Rng,
    final_model: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut m = Rng::new(seed);
        Streams {
            controller_init: m.split(),
            pool_init: m.split(),
            shared: m.split(),
            policy: m.split(),
            replay: m.split(),
            eval: m.split(),
            final_model: m.split(),
        }
    }
}

/// The controller a run starts from (and never leaves in random mode).
pub fn initial_controller(cfg: &ExperimentConfig) -> Result<ControllerParams> {
    init_controller(&mut Streams::new(cfg.seed).controller_init, cfg.space, cfg.controller.dims)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub shared_loss: f64,
    pub skipped_minibatches: usize,
    pub mean_reward: Option<f64>,
    pub baseline: Option<f64>,
    pub pg_loss: Option<f64>,
    pub sup_loss: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub controller_updates: u64,
    pub buffer_size: usize,
}

pub const TRAINING_LOG_HEADER: [&str; 10] = [
    "epoch",
    "shared_loss",
    "skipped_minibatches",
    "mean_reward",
    "baseline",
    "pg_loss",
    "sup_loss",
    "mean_entropy",
    "controller_updates",
    "buffer_size",
];

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn mean_of(stats: &[StepStats], f: impl Fn(&StepStats) -> Option<f64>) -> Option<f64> {
    let xs: Vec<f64> = stats.iter().filter_map(f).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub code_version: String,
    pub seed: u64,
    pub mode: TrainType,
    pub config: ExperimentConfig,
    pub vocab_size: usize,
    pub controller_updates: u64,
    pub buffer_sizes: Vec<usize>,
    pub collapse_score: f64,
    pub artifacts: Vec<String>,
    pub best_arch: Option<String>,
    pub initial_ppl: Option<f64>,
    pub final_ppl: Option<f64>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Checkpoint(format!("{} is not a run manifest", path.display())));
        }
        Ok(m)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub log: Vec<EpochLog>,
    pub controller_updates: u64,
    pub collapse_score: f64,
}

/// Runs the alternating search described by `cfg` and writes every artifact
/// into `cfg.output_dir`. `progress` sees each epoch's log line.
pub fn run_search(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&EpochLog)) -> Result<RunSummary> {
    cfg.check()?;
    let data = cfg.task_data()?;
    let mut st = Streams::new(cfg.seed);
    let space = cfg.space;
    let mut trainer = ControllerTrainer::new(init_controller(&mut st.controller_init, space, cfg.controller.dims)?);
    let mut pool = init_pool(&mut st.pool_init, space, cfg.child.dims, data.vocab_size())?;
    let schedule = cfg.replay_schedule()?;
    let mut buffer = ReplayBuffer::new(schedule)?;
    let train_cfg = &cfg.child.train;
    let slice_len = (cfg.reward_windows * train_cfg.bptt_len + 1).min(data.valid.len());
    let reward_slice = &data.valid[..slice_len];
    let supervised = cfg.mode == TrainType::Supervised;

    let mut baseline: Option<f64> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let at_epoch = |e: Error| e.context(format!("epoch {epoch}"));
        let shared = if cfg.mode == TrainType::Uniform {
            shared_train_epoch(&mut pool, |r| Ok(random_architecture(r, &space)), &data.train, train_cfg, &mut st.shared)
        } else {
            let params = &trainer.params;
            shared_train_epoch(
                &mut pool,
                |r| sample_architecture(params, r).map(|(a, _)| a),
                &data.train,
                train_cfg,
                &mut st.shared,
            )
        }
        .map_err(at_epoch)?;

        let mut steps = Vec::new();
        let mut recent = Vec::new();
        if trains_controller(cfg.mode) {
            for step in 0..cfg.controller_steps_per_epoch {
                let at_step = |e: Error| e.context(format!("epoch {epoch} controller step {step}"));
                let mut batch = Vec::with_capacity(cfg.controller_batch);
                for _ in 0..cfg.controller_batch {
                    let (arch, trace) = sample_architecture(&trainer.params, &mut st.policy).map_err(at_step)?;
                    let ppl = evaluate_ppl(&pool, &arch, reward_slice).map_err(at_step)?;
                    batch.push((trace, reward_of_ppl(ppl, train_cfg).map_err(at_step)?));
                    recent.push(arch);
                }
                let b = *baseline
                    .get_or_insert_with(|| batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64);
                let sample = if supervised && buffer.supervising(epoch) {
                    Some(buffer.sample(&mut st.replay, schedule.sample_size).map_err(at_step)?)
                } else {
                    None
                };
                let (nb, stats) = trainer
                    .train_step(&batch, b, sample.as_deref(), &cfg.controller.pg)
                    .map_err(at_step)?;
                baseline = Some(nb);
                steps.push(stats);
            }
        }

        if supervised {
            let need = buffer.fresh_needed(epoch);
            let n_current = (need as f64 * cfg.replay.current_fraction).round() as usize;
            let n_recent = (need - n_current).min(recent.len());
            let mut fresh = recent[recent.len() - n_recent..].to_vec();
            while fresh.len() < need {
                fresh.push(sample_architecture(&trainer.params, &mut st.replay).map_err(at_epoch)?.0);
            }
            buffer.tick(epoch, &fresh, &mut st.replay).map_err(at_epoch)?;
        }

        let line = EpochLog {
            epoch,
            shared_loss: shared.mean_loss,
            skipped_minibatches: shared.skipped,
            mean_reward: mean_of(&steps, |s| Some(s.mean_reward)),
            baseline: (!steps.is_empty()).then_some(baseline).flatten(),
            pg_loss: mean_of(&steps, |s| Some(s.pg_loss)),
            sup_loss: mean_of(&steps, |s| s.sup_loss),
            mean_entropy: mean_of(&steps, |s| Some(s.mean_entropy)),
            controller_updates: trainer.updates,
            buffer_size: buffer.len(),
        };
        progress(&line);
        log.push(line);
    }

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    trainer.params.save(&dir.join(CONTROLLER_CKPT))?;
    pool.save(&dir.join(POOL_CKPT))?;
    write_training_log(&dir.join(TRAINING_LOG), &log)?;
    let mut artifacts: Vec<String> = vec![CONTROLLER_CKPT.into(), POOL_CKPT.into()];
    artifacts.extend(CSV_ARTIFACTS.iter().map(|s| s.to_string()));
    if supervised {
        buffer.write_csv(&dir.join(REPLAY_BUFFER))?;
        artifacts.push(REPLAY_BUFFER.into());
    }

    let eval = eval_set(cfg, &trainer.params, &pool, &data, true)?;
    write_argmax_profile(&dir.join(ARGMAX_PROFILE), &space, &eval.traces)?;
    write_ppl_distribution(&dir.join(PPL_DISTRIBUTION), &eval.archs, &eval.ppls)?;
    let hiddens = eval.hiddens()?;
    let collapse = collapse_score(&hiddens)?;
    write_hidden_states(&dir.join(HIDDEN_STATES), &hiddens, collapse)?;
    let records = similarity_records(&eval.archs, &hiddens, &eval.ppls, &ged_options(&space))?;
    write_records_csv(&dir.join(SIMILARITY_RECORDS), &records)?;
    correlation_table(&[(cfg.mode, records)])?.write_csv(&dir.join(CORRELATION_TABLE))?;

    Manifest {
        format: MANIFEST_FORMAT.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        mode: cfg.mode,
        config: cfg.clone(),
        vocab_size: data.vocab_size(),
        controller_updates: trainer.updates,
        buffer_sizes: log.iter().map(|l| l.buffer_size).collect(),
        collapse_score: collapse,
        artifacts,
        best_arch: None,
        initial_ppl: None,
        final_ppl: None,
    }
    .save(dir)?;

    Ok(RunSummary {
        dir: dir.clone(),
        controller_updates: trainer.updates,
        collapse_score: collapse,
        log,
    })
}

/// Exact GED within the default limit, the identity-mapping bound beyond it.
fn ged_options(space: &SearchSpace) -> GedOptions {
    let d = GedOptions::default();
    GedOptions {
        allow_heuristic: space.n_nodes > d.exact_limit,
        ..d
    }
}

/// The architectures every analysis reads: `eval_samples` draws from the
/// frozen controller (uniform draws in uniform mode, scored by the
/// controller through teacher forcing), with full-validation perplexities.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub archs: Vec<Architecture>,
    pub traces: Vec<SampleTrace>,
    pub ppls: Vec<f64>,
}

impl EvalSet {
    pub fn hiddens(&self) -> Result<Matrix> {
        let d = self.traces.first().map_or(0, |t| t.final_hidden.len());
        let flat = self.traces.iter().flat_map(|t| t.final_hidden.iter().copied()).collect();
        Matrix::from_vec(self.traces.len(), d, flat)
    }
}

fn eval_set(
    cfg: &ExperimentConfig,
    params: &ControllerParams,
    pool: &SharedPool,
    data: &TaskData,
    with_ppl: bool,
) -> Result<EvalSet> {
    let mut rng = Streams::new(cfg.seed).eval;
    let mut set = EvalSet {
        archs: Vec::with_capacity(cfg.eval_samples),
        traces: Vec::with_capacity(cfg.eval_samples),
        ppls: Vec::new(),
    };
    for _ in 0..cfg.eval_samples {
        let (arch, trace) = if cfg.mode == TrainType::Uniform {
            let a = random_architecture(&mut rng, &cfg.space);
            let t = teacher_forced_trace(params, &a)?;
            (a, t)
        } else {
            sample_architecture(params, &mut rng)?
        };
        if with_ppl {
            set.ppls.push(evaluate_ppl(pool, &arch, &data.valid)?);
        }
        set.archs.push(arch);
        set.traces.push(trace);
    }
    Ok(set)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().flexible(true).from_path(path)?)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_field<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad {what} value {s:?}")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, what).map(Some)
    }
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRAINING_LOG_HEADER)?;
    for l in log {
        w.write_record([
            l.epoch.to_string(),
            l.shared_loss.to_string(),
            l.skipped_minibatches.to_string(),
            opt(l.mean_reward),
            opt(l.baseline),
            opt(l.pg_loss),
            opt(l.sup_loss),
            opt(l.mean_entropy),
            l.controller_updates.to_string(),
            l.buffer_size.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()? != TRAINING_LOG_HEADER.as_slice() {
        return Err(Error::Parse(format!("{}: unexpected header", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(EpochLog {
                epoch: parse_field(&rec[0], "epoch")?,
                shared_loss: parse_field(&rec[1], "shared_loss")?,
                skipped_minibatches: parse_field(&rec[2], "skipped_minibatches")?,
                mean_reward: parse_opt(&rec[3], "mean_reward")?,
                baseline: parse_opt(&rec[4], "baseline")?,
                pg_loss: parse_opt(&rec[5], "pg_loss")?,
                sup_loss: parse_opt(&rec[6], "sup_loss")?,
                mean_entropy: parse_opt(&rec[7], "mean_entropy")?,
                controller_updates: parse_field(&rec[8], "controller_updates")?,
                buffer_size: parse_field(&rec[9], "buffer_size")?,
            })
        })
        .collect()
}

/// Column names of the argmax profile: `act1, prev2, act2, …`.
pub fn step_names(space: &SearchSpace) -> Vec<String> {
    crate::cellspace::decision_schema(space)
        .iter()
        .map(|s| match s.kind {
            StepKind::Activation => format!("act{}", s.node),
            StepKind::Predecessor => format!("prev{}", s.node),
        })
        .collect()
}

pub fn write_argmax_profile(path: &Path, space: &SearchSpace, traces: &[SampleTrace]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend(step_names(space));
    w.write_record(&header)?;
    for (i, t) in traces.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(t.argmax_probs.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// Returns the step names and the `samples × steps` matrix.
pub fn read_argmax_profile(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut flat = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for v in rec.iter().skip(1) {
            flat.push(parse_field(v, "argmax probability")?);
        }
        rows += 1;
    }
    Ok((names.clone(), Matrix::from_vec(rows, names.len(), flat)?))
}

pub fn write_ppl_distribution(path: &Path, archs: &[Architecture], ppls: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["sample", "arch", "ppl"])?;
    for (i, (a, p)) in archs.iter().zip(ppls).enumerate() {
        w.write_record([i.to_string(), a.canonical(), p.to_string()])?;
    }
    finish(w, path)
}

pub fn read_ppl_distribution(path: &Path, space: &SearchSpace) -> Result<Vec<(Architecture, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()? != vec!["sample", "arch", "ppl"] {
        return Err(Error::Parse(format!("{}: unexpected header", path.display())));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((Architecture::parse(&rec[1], space)?, parse_field(&rec[2], "ppl")?))
        })
        .collect()
}

/// One row per sample, then a footer `collapse_score,<value>`.
pub fn write_hidden_states(path: &Path, hiddens: &Matrix, collapse: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend((0..hiddens.cols()).map(|k| format!("h{k}")));
    w.write_record(&header)?;
    for i in 0..hiddens.rows() {
        let mut row = vec![i.to_string()];
        row.extend(hiddens.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.write_record(["collapse_score".to_string(), collapse.to_string()])?;
    finish(w, path)
}

pub fn read_hidden_states(path: &Path) -> Result<(Matrix, f64)> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let d = r.headers()?.len() - 1;
    let mut flat = Vec::new();
    let mut rows = 0;
    let mut collapse = None;
    for rec in r.records() {
        let rec = rec?;
        if &rec[0] == "collapse_score" {
            collapse = Some(parse_field(&rec[1], "collapse_score")?);
            continue;
        }
        if rec.len() != d + 1 {
            return Err(Error::Parse(format!("{}: ragged hidden-state row", path.display())));
        }
        for v in rec.iter().skip(1) {
            flat.push(parse_field(v, "hidden value")?);
        }
        rows += 1;
    }
    let collapse = collapse.ok_or_else(|| Error::Parse(format!("{}: missing collapse footer", path.display())))?;
    Ok((Matrix::from_vec(rows, d, flat)?, collapse))
}

/// A finished run loaded back from disk.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub controller: ControllerParams,
    pub pool: SharedPool,
    pub data: TaskData,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest = Manifest::load(dir)?;
    let cfg = &manifest.config;
    let controller = ControllerParams::load(&dir.join(CONTROLLER_CKPT))?;
    let pool = SharedPool::load(&dir.join(POOL_CKPT))?;
    let data = cfg.task_data()?;
    if controller.space != cfg.space || controller.dims != cfg.controller.dims {
        return Err(Error::Checkpoint("controller checkpoint does not match the run config".into()));
    }
    if pool.space != cfg.space || pool.dims != cfg.child.dims || pool.vocab_size != data.vocab_size() {
        return Err(Error::Checkpoint("pool checkpoint does not match the run config".into()));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        controller,
        pool,
        data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Analysis {
    Argmax,
    PplDist,
    Hidden,
}

impl FromStr for Analysis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Analysis::Argmax),
            "ppl_dist" => Ok(Analysis::PplDist),
            "hidden" => Ok(Analysis::Hidden),
            _ => Err(Error::Parse(format!("unknown analysis {s:?} (argmax, ppl_dist, hidden)"))),
        }
    }
}

/// Regenerates one analysis CSV of a run from its checkpoints.
pub fn analyze(dir: &Path, which: Analysis) -> Result<PathBuf> {
    let run = load_run(dir)?;
    let cfg = &run.manifest.config;
    let eval = eval_set(cfg, &run.controller, &run.pool, &run.data, which == Analysis::PplDist)?;
    let path = match which {
        Analysis::Argmax => {
            let p = dir.join(ARGMAX_PROFILE);
            write_argmax_profile(&p, &cfg.space, &eval.traces)?;
            p
        }
        Analysis::PplDist => {
            let p = dir.join(PPL_DISTRIBUTION);
            write_ppl_distribution(&p, &eval.archs, &eval.ppls)?;
            p
        }
        Analysis::Hidden => {
            let p = dir.join(HIDDEN_STATES);
            let h = eval.hiddens()?;
            write_hidden_states(&p, &h, collapse_score(&h)?)?;
            p
        }
    };
    Ok(path)
}

/// Builds the cross-mode table from each run's similarity records.
pub fn correlate(runs: &[PathBuf], out: &Path) -> Result<CorrelationTable> {
    let mut groups = Vec::with_capacity(runs.len());
    let mut samples = None;
    for dir in runs {
        let m = Manifest::load(dir)?;
        if *samples.get_or_insert(m.config.eval_samples) != m.config.eval_samples {
            return Err(Error::Config("runs disagree on eval_samples".into()));
        }
        let recs = read_records_csv(&dir.join(SIMILARITY_RECORDS))?;
        groups.push((m.mode, recs));
    }
    let table = correlation_table(&groups)?;
    table.write_csv(out)?;
    Ok(table)
}

/// Lowest perplexity; equal perplexities go to the smaller canonical string.
pub fn pick_best(entries: &[(Architecture, f64)]) -> Option<&(Architecture, f64)> {
    entries
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.canonical().cmp(&b.0.canonical())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinalResult {
    pub best_arch: Architecture,
    pub initial_ppl: f64,
    pub final_ppl: f64,
}

/// Retrains the best evaluated architecture from scratch with its own
/// weights and records the outcome in the manifest.
pub fn derive_final(dir: &Path) -> Result<FinalResult> {
    let mut manifest = Manifest::load(dir)?;
    let cfg = manifest.config.clone();
    let data = cfg.task_data()?;
    let entries = read_ppl_distribution(&dir.join(PPL_DISTRIBUTION), &cfg.space)?;
    let best = pick_best(&entries)
        .ok_or_else(|| Error::Insufficient {
            needed: 1,
            available: 0,
        })?
        .0
        .clone();
    let mut rng = Streams::new(cfg.seed).final_model;
    let mut model = init_pool(&mut rng, cfg.space, cfg.child.dims, data.vocab_size())?;
    let initial_ppl = evaluate_ppl(&model, &best, &data.valid)?;
    let train = TrainConfig {
        archs_per_epoch: 1,
        ..cfg.child.train
    };
    for epoch in 0..cfg.final_epochs {
        shared_train_epoch(&mut model, |_| Ok(best.clone()), &data.train, &train, &mut rng)
            .map_err(|e| e.context(format!("final model epoch {epoch}")))?;
    }
    let final_ppl = evaluate_ppl(&model, &best, &data.valid)?;
    model.save(&dir.join(FINAL_MODEL_CKPT))?;
    manifest.best_arch = Some(best.canonical());
    manifest.initial_ppl = Some(initial_ppl);
    manifest.final_ppl = Some(final_ppl);
    if !manifest.artifacts.iter().any(|a| a == FINAL_MODEL_CKPT) {
        manifest.artifacts.push(FINAL_MODEL_CKPT.into());
    }
    manifest.save(dir)?;
    Ok(FinalResult {
        best_arch: best,
        initial_ppl,
        final_ppl,
    })
}
