//! Fine-tuning loop, hyperparameter grid sweep and run ledger.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{evaluate, EvalError, EvalReport};
use crate::model::{init_model, loss_and_grad, save_checkpoint, Mode, ModelConfig, ModelError, TaggerModel};
use crate::tokenizer_align::{SubwordEncoding, TokenSequence, Vocab};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),
    #[error("training set has no labeled windows")]
    EmptyTrainSet,
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("every sweep run failed")]
    AllRunsFailed,
    #[error("elapsed time is zero; throughput is undefined")]
    ZeroElapsed,
    #[error("run ledger {path}: {message}")]
    Ledger { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub batch_size: usize,
    pub num_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let problem = if self.batch_size == 0 {
            "batch_size must be at least 1"
        } else if self.num_epochs == 0 {
            "num_epochs must be at least 1"
        } else if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            "learning_rate must be positive"
        } else if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            "weight_decay must be non-negative"
        } else {
            return Ok(());
        };
        Err(TrainError::HyperParams(problem.into()))
    }

    /// Identity of a grid point in the run ledger.
    pub fn key(&self) -> String {
        format!(
            "bs={} ep={} lr={} wd={} seed={}",
            self.batch_size, self.num_epochs, self.learning_rate, self.weight_decay, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub batch_size: usize,
    pub epochs: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
}

impl SweepGrid {
    /// The grid shared by every model class except ROBERTA-large.
    pub fn standard(batch_size: usize) -> Self {
        SweepGrid {
            batch_size,
            epochs: vec![10, 20, 30, 40, 50],
            learning_rates: vec![1e-4, 1e-5],
            weight_decays: vec![0.0, 0.01, 0.025],
        }
    }

    pub fn roberta_large() -> Self {
        SweepGrid {
            batch_size: 12,
            epochs: vec![10, 20, 30, 40, 50, 75, 100],
            learning_rates: vec![1e-4, 1e-5, 1e-6],
            weight_decays: vec![0.0, 0.01, 0.025, 0.05, 0.10],
        }
    }

    /// Small grid for the randomly initialised `tiny` model. Learning rates
    /// are far above the large-model ones because nothing is pretrained.
    pub fn desk(batch_size: usize) -> Self {
        SweepGrid {
            batch_size,
            epochs: vec![20, 40],
            learning_rates: vec![0.3, 0.5],
            weight_decays: vec![0.0, 0.01],
        }
    }

    /// Reference grid for a preset name such as `bert-base`.
    pub fn for_model(name: &str) -> Option<Self> {
        Some(match name {
            "bert-base" | "roberta-base" | "albert-base" => Self::standard(35),
            "bert-large" => Self::standard(12),
            "roberta-large" => Self::roberta_large(),
            "albert-xxlarge" => Self::standard(6),
            _ => return None,
        })
    }

    pub fn len(&self) -> usize {
        self.epochs.len() * self.learning_rates.len() * self.weight_decays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product, epochs outermost, then learning rate, then decay.
    pub fn points(&self, seed: u64) -> Vec<HyperParams> {
        let mut out = Vec::with_capacity(self.len());
        for &num_epochs in &self.epochs {
            for &learning_rate in &self.learning_rates {
                for &weight_decay in &self.weight_decays {
                    out.push(HyperParams {
                        batch_size: self.batch_size,
                        num_epochs,
                        learning_rate,
                        weight_decay,
                        seed,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Moment-based update with bias correction and the same decoupled decay.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl From<&EvalReport> for Metrics {
    fn from(r: &EvalReport) -> Self {
        Metrics {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            accuracy: r.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub hyperparams: HyperParams,
    pub status: RunStatus,
    pub epoch_losses: Vec<f64>,
    pub validation: Option<Metrics>,
    pub wall_seconds: f64,
    pub windows_processed: u64,
    pub optimizer_steps: u64,
    pub samples_per_second: f64,
    pub steps_per_second: f64,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// `(samples per second, steps per second)`.
pub fn measure_throughput(windows: u64, steps: u64, seconds: f64) -> Result<(f64, f64)> {
    if !(seconds > 0.0) {
        return Err(TrainError::ZeroElapsed);
    }
    Ok((windows as f64 / seconds, steps as f64 / seconds))
}

struct AdamState {
    m: TaggerModel<f32>,
    v: TaggerModel<f32>,
    t: i32,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// One update, `θ ← θ − lr·(step + wd·θ)`, where `step` is the gradient for
/// SGD. Decay applies to embeddings and weight matrices only.
fn apply_update(
    model: &mut TaggerModel<f32>,
    grads: &TaggerModel<f32>,
    lr: f32,
    wd: f32,
    adam: Option<&mut AdamState>,
) {
    let specs = model.specs();
    match adam {
        None => {
            for spec in specs {
                let decay = if spec.kind.decays() { wd } else { 0.0 };
                let g = grads.get(spec.slot);
                for (p, &g) in model.get_mut(spec.slot).iter_mut().zip(g) {
                    *p -= lr * (g + decay * *p);
                }
            }
        }
        Some(state) => {
            state.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(state.t);
            let c2 = 1.0 - ADAM_BETA2.powi(state.t);
            for spec in specs {
                let decay = if spec.kind.decays() { wd } else { 0.0 };
                let g = grads.get(spec.slot);
                let m = state.m.get_mut(spec.slot);
                for (m, &g) in m.iter_mut().zip(g) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                }
                let v = state.v.get_mut(spec.slot);
                for (v, &g) in v.iter_mut().zip(g) {
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                }
                let (m, v) = (state.m.get(spec.slot), state.v.get(spec.slot));
                for ((p, &m), &v) in model.get_mut(spec.slot).iter_mut().zip(m).zip(v) {
                    let step = (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
                    *p -= lr * (step + decay * *p);
                }
            }
        }
    }
}

/// One plain SGD step with decoupled decay.
pub fn sgd_step(model: &mut TaggerModel<f32>, grads: &TaggerModel<f32>, learning_rate: f32, weight_decay: f32) {
    apply_update(model, grads, learning_rate, weight_decay, None);
}

/// Trains in place. Windows are pooled, shuffled each epoch by a generator
/// seeded from `hp.seed`, and cut into batches (the last one may be short).
///
/// A non-finite loss stops training and returns a record marked failed.
pub fn train(
    model: &mut TaggerModel<f32>,
    train_set: &[SubwordEncoding],
    hp: &HyperParams,
    optimizer: Optimizer,
) -> Result<RunRecord> {
    hp.validate()?;
    let usable: Vec<&SubwordEncoding> = train_set.iter().filter(|e| e.labeled_positions() > 0).collect();
    if usable.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut adam = (optimizer == Optimizer::Adam).then(|| AdamState {
        m: TaggerModel::zeros(&model.config),
        v: TaggerModel::zeros(&model.config),
        t: 0,
    });
    let (lr, wd) = (hp.learning_rate as f32, hp.weight_decay as f32);
    let mut record = RunRecord {
        hyperparams: *hp,
        status: RunStatus::Completed,
        epoch_losses: Vec::with_capacity(hp.num_epochs),
        validation: None,
        wall_seconds: 0.0,
        windows_processed: 0,
        optimizer_steps: 0,
        samples_per_second: 0.0,
        steps_per_second: 0.0,
        checkpoint: None,
    };
    let started = Instant::now();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    'epochs: for _ in 0..hp.num_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<SubwordEncoding> = chunk.iter().map(|&i| usable[i].clone()).collect();
            let dropout_seed: u64 = rng.gen();
            let (loss, grads) = loss_and_grad(model, &batch, Mode::Train(dropout_seed))?;
            if !loss.is_finite() {
                record.status = RunStatus::Failed {
                    reason: format!("loss became {loss} at step {}", record.optimizer_steps + 1),
                };
                break 'epochs;
            }
            apply_update(model, &grads, lr, wd, adam.as_mut());
            epoch_loss += loss as f64;
            batches += 1;
            record.windows_processed += batch.len() as u64;
            record.optimizer_steps += 1;
        }
        record.epoch_losses.push(epoch_loss / batches as f64);
        if !model.all_finite() {
            record.status = RunStatus::Failed {
                reason: "parameters became non-finite".into(),
            };
            break;
        }
    }
    record.wall_seconds = started.elapsed().as_secs_f64();
    if let Ok((samples, steps)) =
        measure_throughput(record.windows_processed, record.optimizer_steps, record.wall_seconds)
    {
        record.samples_per_second = samples;
        record.steps_per_second = steps;
    }
    Ok(record)
}

/// Trains and validates one grid point.
pub trait GridRunner: Sync {
    fn run(&self, hp: &HyperParams) -> Result<RunRecord>;
}

/// Fresh model per grid point, trained on encoded windows and scored on
/// validation sequences.
pub struct TaggerRunner {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub train_windows: Vec<SubwordEncoding>,
    pub validation: Vec<TokenSequence>,
    pub vocab: Vocab,
    pub max_len: usize,
    pub optimizer: Optimizer,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TaggerRunner {
    pub fn checkpoint_name(hp: &HyperParams) -> String {
        format!(
            "run-bs{}-ep{}-lr{}-wd{}-seed{}.ckpt",
            hp.batch_size, hp.num_epochs, hp.learning_rate, hp.weight_decay, hp.seed
        )
    }
}

impl GridRunner for TaggerRunner {
    fn run(&self, hp: &HyperParams) -> Result<RunRecord> {
        let mut model = init_model::<f32>(&self.config, self.init_seed)?;
        let mut record = train(&mut model, &self.train_windows, hp, self.optimizer)?;
        if !record.completed() {
            return Ok(record);
        }
        let report = evaluate(&model, &self.validation, &self.vocab, self.max_len, "validation")?;
        record.validation = Some(Metrics::from(&report));
        if let Some(dir) = &self.checkpoint_dir {
            let path = dir.join(Self::checkpoint_name(hp));
            save_checkpoint(&path, &model, Some(hp.seed))?;
            record.checkpoint = Some(path.display().to_string());
        }
        Ok(record)
    }
}

/// Orders completed runs: higher F1, then higher accuracy, then fewer epochs,
/// then lower learning rate. Returns the index of the best.
pub fn select_best(records: &[RunRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        let (true, Some(m)) = (r.completed(), r.validation) else {
            continue;
        };
        let better = match best {
            None => true,
            Some(b) => {
                let bm = records[b].validation.expect("best has metrics");
                let bh = &records[b].hyperparams;
                m.f1.total_cmp(&bm.f1)
                    .then(m.accuracy.total_cmp(&bm.accuracy))
                    .then(bh.num_epochs.cmp(&r.hyperparams.num_epochs))
                    .then(bh.learning_rate.total_cmp(&r.hyperparams.learning_rate))
                    .is_gt()
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Line-delimited JSON run records, appended one complete line at a time.
pub struct RunLedger {
    path: PathBuf,
    lock: Mutex<()>,
}

impl RunLedger {
    pub fn new(path: &Path) -> Self {
        RunLedger {
            path: path.to_path_buf(),
            lock: Mutex::new(()),
        }
    }

    pub fn load(&self) -> Result<Vec<RunRecord>> {
        let src = match std::fs::read_to_string(&self.path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        src.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| TrainError::Ledger {
                    path: self.path.clone(),
                    message: format!("line {}: {e}", i + 1),
                })
            })
            .collect()
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("run record serializes");
        line.push('\n');
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub best: RunRecord,
    /// One record per grid point, in grid order.
    pub records: Vec<RunRecord>,
    /// Runs actually trained in this call.
    pub new_runs: usize,
}

/// Runs every grid point not already present in the ledger, with at most
/// `jobs` points in flight.
pub fn sweep(
    points: &[HyperParams],
    runner: &dyn GridRunner,
    ledger: Option<&RunLedger>,
    jobs: usize,
) -> Result<SweepOutcome> {
    if points.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let previous = match ledger {
        Some(l) => l.load()?,
        None => Vec::new(),
    };
    let done: HashSet<String> = previous.iter().map(|r| r.hyperparams.key()).collect();
    let todo: Vec<&HyperParams> = points.iter().filter(|p| !done.contains(&p.key())).collect();

    let run_one = |hp: &&HyperParams| -> Result<RunRecord> {
        let record = runner.run(hp)?;
        if let Some(l) = ledger {
            l.append(&record)?;
        }
        Ok(record)
    };
    let fresh: Vec<RunRecord> = if jobs <= 1 {
        todo.iter().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::HyperParams(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| todo.par_iter().map(run_one).collect::<Result<_>>())?
    };
    let new_runs = fresh.len();

    let mut by_key: std::collections::HashMap<String, RunRecord> =
        previous.into_iter().map(|r| (r.hyperparams.key(), r)).collect();
    for r in fresh {
        by_key.insert(r.hyperparams.key(), r);
    }
    let records: Vec<RunRecord> = points
        .iter()
        .filter_map(|p| by_key.get(&p.key()).cloned())
        .collect();
    let best = select_best(&records).ok_or(TrainError::AllRunsFailed)?;
    Ok(SweepOutcome {
        best: records[best].clone(),
        records,
        new_runs,
    })
}
