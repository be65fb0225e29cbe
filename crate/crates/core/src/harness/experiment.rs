//! Config-driven federated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig};
use super::metrics::{MetricsRecord, MetricsWriter};
use crate::cost::CostLedger;
use crate::data::{load_csv, make_blobs, partition, stratified_split, ClientShard, Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::model::{write_checkpoint, Batch, ModelSpec, ParamVector};
use crate::perturb::mix_seed;
use crate::protocol::{plan_round, run_round, RoundConfig, RoundOutput, TrainRule};
use crate::scalar::{Precision, Scalar};

const DATA_TAG: u64 = 0xda7a_0000_0000_0001;
const SPLIT_TAG: u64 = 0xda7a_0000_0000_0002;
const PARTITION_TAG: u64 = 0xda7a_0000_0000_0003;
const INIT_TAG: u64 = 0x1417_0000_0000_0004;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const PAYLOAD_DIR: &str = "payloads";

/// Dataset, held-out split and client partition of a config.
#[derive(Clone, Debug)]
pub struct Task {
    pub dataset: Dataset,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub plan: PartitionPlan,
    /// Hex digest over features, labels, split and partition.
    pub fingerprint: String,
}

impl Task {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let mut dataset = match &cfg.data.source {
            DataSource::Blobs { n, dim, classes, spread } => {
                make_blobs(*n, *dim, *classes, *spread, mix_seed(&[cfg.master_seed, DATA_TAG]))?
            }
            DataSource::Csv { path, label_column } => load_csv(path, label_column)?,
        };
        if cfg.data.standardize {
            dataset.standardize();
        }
        let (train, test) = stratified_split(
            dataset.labels(),
            dataset.num_classes(),
            cfg.data.test_fraction,
            mix_seed(&[cfg.master_seed, SPLIT_TAG]),
        )?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::config("data.test_fraction leaves an empty train or test split"));
        }
        let train_labels: Vec<usize> = train.iter().map(|&i| dataset.labels()[i]).collect();
        let plan = partition(
            &train_labels,
            cfg.n_clients,
            cfg.partition,
            mix_seed(&[cfg.master_seed, PARTITION_TAG]),
        )?;
        let fingerprint = fingerprint(&dataset, &train, &test, &plan);
        Ok(Self {
            dataset,
            train,
            test,
            plan,
            fingerprint,
        })
    }

    pub fn shards<T: Scalar>(&self) -> Result<Vec<ClientShard<T>>> {
        self.plan
            .client_indices()
            .iter()
            .map(|local| {
                let global: Vec<usize> = local.iter().map(|&i| self.train[i]).collect();
                self.dataset.shard(&global)
            })
            .collect()
    }

    pub fn test_batch<T: Scalar>(&self) -> Result<Batch<T>> {
        self.dataset.batch(&self.test)
    }
}

fn fingerprint(dataset: &Dataset, train: &[usize], test: &[usize], plan: &PartitionPlan) -> String {
    let mut h = Sha256::new();
    h.update((dataset.dim() as u64).to_le_bytes());
    h.update((dataset.num_classes() as u64).to_le_bytes());
    for v in dataset.features() {
        h.update(v.to_le_bytes());
    }
    for &l in dataset.labels() {
        h.update((l as u64).to_le_bytes());
    }
    for list in [train, test] {
        h.update((list.len() as u64).to_le_bytes());
        for &i in list {
            h.update((i as u64).to_le_bytes());
        }
    }
    for &c in &plan.assignment {
        h.update(c.to_le_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// In-memory federated run advanced one round at a time.
pub struct Simulation<T: Scalar> {
    cfg: ExperimentConfig,
    spec: ModelSpec,
    shards: Vec<ClientShard<T>>,
    test: Batch<T>,
    global: ParamVector<T>,
    ledger: CostLedger,
    round_cfg: RoundConfig,
    rounds_done: u32,
    fingerprint: String,
}

impl<T: Scalar> Simulation<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_task(cfg, &Task::build(cfg)?)
    }

    pub fn with_task(cfg: &ExperimentConfig, task: &Task) -> Result<Self> {
        if T::PRECISION != cfg.precision {
            return Err(Error::config(format!(
                "precision: config asks for {:?}, simulation built for {:?}",
                cfg.precision,
                T::PRECISION
            )));
        }
        let spec = cfg.model_spec(task.dataset.dim(), task.dataset.num_classes())?;
        let rule = cfg.train_rule()?;
        let global = spec.init_params(mix_seed(&[cfg.master_seed, INIT_TAG]));
        Ok(Self {
            spec,
            shards: task.shards()?,
            test: task.test_batch()?,
            global,
            ledger: CostLedger::default(),
            round_cfg: RoundConfig {
                rule,
                local_steps: cfg.local_steps,
                batch_size: cfg.batch_size,
                mode: cfg.payload_mode,
                master_seed: cfg.master_seed,
                verify_reconstruction: cfg.verify_reconstruction,
            },
            rounds_done: 0,
            fingerprint: task.fingerprint.clone(),
            cfg: cfg.clone(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn global(&self) -> &ParamVector<T> {
        &self.global
    }

    /// Cumulative cost since round 0.
    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn rounds_done(&self) -> u32 {
        self.rounds_done
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn rule(&self) -> TrainRule {
        self.round_cfg.rule
    }

    /// Test loss and accuracy of the current global model.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        self.spec.evaluate(self.global.as_slice(), &self.test)
    }

    /// Runs the next round and adopts its aggregate as the global model.
    pub fn step(&mut self, pool: Option<&rayon::ThreadPool>) -> Result<RoundOutput<T>> {
        let round_id = self.rounds_done;
        let plan = plan_round(round_id, self.cfg.master_seed, self.cfg.n_clients, self.cfg.clients_per_round())?;
        let out = run_round(&self.spec, &self.global, &plan, &self.shards, &self.round_cfg, pool)?;
        if !out.global.is_finite() {
            return Err(Error::Numeric(format!("global model became non-finite in round {round_id}")));
        }
        self.global = out.global.clone();
        self.ledger.merge(&out.ledger);
        self.rounds_done += 1;
        Ok(out)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replace files of an existing run in the output directory.
    pub force: bool,
    /// Worker threads for clients within a round; `None` runs them inline.
    pub workers: Option<usize>,
    /// Write the last round's encoded payloads under `payloads/`.
    pub dump_payloads: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
}

/// Runs `cfg` and writes the config echo, metrics and final checkpoint to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    prepare_out_dir(out_dir, opts.force)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let pool = match opts.workers {
        Some(n) if n > 1 => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("workers: {e}")))?,
        ),
        _ => None,
    };
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, out_dir, opts, pool.as_ref()),
        Precision::F64 => run_typed::<f64>(cfg, out_dir, opts, pool.as_ref()),
    }
}

fn prepare_out_dir(out_dir: &Path, force: bool) -> Result<()> {
    if out_dir.exists() {
        let occupied = [CONFIG_FILE, METRICS_FILE, CHECKPOINT_FILE, PAYLOAD_DIR]
            .iter()
            .any(|f| out_dir.join(f).exists());
        if occupied && !force {
            return Err(Error::config(format!(
                "{} already holds a run; pass --force to overwrite",
                out_dir.display()
            )));
        }
        let payloads = out_dir.join(PAYLOAD_DIR);
        if payloads.is_dir() {
            fs::remove_dir_all(payloads)?;
        }
    }
    fs::create_dir_all(out_dir)?;
    Ok(())
}

fn run_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: &RunOptions,
    pool: Option<&rayon::ThreadPool>,
) -> Result<RunSummary> {
    let start = Instant::now();
    let mut sim = Simulation::<T>::new(cfg)?;
    let method = cfg.method.name();
    let mut writer = MetricsWriter::new(fs::File::create(out_dir.join(METRICS_FILE))?);
    let mut records = Vec::new();
    let mut emit = |sim: &Simulation<T>| -> Result<()> {
        let (loss, acc) = sim.evaluate()?;
        let rec = MetricsRecord::new(
            method,
            sim.fingerprint(),
            sim.rounds_done(),
            loss,
            acc,
            sim.ledger(),
            start.elapsed().as_secs_f64(),
        );
        writer.append(&rec)?;
        records.push(rec);
        Ok(())
    };
    emit(&sim)?;
    for r in 1..=cfg.rounds {
        let out = sim.step(pool)?;
        if r % cfg.eval_every == 0 || r == cfg.rounds {
            emit(&sim)?;
        }
        if r == cfg.rounds && opts.dump_payloads && !out.payloads.is_empty() {
            let dir = out_dir.join(PAYLOAD_DIR);
            fs::create_dir_all(&dir)?;
            let plan = plan_round(r - 1, cfg.master_seed, cfg.n_clients, cfg.clients_per_round())?;
            for (client, bytes) in plan.clients.iter().zip(&out.payloads) {
                fs::write(dir.join(format!("round{:04}-client{client:04}.bin", r - 1)), bytes)?;
            }
        }
    }
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    write_checkpoint(&checkpoint, sim.global(), sim.spec().cut() as u32)?;
    Ok(RunSummary {
        records,
        out_dir: out_dir.to_path_buf(),
        checkpoint,
    })
}
