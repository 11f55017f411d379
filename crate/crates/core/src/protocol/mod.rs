//! Training drivers: plain SGD, centralized and distributed representative
//! training, and federated averaging, all simulated in-process.

mod config;
mod metrics;

use std::time::Instant;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{Aggregate, Mode, TrainConfig};
pub use metrics::{RoundRecord, RunMetrics, CSV_HEADER};

use crate::data::{epoch_batches, Dataset, SameLabelSampler, Shard};
use crate::error::{Error, Result};
use crate::grad::GradVector;
use crate::models::ModelState;
use crate::representative::{build_representative, Representative, Residual};
use crate::rng;
use crate::scalar::Scalar;

const EVAL_CHUNK: usize = 250;

/// Argmax accuracy; ties go to the lowest class index.
pub fn evaluate<S: Scalar>(model: &ModelState<S>, test: &Dataset<S>) -> Result<f64> {
    if test.feature_shape() != model.spec().input_shape.as_slice() {
        let mut want = vec![0];
        want.extend(&model.spec().input_shape);
        let mut got = vec![test.len()];
        got.extend(test.feature_shape());
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: want,
            right: got,
        });
    }
    if test.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let all: Vec<usize> = (0..test.len()).collect();
    let mut correct = 0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, y) = test.batch(chunk);
        correct += model.predict(&x)?.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Receives intermediate results; every method defaults to a no-op.
pub trait Observer<S> {
    fn representative(&mut self, _round: usize, _client: usize, _rep: &Representative<S>) -> Result<()> {
        Ok(())
    }

    fn round_end(&mut self, _record: &RoundRecord) {}
}

/// Observer that ignores everything.
pub struct Silent;

impl<S> Observer<S> for Silent {}

/// One simulated client: its shard, residual and private random stream.
pub struct ClientState<S> {
    pub id: usize,
    pub shard: Shard,
    pub residual: Residual<S>,
    sampler: Option<SameLabelSampler>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ClientState<S> {
    pub fn new(shard: Shard, model: &ModelState<S>, ds: &Dataset<S>, cfg: &TrainConfig) -> Result<Self> {
        let id = shard.owner;
        let stream = rng::client(cfg.seed, id);
        let sampler = match cfg.mode {
            Mode::RepCentral | Mode::RepDistributed => Some(SameLabelSampler::new(
                ds,
                &shard.indices,
                cfg.batch_size,
                stream.clone(),
            )?),
            _ => None,
        };
        Ok(ClientState {
            id,
            residual: Residual::zeros(model.params().layout()),
            shard,
            sampler,
            rng: stream,
        })
    }

    fn steps(&self, cfg: &TrainConfig) -> usize {
        let sampler = self.sampler.as_ref().expect("representative mode");
        cfg.local_steps.unwrap_or_else(|| sampler.steps_per_pass())
    }

    /// Samples a same-label batch, builds its representative against `w`
    /// and replaces the residual.
    fn client_rep(&mut self, w: &ModelState<S>, ds: &Dataset<S>, cfg: &TrainConfig) -> Result<Representative<S>> {
        let sampler = self.sampler.as_mut().expect("representative mode");
        let batch = sampler.next_batch(ds);
        let (rep, tau) = build_representative(w, ds, &batch, &self.residual, &cfg.rep)?;
        self.residual = tau;
        Ok(rep)
    }

    /// Local SGD epochs from `w`; returns the new weights, summed loss and sample count.
    fn local_sgd(
        &mut self,
        w: &ModelState<S>,
        ds: &Dataset<S>,
        cfg: &TrainConfig,
    ) -> Result<(ModelState<S>, f64, usize)> {
        let mut local = w.clone();
        let (mut loss, mut seen) = (0.0, 0);
        for _ in 0..cfg.fedavg_local_epochs {
            let (l, n) = sgd_epoch(&mut local, ds, &self.shard.indices, cfg, &mut self.rng)?;
            loss += l;
            seen += n;
        }
        Ok((local, loss, seen))
    }
}

fn lr<S: Scalar>(cfg: &TrainConfig) -> S {
    S::from_f64_lossy(cfg.eta_w)
}

fn sgd_epoch<S: Scalar>(
    model: &mut ModelState<S>,
    ds: &Dataset<S>,
    indices: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let (mut loss, mut seen) = (0.0, 0);
    for batch in epoch_batches(indices, cfg.batch_size, rng) {
        let (x, y) = ds.batch(&batch);
        let (l, g) = model.param_gradient(&x, &y)?;
        model.step(lr(cfg), &g)?;
        loss += l.to_f64_lossy();
        seen += batch.len();
    }
    Ok((loss, seen))
}

/// `w -= eta * B * grad`.
fn rep_step<S: Scalar>(
    model: &mut ModelState<S>,
    cfg: &TrainConfig,
    batch_size: usize,
    grad: &GradVector<S>,
) -> Result<()> {
    model.step(lr::<S>(cfg) * S::from_usize(batch_size).unwrap(), grad)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Tracks one round's statistics and timing.
struct RoundLog {
    started: Instant,
    loss: f64,
    seen: usize,
    matching: Vec<f64>,
    tau: Vec<f64>,
}

impl RoundLog {
    fn start() -> Self {
        RoundLog {
            started: Instant::now(),
            loss: 0.0,
            seen: 0,
            matching: Vec::new(),
            tau: Vec::new(),
        }
    }

    fn rep<S: Scalar>(&mut self, rep: &Representative<S>, tau: &Residual<S>) {
        self.loss += rep.batch_loss.to_f64_lossy();
        self.seen += rep.batch_size;
        self.matching.push(rep.matching_loss.to_f64_lossy());
        self.tau.push(tau.norm().to_f64_lossy());
    }

    fn finish<S: Scalar>(
        self,
        round: usize,
        model: &ModelState<S>,
        test: &Dataset<S>,
        cfg: &TrainConfig,
        metrics: &mut RunMetrics,
        observer: &mut dyn Observer<S>,
    ) -> Result<()> {
        let evaluate_now = round % cfg.eval_every == 0 || round == cfg.rounds;
        let record = RoundRecord {
            round,
            train_loss: if self.seen > 0 {
                self.loss / self.seen as f64
            } else {
                0.0
            },
            test_accuracy: if evaluate_now {
                Some(evaluate(model, test)?)
            } else {
                None
            },
            matching_loss: mean(&self.matching),
            tau_norm: mean(&self.tau),
        };
        log::debug!("{} round {round}: {record:?}", cfg.mode.name());
        observer.round_end(&record);
        metrics.records.push(record);
        metrics.round_seconds.push(self.started.elapsed().as_secs_f64());
        Ok(())
    }
}

fn check_mode(cfg: &TrainConfig, want: Mode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != want {
        return Err(Error::Config(format!(
            "config mode {} passed to the {} driver",
            cfg.mode.name(),
            want.name()
        )));
    }
    Ok(())
}

fn all_indices<S: Scalar>(ds: &Dataset<S>) -> Shard {
    Shard {
        owner: 0,
        indices: (0..ds.len()).collect(),
        label: None,
    }
}

/// Mini-batch SGD over the whole training set, `T` epochs.
pub fn train_baseline_central<S: Scalar>(
    model: &ModelState<S>,
    train: &Dataset<S>,
    test: &Dataset<S>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer<S>,
) -> Result<(ModelState<S>, RunMetrics)> {
    check_mode(cfg, Mode::BaselineCentral)?;
    let mut w = model.clone();
    let mut metrics = RunMetrics::default();
    let indices: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng::client(cfg.seed, 0);
    for round in 1..=cfg.rounds {
        let mut log = RoundLog::start();
        let (l, n) = sgd_epoch(&mut w, train, &indices, cfg, &mut rng).map_err(|e| e.at_round(round, None))?;
        log.loss = l;
        log.seen = n;
        log.finish(round, &w, test, cfg, &mut metrics, observer)?;
    }
    Ok((w, metrics))
}

/// Centralized representative training: each step replaces a same-label
/// batch by its representative and steps on `B` times its gradient.
pub fn train_rep_central<S: Scalar>(
    model: &ModelState<S>,
    train: &Dataset<S>,
    test: &Dataset<S>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer<S>,
) -> Result<(ModelState<S>, RunMetrics)> {
    check_mode(cfg, Mode::RepCentral)?;
    let mut w = model.clone();
    let mut metrics = RunMetrics::default();
    let mut client = ClientState::new(all_indices(train), model, train, cfg)?;
    for round in 1..=cfg.rounds {
        let mut log = RoundLog::start();
        for _ in 0..client.steps(cfg) {
            let rep = client.client_rep(&w, train, cfg).map_err(|e| e.at_round(round, None))?;
            rep_step(&mut w, cfg, rep.batch_size, &rep.gradient).map_err(|e| e.at_round(round, None))?;
            log.rep(&rep, &client.residual);
            observer.representative(round, 0, &rep)?;
        }
        log.finish(round, &w, test, cfg, &mut metrics, observer)?;
    }
    Ok((w, metrics))
}

/// Labels present in any shard, ascending.
pub fn shard_labels<S: Scalar>(ds: &Dataset<S>, shards: &[Shard]) -> Vec<usize> {
    let mut labels: Vec<usize> = shards
        .iter()
        .flat_map(|s| s.indices.iter().map(|&i| ds.label(i)))
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

fn make_clients<S: Scalar>(
    model: &ModelState<S>,
    train: &Dataset<S>,
    shards: &[Shard],
    cfg: &TrainConfig,
) -> Result<Vec<ClientState<S>>> {
    if shards.len() != cfg.clients {
        return Err(Error::Config(format!(
            "{} shards for {} clients",
            shards.len(),
            cfg.clients
        )));
    }
    if shards.iter().enumerate().any(|(k, s)| s.owner != k) {
        return Err(Error::Config("shards must be owned by clients 0..K in order".into()));
    }
    shards
        .iter()
        .map(|s| ClientState::new(s.clone(), model, train, cfg))
        .collect()
}

fn pool(cfg: &TrainConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Server-side choice of `ceil(P K)` clients, uniform without replacement, ascending.
fn select(server: &mut ChaCha8Rng, cfg: &TrainConfig) -> Vec<usize> {
    let mut chosen = index::sample(server, cfg.clients, cfg.selected_per_round()).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Runs `work` on the chosen clients on the worker pool; results come back
/// in client order regardless of scheduling.
fn on_clients<S, T, F>(
    pool: &rayon::ThreadPool,
    clients: &mut [ClientState<S>],
    chosen: &[usize],
    work: F,
) -> Vec<(usize, Result<T>)>
where
    S: Scalar,
    T: Send,
    F: Fn(&mut ClientState<S>) -> Result<T> + Sync,
{
    let mut picked: Vec<&mut ClientState<S>> = clients.iter_mut().filter(|c| chosen.contains(&c.id)).collect();
    pool.install(|| picked.par_iter_mut().map(|c| (c.id, work(c))).collect())
}

/// Distributed representative training with a server and `K` clients.
///
/// Each round the server selects clients, every selected client builds a
/// representative against the same broadcast weights, and the server
/// applies them one by one in ascending client order (or as one summed
/// step). With more than one local step the round repeats this exchange.
pub fn train_rep_distributed<S: Scalar>(
    model: &ModelState<S>,
    train: &Dataset<S>,
    shards: &[Shard],
    test: &Dataset<S>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer<S>,
) -> Result<(ModelState<S>, RunMetrics)> {
    check_mode(cfg, Mode::RepDistributed)?;
    let mut clients = make_clients(model, train, shards, cfg)?;
    let test = test.restrict_labels(&shard_labels(train, shards));
    let pool = pool(cfg)?;
    let mut server = rng::stream(cfg.seed, rng::SERVER);
    let mut w = model.clone();
    let mut metrics = RunMetrics::default();
    for round in 1..=cfg.rounds {
        let mut log = RoundLog::start();
        let chosen = select(&mut server, cfg);
        let steps = chosen.iter().map(|&k| clients[k].steps(cfg)).max().unwrap_or(0);
        for step in 0..steps {
            let active: Vec<usize> = chosen
                .iter()
                .copied()
                .filter(|&k| step < clients[k].steps(cfg))
                .collect();
            let snapshot = w.clone();
            let results = on_clients(&pool, &mut clients, &active, |c| c.client_rep(&snapshot, train, cfg));
            let mut reps = Vec::with_capacity(results.len());
            for (k, r) in results {
                let rep = r.map_err(|e| e.at_round(round, Some(k)))?;
                log.rep(&rep, &clients[k].residual);
                observer.representative(round, k, &rep)?;
                reps.push((k, rep));
            }
            match cfg.aggregate {
                Aggregate::Sequential => {
                    for (i, (k, rep)) in reps.iter().enumerate() {
                        let grad = if i == 0 {
                            rep.gradient.clone()
                        } else {
                            let mut shape = vec![1];
                            shape.extend(train.feature_shape());
                            let x = rep.x.reshape(&shape)?;
                            w.param_gradient(&x, &[rep.label])
                                .map_err(|e| e.at_round(round, Some(*k)))?
                                .1
                        };
                        rep_step(&mut w, cfg, rep.batch_size, &grad).map_err(|e| e.at_round(round, Some(*k)))?;
                    }
                }
                Aggregate::Summed => {
                    let mut total = GradVector::zeros(w.params().layout());
                    for (_, rep) in &reps {
                        total.axpy(S::from_usize(rep.batch_size).unwrap(), &rep.gradient)?;
                    }
                    rep_step(&mut w, cfg, 1, &total).map_err(|e| e.at_round(round, None))?;
                }
            }
        }
        log.finish(round, &w, &test, cfg, &mut metrics, observer)?;
    }
    Ok((w, metrics))
}

/// Federated averaging: local SGD on each selected client, then a
/// shard-size-weighted average of the returned weights.
pub fn train_fedavg<S: Scalar>(
    model: &ModelState<S>,
    train: &Dataset<S>,
    shards: &[Shard],
    test: &Dataset<S>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer<S>,
) -> Result<(ModelState<S>, RunMetrics)> {
    check_mode(cfg, Mode::Fedavg)?;
    let mut clients = make_clients(model, train, shards, cfg)?;
    let test = test.restrict_labels(&shard_labels(train, shards));
    let pool = pool(cfg)?;
    let mut server = rng::stream(cfg.seed, rng::SERVER);
    let mut w = model.clone();
    let mut metrics = RunMetrics::default();
    for round in 1..=cfg.rounds {
        let mut log = RoundLog::start();
        let chosen = select(&mut server, cfg);
        let snapshot = w.clone();
        let results = on_clients(&pool, &mut clients, &chosen, |c| c.local_sgd(&snapshot, train, cfg));
        // running weighted mean, so identical client models average to themselves exactly
        let mut avg = GradVector::zeros(w.params().layout());
        let mut cum = 0;
        for (k, r) in results {
            let (local, loss, seen) = r.map_err(|e| e.at_round(round, Some(k)))?;
            let n = clients[k].shard.indices.len();
            cum += n;
            let share = S::from_usize(n).unwrap() / S::from_usize(cum).unwrap();
            avg.axpy(share, &local.params().sub(&avg)?)?;
            log.loss += loss;
            log.seen += seen;
        }
        *w.params_mut() = avg;
        log.finish(round, &w, &test, cfg, &mut metrics, observer)?;
    }
    Ok((w, metrics))
}

/// Dispatches on `cfg.mode`; distributed modes need `shards`.
pub fn train<S: Scalar>(
    model: &ModelState<S>,
    train_ds: &Dataset<S>,
    shards: Option<&[Shard]>,
    test: &Dataset<S>,
    cfg: &TrainConfig,
    observer: &mut dyn Observer<S>,
) -> Result<(ModelState<S>, RunMetrics)> {
    let need_shards = || shards.ok_or_else(|| Error::Config(format!("{} needs client shards", cfg.mode.name())));
    match cfg.mode {
        Mode::BaselineCentral => train_baseline_central(model, train_ds, test, cfg, observer),
        Mode::RepCentral => train_rep_central(model, train_ds, test, cfg, observer),
        Mode::RepDistributed => train_rep_distributed(model, train_ds, need_shards()?, test, cfg, observer),
        Mode::Fedavg => train_fedavg(model, train_ds, need_shards()?, test, cfg, observer),
    }
}
