//! Loading data, running one spec, and writing its artifacts.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde_json::json;

use repfuse::data::{load_csv, load_mnist, partition_noniid, partition_uniform, write_shards_csv, Shard};
use repfuse::models::{checkpoint, ModelSpec};
use repfuse::protocol::{self, Observer, RoundRecord, RunMetrics};
use repfuse::representative::{RepConfig, Representative};
use repfuse::{rng, Dataset64, ModelState64};

use crate::export::export_representative;
use crate::spec::{DataSource, ModelKind, Partition, RunSpec};

/// Everything a finished run produced.
pub struct RunOutcome {
    pub model: ModelState64,
    pub metrics: RunMetrics,
    pub spec: RunSpec,
}

/// Train and test sets, split off the training file when no test file is given.
pub fn load_data(spec: &RunSpec) -> anyhow::Result<(Dataset64, Dataset64)> {
    let split = |ds: Dataset64| ds.split(spec.test_fraction, &mut rng::stream(spec.train.seed, rng::SPLIT));
    Ok(match &spec.data {
        DataSource::Mnist { images, labels, test } => {
            let train = load_mnist(images, labels)?;
            match test {
                Some((ti, tl)) => (train, load_mnist(ti, tl)?),
                None => split(train)?,
            }
        }
        DataSource::Csv {
            path,
            label_column,
            has_header,
        } => split(load_csv(path, label_column, *has_header)?)?,
    })
}

pub fn model_spec(spec: &RunSpec, train: &Dataset64) -> anyhow::Result<ModelSpec> {
    Ok(match spec.model {
        ModelKind::Mlp => ModelSpec::mlp(train.feature_shape(), &spec.hidden, train.num_classes())?,
        ModelKind::Cnn => ModelSpec::cnn(train.feature_shape(), train.num_classes())?,
    })
}

pub fn shards(spec: &RunSpec, train: &Dataset64) -> anyhow::Result<Vec<Shard>> {
    let mut r = rng::stream(spec.train.seed, rng::PARTITION);
    let k = spec.train.clients;
    Ok(match spec.partition {
        Partition::NonIid => partition_noniid(train, k, spec.per_client, &mut r)?,
        Partition::Uniform => partition_uniform(train, k, spec.per_client, &mut r)?,
    })
}

struct Exporter {
    dir: Option<PathBuf>,
    every: usize,
    written: BTreeSet<(usize, usize, usize)>,
}

impl Observer<f64> for Exporter {
    fn representative(&mut self, round: usize, client: usize, rep: &Representative<f64>) -> repfuse::error::Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        // one file per (round, client, label); later reps of the same label are skipped
        if (round == 1 || round % self.every == 0) && self.written.insert((round, client, rep.label)) {
            export_representative(rep, round, client, dir).map_err(|e| repfuse::error::Error::Io {
                path: dir.clone(),
                source: e,
            })?;
        }
        Ok(())
    }

    fn round_end(&mut self, r: &RoundRecord) {
        log::info!(
            "round {} loss {:.4} acc {}",
            r.round,
            r.train_loss,
            r.test_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
    }
}

fn write_metrics(metrics: &RunMetrics, path: &Path) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| path.display().to_string())?;
    metrics.write_csv(BufWriter::new(f))?;
    Ok(())
}

/// Runs `spec` and writes `metrics.csv`, `summary.json`, `model.ckpt`,
/// `shards.csv` for distributed modes and `reps/` when exporting.
pub fn run(spec: &RunSpec) -> anyhow::Result<RunOutcome> {
    let start = Instant::now();
    let mut spec = spec.clone();
    std::fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    let (train, test) = load_data(&spec)?;
    spec.train.rep.budget = spec
        .budget
        .unwrap_or_else(|| RepConfig::default_for(train.feature_shape()).budget);
    spec.train.validate()?;
    let model = ModelState64::init(model_spec(&spec, &train)?, spec.train.seed)?;

    let shards = if spec.train.mode.is_distributed() {
        let shards = shards(&spec, &train)?;
        let path = spec.out.join("shards.csv");
        write_shards_csv(
            &shards,
            &train,
            BufWriter::new(File::create(&path).with_context(|| path.display().to_string())?),
        )?;
        Some(shards)
    } else {
        None
    };

    let mut observer = Exporter {
        dir: spec.export_reps.then(|| spec.out.join("reps")),
        every: spec.export_every,
        written: BTreeSet::new(),
    };
    let (model, metrics) = protocol::train(&model, &train, shards.as_deref(), &test, &spec.train, &mut observer)?;

    write_metrics(&metrics, &spec.out.join("metrics.csv"))?;
    checkpoint::save(&model, &spec.out.join("model.ckpt"))?;
    let best = metrics.best_accuracy();
    let summary = json!({
        "config": spec.echo(),
        "final_accuracy": metrics.final_accuracy(),
        "best_accuracy": best.map(|b| b.1),
        "best_round": best.map(|b| b.0),
        "mean_matching_loss": metrics.mean_matching_loss(),
        "train_samples": train.len(),
        "test_samples": test.len(),
        "num_classes": train.num_classes(),
        "normalization": train.normalization,
        "wall_seconds": start.elapsed().as_secs_f64(),
        "round_seconds": metrics.round_seconds,
        "finished_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    });
    let path = spec.out.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| path.display().to_string())?;
    Ok(RunOutcome { model, metrics, spec })
}

/// Header of the merged comparison table.
pub fn compare_header() -> Vec<&'static str> {
    let mut h = vec!["run", "mode"];
    h.extend(protocol::CSV_HEADER);
    h
}

/// Writes the metrics of several finished runs into one long-format table.
pub fn write_comparison(runs: &[(String, &RunOutcome)], out: impl std::io::Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(compare_header())?;
    for (name, outcome) in runs {
        let mut buf = Vec::new();
        outcome.metrics.write_csv(&mut buf)?;
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        for rec in rd.records() {
            let rec = rec?;
            let mut row = vec![name.as_str(), outcome.spec.train.mode.name()];
            row.extend(rec.iter());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
