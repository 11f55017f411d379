//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use repfuse::data::LabelColumn;
use repfuse::models::DEFAULT_MLP_HIDDEN;
use repfuse::protocol::{Aggregate, Mode, TrainConfig};
use repfuse::representative::{RepConfig, DEFAULT_ETA_DELTA, DEFAULT_INNER_EPOCHS};

pub const SEED_ENV: &str = "REPFUSE_SEED";

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("mode", "baseline-central | rep-central | rep-distributed | fedavg"),
    ("dataset", "mnist | csv"),
    ("images", "IDX training images"),
    ("labels", "IDX training labels"),
    ("test_images", "IDX test images"),
    ("test_labels", "IDX test labels"),
    ("csv", "CSV table"),
    ("label_column", "last | zero-based index | header name"),
    ("has_header", "true | false"),
    ("test_fraction", "held-out share when no test files are given"),
    ("model", "mlp | cnn"),
    ("hidden", "comma-separated MLP widths"),
    ("clients", "client count K"),
    ("per_client", "samples per client shard"),
    ("partition", "noniid | uniform"),
    ("participation", "fraction P of clients per round"),
    ("batch", "batch size B"),
    ("rounds", "epochs or rounds T"),
    ("inner_epochs", "representative search steps H"),
    ("eta_w", "model learning rate"),
    ("eta_delta", "representative search step size"),
    ("budget", "L2 radius s around the batch mean"),
    ("residual", "on | off"),
    ("seed", "run seed"),
    ("fedavg_local_epochs", "local epochs per FedAVG round"),
    ("aggregate", "sequential | summed"),
    ("local_steps", "representative steps per round, or pass"),
    ("eval_every", "evaluate every N rounds"),
    ("workers", "client worker threads"),
    ("out", "output directory"),
    ("export_reps", "true | false"),
    ("export_every", "export representatives every N rounds"),
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown key {key:?}; valid keys: {}", valid_keys())]
    UnknownKey { key: String },
    #[error("{key}: cannot parse {value:?} ({expected})")]
    BadValue {
        key: String,
        value: String,
        expected: String,
    },
    #[error("missing required key {0:?}")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
}

fn valid_keys() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

/// Raw key/value pairs; later insertions win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig(BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SpecError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(Self::parse(&text)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(SpecError::UnknownKey { key: key.to_string() });
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), SpecError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| SpecError::Malformed {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn merge(&mut self, other: &RawConfig) {
        self.0.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn typed<T: FromStr>(&self, key: &str, expected: &str) -> Result<Option<T>, SpecError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| SpecError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected: expected.to_string(),
                })
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn require_path(&self, key: &str) -> Result<PathBuf, SpecError> {
        self.path(key).ok_or_else(|| SpecError::Missing(key.to_string()))
    }
}

fn parse_switch(key: &str, v: &str) -> Result<bool, SpecError> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(SpecError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected: "on/off".into(),
        }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
        has_header: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    NonIid,
    Uniform,
}

/// A fully resolved run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub data: DataSource,
    pub test_fraction: f64,
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub per_client: usize,
    pub partition: Partition,
    pub out: PathBuf,
    pub export_reps: bool,
    pub export_every: usize,
    /// Budget when given explicitly; otherwise chosen from the input shape at load time.
    pub budget: Option<f64>,
}

impl RunSpec {
    /// Resolves defaults; `env_seed` is the fallback when no `seed` key is set.
    pub fn resolve(raw: &RawConfig, env_seed: Option<&str>) -> Result<Self, SpecError> {
        let mode: Mode = raw
            .typed("mode", "baseline-central, rep-central, rep-distributed or fedavg")?
            .ok_or_else(|| SpecError::Missing("mode".into()))?;
        let dataset = raw.get("dataset").ok_or_else(|| SpecError::Missing("dataset".into()))?;
        let data = match dataset {
            "mnist" => {
                let test = match (raw.path("test_images"), raw.path("test_labels")) {
                    (Some(i), Some(l)) => Some((i, l)),
                    (None, None) => None,
                    (Some(_), None) => return Err(SpecError::Missing("test_labels".into())),
                    (None, Some(_)) => return Err(SpecError::Missing("test_images".into())),
                };
                DataSource::Mnist {
                    images: raw.require_path("images")?,
                    labels: raw.require_path("labels")?,
                    test,
                }
            }
            "csv" => DataSource::Csv {
                path: raw.require_path("csv")?,
                label_column: raw
                    .typed("label_column", "last, an index or a header name")?
                    .unwrap_or(LabelColumn::Last),
                has_header: raw
                    .get("has_header")
                    .map(|v| parse_switch("has_header", v))
                    .transpose()?
                    .unwrap_or(true),
            },
            other => {
                return Err(SpecError::BadValue {
                    key: "dataset".into(),
                    value: other.into(),
                    expected: "mnist or csv".into(),
                })
            }
        };
        let is_csv = matches!(data, DataSource::Csv { .. });
        let model = match raw.get("model").unwrap_or("mlp") {
            "mlp" => ModelKind::Mlp,
            "cnn" => ModelKind::Cnn,
            v => {
                return Err(SpecError::BadValue {
                    key: "model".into(),
                    value: v.into(),
                    expected: "mlp or cnn".into(),
                })
            }
        };
        let hidden = match raw.get("hidden") {
            None => DEFAULT_MLP_HIDDEN.to_vec(),
            Some("") => Vec::new(),
            Some(v) => v
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| SpecError::BadValue {
                    key: "hidden".into(),
                    value: v.into(),
                    expected: "comma-separated widths".into(),
                })?,
        };
        let partition = match raw.get("partition").unwrap_or("noniid") {
            "noniid" => Partition::NonIid,
            "uniform" => Partition::Uniform,
            v => {
                return Err(SpecError::BadValue {
                    key: "partition".into(),
                    value: v.into(),
                    expected: "noniid or uniform".into(),
                })
            }
        };
        let seed = match raw.typed::<u64>("seed", "unsigned integer")? {
            Some(s) => s,
            None => match env_seed {
                Some(v) => v.parse().map_err(|_| SpecError::BadValue {
                    key: SEED_ENV.into(),
                    value: v.into(),
                    expected: "unsigned integer".into(),
                })?,
                None => 0,
            },
        };
        let local_steps = match raw.get("local_steps") {
            None | Some("pass") => None,
            Some(_) => raw.typed("local_steps", "positive integer or pass")?,
        };
        let rep = RepConfig {
            budget: 0.0,
            inner_epochs: raw
                .typed("inner_epochs", "positive integer")?
                .unwrap_or(DEFAULT_INNER_EPOCHS),
            eta_delta: raw.typed("eta_delta", "positive real")?.unwrap_or(DEFAULT_ETA_DELTA),
            use_residual: raw
                .get("residual")
                .map(|v| parse_switch("residual", v))
                .transpose()?
                .unwrap_or(true),
        };
        let mut train = TrainConfig::new(mode, rep);
        train.eta_w = raw.typed("eta_w", "real")?.unwrap_or(train.eta_w);
        train.batch_size = raw
            .typed("batch", "positive integer")?
            .unwrap_or(if is_csv { 50 } else { 64 });
        train.rounds = raw.typed("rounds", "positive integer")?.unwrap_or(train.rounds);
        train.clients = raw.typed("clients", "positive integer")?.unwrap_or(train.clients);
        train.participation = raw
            .typed("participation", "real in (0, 1]")?
            .unwrap_or(train.participation);
        train.seed = seed;
        train.fedavg_local_epochs = raw.typed("fedavg_local_epochs", "positive integer")?.unwrap_or(1);
        train.aggregate = raw
            .typed::<Aggregate>("aggregate", "sequential or summed")?
            .unwrap_or(Aggregate::Sequential);
        train.local_steps = local_steps;
        train.eval_every = raw.typed("eval_every", "positive integer")?.unwrap_or(1);
        train.workers = raw.typed("workers", "positive integer")?.unwrap_or(1);
        let budget: Option<f64> = raw.typed("budget", "real >= 0")?;

        let mut check = train.clone();
        check.rep.budget = budget.unwrap_or(0.0);
        check.validate().map_err(|e| SpecError::Invalid(e.to_string()))?;
        if !mode.is_distributed() && train.clients != 1 {
            return Err(SpecError::Invalid(format!("{} runs with one client", mode.name())));
        }
        let test_fraction = raw.typed("test_fraction", "real in [0, 1)")?.unwrap_or(0.2);
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(SpecError::Invalid(format!(
                "test_fraction {test_fraction} not in [0, 1)"
            )));
        }
        let export_every = raw.typed("export_every", "positive integer")?.unwrap_or(10);
        if export_every == 0 {
            return Err(SpecError::Invalid("export_every must be >= 1".into()));
        }
        Ok(RunSpec {
            train,
            data,
            test_fraction,
            model,
            hidden,
            per_client: raw.typed("per_client", "positive integer")?.unwrap_or(200),
            partition,
            out: raw.require_path("out")?,
            export_reps: raw
                .get("export_reps")
                .map(|v| parse_switch("export_reps", v))
                .transpose()?
                .unwrap_or(false),
            export_every,
            budget,
        })
    }

    /// Every key with its resolved value, for the run summary.
    pub fn echo(&self) -> BTreeMap<&'static str, String> {
        let t = &self.train;
        let mut m = BTreeMap::new();
        let mut put = |k: &'static str, v: String| {
            m.insert(k, v);
        };
        put("mode", t.mode.name().into());
        match &self.data {
            DataSource::Mnist { images, labels, test } => {
                put("dataset", "mnist".into());
                put("images", images.display().to_string());
                put("labels", labels.display().to_string());
                if let Some((i, l)) = test {
                    put("test_images", i.display().to_string());
                    put("test_labels", l.display().to_string());
                }
            }
            DataSource::Csv {
                path,
                label_column,
                has_header,
            } => {
                put("dataset", "csv".into());
                put("csv", path.display().to_string());
                put(
                    "label_column",
                    match label_column {
                        LabelColumn::Last => "last".into(),
                        LabelColumn::Index(i) => i.to_string(),
                        LabelColumn::Name(n) => n.clone(),
                    },
                );
                put("has_header", has_header.to_string());
            }
        }
        put("test_fraction", self.test_fraction.to_string());
        put("model", if self.model == ModelKind::Mlp { "mlp" } else { "cnn" }.into());
        put(
            "hidden",
            self.hidden
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("clients", t.clients.to_string());
        put("per_client", self.per_client.to_string());
        put(
            "partition",
            if self.partition == Partition::NonIid {
                "noniid"
            } else {
                "uniform"
            }
            .into(),
        );
        put("participation", t.participation.to_string());
        put("batch", t.batch_size.to_string());
        put("rounds", t.rounds.to_string());
        put("inner_epochs", t.rep.inner_epochs.to_string());
        put("eta_w", t.eta_w.to_string());
        put("eta_delta", t.rep.eta_delta.to_string());
        put("budget", t.rep.budget.to_string());
        put("residual", if t.rep.use_residual { "on" } else { "off" }.into());
        put("seed", t.seed.to_string());
        put("fedavg_local_epochs", t.fedavg_local_epochs.to_string());
        put(
            "aggregate",
            match t.aggregate {
                Aggregate::Sequential => "sequential",
                Aggregate::Summed => "summed",
            }
            .into(),
        );
        put("local_steps", t.local_steps.map_or("pass".into(), |n| n.to_string()));
        put("eval_every", t.eval_every.to_string());
        put("workers", t.workers.to_string());
        put("out", self.out.display().to_string());
        put("export_reps", self.export_reps.to_string());
        put("export_every", self.export_every.to_string());
        m
    }
}
