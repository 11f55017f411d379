use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::representative::RepConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    BaselineCentral,
    RepCentral,
    RepDistributed,
    Fedavg,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::BaselineCentral,
        Mode::RepCentral,
        Mode::RepDistributed,
        Mode::Fedavg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::BaselineCentral => "baseline-central",
            Mode::RepCentral => "rep-central",
            Mode::RepDistributed => "rep-distributed",
            Mode::Fedavg => "fedavg",
        }
    }

    pub fn is_distributed(self) -> bool {
        matches!(self, Mode::RepDistributed | Mode::Fedavg)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// How the server applies the representatives returned in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    /// One step per representative in client order, gradient taken at the current weights.
    Sequential,
    /// One summed step with every gradient taken at the round's starting weights.
    Summed,
}

impl std::str::FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequential" => Ok(Aggregate::Sequential),
            "summed" => Ok(Aggregate::Summed),
            _ => Err(format!("unknown aggregate {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub eta_w: f64,
    pub batch_size: usize,
    /// Epochs (central) or communication rounds (distributed).
    pub rounds: usize,
    pub clients: usize,
    pub participation: f64,
    pub rep: RepConfig,
    pub seed: u64,
    pub fedavg_local_epochs: usize,
    pub aggregate: Aggregate,
    /// Representative steps per round; `None` means one pass over the data.
    pub local_steps: Option<usize>,
    pub workers: usize,
    /// Test accuracy is measured every this many rounds and at the last one.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(mode: Mode, rep: RepConfig) -> Self {
        TrainConfig {
            mode,
            eta_w: 0.001,
            batch_size: 64,
            rounds: 100,
            clients: 1,
            participation: 1.0,
            rep,
            seed: 0,
            fedavg_local_epochs: 1,
            aggregate: Aggregate::Sequential,
            local_steps: None,
            workers: 1,
            eval_every: 1,
        }
    }

    /// `ceil(P * K)`, guarded against round-off just above an integer.
    pub fn selected_per_round(&self) -> usize {
        let m = (self.participation * self.clients as f64 - 1e-9).ceil();
        (m.max(1.0) as usize).min(self.clients)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta_w >= 0.0 && self.eta_w.is_finite()) {
            return bad(format!("eta_w must be >= 0, got {}", self.eta_w));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.clients == 0 {
            return bad("clients must be >= 1".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad(format!("participation must be in (0, 1], got {}", self.participation));
        }
        if self.fedavg_local_epochs == 0 {
            return bad("fedavg local epochs must be >= 1".into());
        }
        if self.local_steps == Some(0) {
            return bad("local steps must be >= 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        self.rep.validate()
    }
}
