//! Observation and transition models and the inference built on them:
//! online diagnosis, generative k-step prediction and remaining useful life.
//!
//! The observation model maps the vibration history to the current wear
//! estimate. The transition model maps the wear history to next-step wear;
//! for prognosis it is warmed up on `(y0, ŷ_1, …, ŷ_t)` and then fed its own
//! outputs, carrying its hidden state forward.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cells::{step, zero_state, CellKind, CellParams, HiddenState};
use crate::data::{Normalizer, PairedSequence};
use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::training::{train, Sample, TrainConfig, TrainHistory};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_WEAR_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MAX_HORIZON: usize = 100;

/// A scalar-in, scalar-out recurrence.
pub trait Recurrent {
    type State: Clone;

    fn initial_state(&self) -> Self::State;

    /// Consumes one input, updates `state` and returns the output.
    fn advance(&self, state: &mut Self::State, input: f64) -> f64;
}

impl Recurrent for CellParams {
    type State = HiddenState;

    fn initial_state(&self) -> HiddenState {
        zero_state(self)
    }

    fn advance(&self, state: &mut HiddenState, input: f64) -> f64 {
        let (next, y) = step(self, state, &Vector(vec![input]))
            .expect("scalar cell dimensions are validated on model construction");
        *state = next;
        y[0]
    }
}

fn check_scalar_cell(p: &CellParams, role: &str) -> Result<()> {
    p.validate()?;
    if p.input_dim != 1 || p.output_dim != 1 {
        return Err(Error::Model(format!(
            "{role} model must map 1 input to 1 output, got {} -> {}",
            p.input_dim, p.output_dim
        )));
    }
    Ok(())
}

/// Remaining useful life in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rul {
    Steps(usize),
    /// The predicted wear never reached the threshold within the horizon.
    BeyondHorizon,
}

impl fmt::Display for Rul {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rul::Steps(n) => write!(f, "{n}"),
            Rul::BeyondHorizon => f.write_str("beyond"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<O = CellParams, T = CellParams> {
    pub obs: O,
    pub trans: T,
    /// Applied to raw vibration values before they reach `obs`.
    pub normalizer: Normalizer,
    /// Wear scaling used inside both networks; identity keeps them in mm.
    pub target_normalizer: Normalizer,
    pub wear_threshold: f64,
    /// Wear assumed before the first cut.
    pub y0: f64,
}

impl<O: Recurrent, T: Recurrent> StateSpaceModel<O, T> {
    /// Model with an identity normalizer, default threshold and `y0 = 0`.
    pub fn from_parts(obs: O, trans: T) -> Self {
        StateSpaceModel {
            obs,
            trans,
            normalizer: Normalizer::IDENTITY,
            target_normalizer: Normalizer::IDENTITY,
            wear_threshold: DEFAULT_WEAR_THRESHOLD,
            y0: 0.0,
        }
    }

    pub fn with_threshold(mut self, wear_threshold: f64) -> Result<Self> {
        if !(wear_threshold > 0.0 && wear_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "wear threshold must be > 0, got {wear_threshold}"
            )));
        }
        self.wear_threshold = wear_threshold;
        Ok(self)
    }

    /// Causal wear estimate `ŷ_t` for every prefix of `x`.
    pub fn diagnose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Err(Error::Empty("vibration sequence"));
        }
        let mut state = self.obs.initial_state();
        Ok(x.iter().map(|&v| self.observe(&mut state, v)).collect())
    }

    /// One observation step, raw vibration in, wear in mm out.
    fn observe(&self, state: &mut O::State, x: f64) -> f64 {
        let y = self.obs.advance(state, self.normalizer.apply(x));
        self.target_normalizer.invert(y)
    }

    /// One transition step in mm.
    fn transit(&self, state: &mut T::State, y: f64) -> f64 {
        let tn = &self.target_normalizer;
        tn.invert(self.trans.advance(state, tn.apply(y)))
    }

    /// Transition state after consuming `(y0, ŷ_1, …, ŷ_t)` and its last
    /// output `ỹ_{t+1}`.
    fn warm_up(&self, diagnosis: &[f64]) -> (T::State, f64) {
        let mut state = self.trans.initial_state();
        let mut out = self.transit(&mut state, self.y0);
        for &y in diagnosis {
            out = self.transit(&mut state, y);
        }
        (state, out)
    }

    /// Wear forecasts `[ỹ_{t+1}, …, ỹ_{t+k}]` given `x_1..x_t`.
    pub fn predict_k_step(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::Config("prediction horizon k must be >= 1".into()));
        }
        let diagnosis = self.diagnose(x)?;
        let (mut state, first) = self.warm_up(&diagnosis);
        Ok(self.roll_out(&mut state, first, k))
    }

    fn roll_out(&self, state: &mut T::State, first: f64, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(k);
        let mut y = first;
        out.push(y);
        for _ in 1..k {
            y = self.transit(state, y);
            out.push(y);
        }
        out
    }

    /// Steps until the generated wear first reaches the threshold.
    pub fn predict_rul(&self, x: &[f64], max_horizon: usize) -> Result<Rul> {
        if max_horizon == 0 {
            return Err(Error::Config("max_horizon must be >= 1".into()));
        }
        let diagnosis = self.diagnose(x)?;
        let current = *diagnosis.last().expect("diagnose rejects empty input");
        let (mut state, first) = self.warm_up(&diagnosis);
        Ok(self.rul_from(current, &mut state, first, max_horizon))
    }

    fn rul_from(&self, current: f64, state: &mut T::State, first: f64, max_horizon: usize) -> Rul {
        if current >= self.wear_threshold {
            return Rul::Steps(0);
        }
        let mut y = first;
        for j in 1..=max_horizon {
            if y >= self.wear_threshold {
                return Rul::Steps(j);
            }
            if j < max_horizon {
                y = self.transit(state, y);
            }
        }
        Rul::BeyondHorizon
    }

    /// Diagnosis, one- and two-step forecasts and RUL at every `t`, each
    /// computed from `x_1..x_t` only. Equivalent to calling the individual
    /// operations on every prefix, but linear in the sequence length apart
    /// from the RUL roll-outs.
    pub fn prognose_online(&self, x: &[f64], max_horizon: usize) -> Result<PrognosisResult> {
        if x.is_empty() {
            return Err(Error::Empty("vibration sequence"));
        }
        if max_horizon == 0 {
            return Err(Error::Config("max_horizon must be >= 1".into()));
        }
        let mut obs_state = self.obs.initial_state();
        let mut trans_state = self.trans.initial_state();
        self.transit(&mut trans_state, self.y0);

        let mut records = Vec::with_capacity(x.len());
        for (i, &xv) in x.iter().enumerate() {
            let y_hat = self.observe(&mut obs_state, xv);
            let one_step = self.transit(&mut trans_state, y_hat);
            let mut ahead = trans_state.clone();
            let two_step = self.transit(&mut ahead, one_step);
            let mut ahead = trans_state.clone();
            let rul = self.rul_from(y_hat, &mut ahead, one_step, max_horizon);
            records.push(PrognosisRecord {
                t: i + 1,
                x: xv,
                y_true: None,
                y_hat,
                y_hat_1step: one_step,
                y_hat_2step: two_step,
                rul,
            });
        }
        Ok(PrognosisResult { records })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrognosisRecord {
    /// 1-based cut index.
    pub t: usize,
    pub x: f64,
    pub y_true: Option<f64>,
    pub y_hat: f64,
    /// Forecast for `t + 1` made at `t`.
    pub y_hat_1step: f64,
    /// Forecast for `t + 2` made at `t`.
    pub y_hat_2step: f64,
    pub rul: Rul,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrognosisResult {
    pub records: Vec<PrognosisRecord>,
}

impl PrognosisResult {
    pub fn with_truth(mut self, y: &[f64]) -> Self {
        for (r, &v) in self.records.iter_mut().zip(y) {
            r.y_true = Some(v);
        }
        self
    }

    pub fn diagnosis(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_hat).collect()
    }

    pub fn one_step(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_hat_1step).collect()
    }

    pub fn two_step(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y_hat_2step).collect()
    }
}

pub const PROGNOSIS_CSV_HEADER: &str = "sequence_id,t,x,y_true,y_hat,y_hat_1step,y_hat_2step,rul";

/// Writes one row per record. `y_true` is empty when unknown; `rul` is
/// empty when the threshold is not reached within the horizon.
pub fn write_prognosis_csv<W: Write>(
    results: &[(String, PrognosisResult)],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{PROGNOSIS_CSV_HEADER}")?;
    for (id, res) in results {
        let id = if id.contains([',', '"', '\n', '\r']) {
            format!("\"{}\"", id.replace('"', "\"\""))
        } else {
            id.clone()
        };
        for r in &res.records {
            let y_true = r.y_true.map_or(String::new(), |v| v.to_string());
            let rul = match r.rul {
                Rul::Steps(n) => n.to_string(),
                Rul::BeyondHorizon => String::new(),
            };
            writeln!(
                w,
                "{id},{},{},{y_true},{},{},{},{rul}",
                r.t, r.x, r.y_hat, r.y_hat_1step, r.y_hat_2step
            )?;
        }
    }
    Ok(())
}

/// Population variance of the second differences `v[t+1] − 2v[t] + v[t−1]`.
/// Zero for fewer than four points.
pub fn second_difference_variance(v: &[f64]) -> f64 {
    if v.len() < 4 {
        return 0.0;
    }
    let d2: Vec<f64> = v.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    let mean = d2.iter().sum::<f64>() / d2.len() as f64;
    d2.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / d2.len() as f64
}

// ---------------------------------------------------------------------------
// Fitting

/// A fitted model with the training curves of both halves.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: StateSpaceModel,
    pub obs_history: TrainHistory,
    pub trans_history: TrainHistory,
}

/// Seed offset separating the transition model's initialization from the
/// observation model's.
const TRANS_SEED_OFFSET: u64 = 0x5EED_7A45;

/// Inputs `x_t`, targets `y_t`, each through its normalizer.
pub fn observation_samples(
    seqs: &[PairedSequence],
    norm: &Normalizer,
    target_norm: &Normalizer,
) -> Result<Vec<Sample>> {
    seqs.iter()
        .map(|s| {
            Ok(Sample::scalar(
                &norm.apply_all(&s.x),
                &target_norm.apply_all(s.labels()?),
            ))
        })
        .collect()
}

/// Inputs `(y0, y_1, …, y_{T−1})`, targets `(y_1, …, y_T)`, all through
/// `target_norm`.
pub fn transition_samples(
    seqs: &[PairedSequence],
    y0: f64,
    target_norm: &Normalizer,
) -> Result<Vec<Sample>> {
    seqs.iter()
        .map(|s| {
            let y = target_norm.apply_all(s.labels()?);
            let inputs: Vec<f64> = std::iter::once(target_norm.apply(y0))
                .chain(y[..y.len() - 1].iter().copied())
                .collect();
            Ok(Sample::scalar(&inputs, &y))
        })
        .collect()
}

/// Converts a history recorded on normalized targets back to mm².
fn history_in_mm(mut h: TrainHistory, target_norm: &Normalizer) -> TrainHistory {
    if !target_norm.is_identity() {
        let s2 = target_norm.scale * target_norm.scale;
        for r in &mut h.records {
            r.train_mse *= s2;
            r.val_mse *= s2;
        }
    }
    h
}

/// Trains the observation and transition models independently.
pub fn fit(
    train_set: &[PairedSequence],
    val_set: &[PairedSequence],
    cfg: &TrainConfig,
    kind_obs: CellKind,
    kind_trans: CellKind,
) -> Result<FittedModel> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let normalizer = Normalizer::fit(train_set)?;
    let target_normalizer = if cfg.normalize_targets {
        Normalizer::fit_targets(train_set)?
    } else {
        Normalizer::IDENTITY
    };
    let y0 = 0.0;

    let (obs, obs_history) = train(
        kind_obs,
        &observation_samples(train_set, &normalizer, &target_normalizer)?,
        &observation_samples(val_set, &normalizer, &target_normalizer)?,
        cfg,
    )?;
    let trans_cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(TRANS_SEED_OFFSET),
        ..cfg.clone()
    };
    let (trans, trans_history) = train(
        kind_trans,
        &transition_samples(train_set, y0, &target_normalizer)?,
        &transition_samples(val_set, y0, &target_normalizer)?,
        &trans_cfg,
    )?;
    Ok(FittedModel {
        model: StateSpaceModel {
            obs,
            trans,
            normalizer,
            target_normalizer,
            wear_threshold: DEFAULT_WEAR_THRESHOLD,
            y0,
        },
        obs_history: history_in_mm(obs_history, &target_normalizer),
        trans_history: history_in_mm(trans_history, &target_normalizer),
    })
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format_version: u32,
    wear_threshold: f64,
    y0: f64,
    normalizer: Normalizer,
    #[serde(default)]
    target_normalizer: Normalizer,
    obs: CellParams,
    trans: CellParams,
}

impl StateSpaceModel {
    pub fn new(
        obs: CellParams,
        trans: CellParams,
        normalizer: Normalizer,
        wear_threshold: f64,
        y0: f64,
    ) -> Result<Self> {
        check_scalar_cell(&obs, "observation")?;
        check_scalar_cell(&trans, "transition")?;
        normalizer.validate()?;
        if !y0.is_finite() {
            return Err(Error::Model("y0 must be finite".into()));
        }
        StateSpaceModel {
            obs,
            trans,
            normalizer,
            target_normalizer: Normalizer::IDENTITY,
            wear_threshold: DEFAULT_WEAR_THRESHOLD,
            y0,
        }
        .with_threshold(wear_threshold)
    }

    pub fn with_target_normalizer(mut self, target_normalizer: Normalizer) -> Result<Self> {
        target_normalizer.validate()?;
        self.target_normalizer = target_normalizer;
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            format_version: MODEL_FORMAT_VERSION,
            wear_threshold: self.wear_threshold,
            y0: self.y0,
            normalizer: self.normalizer,
            target_normalizer: self.target_normalizer,
            obs: self.obs.clone(),
            trans: self.trans.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Self::new(
            doc.obs,
            doc.trans,
            doc.normalizer,
            doc.wear_threshold,
            doc.y0,
        )
        .and_then(|m| m.with_target_normalizer(doc.target_normalizer))
        .map_err(|e| match e {
            Error::Config(m) => Error::Model(m),
            other => other,
        })
    }
}
