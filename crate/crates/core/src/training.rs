//! Backpropagation through time, Adam, gradient clipping and the training
//! loop with best-validation checkpointing.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{
    forward_trace, zero_state, CellKind, CellParams, Gradients, HiddenState, ParamTensors,
    StepTrace, GRU_H, GRU_R, GRU_Z, LSTM_F, LSTM_G, LSTM_I, LSTM_O,
};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Vector};

/// One aligned input/target sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
}

impl Sample {
    /// Scalar input and scalar target per step.
    pub fn scalar(inputs: &[f64], targets: &[f64]) -> Self {
        Sample {
            inputs: inputs.iter().map(|&v| Vector(vec![v])).collect(),
            targets: targets.iter().map(|&v| Vector(vec![v])).collect(),
        }
    }
}

/// Mean over every timestep and component of the squared error.
pub fn mse(pred: &[Vector], target: &[Vector]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("mse over an empty sequence"));
    }
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "mse sequence length",
            expected: target.len(),
            found: pred.len(),
        });
    }
    let (sum, n) = squared_error(pred, target)?;
    Ok(sum / n as f64)
}

fn squared_error(pred: &[Vector], target: &[Vector]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch {
                context: "mse component count",
                expected: t.len(),
                found: p.len(),
            });
        }
        sum += p
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        n += p.len();
    }
    Ok((sum, n))
}

fn unroll(params: &CellParams, inputs: &[Vector]) -> Result<Vec<StepTrace>> {
    let mut state = zero_state(params);
    let mut traces = Vec::with_capacity(inputs.len());
    for x in inputs {
        let t = forward_trace(params, &state, x)?;
        state = HiddenState {
            h: Vector(t.h.clone()),
            c: (params.kind == CellKind::Lstm).then(|| Vector(t.c.clone())),
        };
        traces.push(t);
    }
    Ok(traces)
}

fn check_aligned(params: &CellParams, inputs: &[Vector], targets: &[Vector]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Empty("training sequence"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "input/target sequence length",
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    if let Some(t) = targets.iter().find(|t| t.len() != params.output_dim) {
        return Err(Error::DimensionMismatch {
            context: "target width",
            expected: params.output_dim,
            found: t.len(),
        });
    }
    Ok(())
}

/// Forward-only loss, used by the finite-difference oracle.
pub fn sequence_loss(params: &CellParams, inputs: &[Vector], targets: &[Vector]) -> Result<f64> {
    check_aligned(params, inputs, targets)?;
    let preds = crate::cells::run_sequence(params, inputs)?;
    mse(&preds, targets)
}

/// MSE over the full unroll from the zero state and its exact gradient.
pub fn sequence_loss_and_grads(
    params: &CellParams,
    inputs: &[Vector],
    targets: &[Vector],
) -> Result<(f64, Gradients)> {
    check_aligned(params, inputs, targets)?;
    let traces = unroll(params, inputs)?;
    let preds: Vec<Vector> = traces.iter().map(|t| Vector(t.y.clone())).collect();
    let loss = mse(&preds, targets)?;
    let scale = 2.0 / (traces.len() * params.output_dim) as f64;
    let dys: Vec<Vec<f64>> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            p.iter()
                .zip(t.iter())
                .map(|(a, b)| scale * (a - b))
                .collect()
        })
        .collect();
    Ok((loss, backward(params, &traces, &dys)))
}

/// Accumulates parameter gradients for the unrolled `traces` given
/// `dL/dy_t` for each step. Gradients flow back to the start of `traces`
/// and no further.
pub(crate) fn backward(params: &CellParams, traces: &[StepTrace], dys: &[Vec<f64>]) -> Gradients {
    let hd = params.hidden_dim;
    let p = &params.tensors;
    let mut g = p.zeros_like();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];

    for (tr, dy) in traces.iter().zip(dys).rev() {
        g.readout.accumulate_outer(&tr.h, dy);
        for (b, d) in g.readout_bias.as_mut_slice().iter_mut().zip(dy) {
            *b += d;
        }
        let mut dh = std::mem::take(&mut dh_next);
        p.readout.accumulate_mul_transpose(dy, &mut dh);

        let mut dh_prev = vec![0.0; hd];
        match params.kind {
            CellKind::ElmanRnn => {
                let h = &tr.acts[0];
                let da: Vec<f64> = (0..hd).map(|j| dh[j] * (1.0 - h[j] * h[j])).collect();
                accumulate_gate(&mut g, 0, &tr.x, &tr.h_prev, &da);
                p.gates[0]
                    .recurrent
                    .accumulate_mul_transpose(&da, &mut dh_prev);
            }
            CellKind::Lstm => {
                let (i, f, gg, o) = (
                    &tr.acts[LSTM_I],
                    &tr.acts[LSTM_F],
                    &tr.acts[LSTM_G],
                    &tr.acts[LSTM_O],
                );
                let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
                let mut dc_prev = vec![0.0; hd];
                for j in 0..hd {
                    let dc = dh[j] * o[j] * (1.0 - tr.c_tanh[j] * tr.c_tanh[j]) + dc_next[j];
                    let d_o = dh[j] * tr.c_tanh[j];
                    da[LSTM_I][j] = dc * gg[j] * i[j] * (1.0 - i[j]);
                    da[LSTM_F][j] = dc * tr.c_prev[j] * f[j] * (1.0 - f[j]);
                    da[LSTM_G][j] = dc * i[j] * (1.0 - gg[j] * gg[j]);
                    da[LSTM_O][j] = d_o * o[j] * (1.0 - o[j]);
                    dc_prev[j] = dc * f[j];
                }
                for (k, dak) in da.iter().enumerate() {
                    accumulate_gate(&mut g, k, &tr.x, &tr.h_prev, dak);
                    p.gates[k]
                        .recurrent
                        .accumulate_mul_transpose(dak, &mut dh_prev);
                }
                dc_next = dc_prev;
            }
            CellKind::Gru => {
                let (z, r, cand) = (&tr.acts[GRU_Z], &tr.acts[GRU_R], &tr.acts[GRU_H]);
                let mut da_z = vec![0.0; hd];
                let mut da_h = vec![0.0; hd];
                for j in 0..hd {
                    da_h[j] = dh[j] * (1.0 - z[j]) * (1.0 - cand[j] * cand[j]);
                    da_z[j] = dh[j] * (tr.h_prev[j] - cand[j]) * z[j] * (1.0 - z[j]);
                    dh_prev[j] = dh[j] * z[j];
                }
                accumulate_gate(&mut g, GRU_H, &tr.x, &tr.gated_prev, &da_h);
                let mut d_gated = vec![0.0; hd];
                p.gates[GRU_H]
                    .recurrent
                    .accumulate_mul_transpose(&da_h, &mut d_gated);
                if params.gru_reset {
                    let da_r: Vec<f64> = (0..hd)
                        .map(|j| d_gated[j] * tr.h_prev[j] * r[j] * (1.0 - r[j]))
                        .collect();
                    for j in 0..hd {
                        dh_prev[j] += d_gated[j] * r[j];
                    }
                    accumulate_gate(&mut g, GRU_R, &tr.x, &tr.h_prev, &da_r);
                    p.gates[GRU_R]
                        .recurrent
                        .accumulate_mul_transpose(&da_r, &mut dh_prev);
                } else {
                    for j in 0..hd {
                        dh_prev[j] += d_gated[j];
                    }
                }
                accumulate_gate(&mut g, GRU_Z, &tr.x, &tr.h_prev, &da_z);
                p.gates[GRU_Z]
                    .recurrent
                    .accumulate_mul_transpose(&da_z, &mut dh_prev);
            }
        }
        dh_next = dh_prev;
    }
    g
}

fn accumulate_gate(g: &mut Gradients, k: usize, x: &[f64], h_in: &[f64], da: &[f64]) {
    let gate = &mut g.gates[k];
    gate.input.accumulate_outer(x, da);
    gate.recurrent.accumulate_outer(h_in, da);
    for (b, d) in gate.bias.as_mut_slice().iter_mut().zip(da) {
        *b += d;
    }
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every coordinate of `theta`.
pub fn central_difference<F>(mut f: F, theta: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + eps;
            let plus = f(&work);
            work[i] = orig - eps;
            let minus = f(&work);
            work[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

fn flatten(t: &ParamTensors) -> Vec<f64> {
    t.buffers().concat()
}

fn assign_flat(t: &mut ParamTensors, flat: &[f64]) {
    let mut offset = 0;
    for buf in t.buffers_mut() {
        buf.copy_from_slice(&flat[offset..offset + buf.len()]);
        offset += buf.len();
    }
}

/// Finite-difference estimate of the loss gradient. Independent of
/// [`sequence_loss_and_grads`]: only the forward pass is used.
pub fn fd_gradients(
    params: &CellParams,
    inputs: &[Vector],
    targets: &[Vector],
    eps: f64,
) -> Result<Gradients> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be > 0, got {eps}"
        )));
    }
    sequence_loss(params, inputs, targets)?;
    let mut probe = params.clone();
    let theta = flatten(&params.tensors);
    let grad = central_difference(
        |flat| {
            assign_flat(&mut probe.tensors, flat);
            sequence_loss(&probe, inputs, targets).expect("dimensions checked above")
        },
        &theta,
        eps,
    );
    let mut out = params.tensors.zeros_like();
    assign_flat(&mut out, &grad);
    Ok(out)
}

/// Largest elementwise `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    flatten(a)
        .iter()
        .zip(flatten(b))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

const CLIP_SLACK: f64 = 1e-12;

/// Rescales `g` to global L2 norm `max_norm` when it exceeds it.
pub fn clip_gradients(g: &Gradients, max_norm: f64) -> Gradients {
    let norm = g.l2_norm();
    // Slack absorbs rounding in the rescaled norm so clipping is idempotent.
    if norm <= max_norm + CLIP_SLACK || norm == 0.0 {
        return g.clone();
    }
    let s = max_norm / norm;
    let mut out = g.clone();
    out.buffers_mut()
        .into_iter()
        .for_each(|b| b.iter_mut().for_each(|v| *v *= s));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamTensors,
    pub v: ParamTensors,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &CellParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: params.tensors.zeros_like(),
            v: params.tensors.zeros_like(),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn from_config(params: &CellParams, cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }

    /// In-place bias-corrected Adam update.
    pub fn apply(&mut self, params: &mut ParamTensors, g: &Gradients) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .buffers_mut()
            .into_iter()
            .zip(g.buffers())
            .zip(self.m.buffers_mut())
            .zip(self.v.buffers_mut())
        {
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

pub fn adam_step(params: &CellParams, g: &Gradients, state: &AdamState) -> (CellParams, AdamState) {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p.tensors, g);
    (p, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// Full-sequence BPTT, one update per sequence.
    #[default]
    PerSequence,
    /// One update per timestep, gradient truncated to that step.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
    pub hidden_dim: usize,
    pub update_mode: UpdateMode,
    /// GRU candidate uses `r ∘ h_{t-1}`; off reproduces the reset-free variant.
    pub gru_reset: bool,
    /// z-score wear targets as well as vibration when fitting a model.
    /// Reported MSE is converted back to mm² either way.
    pub normalize_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 14,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            early_stop_patience: None,
            seed: 0,
            hidden_dim: 5,
            update_mode: UpdateMode::PerSequence,
            gru_reset: true,
            normalize_targets: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = crate::error::parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be > 0");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be >= 1 when set");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<IterationRecord>,
    /// Iteration whose parameters were kept.
    pub best_iteration: usize,
}

impl TrainHistory {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.iteration == self.best_iteration)
            .map(|r| r.val_mse)
    }

    /// CSV with header `iteration,train_mse,val_mse`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,train_mse,val_mse")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.iteration, r.train_mse, r.val_mse)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Pooled MSE over all steps of all samples.
pub fn evaluate_mse(params: &CellParams, set: &[Sample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for s in set {
        check_aligned(params, &s.inputs, &s.targets)?;
        let preds = crate::cells::run_sequence(params, &s.inputs)?;
        let (se, cnt) = squared_error(&preds, &s.targets)?;
        sum += se;
        n += cnt;
    }
    if n == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(sum / n as f64)
}

/// Initializes a cell from `cfg.seed` and trains it.
pub fn train(
    kind: CellKind,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(CellParams, TrainHistory)> {
    let first = train_set.first().ok_or(Error::Empty("training set"))?;
    let input_dim = first.inputs.first().map_or(0, Vector::len);
    let output_dim = first.targets.first().map_or(0, Vector::len);
    let mut rng = seeded_rng(cfg.seed);
    let params = CellParams::init_with(kind, input_dim, cfg.hidden_dim, output_dim, &mut rng)
        .with_gru_reset(cfg.gru_reset);
    train_from(params, train_set, val_set, cfg)
}

/// Trains from the given starting parameters.
///
/// Every iteration visits all training sequences in order, resetting the
/// hidden state per sequence. The returned parameters are those with the
/// lowest validation MSE observed after any iteration.
pub fn train_from(
    mut params: CellParams,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(CellParams, TrainHistory)> {
    cfg.validate()?;
    params.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    for s in train_set.iter().chain(val_set) {
        check_aligned(&params, &s.inputs, &s.targets)?;
        let finite = s.inputs.iter().chain(&s.targets).all(Vector::is_finite);
        if !finite {
            return Err(Error::Config("non-finite value in training data".into()));
        }
    }

    let mut adam = AdamState::from_config(&params, cfg);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, CellParams)> = None;
    let mut stale = 0;

    for iteration in 1..=cfg.iterations {
        for (sequence, sample) in train_set.iter().enumerate() {
            let ok = match cfg.update_mode {
                UpdateMode::PerSequence => {
                    let (loss, g) =
                        sequence_loss_and_grads(&params, &sample.inputs, &sample.targets)?;
                    if loss.is_finite() && g.is_finite() {
                        adam.apply(&mut params.tensors, &clip_gradients(&g, cfg.clip_norm));
                        true
                    } else {
                        false
                    }
                }
                UpdateMode::PerStep => per_step_pass(&mut params, &mut adam, sample, cfg)?,
            };
            if !ok || !params.tensors.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    sequence,
                });
            }
        }

        let record = IterationRecord {
            iteration,
            train_mse: evaluate_mse(&params, train_set)?,
            val_mse: evaluate_mse(&params, val_set)?,
        };
        history.records.push(record);

        if best.as_ref().is_none_or(|(v, _)| record.val_mse < *v) {
            best = Some((record.val_mse, params.clone()));
            history.best_iteration = iteration;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    let (_, best_params) = best.expect("at least one iteration ran");
    Ok((best_params, history))
}

/// Truncated mode: at every timestep, backpropagate that step's error into
/// the current parameters only, then update.
fn per_step_pass(
    params: &mut CellParams,
    adam: &mut AdamState,
    sample: &Sample,
    cfg: &TrainConfig,
) -> Result<bool> {
    let mut state = zero_state(params);
    let scale = 2.0 / params.output_dim as f64;
    for (x, target) in sample.inputs.iter().zip(&sample.targets) {
        let trace = forward_trace(params, &state, x)?;
        let dy: Vec<f64> = trace
            .y
            .iter()
            .zip(target.iter())
            .map(|(a, b)| scale * (a - b))
            .collect();
        if !dy.iter().all(|v| v.is_finite()) {
            return Ok(false);
        }
        let g = backward(params, std::slice::from_ref(&trace), &[dy]);
        adam.apply(&mut params.tensors, &clip_gradients(&g, cfg.clip_norm));
        state = HiddenState {
            h: Vector(trace.h),
            c: (params.kind == CellKind::Lstm).then_some(Vector(trace.c)),
        };
    }
    Ok(true)
}

/// Outcome of one BPTT-versus-finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckTrial {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub length: usize,
    pub max_rel_error: f64,
}

/// Random small networks (dims ≤ 4, length ≤ 6) checked against central
/// differences with step `eps`.
pub fn gradient_check(
    kind: CellKind,
    trials: usize,
    seed: u64,
    eps: f64,
) -> Result<Vec<GradCheckTrial>> {
    let mut rng = seeded_rng(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let input_dim = rng.gen_range(1..=4);
        let hidden_dim = rng.gen_range(1..=4);
        let output_dim = rng.gen_range(1..=4);
        let length = rng.gen_range(1..=6);
        let mut params = CellParams::init_with(kind, input_dim, hidden_dim, output_dim, &mut rng);
        for buf in params.tensors.buffers_mut() {
            for v in buf.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let draw = |rng: &mut crate::numerics::SeededRng, n: usize| -> Vec<Vector> {
            (0..length)
                .map(|_| Vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect()
        };
        let inputs = draw(&mut rng, input_dim);
        let targets = draw(&mut rng, output_dim);
        let (_, exact) = sequence_loss_and_grads(&params, &inputs, &targets)?;
        let approx = fd_gradients(&params, &inputs, &targets, eps)?;
        out.push(GradCheckTrial {
            kind,
            input_dim,
            hidden_dim,
            output_dim,
            length,
            max_rel_error: max_relative_error(&exact, &approx),
        });
    }
    Ok(out)
}
