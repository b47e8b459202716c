//! Forward dynamics of the Elman, LSTM and GRU cells with a linear readout.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init_params_with, seeded_rng, sigmoid_scalar, Matrix, Vector};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Initial forget-gate bias for LSTM cells.
pub const LSTM_FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[serde(rename = "elman")]
    ElmanRnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::ElmanRnn, CellKind::Lstm, CellKind::Gru];

    /// Gate names in storage order.
    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::ElmanRnn => &["h"],
            CellKind::Lstm => &["i", "f", "g", "o"],
            CellKind::Gru => &["z", "r", "h"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::ElmanRnn => "elman",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elman" | "rnn" | "elman-rnn" => Ok(CellKind::ElmanRnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!(
                "unknown cell kind `{other}` (expected elman, lstm or gru)"
            ))),
        }
    }
}

// Gate slots.
pub(crate) const LSTM_I: usize = 0;
pub(crate) const LSTM_F: usize = 1;
pub(crate) const LSTM_G: usize = 2;
pub(crate) const LSTM_O: usize = 3;
pub(crate) const GRU_Z: usize = 0;
pub(crate) const GRU_R: usize = 1;
pub(crate) const GRU_H: usize = 2;

/// Input weights `U` (input × hidden), recurrent weights `W` (hidden × hidden)
/// and bias for one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Vector,
}

/// Every trainable tensor of a cell. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub gates: Vec<Gate>,
    /// Readout `V` (hidden × output).
    pub readout: Matrix,
    pub readout_bias: Vector,
}

pub type Gradients = ParamTensors;

impl ParamTensors {
    fn zeros(n_gates: usize, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        ParamTensors {
            gates: (0..n_gates)
                .map(|_| Gate {
                    input: Matrix::zeros(input_dim, hidden_dim),
                    recurrent: Matrix::zeros(hidden_dim, hidden_dim),
                    bias: Vector::zeros(hidden_dim),
                })
                .collect(),
            readout: Matrix::zeros(hidden_dim, output_dim),
            readout_bias: Vector::zeros(output_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.buffers_mut()
            .into_iter()
            .for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// Flat views over every tensor, in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.gates.len() * 3 + 2);
        for g in &self.gates {
            out.push(g.input.as_slice());
            out.push(g.recurrent.as_slice());
            out.push(g.bias.as_slice());
        }
        out.push(self.readout.as_slice());
        out.push(self.readout_bias.as_slice());
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.gates.len() * 3 + 2);
        for g in &mut self.gates {
            out.push(g.input.as_mut_slice());
            out.push(g.recurrent.as_mut_slice());
            out.push(g.bias.as_mut_slice());
        }
        out.push(self.readout.as_mut_slice());
        out.push(self.readout_bias.as_mut_slice());
        out
    }

    pub fn num_values(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.buffers()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Same tensor count and per-tensor lengths.
    pub fn same_shape(&self, other: &ParamTensors) -> bool {
        let a = self.buffers();
        let b = other.buffers();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// GRU only: apply the reset gate to `h_{t-1}` inside the candidate.
    /// `false` reproduces the variant whose candidate ignores `r`.
    pub gru_reset: bool,
    pub tensors: ParamTensors,
}

impl CellParams {
    /// All-zero parameters, LSTM forget bias included.
    pub fn zeros(kind: CellKind, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        CellParams {
            kind,
            input_dim,
            hidden_dim,
            output_dim,
            gru_reset: true,
            tensors: ParamTensors::zeros(
                kind.gate_names().len(),
                input_dim,
                hidden_dim,
                output_dim,
            ),
        }
    }

    /// Glorot-uniform weights, zero biases (LSTM forget bias at
    /// [`LSTM_FORGET_BIAS`]), Glorot-uniform readout with zero bias.
    pub fn new(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeded_rng(seed);
        Self::init_with(kind, input_dim, hidden_dim, output_dim, &mut rng)
    }

    pub(crate) fn init_with(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(kind, input_dim, hidden_dim, output_dim);
        for g in &mut p.tensors.gates {
            g.input = init_params_with(input_dim, hidden_dim, rng);
            g.recurrent = init_params_with(hidden_dim, hidden_dim, rng);
        }
        if kind == CellKind::Lstm {
            for b in p.tensors.gates[LSTM_F].bias.as_mut_slice() {
                *b = LSTM_FORGET_BIAS;
            }
        }
        p.tensors.readout = init_params_with(hidden_dim, output_dim, rng);
        p
    }

    pub fn with_gru_reset(mut self, on: bool) -> Self {
        self.gru_reset = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Model("dimensions must be at least 1".into()));
        }
        let expected = ParamTensors::zeros(
            self.kind.gate_names().len(),
            self.input_dim,
            self.hidden_dim,
            self.output_dim,
        );
        if !self.tensors.same_shape(&expected)
            || self.tensors.readout.rows() != self.hidden_dim
            || self.tensors.readout.cols() != self.output_dim
            || self.tensors.gates.iter().any(|g| {
                g.input.rows() != self.input_dim
                    || g.input.cols() != self.hidden_dim
                    || g.recurrent.rows() != self.hidden_dim
                    || g.recurrent.cols() != self.hidden_dim
            })
        {
            return Err(Error::Model(format!(
                "tensor shapes do not match a {} cell with dims ({}, {}, {})",
                self.kind, self.input_dim, self.hidden_dim, self.output_dim
            )));
        }
        if !self.tensors.is_finite() {
            return Err(Error::Model("non-finite parameter value".into()));
        }
        Ok(())
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        let idx = self.kind.gate_names().iter().position(|g| *g == name)?;
        self.tensors.gates.get(idx)
    }

    pub fn gate_mut(&mut self, name: &str) -> Option<&mut Gate> {
        let idx = self.kind.gate_names().iter().position(|g| *g == name)?;
        self.tensors.gates.get_mut(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vector,
    /// Cell memory, LSTM only.
    pub c: Option<Vector>,
}

pub fn zero_state(params: &CellParams) -> HiddenState {
    HiddenState {
        h: Vector::zeros(params.hidden_dim),
        c: (params.kind == CellKind::Lstm).then(|| Vector::zeros(params.hidden_dim)),
    }
}

/// Everything backpropagation needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gate values in gate storage order.
    pub acts: Vec<Vec<f64>>,
    /// GRU: `r ∘ h_prev` (or `h_prev` when the reset gate is disabled).
    pub gated_prev: Vec<f64>,
    /// LSTM: `tanh(c_t)`.
    pub c_tanh: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub y: Vec<f64>,
}

/// Pre-activation `x·U + h·W + b` for one gate; dims are checked by the caller.
fn gate_pre(g: &Gate, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = g.bias.0.clone();
    g.input.accumulate_left_mul(x, &mut out);
    g.recurrent.accumulate_left_mul(h, &mut out);
    out
}

fn check_step_dims(params: &CellParams, state: &HiddenState, x: &Vector) -> Result<()> {
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch {
            context: "cell input",
            expected: params.input_dim,
            found: x.len(),
        });
    }
    if state.h.len() != params.hidden_dim {
        return Err(Error::DimensionMismatch {
            context: "hidden state",
            expected: params.hidden_dim,
            found: state.h.len(),
        });
    }
    if params.kind == CellKind::Lstm {
        let found = state.c.as_ref().map_or(0, Vector::len);
        if found != params.hidden_dim {
            return Err(Error::DimensionMismatch {
                context: "lstm cell memory",
                expected: params.hidden_dim,
                found,
            });
        }
    }
    Ok(())
}

pub(crate) fn forward_trace(
    params: &CellParams,
    state: &HiddenState,
    x: &Vector,
) -> Result<StepTrace> {
    check_step_dims(params, state, x)?;
    let gates = &params.tensors.gates;
    let xs = x.as_slice();
    let h_prev = state.h.as_slice();
    let mut trace = StepTrace {
        x: xs.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: Vec::new(),
        acts: Vec::with_capacity(gates.len()),
        gated_prev: Vec::new(),
        c_tanh: Vec::new(),
        c: Vec::new(),
        h: Vec::new(),
        y: Vec::new(),
    };

    match params.kind {
        CellKind::ElmanRnn => {
            let h: Vec<f64> = gate_pre(&gates[0], xs, h_prev)
                .into_iter()
                .map(f64::tanh)
                .collect();
            trace.acts.push(h.clone());
            trace.h = h;
        }
        CellKind::Lstm => {
            let c_prev = state.c.as_ref().expect("checked").as_slice();
            for (k, g) in gates.iter().enumerate() {
                let pre = gate_pre(g, xs, h_prev);
                let act = if k == LSTM_G {
                    pre.into_iter().map(f64::tanh).collect()
                } else {
                    pre.into_iter().map(sigmoid_scalar).collect()
                };
                trace.acts.push(act);
            }
            let (i, f, g, o) = (
                &trace.acts[LSTM_I],
                &trace.acts[LSTM_F],
                &trace.acts[LSTM_G],
                &trace.acts[LSTM_O],
            );
            let c: Vec<f64> = (0..params.hidden_dim)
                .map(|j| f[j] * c_prev[j] + i[j] * g[j])
                .collect();
            let c_tanh: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            trace.h = o.iter().zip(&c_tanh).map(|(o, t)| o * t).collect();
            trace.c_prev = c_prev.to_vec();
            trace.c = c;
            trace.c_tanh = c_tanh;
        }
        CellKind::Gru => {
            let z: Vec<f64> = gate_pre(&gates[GRU_Z], xs, h_prev)
                .into_iter()
                .map(sigmoid_scalar)
                .collect();
            let r: Vec<f64> = gate_pre(&gates[GRU_R], xs, h_prev)
                .into_iter()
                .map(sigmoid_scalar)
                .collect();
            let gated_prev: Vec<f64> = if params.gru_reset {
                r.iter().zip(h_prev).map(|(r, h)| r * h).collect()
            } else {
                h_prev.to_vec()
            };
            let cand: Vec<f64> = gate_pre(&gates[GRU_H], xs, &gated_prev)
                .into_iter()
                .map(f64::tanh)
                .collect();
            trace.h = (0..params.hidden_dim)
                .map(|j| (1.0 - z[j]) * cand[j] + z[j] * h_prev[j])
                .collect();
            trace.acts.push(z);
            trace.acts.push(r);
            trace.acts.push(cand);
            trace.gated_prev = gated_prev;
        }
    }

    let mut y = params.tensors.readout_bias.0.clone();
    params.tensors.readout.accumulate_left_mul(&trace.h, &mut y);
    trace.y = y;
    Ok(trace)
}

/// One recurrent step: returns the new state and the readout `h_t·V + c_out`.
pub fn step(params: &CellParams, state: &HiddenState, x: &Vector) -> Result<(HiddenState, Vector)> {
    let trace = forward_trace(params, state, x)?;
    let next = HiddenState {
        h: Vector(trace.h),
        c: (params.kind == CellKind::Lstm).then_some(Vector(trace.c)),
    };
    Ok((next, Vector(trace.y)))
}

/// Post-activation values of one step, keyed by [`CellKind::gate_names`]
/// order. For GRU the `h` entry is the candidate, not the new state.
pub fn gate_activations(
    params: &CellParams,
    state: &HiddenState,
    x: &Vector,
) -> Result<Vec<(&'static str, Vector)>> {
    let trace = forward_trace(params, state, x)?;
    Ok(params
        .kind
        .gate_names()
        .iter()
        .copied()
        .zip(trace.acts.into_iter().map(Vector))
        .collect())
}

/// Runs the cell from the zero state and returns every readout.
pub fn run_sequence(params: &CellParams, inputs: &[Vector]) -> Result<Vec<Vector>> {
    let mut state = zero_state(params);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, y) = step(params, &state, x)?;
        state = next;
        out.push(y);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CellParamsDoc {
    format_version: u32,
    kind: CellKind,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    #[serde(default = "default_true")]
    gru_reset: bool,
    weights: BTreeMap<String, TensorDoc>,
}

fn default_true() -> bool {
    true
}

fn tensor_doc(m: &Matrix) -> TensorDoc {
    TensorDoc {
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice().to_vec(),
    }
}

impl From<&CellParams> for CellParamsDoc {
    fn from(p: &CellParams) -> Self {
        let mut weights = BTreeMap::new();
        for (name, g) in p.kind.gate_names().iter().zip(&p.tensors.gates) {
            weights.insert(format!("U_{name}"), tensor_doc(&g.input));
            weights.insert(format!("W_{name}"), tensor_doc(&g.recurrent));
            weights.insert(
                format!("b_{name}"),
                TensorDoc {
                    rows: 1,
                    cols: g.bias.len(),
                    data: g.bias.0.clone(),
                },
            );
        }
        weights.insert("V".into(), tensor_doc(&p.tensors.readout));
        weights.insert(
            "c_out".into(),
            TensorDoc {
                rows: 1,
                cols: p.tensors.readout_bias.len(),
                data: p.tensors.readout_bias.0.clone(),
            },
        );
        CellParamsDoc {
            format_version: PARAMS_FORMAT_VERSION,
            kind: p.kind,
            input_dim: p.input_dim,
            hidden_dim: p.hidden_dim,
            output_dim: p.output_dim,
            gru_reset: p.gru_reset,
            weights,
        }
    }
}

impl TryFrom<CellParamsDoc> for CellParams {
    type Error = Error;

    fn try_from(mut doc: CellParamsDoc) -> Result<Self> {
        if doc.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {} (expected {PARAMS_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        // Cap sizes before allocating anything from untrusted dims.
        const MAX_DIM: usize = 4096;
        if doc.input_dim > MAX_DIM || doc.hidden_dim > MAX_DIM || doc.output_dim > MAX_DIM {
            return Err(Error::Model(format!("dimension exceeds {MAX_DIM}")));
        }
        let mut take = |name: String, rows: usize, cols: usize| -> Result<Matrix> {
            let t = doc
                .weights
                .remove(&name)
                .ok_or_else(|| Error::Model(format!("missing weight `{name}`")))?;
            if t.rows != rows || t.cols != cols {
                return Err(Error::Model(format!(
                    "weight `{name}` is {}x{}, expected {rows}x{cols}",
                    t.rows, t.cols
                )));
            }
            Matrix::from_vec(rows, cols, t.data)
                .map_err(|e| Error::Model(format!("weight `{name}`: {e}")))
        };
        let (i, h, o) = (doc.input_dim, doc.hidden_dim, doc.output_dim);
        let mut gates = Vec::new();
        for name in doc.kind.gate_names() {
            gates.push(Gate {
                input: take(format!("U_{name}"), i, h)?,
                recurrent: take(format!("W_{name}"), h, h)?,
                bias: Vector(take(format!("b_{name}"), 1, h)?.as_slice().to_vec()),
            });
        }
        let readout = take("V".into(), h, o)?;
        let readout_bias = Vector(take("c_out".into(), 1, o)?.as_slice().to_vec());
        if let Some(extra) = doc.weights.keys().next() {
            return Err(Error::Model(format!("unexpected weight `{extra}`")));
        }
        let params = CellParams {
            kind: doc.kind,
            input_dim: i,
            hidden_dim: h,
            output_dim: o,
            gru_reset: doc.gru_reset,
            tensors: ParamTensors {
                gates,
                readout,
                readout_bias,
            },
        };
        params.validate()?;
        Ok(params)
    }
}

impl CellParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CellParamsDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CellParamsDoc = serde_json::from_str(text)?;
        doc.try_into()
    }
}

impl Serialize for CellParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CellParamsDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = CellParamsDoc::deserialize(d)?;
        CellParams::try_from(doc).map_err(serde::de::Error::custom)
    }
}
