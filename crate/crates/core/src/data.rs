//! Paired vibration/wear sequences: synthetic generation, CSV I/O,
//! input normalization and train/validation/test splitting.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

/// One tool-life run: per-cut vibration RMS and flank wear in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSequence {
    pub id: String,
    pub x: Vec<f64>,
    /// `None` for inference-only data.
    pub y: Option<Vec<f64>>,
}

impl PairedSequence {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn labels(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::MissingLabels(self.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PairedSequence>,
    pub val: Vec<PairedSequence>,
    pub test: Vec<PairedSequence>,
}

/// Seeded shuffle, then the first `n_train` go to training, the next
/// `n_val` to validation and the rest to test.
pub fn split(
    seqs: &[PairedSequence],
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if n_train + n_val + n_test != seqs.len() {
        return Err(Error::Config(format!(
            "split sizes {n_train}+{n_val}+{n_test} do not add up to {} sequences",
            seqs.len()
        )));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| seqs[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

// ---------------------------------------------------------------------------
// Normalization

/// z-score statistics for one channel. Vibration is always normalized; wear
/// only when target normalization is switched on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mean: f64,
    pub scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::IDENTITY
    }
}

impl Normalizer {
    pub const IDENTITY: Normalizer = Normalizer {
        mean: 0.0,
        scale: 1.0,
    };

    /// Fits on the training sequences' vibration values only.
    pub fn fit(train: &[PairedSequence]) -> Result<Self> {
        let values: Vec<f64> = train.iter().flat_map(|s| s.x.iter().copied()).collect();
        Self::from_values(&values, "vibration")
    }

    /// Fits on the training sequences' wear labels.
    pub fn fit_targets(train: &[PairedSequence]) -> Result<Self> {
        let mut values = Vec::new();
        for s in train {
            values.extend_from_slice(s.labels()?);
        }
        Self::from_values(&values, "wear")
    }

    fn from_values(values: &[f64], channel: &str) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("normalizer training data"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 0.0 && sd.is_finite() {
            sd
        } else {
            log::warn!("{channel} channel has zero variance; using unit scale");
            1.0
        };
        Ok(Normalizer { mean, scale })
    }

    pub fn is_identity(&self) -> bool {
        *self == Normalizer::IDENTITY
    }

    /// `(v − mean) / scale`; exact pass-through for the identity.
    pub fn apply(&self, v: f64) -> f64 {
        if self.is_identity() {
            return v;
        }
        (v - self.mean) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.is_identity() {
            return v;
        }
        v * self.scale + self.mean
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Model(format!(
                "invalid normalizer (mean {}, scale {})",
                self.mean, self.scale
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Three-phase flank-wear curve plus a vibration channel that follows wear
/// loosely. Wear amounts are in mm, phases on a normalized life axis
/// `u = t / length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub length: usize,
    /// Wear accumulated by the end of break-in (mm).
    pub break_in_wear: f64,
    /// Break-in time constant as a fraction of life.
    pub break_in_rate: f64,
    /// Wear gained linearly over the whole life (mm).
    pub steady_wear: f64,
    /// Onset of accelerated wear as a fraction of life.
    pub accel_onset: f64,
    pub accel_exponent: f64,
    /// Wear gained in the accelerated phase (mm).
    pub accel_wear: f64,
    /// Relative per-sequence spread of the three wear amounts.
    pub variability: f64,
    /// Measurement noise on wear (mm), applied through a running maximum.
    pub wear_noise: f64,
    pub jump_probability: f64,
    pub jump_mm: f64,
    pub vibration_base: f64,
    /// Vibration increase per mm of wear.
    pub vibration_gain: f64,
    /// Wear-independent vibration drift over the whole life.
    pub vibration_trend: f64,
    pub vibration_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sequences: 15,
            length: 20,
            break_in_wear: 0.07,
            break_in_rate: 0.08,
            steady_wear: 0.15,
            accel_onset: 0.7,
            accel_exponent: 2.0,
            accel_wear: 0.1,
            variability: 0.12,
            wear_noise: 0.004,
            jump_probability: 0.3,
            jump_mm: 0.025,
            vibration_base: 1.0,
            vibration_gain: 4.0,
            vibration_trend: 0.1,
            vibration_noise: 0.08,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_sequences == 0 {
            return err("n_sequences must be >= 1".into());
        }
        if self.length < 5 {
            return err(format!("length must be >= 5, got {}", self.length));
        }
        let nonneg = [
            ("break_in_wear", self.break_in_wear),
            ("steady_wear", self.steady_wear),
            ("accel_wear", self.accel_wear),
            ("accel_exponent", self.accel_exponent),
            ("variability", self.variability),
            ("wear_noise", self.wear_noise),
            ("jump_mm", self.jump_mm),
            ("vibration_gain", self.vibration_gain),
            ("vibration_noise", self.vibration_noise),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.break_in_rate > 0.0 && self.break_in_rate.is_finite()) {
            return err("break_in_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.accel_onset) {
            return err("accel_onset must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.jump_probability) {
            return err("jump_probability must lie in [0, 1]".into());
        }
        if self.variability >= 1.0 {
            return err("variability must be < 1".into());
        }
        if !self.vibration_base.is_finite() || !self.vibration_trend.is_finite() {
            return err("vibration_base and vibration_trend must be finite".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SynthConfig = crate::error::parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("sd validated non-negative and finite")
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<PairedSequence>> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let wear_noise = normal(cfg.wear_noise);
    let vib_noise = normal(cfg.vibration_noise);
    let width = cfg.n_sequences.to_string().len().max(2);
    let l = cfg.length;

    let mut out = Vec::with_capacity(cfg.n_sequences);
    for n in 0..cfg.n_sequences {
        let mut jitter = || 1.0 + cfg.variability * rng.gen_range(-1.0..=1.0);
        let break_in = cfg.break_in_wear * jitter();
        let steady = cfg.steady_wear * jitter();
        let accel = cfg.accel_wear * jitter();
        let jump_at =
            (rng.gen::<f64>() < cfg.jump_probability).then(|| rng.gen_range(l / 3..l - 1));

        let mut y = Vec::with_capacity(l);
        let mut x = Vec::with_capacity(l);
        let mut prev = 0.0f64;
        for t in 0..l {
            let u = (t + 1) as f64 / l as f64;
            let late =
                ((u - cfg.accel_onset).max(0.0) / (1.0 - cfg.accel_onset)).powf(cfg.accel_exponent);
            let mut base =
                break_in * (1.0 - (-u / cfg.break_in_rate).exp()) + steady * u + accel * late;
            if jump_at.is_some_and(|j| t >= j) {
                base += cfg.jump_mm;
            }
            let wear = (base + wear_noise.sample(&mut rng)).max(prev).max(0.0);
            prev = wear;
            y.push(wear);
            x.push(
                cfg.vibration_base
                    + cfg.vibration_gain * wear
                    + cfg.vibration_trend * u
                    + vib_noise.sample(&mut rng),
            );
        }
        if !(x.iter().all(|v| v.is_finite()) && y.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("generator parameters overflow f64".into()));
        }
        out.push(PairedSequence {
            id: format!("tool-{:0width$}", n + 1),
            x,
            y: Some(y),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV

pub const CSV_COLUMNS: [&str; 4] = ["sequence_id", "step", "vibration_rms", "wear_mm"];

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{column}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(
            line,
            format!("{column}: `{field}` is not finite"),
        ));
    }
    Ok(v)
}

struct Row {
    line: u64,
    step: i64,
    x: f64,
    y: Option<f64>,
}

/// Parses the dataset CSV. Rows may appear in any order; sequences are
/// returned sorted by id, steps ascending.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<PairedSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, format!("unreadable header: {e}")))?
        .clone();
    let mut col = [0usize; 4];
    for (slot, name) in col.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))?;
    }
    if let Some(extra) = headers.iter().find(|h| !CSV_COLUMNS.contains(h)) {
        return Err(parse_err(1, format!("unknown column `{extra}`")));
    }

    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(col[i]).unwrap_or("");
        let id = field(0);
        if id.is_empty() {
            return Err(parse_err(line, "sequence_id is empty"));
        }
        let step: i64 = field(1)
            .parse()
            .map_err(|_| parse_err(line, format!("step: `{}` is not an integer", field(1))))?;
        let x = parse_f64(field(2), "vibration_rms", line)?;
        let y = match field(3) {
            "" => None,
            s => {
                let v = parse_f64(s, "wear_mm", line)?;
                if v < 0.0 {
                    return Err(parse_err(line, format!("wear_mm: negative wear {v}")));
                }
                Some(v)
            }
        };
        groups
            .entry(id.to_string())
            .or_default()
            .push(Row { line, step, x, y });
    }
    if groups.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }

    groups
        .into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|r| r.step);
            for pair in rows.windows(2) {
                if pair[1].step != pair[0].step + 1 {
                    let bad = if pair[1].step == pair[0].step {
                        format!("duplicate step {} in sequence `{id}`", pair[1].step)
                    } else {
                        format!(
                            "non-contiguous steps in sequence `{id}`: {} follows {}",
                            pair[1].step, pair[0].step
                        )
                    };
                    return Err(parse_err(pair[1].line.max(pair[0].line), bad));
                }
            }
            if rows.len() < 2 {
                return Err(parse_err(
                    rows[0].line,
                    format!("sequence `{id}` has fewer than 2 steps"),
                ));
            }
            let labelled = rows.iter().filter(|r| r.y.is_some()).count();
            if labelled != 0 && labelled != rows.len() {
                let line = rows.iter().find(|r| r.y.is_none()).map_or(0, |r| r.line);
                return Err(parse_err(
                    line,
                    format!("sequence `{id}` mixes labelled and unlabelled rows"),
                ));
            }
            let x = rows.iter().map(|r| r.x).collect();
            let y = (labelled != 0).then(|| rows.iter().map(|r| r.y.unwrap_or(0.0)).collect());
            Ok(PairedSequence { id, x, y })
        })
        .collect()
}

pub fn parse_csv(text: &str) -> Result<Vec<PairedSequence>> {
    read_csv(text.as_bytes())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<PairedSequence>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Writes steps numbered from 1. `f64` values use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<W: Write>(seqs: &[PairedSequence], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for s in seqs {
        for (t, x) in s.x.iter().enumerate() {
            let wear =
                s.y.as_ref()
                    .and_then(|y| y.get(t))
                    .map_or(String::new(), |v| v.to_string());
            w.write_record([s.id.as_str(), &(t + 1).to_string(), &x.to_string(), &wear])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_csv(seqs: &[PairedSequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(seqs, std::io::BufWriter::new(file))
}

pub fn to_csv_string(seqs: &[PairedSequence]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(seqs, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
}
