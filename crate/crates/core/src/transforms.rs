//! Softmax confidences under temperature scaling and rank-preserving
//! decalibration, plus per-exit temperature fitting.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, LogitTensor};
use crate::error::{Error, Result};

/// Blend weight of the identity term in the rank-preserving transform.
pub const RANK_EPSILON: f64 = 0.05;

/// Slack allowed when checking that a confidence lies in `[1/C, 1]`.
pub const CONF_SLACK: f64 = 1e-9;

/// Log-temperature search interval used by [`fit_temperatures`].
pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 20.0;
const GRID_POINTS: usize = 64;
const LOG_T_TOL: f64 = 1e-4;

/// Softmax of `logits / temperature`, stabilised by max-subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature.is_finite() && temperature > 0.0) || logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Argmax class (lowest index on ties) and max softmax probability of one
/// logit row at the given temperature.
///
/// The max probability is `1 / sum_k exp((z_k - z_max) / T)`, which is the
/// same quantity [`softmax`] produces for the argmax entry.
pub fn max_softmax(logits: &[f32], temperature: f64) -> (usize, f64) {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = k;
        }
    }
    let zmax = logits[best] as f64;
    let sum: f64 = logits
        .iter()
        .map(|&z| ((z as f64 - zmax) / temperature).exp())
        .sum();
    (best, 1.0 / sum)
}

/// Monotone confidence distortion `eps*c + (1-eps)*f(c)` with
/// `f(c) = 1/C + (1 - 1/C) * ((c - 1/C) / (1 - 1/C))^alpha`.
///
/// Fixes `1/C` and `1`, and is strictly increasing on `[1/C, 1]` for every
/// `alpha > 0`.
pub fn rank_preserving_transform(c: f64, alpha: f64, num_classes: usize) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) || !c.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    let floor = 1.0 / num_classes as f64;
    if c < floor - CONF_SLACK || c > 1.0 + CONF_SLACK {
        return Err(Error::Domain {
            value: c,
            lo: floor,
            hi: 1.0,
        });
    }
    Ok(rank_transform_unchecked(c, alpha, floor))
}

fn rank_transform_unchecked(c: f64, alpha: f64, floor: f64) -> f64 {
    if c <= floor {
        return floor;
    }
    if c >= 1.0 {
        return 1.0;
    }
    if alpha == 1.0 {
        return c;
    }
    let span = 1.0 - floor;
    let f = floor + span * ((c - floor) / span).powf(alpha);
    (RANK_EPSILON * c + (1.0 - RANK_EPSILON) * f).clamp(floor, 1.0)
}

/// Ordered recipe turning logits into confidences: fitted per-exit
/// temperature, then a global multiplier, then the optional rank-preserving
/// transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformChain {
    pub base_temperatures: Vec<f64>,
    pub temperature_multiplier: f64,
    pub alpha: Option<f64>,
}

impl TransformChain {
    /// Plain softmax confidences (all temperatures 1, no distortion).
    pub fn identity(num_exits: usize) -> Self {
        Self {
            base_temperatures: vec![1.0; num_exits],
            temperature_multiplier: 1.0,
            alpha: None,
        }
    }

    pub fn with_temperatures(temperatures: Vec<f64>) -> Self {
        Self {
            base_temperatures: temperatures,
            temperature_multiplier: 1.0,
            alpha: None,
        }
    }

    pub fn multiplier(mut self, m: f64) -> Self {
        self.temperature_multiplier = m;
        self
    }

    pub fn alpha(mut self, alpha: Option<f64>) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self, num_exits: usize) -> Result<()> {
        if self.base_temperatures.len() != num_exits {
            return Err(Error::InvalidChain(format!(
                "{} base temperatures supplied for {num_exits} exits",
                self.base_temperatures.len()
            )));
        }
        if let Some((j, t)) = self
            .base_temperatures
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && **t > 0.0))
        {
            return Err(Error::InvalidChain(format!(
                "temperature of exit {} must be positive, got {t}",
                j + 1
            )));
        }
        let m = self.temperature_multiplier;
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidChain(format!(
                "temperature multiplier must be positive, got {m}"
            )));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidChain(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }

    pub fn effective_temperature(&self, exit: usize) -> f64 {
        self.base_temperatures[exit] * self.temperature_multiplier
    }

    pub fn describe(&self) -> String {
        let temps: Vec<String> = self.base_temperatures.iter().map(|t| t.to_string()).collect();
        let alpha = match self.alpha {
            Some(a) => format!("alpha={a} eps={RANK_EPSILON}"),
            None => "alpha=none".to_string(),
        };
        format!(
            "temps=[{}] mult={} {alpha}",
            temps.join(","),
            self.temperature_multiplier
        )
    }
}

/// Per-sample, per-exit scalar confidences produced by a [`TransformChain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceTable {
    conf: Vec<f64>,
    predicted: Vec<u32>,
    num_samples: usize,
    num_exits: usize,
    num_classes: usize,
    chain: TransformChain,
}

impl ConfidenceTable {
    /// Wrap precomputed confidences (row-major `[N, J]`). Predicted classes
    /// are unknown and recorded as 0; the chain is the identity.
    pub fn from_rows(conf: Vec<f64>, num_exits: usize, num_classes: usize) -> Result<Self> {
        if num_exits == 0 || !conf.len().is_multiple_of(num_exits) {
            return Err(Error::LengthMismatch {
                expected: num_exits.max(1) * (conf.len() / num_exits.max(1)),
                actual: conf.len(),
            });
        }
        let floor = 1.0 / num_classes as f64;
        if let Some(&bad) = conf
            .iter()
            .find(|c| !(**c >= floor - CONF_SLACK && **c <= 1.0 + CONF_SLACK))
        {
            return Err(Error::Domain {
                value: bad,
                lo: floor,
                hi: 1.0,
            });
        }
        let num_samples = conf.len() / num_exits;
        Ok(Self {
            predicted: vec![0; conf.len()],
            conf,
            num_samples,
            num_exits,
            num_classes,
            chain: TransformChain::identity(num_exits),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_exits(&self) -> usize {
        self.num_exits
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn chain(&self) -> &TransformChain {
        &self.chain
    }

    pub fn get(&self, sample: usize, exit: usize) -> f64 {
        self.conf[sample * self.num_exits + exit]
    }

    pub fn predicted(&self, sample: usize, exit: usize) -> usize {
        self.predicted[sample * self.num_exits + exit] as usize
    }

    pub fn column(&self, exit: usize) -> Vec<f64> {
        (0..self.num_samples).map(|i| self.get(i, exit)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.conf
    }

    /// Apply a per-exit map to every entry. Used to build arbitrary
    /// monotone variants of a table in tests and experiments.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> ConfidenceTable {
        let conf = self
            .conf
            .iter()
            .enumerate()
            .map(|(k, &c)| f(k % self.num_exits, c))
            .collect();
        ConfidenceTable {
            conf,
            ..self.clone()
        }
    }
}

/// Confidences for every sample and exit under `chain`.
pub fn confidence_table(logits: &LogitTensor, chain: &TransformChain) -> Result<ConfidenceTable> {
    let (n, j, c) = (logits.num_samples(), logits.num_exits(), logits.num_classes());
    chain.validate(j)?;
    let floor = 1.0 / c as f64;
    let temps: Vec<f64> = (0..j).map(|e| chain.effective_temperature(e)).collect();

    let rows: Vec<(f64, u32)> = (0..n * j)
        .into_par_iter()
        .map(|k| {
            let (i, e) = (k / j, k % j);
            let (class, p) = max_softmax(logits.row(i, e), temps[e]);
            let mut conf = p.clamp(floor, 1.0);
            if let Some(alpha) = chain.alpha {
                conf = rank_transform_unchecked(conf, alpha, floor);
            }
            (conf, class as u32)
        })
        .collect();
    let (conf, predicted) = rows.into_iter().unzip();

    Ok(ConfidenceTable {
        conf,
        predicted,
        num_samples: n,
        num_exits: j,
        num_classes: c,
        chain: chain.clone(),
    })
}

/// Mean negative log-likelihood of the true class for one exit at a
/// temperature.
pub fn exit_nll(logits: &LogitTensor, labels: &LabelVector, exit: usize, temperature: f64) -> f64 {
    let n = logits.num_samples();
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i, exit);
        let zmax = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse: f64 = row
            .iter()
            .map(|&z| ((z as f64 - zmax) / temperature).exp())
            .sum::<f64>()
            .ln();
        let zy = (row[labels.get(i)] as f64 - zmax) / temperature;
        total += lse - zy;
    }
    total / n as f64
}

/// Temperature of one exit minimising the mean NLL.
///
/// Coarse log-spaced grid over `[MIN_TEMPERATURE, MAX_TEMPERATURE]` (with
/// `T = 1` added), then golden-section refinement inside the bracket around
/// the best grid point. The refined point only replaces the grid optimum if
/// it is strictly better, so `NLL(T) <= NLL(1)` always holds.
pub fn fit_temperature(logits: &LogitTensor, labels: &LabelVector, exit: usize) -> f64 {
    let nll = |log_t: f64| exit_nll(logits, labels, exit, log_t.exp());
    let (lo, hi) = (MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());

    let mut grid: Vec<f64> = (0..GRID_POINTS)
        .map(|k| {
            if k == GRID_POINTS - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64
            }
        })
        .collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let values: Vec<f64> = grid.iter().map(|&g| nll(g)).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let (mut best_x, best_v) = (grid[best], values[best]);

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (nll(x1), nll(x2));
    while b - a >= LOG_T_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = nll(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = nll(x2);
        }
    }
    let mid = 0.5 * (a + b);
    if nll(mid) < best_v {
        best_x = mid;
    }
    match best_x {
        x if x <= lo => MIN_TEMPERATURE,
        x if x >= hi => MAX_TEMPERATURE,
        x => x.exp(),
    }
}

/// Fit one temperature per exit on a calibration split; exits are
/// independent and fitted in parallel.
pub fn fit_temperatures(logits: &LogitTensor, labels: &LabelVector) -> Result<Vec<f64>> {
    if logits.num_samples() == 0 {
        return Err(Error::EmptySplit("calib".into()));
    }
    if logits.num_samples() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: logits.num_samples(),
            actual: labels.len(),
        });
    }
    Ok((0..logits.num_exits())
        .into_par_iter()
        .map(|e| fit_temperature(logits, labels, e))
        .collect())
}

/// Write temperatures as a JSON array (`temps.json`).
pub fn write_temperatures(path: impl AsRef<Path>, temps: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(temps).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_temperatures(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let temps: Vec<f64> = serde_json::from_slice(&raw).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(t) = temps.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::InvalidChain(format!(
            "{}: temperature {t} is not positive",
            path.display()
        )));
    }
    Ok(temps)
}
