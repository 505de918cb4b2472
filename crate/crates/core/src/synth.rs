//! Seeded synthetic multi-exit logit datasets.
//!
//! The generator is fully determined by [`SynthConfig`] and a SplitMix64
//! stream, so any implementation following the recipe below reproduces the
//! same bytes.
//!
//! # Random stream
//!
//! SplitMix64 with `state += 0x9E3779B97F4A7C15`, output mix
//! `z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) * 0x94D049BB133111EB;
//! z ^ z>>31`, seeded with `state = seed`.
//!
//! * uniform: `(next >> 11) * 2^-53`, in `[0, 1)`
//! * index below `n`: `min(floor(uniform * n), n - 1)`
//! * standard normal: Box-Muller cosine branch,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` with two fresh uniforms
//!
//! # Recipe
//!
//! Splits are generated in the order calib, val, test. For every sample:
//!
//! 1. difficulty `d ~ U(0,1)`, label `y = index(C)`;
//! 2. for every head `j`: if `j > 0`, draw `flip_u` then `redraw_u`; then draw
//!    `wrong_u` and `C` normals (always, so the stream layout is fixed);
//! 3. the head is correct iff `d < cut[j]`, where `cut[0] = skill[0]` and
//!    `cut[j] = max(cut[j-1], (skill[j] - 0.05) / 0.9)` so that marginals hit
//!    the target skills despite flips; deeper heads flip correctness when
//!    `flip_u < 0.05` and then use a replacement difficulty drawn from the
//!    side of the cut consistent with the new outcome (`redraw_u * cut` or
//!    `cut + redraw_u * (1 - cut)`);
//! 4. the predicted class is `y` when correct, otherwise
//!    `(y + 1 + index_{C-1}(wrong_u)) mod C`; logits are the `C` normals
//!    with `s * (1 - d_j)` added to the predicted class; if another class
//!    then holds the largest value, the two values are swapped so the
//!    predicted class is the argmax;
//! 5. after all splits are drawn, each head's logits are divided by the
//!    temperature that minimises NLL on the pooled draw (so the emitted
//!    heads are calibrated), then multiplied by the distortion temperature
//!    `T_true`. Refitting a temperature on the output therefore recovers
//!    roughly `T_true`.
//!
//! Costs are `exit_costs[j] = j + 1`.

use std::collections::BTreeMap;

use crate::data::{LabelVector, LogitTensor, MultiExitDataset, Split, SplitData};
use crate::error::{Error, Result};
use crate::transforms::fit_temperatures;

const FLIP_PROBABILITY: f64 = 0.05;

/// SplitMix64 pseudo-random stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn index(&mut self, n: usize) -> usize {
        index_from(self.uniform(), n)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

fn index_from(u: f64, n: usize) -> usize {
    ((u * n as f64).floor() as usize).min(n - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Sample counts for calib, val and test.
    pub samples: [usize; 3],
    pub num_exits: usize,
    pub num_classes: usize,
    /// Target standalone accuracy per head, strictly increasing.
    pub head_skill: Vec<f64>,
    /// Logit boost of the predicted class for an easy sample.
    pub signal_sharpness: f64,
    /// Temperature a calibrator should recover from the emitted logits.
    pub distortion_temperature: f64,
}

pub const DEFAULT_SAMPLES: [usize; 3] = [2000, 5000, 10000];
pub const DEFAULT_EXITS: usize = 5;
pub const DEFAULT_CLASSES: usize = 10;
pub const DEFAULT_SHARPNESS: f64 = 6.0;

/// Evenly spaced skills from `max(0.5, 1/C + 0.05)` to `0.9`.
pub fn default_skill(num_exits: usize, num_classes: usize) -> Vec<f64> {
    let lo = (1.0 / num_classes as f64 + 0.05).max(0.5);
    let hi = 0.9;
    if num_exits < 2 {
        return vec![hi; num_exits];
    }
    (0..num_exits)
        .map(|j| lo + (hi - lo) * j as f64 / (num_exits - 1) as f64)
        .collect()
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            samples: DEFAULT_SAMPLES,
            num_exits: DEFAULT_EXITS,
            num_classes: DEFAULT_CLASSES,
            head_skill: default_skill(DEFAULT_EXITS, DEFAULT_CLASSES),
            signal_sharpness: DEFAULT_SHARPNESS,
            distortion_temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_exits < 2 {
            return bad(format!("need at least 2 exits (J >= 2), got {}", self.num_exits));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes (C >= 2), got {}", self.num_classes));
        }
        if let Some((k, _)) = self.samples.iter().enumerate().find(|(_, &n)| n == 0) {
            return bad(format!("split {} needs at least one sample", Split::ALL[k]));
        }
        if self.head_skill.len() != self.num_exits {
            return bad(format!(
                "{} skills given for {} exits",
                self.head_skill.len(),
                self.num_exits
            ));
        }
        if self.head_skill.windows(2).any(|w| w[1] <= w[0]) {
            return bad("skills must increase strictly from head to head".into());
        }
        let floor = 1.0 / self.num_classes as f64;
        for (j, &h) in self.head_skill.iter().enumerate() {
            if !(h > floor && h < 1.0) {
                return bad(format!("skill of head {} must lie in (1/C, 1), got {h}", j + 1));
            }
            // Flip noise bounds what deeper heads can reach.
            if j > 0 && !(FLIP_PROBABILITY..=1.0 - FLIP_PROBABILITY).contains(&h) {
                return bad(format!(
                    "skill of head {} must lie in [0.05, 0.95] because deeper heads flip with probability 0.05, got {h}",
                    j + 1
                ));
            }
        }
        if !(self.signal_sharpness.is_finite() && self.signal_sharpness > 0.0) {
            return bad(format!("signal sharpness must be positive, got {}", self.signal_sharpness));
        }
        let t = self.distortion_temperature;
        if !(t.is_finite() && t > 0.0) {
            return bad(format!("distortion temperature must be positive, got {t}"));
        }
        Ok(())
    }

    fn cuts(&self) -> Vec<f64> {
        let mut cuts = Vec::with_capacity(self.num_exits);
        for (j, &h) in self.head_skill.iter().enumerate() {
            let raw = if j == 0 {
                h
            } else {
                (h - FLIP_PROBABILITY) / (1.0 - 2.0 * FLIP_PROBABILITY)
            };
            let prev = cuts.last().copied().unwrap_or(0.0);
            cuts.push(raw.clamp(0.0, 1.0).max(prev));
        }
        cuts
    }
}

pub fn generate(config: &SynthConfig) -> Result<MultiExitDataset> {
    config.validate()?;
    let (j, c) = (config.num_exits, config.num_classes);
    let cuts = config.cuts();
    let s = config.signal_sharpness;
    let mut rng = SplitMix64::new(config.seed);

    let total: usize = config.samples.iter().sum();
    let mut raw = Vec::with_capacity(total * j * c);
    let mut labels = Vec::with_capacity(total);
    for _ in 0..total {
        let d = rng.uniform();
        let y = rng.index(c);
        labels.push(y as u32);
        for (head, &cut) in cuts.iter().enumerate() {
            let (flip_u, redraw_u) = if head > 0 {
                (rng.uniform(), rng.uniform())
            } else {
                (1.0, 0.0)
            };
            let wrong_u = rng.uniform();
            let start = raw.len();
            raw.extend((0..c).map(|_| rng.normal()));

            let mut correct = d < cut;
            let mut difficulty = d;
            if flip_u < FLIP_PROBABILITY {
                correct = !correct;
                difficulty = if correct {
                    redraw_u * cut
                } else {
                    cut + redraw_u * (1.0 - cut)
                };
            }
            let predicted = if correct {
                y
            } else {
                (y + 1 + index_from(wrong_u, c - 1)) % c
            };
            let head_logits = &mut raw[start..start + c];
            head_logits[predicted] += s * (1.0 - difficulty);
            let top = (0..c)
                .reduce(|a, b| if head_logits[b] > head_logits[a] { b } else { a })
                .unwrap_or(predicted);
            head_logits.swap(predicted, top);
        }
    }

    // Calibrate each head on the pooled draw, then apply the distortion.
    let pooled = LogitTensor::new(raw.iter().map(|&v| v as f32).collect(), total, j, c)?;
    let pooled_labels = LabelVector::new(labels.clone(), c)?;
    let base = fit_temperatures(&pooled, &pooled_labels)?;
    let scale: Vec<f64> = base
        .iter()
        .map(|t| config.distortion_temperature / t)
        .collect();
    let values: Vec<f32> = raw
        .iter()
        .enumerate()
        .map(|(k, &v)| (v * scale[(k / c) % j]) as f32)
        .collect();

    let mut splits = BTreeMap::new();
    let mut offset = 0;
    for (split, &n) in Split::ALL.iter().zip(&config.samples) {
        let range = offset * j * c..(offset + n) * j * c;
        let logits = LogitTensor::new(values[range].to_vec(), n, j, c)?;
        let split_labels = LabelVector::new(labels[offset..offset + n].to_vec(), c)?;
        splits.insert(*split, SplitData::new(logits, split_labels)?);
        offset += n;
    }
    let costs = (1..=j).map(|k| k as f64).collect();
    MultiExitDataset::new(c, costs, splits)
}
