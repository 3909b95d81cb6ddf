//! Fitting the routing policy from a held-out split.
//!
//! Three pieces are fitted: the complexity cutoff `τ_S` (a percentile of the
//! held-out scores set by the cloud budget `ρ`), one temperature per
//! prediction head, and the edge gate thresholds plus the cloud decision
//! threshold, chosen by an exhaustive grid search on held-out accuracy.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantkernel::{softmax2, Label};
use crate::scheduler::EdgeConfidence;

/// Search interval for `ln T`.
pub const LN_T_RANGE: (f64, f64) = (-2.995_732_273_553_991, 2.995_732_273_553_991);
/// Absolute tolerance of the golden-section search on `ln T`.
pub const LN_T_TOL: f64 = 1e-4;
pub const MIN_TEMPERATURE_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("score set is empty")]
    EmptySet,
    #[error("budget rho must lie in [0, 1], got {0}")]
    InvalidBudget(f64),
    #[error("held-out labels contain a single class")]
    DegenerateLabels,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("{0} logit pairs but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("policy file {path}: {reason}")]
    PolicyFile { path: String, reason: String },
}

/// Calibrated thresholds for the edge/cloud router.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingPolicy {
    pub rho: f64,
    /// Complexity cutoff; samples with `S_c ≥ τ_S` go to the cloud.
    #[serde(rename = "tau_S")]
    pub tau_s_complexity: f64,
    /// Minimum edge max-probability.
    #[serde(rename = "tau_s")]
    pub tau_conf: f64,
    /// Minimum edge top-1/top-2 margin.
    #[serde(rename = "tau_m")]
    pub tau_margin: f64,
    /// Maximum edge predictive entropy, in nats.
    #[serde(rename = "tau_h")]
    pub tau_entropy: f64,
    /// Cloud defect threshold on `p1`.
    #[serde(rename = "tau")]
    pub tau_cloud: f64,
    #[serde(rename = "T_edge")]
    pub temperature_edge: f64,
    #[serde(rename = "T_cloud")]
    pub temperature_cloud: f64,
}

impl RoutingPolicy {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(CalibrationError::InvalidPolicy(format!(
                    "{name} must lie in [0, 1], got {v}"
                )))
            }
        };
        unit("rho", self.rho)?;
        unit("tau_s", self.tau_conf)?;
        unit("tau_m", self.tau_margin)?;
        unit("tau", self.tau_cloud)?;
        if self.tau_s_complexity.is_nan() {
            return Err(CalibrationError::InvalidPolicy("tau_S is NaN".into()));
        }
        if self.tau_entropy.is_nan() || self.tau_entropy < 0.0 {
            return Err(CalibrationError::InvalidPolicy(format!(
                "tau_h must be nonnegative, got {}",
                self.tau_entropy
            )));
        }
        for (name, t) in [
            ("T_edge", self.temperature_edge),
            ("T_cloud", self.temperature_cloud),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CalibrationError::InvalidPolicy(format!(
                    "{name} must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("policy serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let policy: Self = serde_json::from_str(text)
            .map_err(|e| CalibrationError::InvalidPolicy(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = fs::read_to_string(path).map_err(|e| CalibrationError::PolicyFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| CalibrationError::PolicyFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        fs::write(path, self.to_json()).map_err(|e| CalibrationError::PolicyFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Nearest-rank percentile at level `1 − ρ`.
///
/// Sorted ascending, the result is the element at 1-indexed rank
/// `⌈(1 − ρ)·N⌉`, clamped to `[1, N]`.
pub fn percentile_threshold(scores: &[f64], rho: f64) -> Result<f64, CalibrationError> {
    if scores.is_empty() {
        return Err(CalibrationError::EmptySet);
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(CalibrationError::InvalidBudget(rho));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFinite("scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // 1e-9 absorbs representation error such as (1 - 0.3) * 10 = 7.000000000000001
    let rank = (((1.0 - rho) * n as f64) - 1e-9)
        .ceil()
        .clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

/// Mean negative log-likelihood of `softmax((ℓ0, ℓ1) / T)`.
pub fn mean_nll(logit_pairs: &[(f64, f64)], labels: &[Label], temperature: f64) -> f64 {
    let total: f64 = logit_pairs
        .iter()
        .zip(labels)
        .map(|(&(l0, l1), &y)| {
            let (a, b) = (l0 / temperature, l1 / temperature);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            let ly = if y == Label::Defect { b } else { a };
            lse - ly
        })
        .sum();
    total / logit_pairs.len() as f64
}

/// Temperature minimizing held-out NLL, found by golden-section search over
/// `ln T ∈ [ln 0.05, ln 20]`. Never returns a temperature that does worse
/// than `T = 1` on the fitting set.
pub fn fit_temperature(
    logit_pairs: &[(f64, f64)],
    labels: &[Label],
) -> Result<f64, CalibrationError> {
    if logit_pairs.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch(
            logit_pairs.len(),
            labels.len(),
        ));
    }
    if logit_pairs.len() < MIN_TEMPERATURE_SAMPLES {
        return Err(CalibrationError::InsufficientSamples {
            needed: MIN_TEMPERATURE_SAMPLES,
            got: logit_pairs.len(),
        });
    }
    if logit_pairs
        .iter()
        .any(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(CalibrationError::NonFinite("logits"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(CalibrationError::DegenerateLabels);
    }

    // Canonical order makes the floating-point sums, and hence the search
    // path, independent of how the caller ordered the samples.
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (logit_pairs[i], logit_pairs[j]);
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(labels[i].index().cmp(&labels[j].index()))
    });
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&i| logit_pairs[i]).collect();
    let ys: Vec<Label> = idx.iter().map(|&i| labels[i]).collect();
    let nll = |ln_t: f64| mean_nll(&pairs, &ys, ln_t.exp());

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LN_T_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (nll(c), nll(d));
    while b - a > LN_T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll(d);
        }
    }
    let t = ((a + b) / 2.0).exp();
    if nll(t.ln()) <= nll(0.0) {
        Ok(t)
    } else {
        Ok(1.0)
    }
}

/// One held-out sample: its complexity, both heads' logits and the truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub s_c: f64,
    pub edge_logits: (f64, f64),
    pub cloud_logits: (f64, f64),
    pub label: Label,
}

/// Constraints on the operating point chosen by [`calibrate_policy`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingTargets {
    /// Extra cloud fraction, beyond `ρ`, that edge rejections may add.
    pub max_overflow: f64,
}

impl Default for OperatingTargets {
    fn default() -> Self {
        Self { max_overflow: 0.2 }
    }
}

/// `{0.50, 0.55, …, 1.00}`: a two-class max-probability is never below 0.5.
pub fn conf_grid() -> Vec<f64> {
    (10..=20).map(|i| i as f64 / 20.0).collect()
}

/// `{0.00, 0.05, …, 1.00}`.
pub fn unit_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// `{0.1, 0.2, …, 0.7}` nats.
pub fn entropy_grid() -> Vec<f64> {
    (1..=7).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    tau_s: f64,
    tau_m: f64,
    tau_h: f64,
    tau: f64,
    correct: usize,
    cloud: usize,
}

impl Cell {
    /// Total order: more correct, then fewer cloud calls, then the larger
    /// `τ_s`, larger `τ_m`, smaller `τ_h`, and `τ` closest to 0.5.
    fn better_than(&self, other: &Cell) -> bool {
        let ord = self
            .correct
            .cmp(&other.correct)
            .then(other.cloud.cmp(&self.cloud))
            .then(self.tau_s.total_cmp(&other.tau_s))
            .then(self.tau_m.total_cmp(&other.tau_m))
            .then(other.tau_h.total_cmp(&self.tau_h))
            .then((other.tau - 0.5).abs().total_cmp(&(self.tau - 0.5).abs()))
            .then(other.tau.total_cmp(&self.tau));
        ord == Ordering::Greater
    }
}

/// Fits the full [`RoutingPolicy`] on a held-out split.
pub fn calibrate_policy(
    heldout: &[CalibrationRecord],
    rho: f64,
    targets: &OperatingTargets,
) -> Result<RoutingPolicy, CalibrationError> {
    if heldout.is_empty() {
        return Err(CalibrationError::EmptySet);
    }
    let scores: Vec<f64> = heldout.iter().map(|r| r.s_c).collect();
    let tau_s_complexity = percentile_threshold(&scores, rho)?;
    let labels: Vec<Label> = heldout.iter().map(|r| r.label).collect();
    let edge: Vec<(f64, f64)> = heldout.iter().map(|r| r.edge_logits).collect();
    let cloud: Vec<(f64, f64)> = heldout.iter().map(|r| r.cloud_logits).collect();
    let temperature_edge = fit_temperature(&edge, &labels)?;
    let temperature_cloud = fit_temperature(&cloud, &labels)?;

    let taus = unit_grid();
    // Bit j set when the cloud head is right at threshold taus[j].
    let cloud_hits: Vec<u32> = heldout
        .iter()
        .map(|r| {
            let (_, p1) = softmax2(r.cloud_logits.0, r.cloud_logits.1, temperature_cloud);
            taus.iter().enumerate().fold(0u32, |bits, (j, &t)| {
                let pred = if p1 >= t { Label::Defect } else { Label::Good };
                if pred == r.label {
                    bits | (1 << j)
                } else {
                    bits
                }
            })
        })
        .collect();

    let mut routed_hits = vec![0usize; taus.len()];
    let mut routed = 0usize;
    // (confidence, edge correct, cloud hit mask) for the edge-eligible samples
    let mut eligible = Vec::new();
    for (r, &hits) in heldout.iter().zip(&cloud_hits) {
        if r.s_c >= tau_s_complexity {
            routed += 1;
            for (j, h) in routed_hits.iter_mut().enumerate() {
                *h += ((hits >> j) & 1) as usize;
            }
        } else {
            let conf = EdgeConfidence::from_logits(r.edge_logits, temperature_edge);
            let (_, p1) = softmax2(r.edge_logits.0, r.edge_logits.1, temperature_edge);
            let pred = if p1 >= 0.5 {
                Label::Defect
            } else {
                Label::Good
            };
            eligible.push((conf, pred == r.label, hits));
        }
    }

    let n = heldout.len();
    let cap = (rho + targets.max_overflow) * n as f64 + 1e-9;
    let gates: Vec<(f64, f64, f64)> = conf_grid()
        .into_iter()
        .flat_map(|s| {
            unit_grid()
                .into_iter()
                .flat_map(move |m| entropy_grid().into_iter().map(move |h| (s, m, h)))
        })
        .collect();

    let cells: Vec<Vec<Cell>> = gates
        .par_iter()
        .map(|&(tau_s, tau_m, tau_h)| {
            let mut edge_correct = 0usize;
            let mut rejected = 0usize;
            let mut rejected_hits = vec![0usize; taus.len()];
            for (conf, ok, hits) in &eligible {
                if conf.s_max >= tau_s && conf.margin >= tau_m && conf.h_p <= tau_h {
                    edge_correct += *ok as usize;
                } else {
                    rejected += 1;
                    for (j, h) in rejected_hits.iter_mut().enumerate() {
                        *h += ((hits >> j) & 1) as usize;
                    }
                }
            }
            taus.iter()
                .enumerate()
                .map(|(j, &tau)| Cell {
                    tau_s,
                    tau_m,
                    tau_h,
                    tau,
                    correct: edge_correct + routed_hits[j] + rejected_hits[j],
                    cloud: routed + rejected,
                })
                .collect()
        })
        .collect();

    let mut best: Option<Cell> = None;
    for cell in cells.iter().flatten() {
        if cell.cloud as f64 > cap {
            continue;
        }
        if best.is_none_or(|b| cell.better_than(&b)) {
            best = Some(*cell);
        }
    }
    // When nothing meets the cap, fall back to the fewest cloud calls.
    let best = best.unwrap_or_else(|| {
        *cells
            .iter()
            .flatten()
            .min_by(|a, b| a.cloud.cmp(&b.cloud).then(b.correct.cmp(&a.correct)))
            .expect("grid is nonempty")
    });

    let policy = RoutingPolicy {
        rho,
        tau_s_complexity,
        tau_conf: best.tau_s,
        tau_margin: best.tau_m,
        tau_entropy: best.tau_h,
        tau_cloud: best.tau,
        temperature_edge,
        temperature_cloud,
    };
    policy.validate()?;
    Ok(policy)
}
