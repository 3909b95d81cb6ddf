//! Per-sample edge/cloud routing and the latency/energy model.
//!
//! A sample whose complexity reaches `τ_S` goes straight to the cloud.
//! Anything simpler runs on the edge first and stays there only when the
//! edge head clears all three confidence gates; otherwise it escalates.
//!
//! Run latency overlaps the two tiers: `T_total = T_cpx + max(T_edge, T_cloud)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::RoutingPolicy;
use crate::quantkernel::{softmax2, Label};

/// Joules in one milliwatt-hour.
pub const JOULES_PER_MWH: f64 = 3.6;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("edge confidence required for a sample below the complexity cutoff")]
    MissingConfidence,
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("no correct decisions; energy per correct decision is undefined")]
    NoCorrectDecisions,
    #[error("negative energy {0}")]
    NegativeEnergy(f64),
    #[error("invalid bounding box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("invalid cost model: {0}")]
    InvalidCost(String),
}

/// Edge-head confidence summary after temperature scaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeConfidence {
    /// Largest class probability.
    pub s_max: f64,
    /// Top-1 minus top-2 probability.
    pub margin: f64,
    /// Predictive entropy in nats.
    pub h_p: f64,
}

impl EdgeConfidence {
    pub fn from_probs(p0: f64, p1: f64) -> Self {
        let s_max = p0.max(p1);
        let ent = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
        Self {
            s_max,
            margin: (p0 - p1).abs(),
            h_p: ent(p0) + ent(p1),
        }
    }

    pub fn from_logits(logits: (f64, f64), temperature: f64) -> Self {
        let (p0, p1) = softmax2(logits.0, logits.1, temperature);
        Self::from_probs(p0, p1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Edge,
    Cloud,
}

impl Site {
    pub fn as_str(self) -> &'static str {
        match self {
            Site::Edge => "edge",
            Site::Cloud => "cloud",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    ComplexityRoute,
    EdgeAccept,
    EdgeReject,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::ComplexityRoute => "complexity_route",
            Reason::EdgeAccept => "edge_accept",
            Reason::EdgeReject => "edge_reject",
        }
    }

    pub fn site(self) -> Site {
        match self {
            Reason::EdgeAccept => Site::Edge,
            Reason::ComplexityRoute | Reason::EdgeReject => Site::Cloud,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub site: Site,
    pub reason: Reason,
    pub label: Label,
    pub p_defect: f64,
}

/// Structured output for a defect decision: normalized `(x, y, w, h)` boxes
/// and an opaque one-sentence description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub bboxes: Vec<[f64; 4]>,
    pub desc: String,
}

impl DefectReport {
    pub fn new(bboxes: Vec<[f64; 4]>, desc: impl Into<String>) -> Result<Self, ScheduleError> {
        let report = Self {
            bboxes,
            desc: desc.into(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        for b in &self.bboxes {
            let [x, y, w, h] = *b;
            let in_unit = b.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_unit || x + w > 1.0 || y + h > 1.0 {
                return Err(ScheduleError::InvalidBox(*b));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Constant per-image latencies and per-tier average power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub t_cpx_per_image: f64,
    pub t_edge_per_image: f64,
    pub t_cloud_per_image: f64,
    /// Watts.
    pub p_edge: f64,
    /// Watts.
    pub p_cloud: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let fields = [
            ("t_cpx_per_image", self.t_cpx_per_image),
            ("t_edge_per_image", self.t_edge_per_image),
            ("t_cloud_per_image", self.t_cloud_per_image),
            ("p_edge", self.p_edge),
            ("p_cloud", self.p_cloud),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ScheduleError::InvalidCost(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Energy in mWh for the given busy seconds on each tier.
    pub fn energy_mwh(&self, edge_busy_s: f64, cloud_busy_s: f64) -> f64 {
        (self.p_edge * edge_busy_s + self.p_cloud * cloud_busy_s) / JOULES_PER_MWH
    }
}

/// `(s_max ≥ τ_s) ∧ (m ≥ τ_m) ∧ (H_p ≤ τ_h)`.
pub fn edge_accept(conf: &EdgeConfidence, policy: &RoutingPolicy) -> bool {
    conf.s_max >= policy.tau_conf
        && conf.margin >= policy.tau_margin
        && conf.h_p <= policy.tau_entropy
}

/// Chooses the execution site for one sample.
///
/// The edge confidence is only consulted when `s_c < τ_S`.
pub fn route(
    s_c: f64,
    conf: Option<&EdgeConfidence>,
    policy: &RoutingPolicy,
) -> Result<(Site, Reason), ScheduleError> {
    if s_c >= policy.tau_s_complexity {
        return Ok((Site::Cloud, Reason::ComplexityRoute));
    }
    let conf = conf.ok_or(ScheduleError::MissingConfidence)?;
    let reason = if edge_accept(conf, policy) {
        Reason::EdgeAccept
    } else {
        Reason::EdgeReject
    };
    Ok((reason.site(), reason))
}

pub fn latency_total(t_cpx: f64, t_edge: f64, t_cloud: f64) -> Result<f64, ScheduleError> {
    for t in [t_cpx, t_edge, t_cloud] {
        if t < 0.0 || t.is_nan() {
            return Err(ScheduleError::NegativeTime(t));
        }
    }
    Ok(t_cpx + t_edge.max(t_cloud))
}

pub fn energy_per_correct(total_energy_mwh: f64, correct: usize) -> Result<f64, ScheduleError> {
    if total_energy_mwh < 0.0 || total_energy_mwh.is_nan() {
        return Err(ScheduleError::NegativeEnergy(total_energy_mwh));
    }
    if correct == 0 {
        return Err(ScheduleError::NoCorrectDecisions);
    }
    Ok(total_energy_mwh / correct as f64)
}
