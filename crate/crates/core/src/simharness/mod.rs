//! Dataset ingestion, seeded classifier stubs and end-to-end experiments.
//!
//! An experiment scores every image, routes it, consults the stub for the
//! chosen tier, applies that tier's decision head and records a trace row.
//! Modeled time is aggregated at run scope: complexity scoring is charged
//! per image, and the edge and cloud branches overlap, so
//! `T_total = N·t_cpx + max(Σ edge busy, Σ cloud busy)`.

mod dataset;
mod report;
mod stub;
pub mod synth;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{is_image_file, list_images, load_dataset, Dataset, Sample};
pub use report::{
    emit_defects, emit_report, emit_trace, ReportFormat, RunReport, SiteCounts, REPORT_CSV_HEADER,
    TRACE_CSV_HEADER,
};
pub use stub::{stub_predict, Role, StubModelSpec, StubOutput, MAX_BOX_SIDE};

use crate::calibration::{CalibrationError, CalibrationRecord, RoutingPolicy};
use crate::codec::QualityFactor;
use crate::complexity::{self, ComplexityError, ComplexityWeights};
use crate::quantkernel::{DecisionHead, Label};
use crate::scheduler::{self, CostModel, DefectReport, EdgeConfidence, Reason, Site};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("missing class directory {0}")]
    MissingClassDir(PathBuf),
    #[error("no images found under {0}")]
    EmptyDataset(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error("scoring {path}: {source}")]
    Scoring {
        path: PathBuf,
        #[source]
        source: ComplexityError,
    },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Schedule(#[from] scheduler::ScheduleError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Complexity routing plus edge confidence gates.
    Hybrid,
    /// Every sample is finalized on the edge.
    EdgeOnly,
    /// Every sample goes to the cloud.
    CloudOnly,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(Mode::Hybrid),
            "edge_only" => Ok(Mode::EdgeOnly),
            "cloud_only" => Ok(Mode::CloudOnly),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Everything besides the dataset that determines a run. Echoed verbatim
/// into `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub mode: Mode,
    pub seed: u64,
    pub weights: ComplexityWeights,
    pub quality: QualityFactor,
    pub policy: RoutingPolicy,
    pub edge: StubModelSpec,
    pub cloud: StubModelSpec,
    pub cost: CostModel,
}

impl Experiment {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.policy.validate()?;
        self.cost.validate()?;
        self.edge.validate("edge")?;
        self.cloud.validate("cloud")?;
        if self.edge.role != Role::Edge || self.cloud.role != Role::Cloud {
            return Err(HarnessError::Config("stub roles are swapped".into()));
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// Stub parameters as written in a config file; the role comes from the
/// key and the seed from the top-level `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubConfig {
    pub acc_low_complexity: f64,
    pub acc_high_complexity: f64,
    pub complexity_knee: f64,
    pub confidence_sharpness: f64,
}

impl StubConfig {
    pub fn into_spec(self, role: Role, seed: u64) -> StubModelSpec {
        StubModelSpec {
            role,
            acc_low_complexity: self.acc_low_complexity,
            acc_high_complexity: self.acc_high_complexity,
            complexity_knee: self.complexity_knee,
            confidence_sharpness: self.confidence_sharpness,
            seed,
        }
    }
}

fn default_quality() -> QualityFactor {
    QualityFactor::default()
}

/// The experiment config file. Relative paths resolve against the file's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub weights: ComplexityWeights,
    #[serde(default = "default_quality")]
    pub quality: QualityFactor,
    pub policy: PathBuf,
    pub edge: StubConfig,
    pub cloud: StubConfig,
    pub cost: CostModel,
    pub seed: u64,
    pub mode: Mode,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file and makes its paths absolute.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.policy] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Resolves the policy file and builds a validated [`Experiment`].
    pub fn experiment(&self) -> Result<Experiment, HarnessError> {
        let policy = RoutingPolicy::load(&self.policy)?;
        let exp = Experiment {
            mode: self.mode,
            seed: self.seed,
            weights: self.weights,
            quality: self.quality,
            policy,
            edge: self.edge.into_spec(Role::Edge, self.seed),
            cloud: self.cloud.into_spec(Role::Cloud, self.seed),
            cost: self.cost,
        };
        exp.validate()?;
        Ok(exp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub sample: Sample,
    pub s_c: f64,
}

/// Scores every sample concurrently; output keeps dataset order.
pub fn score_dataset(
    dataset: &Dataset,
    weights: &ComplexityWeights,
    q: QualityFactor,
) -> Result<Vec<ScoredSample>, HarnessError> {
    dataset
        .samples
        .par_iter()
        .map(|s| {
            let score = complexity::score_file(&s.path, weights, q).map_err(|source| {
                HarnessError::Scoring {
                    path: s.path.clone(),
                    source,
                }
            })?;
            Ok(ScoredSample {
                sample: s.clone(),
                s_c: score.s_c,
            })
        })
        .collect()
}

/// One line of `trace.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub key: String,
    pub s_c: f64,
    pub site: Site,
    pub reason: Reason,
    pub label: Label,
    pub truth: Label,
    pub p_defect: f64,
    /// This sample's own latency through every stage it visited.
    pub t_contrib_s: f64,
    pub energy_mwh: f64,
    /// Busy seconds attributed to each tier; scoring counts as edge time.
    pub edge_busy_s: f64,
    pub cloud_busy_s: f64,
    pub defect: Option<DefectReport>,
}

impl TraceRow {
    pub fn correct(&self) -> bool {
        self.label == self.truth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub report: RunReport,
    pub trace: Vec<TraceRow>,
}

impl ExperimentOutcome {
    pub fn defects(&self) -> Vec<(String, DefectReport)> {
        self.trace
            .iter()
            .filter_map(|r| r.defect.clone().map(|d| (r.key.clone(), d)))
            .collect()
    }

    /// Writes `report.json`, `trace.csv` and, when any defect carries a
    /// report, `defects.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let write = |name: &str, bytes: Vec<u8>| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| HarnessError::io(&p, e))
        };
        write("report.json", emit_report(&self.report, ReportFormat::Json))?;
        write("trace.csv", emit_trace(&self.trace))?;
        let defects = self.defects();
        if !defects.is_empty() {
            write("defects.jsonl", emit_defects(&defects))?;
        }
        Ok(())
    }
}

fn evaluate(scored: &ScoredSample, exp: &Experiment) -> Result<TraceRow, HarnessError> {
    let cost = &exp.cost;
    let policy = &exp.policy;
    let sample = &scored.sample;
    let edge_head = DecisionHead::new(0.5, policy.temperature_edge)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let cloud_head = DecisionHead::new(policy.tau_cloud, policy.temperature_cloud)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let head_err = |e: crate::quantkernel::QuantError| HarnessError::Config(e.to_string());

    let t_cpx = if exp.mode == Mode::Hybrid {
        cost.t_cpx_per_image
    } else {
        0.0
    };
    let mut edge_busy = t_cpx;
    let mut cloud_busy = 0.0;

    let edge_run = |busy: &mut f64| {
        let out = stub_predict(&exp.edge, sample, scored.s_c, cost);
        *busy += out.latency_s;
        out
    };

    let (reason, edge_out) = match exp.mode {
        Mode::EdgeOnly => (Reason::EdgeAccept, Some(edge_run(&mut edge_busy))),
        Mode::CloudOnly => (Reason::ComplexityRoute, None),
        Mode::Hybrid => {
            if scored.s_c >= policy.tau_s_complexity {
                let (_, reason) = scheduler::route(scored.s_c, None, policy)?;
                (reason, None)
            } else {
                let out = edge_run(&mut edge_busy);
                let conf = EdgeConfidence::from_logits(out.logits, policy.temperature_edge);
                let (_, reason) = scheduler::route(scored.s_c, Some(&conf), policy)?;
                (reason, Some(out))
            }
        }
    };

    let (label, p_defect, defect) = match reason.site() {
        Site::Edge => {
            let out = edge_out.expect("edge ran for an edge decision");
            let (label, p1) = edge_head.decide(out.logits).map_err(head_err)?;
            (label, p1, None)
        }
        Site::Cloud => {
            let out = stub_predict(&exp.cloud, sample, scored.s_c, cost);
            cloud_busy += out.latency_s;
            let (label, p1) = cloud_head.decide(out.logits).map_err(head_err)?;
            let defect = if label == Label::Defect {
                out.report
            } else {
                None
            };
            if let Some(d) = &defect {
                d.validate()?;
            }
            (label, p1, defect)
        }
    };

    Ok(TraceRow {
        key: sample.key.clone(),
        s_c: scored.s_c,
        site: reason.site(),
        reason,
        label,
        truth: sample.truth,
        p_defect,
        t_contrib_s: edge_busy + cloud_busy,
        energy_mwh: cost.energy_mwh(edge_busy, cloud_busy),
        edge_busy_s: edge_busy,
        cloud_busy_s: cloud_busy,
        defect,
    })
}

/// Runs an experiment over already-scored samples.
pub fn run_scored(
    scored: &[ScoredSample],
    exp: &Experiment,
) -> Result<ExperimentOutcome, HarnessError> {
    exp.validate()?;
    if scored.is_empty() {
        return Err(HarnessError::EmptyDataset(PathBuf::new()));
    }
    let trace = scored
        .par_iter()
        .map(|s| evaluate(s, exp))
        .collect::<Result<Vec<_>, _>>()?;

    let n = trace.len();
    let mut counts = SiteCounts {
        n,
        ..SiteCounts::default()
    };
    let (mut edge_busy, mut cloud_busy) = (0.0, 0.0);
    for row in &trace {
        counts.correct += row.correct() as usize;
        match row.site {
            Site::Edge => counts.edge += 1,
            Site::Cloud => counts.cloud += 1,
        }
        match row.reason {
            Reason::ComplexityRoute => counts.complexity_routed += 1,
            Reason::EdgeAccept => counts.edge_accepted += 1,
            Reason::EdgeReject => counts.edge_rejected += 1,
        }
        edge_busy += row.edge_busy_s;
        cloud_busy += row.cloud_busy_s;
    }

    let t_cpx_total = if exp.mode == Mode::Hybrid {
        n as f64 * exp.cost.t_cpx_per_image
    } else {
        0.0
    };
    // Scoring is part of edge busy time but sits in front of both branches.
    let edge_branch = edge_busy - t_cpx_total;
    let total_time_s = scheduler::latency_total(t_cpx_total, edge_branch.max(0.0), cloud_busy)?;
    let total_energy_mwh = exp.cost.energy_mwh(edge_busy, cloud_busy);
    let energy_per_correct_mwh =
        scheduler::energy_per_correct(total_energy_mwh, counts.correct).ok();

    let report = RunReport {
        accuracy: counts.correct as f64 / n as f64,
        total_time_s,
        avg_time_per_image_s: total_time_s / n as f64,
        cloud_fraction: counts.cloud as f64 / n as f64,
        total_energy_mwh,
        energy_per_correct_mwh,
        counts,
        config: exp.clone(),
    };
    Ok(ExperimentOutcome { report, trace })
}

/// Scores the dataset and runs the experiment.
pub fn run_experiment(
    dataset: &Dataset,
    exp: &Experiment,
) -> Result<ExperimentOutcome, HarnessError> {
    let scored = score_dataset(dataset, &exp.weights, exp.quality)?;
    run_scored(&scored, exp)
}

/// Held-out calibration records produced by running both stubs on every
/// sample.
pub fn heldout_records(
    scored: &[ScoredSample],
    edge: &StubModelSpec,
    cloud: &StubModelSpec,
    cost: &CostModel,
) -> Vec<CalibrationRecord> {
    scored
        .par_iter()
        .map(|s| CalibrationRecord {
            s_c: s.s_c,
            edge_logits: stub_predict(edge, &s.sample, s.s_c, cost).logits,
            cloud_logits: stub_predict(cloud, &s.sample, s.s_c, cost).logits,
            label: s.sample.truth,
        })
        .collect()
}

/// The median score, a natural knee for stubs on this distribution.
pub fn median_score(scored: &[ScoredSample]) -> f64 {
    let mut v: Vec<f64> = scored.iter().map(|s| s.s_c).collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
