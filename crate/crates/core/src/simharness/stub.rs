//! Seeded stand-ins for the edge detector and the cloud model.
//!
//! Every draw for a sample comes from a ChaCha stream whose key is a SHA-256
//! digest of `(seed, role, sample key)`, so results do not depend on
//! evaluation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Sample;
use super::HarnessError;
use crate::quantkernel::Label;
use crate::scheduler::{CostModel, DefectReport};

/// Largest stub bounding-box side.
pub const MAX_BOX_SIDE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Edge,
    Cloud,
}

impl Role {
    fn tag(self) -> &'static [u8] {
        match self {
            Role::Edge => b"edge",
            Role::Cloud => b"cloud",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubModelSpec {
    pub role: Role,
    /// Accuracy for samples with `s_c` below the knee.
    pub acc_low_complexity: f64,
    /// Accuracy at or above the knee.
    pub acc_high_complexity: f64,
    pub complexity_knee: f64,
    /// Scales the logit magnitude; larger values give more confident outputs.
    pub confidence_sharpness: f64,
    pub seed: u64,
}

impl StubModelSpec {
    /// A stub whose accuracy ignores complexity.
    pub fn flat(role: Role, accuracy: f64, sharpness: f64, seed: u64) -> Self {
        Self {
            role,
            acc_low_complexity: accuracy,
            acc_high_complexity: accuracy,
            complexity_knee: 0.0,
            confidence_sharpness: sharpness,
            seed,
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), HarnessError> {
        for (field, v) in [
            ("acc_low_complexity", self.acc_low_complexity),
            ("acc_high_complexity", self.acc_high_complexity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(HarnessError::Config(format!(
                    "{name}.{field} must lie in [0, 1], got {v}"
                )));
            }
        }
        if !(self.confidence_sharpness > 0.0 && self.confidence_sharpness.is_finite()) {
            return Err(HarnessError::Config(format!(
                "{name}.confidence_sharpness must be positive, got {}",
                self.confidence_sharpness
            )));
        }
        if self.complexity_knee.is_nan() {
            return Err(HarnessError::Config(format!(
                "{name}.complexity_knee is NaN"
            )));
        }
        Ok(())
    }

    pub fn accuracy_at(&self, s_c: f64) -> f64 {
        if s_c < self.complexity_knee {
            self.acc_low_complexity
        } else {
            self.acc_high_complexity
        }
    }

    fn stream(&self, key: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.role.tag());
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StubOutput {
    pub logits: (f64, f64),
    /// The label the stub leans toward.
    pub predicted: Label,
    pub latency_s: f64,
    pub report: Option<DefectReport>,
}

/// One synthetic inference.
///
/// The stub is right with probability `accuracy_at(s_c)`. Its logits are
/// `±sharpness·u` for a per-sample `u ∈ [0, 1)`, which puts the top-class
/// probability at `0.5 + 0.5·tanh(sharpness·u)`.
pub fn stub_predict(
    spec: &StubModelSpec,
    sample: &Sample,
    s_c: f64,
    cost: &CostModel,
) -> StubOutput {
    let mut rng = spec.stream(&sample.key);
    let hit = rng.random::<f64>() < spec.accuracy_at(s_c);
    let u: f64 = rng.random();
    let predicted = if hit {
        sample.truth
    } else {
        sample.truth.flipped()
    };
    let d = spec.confidence_sharpness * u;
    let logits = match predicted {
        Label::Defect => (-d, d),
        Label::Good => (d, -d),
    };
    let latency_s = match spec.role {
        Role::Edge => cost.t_edge_per_image,
        Role::Cloud => cost.t_cloud_per_image,
    };
    let report = (spec.role == Role::Cloud && predicted == Label::Defect).then(|| {
        let w = rng.random::<f64>() * MAX_BOX_SIDE;
        let h = rng.random::<f64>() * MAX_BOX_SIDE;
        let x = rng.random::<f64>() * (1.0 - w);
        let y = rng.random::<f64>() * (1.0 - h);
        DefectReport {
            bboxes: vec![[x, y, w, h]],
            desc: "synthetic defect region".to_string(),
        }
    });
    StubOutput {
        logits,
        predicted,
        latency_s,
        report,
    }
}
