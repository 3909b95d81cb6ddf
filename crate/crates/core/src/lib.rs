//! Scene-aware edge-cloud inspection routing.
//!
//! The crate scores how visually complex an inspection image is, uses that
//! score together with a calibrated edge-confidence gate to decide whether
//! the sample is finalized by a cheap edge model or escalated to an
//! expensive cloud model, and accounts for the resulting runtime and energy.
//!
//! * [`imgproc`]: grayscale loading and canonical 192×192 resizing
//! * [`codec`]: the JPEG-style compression cycle behind the residual metric
//! * [`complexity`]: the five scene statistics and the weighted score
//! * [`quantkernel`]: NF4 quantization, LoRA deltas, masked NLL, decision head
//! * [`calibration`]: temperature fitting and threshold selection
//! * [`scheduler`]: routing rules and the latency/energy model
//! * [`simharness`]: datasets, seeded classifier stubs and experiments
//!
//! ```
//! use saec::complexity::{complexity_score, ComplexityWeights};
//! use saec::codec::QualityFactor;
//! use saec::imgproc::GrayImage;
//!
//! let flat = GrayImage::filled(64, 48, 128).unwrap();
//! let score = complexity_score(&flat, &ComplexityWeights::default(), QualityFactor::default()).unwrap();
//! assert!(score.s_c.abs() < 1e-6);
//! ```

pub mod calibration;
pub mod codec;
pub mod complexity;
pub mod imgproc;
pub mod quantkernel;
pub mod scheduler;
pub mod simharness;

pub use calibration::{calibrate_policy, fit_temperature, percentile_threshold, RoutingPolicy};
pub use codec::QualityFactor;
pub use complexity::{complexity_score, ComplexityFeatures, ComplexityScore, ComplexityWeights};
pub use imgproc::{load_grayscale, resize_to_canvas, GrayImage, CANVAS_SIDE};
pub use quantkernel::{Codebook, DecisionHead, Label, LoraAdapter, Matrix, QuantizedTensor};
pub use scheduler::{CostModel, Decision, DefectReport, EdgeConfidence, Reason, Site};
pub use simharness::{Experiment, Mode, RunReport, StubModelSpec};
