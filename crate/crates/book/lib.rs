//! Compiles and runs every Rust listing in the guide under `book/src`.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../book/src/complexity.md")]
pub mod complexity {}

#[doc = include_str!("../../book/src/codec.md")]
pub mod codec {}

#[doc = include_str!("../../book/src/quantization.md")]
pub mod quantization {}

#[doc = include_str!("../../book/src/calibration.md")]
pub mod calibration {}

#[doc = include_str!("../../book/src/scheduling.md")]
pub mod scheduling {}

#[doc = include_str!("../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
