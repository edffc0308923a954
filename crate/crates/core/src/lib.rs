//! Digital twin of a multi-span WDM optical line.
//!
//! The crate simulates a ground-truth plant and its telemetry, recovers the
//! plant's physical parameters from longitudinal power monitoring and
//! amplifier/OSA telemetry, predicts quality of transmission with a GN-model
//! engine and drives a timed, operator-gated provisioning workflow.

// `!(x > 0.0)` is the NaN-rejecting form used in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod calib;
pub mod dlm;
pub mod error;
pub mod gn;
pub mod line;
pub mod plant;
pub mod provisioner;
pub mod qot;
pub(crate) mod serde_float;
pub mod spectral;

pub use error::{Error, Result};

/// The guide's chapters, compiled as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/plant.md")]
    mod plant {}
    #[doc = include_str!("../../../book/src/qot.md")]
    mod qot {}
    #[doc = include_str!("../../../book/src/dlm.md")]
    mod dlm {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/provisioning.md")]
    mod provisioning {}
}
