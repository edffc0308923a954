//! Semi-automatic provisioning workflow.

pub mod device;
pub mod pipeline;
pub mod run;
pub mod state;
pub mod store;
pub mod sweep;

pub use device::{Datastore, DeviceEndpoint, DeviceKind, DeviceSet};
pub use pipeline::{build_models, CalibInputs, DlmAcquisition, Models};
pub use run::{
    run_provisioning, AutoDecision, ChannelDecision, Decision, DecisionSource, NoDecision, ProvisioningRun, RunConfig,
    RunOutcome, RunOutputs,
};
pub use state::{is_legal, Branch, DecisionKind, Event, Machine, RunState};
pub use store::{AuditFinding, BlobKind, HybridStore};
pub use sweep::{configure_transparency, power_sweep, stability_run, SweepRange, BOOSTER_SWEEP};
