//! Mock quantum device: an in-process replica of the upstream job API and
//! the vendor plugin that talks to it.

mod device;
pub mod http;
pub mod schema;
mod vendor;

pub use device::{
    default_calibration_metrics, qpu_time_ms, DeviceConfig, FaultMode, MockCalibration,
    MockDevice, MockJob, RecordedRequest, SubmitError, DEFAULT_T_SHOT_MS,
};
pub use schema::SubmissionPayload;
pub use vendor::{MockVendor, PLUGIN_NAME};
