//! Deterministic fixed-step closed loop: plant, controller, both channels and
//! both latest-timestamp buffers.

mod engine;
mod reference;
mod scenario;
mod trace;

pub use engine::{control_selection, run_scenario, Selection};
pub(crate) use engine::{select_from_plan, ControlAgent};
pub use reference::{reference_signal, ReferenceSpec};
pub use scenario::{ControllerSpec, ControllerTrigger, ScenarioConfig};
pub use trace::{read_trace_csv, write_trace_csv, JointSample, RunResult, TraceRecord, TRACE_CSV_VERSION};
