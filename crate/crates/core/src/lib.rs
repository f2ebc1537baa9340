//! Trust evaluation as a service over an MCP-style tool protocol.
//!
//! The pieces, bottom up:
//!
//! * [`registry`]: device registry and time-indexed performance history.
//! * [`parser`] and [`interpreter`]: natural-language task description to
//!   [`TaskRequirements`].
//! * [`engine`]: need-driven historical and resource assessments and their
//!   semantic rendering.
//! * [`device`]: the device-side agent, a virtual-time executor behind a tool
//!   server.
//! * [`service`]: the central trust service, execution monitor and reclaim.
//! * [`owner`]: the task owner's description, selection, split and assignment
//!   logic.
//! * [`deployment`]: all of the above started together on one network.

pub mod clock;
pub mod deployment;
pub mod device;
pub mod engine;
pub mod interpreter;
pub mod owner;
pub mod parser;
pub mod registry;
pub mod requirements;
pub mod service;
pub mod units;

pub use clock::{Clock, VirtualClock, WallClock};
pub use deployment::Deployment;
pub use device::{DeviceAgent, DeviceError, DeviceProfile, DeviceServer, FaultEvent, SubtaskAssignment};
pub use engine::{
    HistoricalAssessment, ResourceAssessment, ResourceSnapshot, TrustConfig, TrustEntry, TrustReport,
};
pub use interpreter::{ExternalInterpreter, HttpInterpreter, Interpretation, InterpretSource};
pub use owner::{Candidate, Qualifier, SelectionDecision, TaskOwner, TaskSpec};
pub use parser::{KeywordConfig, ParseError, RequirementParser, TaskDescription};
pub use registry::{DeviceRecord, HistoryQuery, Outcome, PerformanceRecord, Registry, RegistryError};
pub use requirements::{CpuClass, HistoryDimension, ResourceKind, ResourceRequirement, TaskRequirements};
pub use service::{Dispatched, MonitorEvent, MonitorPolicy, ServiceConfig, TrustService, Verdict};
