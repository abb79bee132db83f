//! Deterministic discrete-event simulator of store-and-forward networks
//! carrying group-keyed or session-keyed traffic.

pub mod adversary;
pub mod config;
pub mod engine;
pub mod eventlog;
pub mod metrics;
pub mod path;
pub mod plan;

pub use config::{ConfigError, ScenarioConfig};
pub use engine::{run, RunOutput, Scenario};
pub use eventlog::{Event, EventLog};
pub use metrics::{FlowMetrics, MetricsReport, Totals};
pub use plan::{Contact, ContactPlan, PlanError, Profile, Rate, RoutingTable};
