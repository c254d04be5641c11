//! Distributed Nash equilibrium seeking for two-subnetwork zero-sum games
//! with accelerated mirror-descent saddle flows, and a hybrid restarted
//! variant with coordinated timers.

pub mod baseline;
pub mod disturbance;
pub mod error;
pub mod flow;
pub mod game;
pub mod graph;
pub mod harness;
pub mod hybrid;
pub mod integrator;
pub mod metrics;
pub mod mirror;
pub mod record;
pub mod state;

pub use disturbance::{Disturbance, DisturbanceKind, DisturbanceSpec};
pub use error::{Error, Result};
pub use flow::{FlowParams, FlowState, RecordOptions};
pub use game::{CostOracle, CouplingBlock, GameSpec, SaddleReference};
pub use graph::{CrossEdgeSet, NetworkTopology, Subnetwork, SubnetworkGraph};
pub use harness::{Algorithm, Experiment, ExperimentConfig, RunOutcome, RunSummary};
pub use hybrid::{BoundarySelection, HybridState, TimerParams};
pub use integrator::Scheme;
pub use metrics::{LyapunovSample, RateFit, ReferenceOptions};
pub use mirror::{GeneratingFunction, MirrorStack};
pub use record::{Sample, TrajectoryRecord};
pub use state::SaddleState;
