//! Discrete-event simulation of device → ingestion → fog → cloud request
//! flows under fog or cloud inference placement.

pub mod event;
pub mod sim;
pub mod topology;
pub mod workload;

pub use event::{EventQueue, SimEvent};
pub use sim::{
    compare_policies, percentile, run_simulation, run_simulation_traced, ComparisonSummary,
    EventKind, LoggedEvent, PlacementPolicy, PolicyComparison, RequestOutcome, SimConfig,
    SimReport, SimSummary,
};
pub use topology::{
    build_topology, transfer_time, Link, LinkConfig, LinkId, Node, NodeConfig, NodeId, Route, Tier,
    Topology, TopologyConfig,
};
pub use workload::{generate_workload, read_workload, write_workload, Request, WORKLOAD_HEADER};
