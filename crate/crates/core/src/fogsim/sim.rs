//! Event loop. Links serialize one message at a time (FIFO) and then add
//! their propagation delay; fog and cloud nodes run one inference at a time
//! (FIFO) with service time `1 / compute_rate`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::event::EventQueue;
use super::topology::{LinkId, NodeId, Route, Tier, Topology};
use super::workload::Request;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    /// Infer at the request's fog node; ship only a result record upstream.
    FogInference,
    /// Forward the full image to the cloud and infer there.
    CloudInference,
}

impl PlacementPolicy {
    pub fn short_name(self) -> &'static str {
        match self {
            PlacementPolicy::FogInference => "fog",
            PlacementPolicy::CloudInference => "cloud",
        }
    }
}

impl fmt::Display for PlacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Size of the classification result sent from fog to cloud.
    pub result_record_bytes: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            result_record_bytes: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Message {
    Payload,
    ResultRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival {
        request: usize,
    },
    TransferComplete {
        request: usize,
        link: LinkId,
        result: bool,
    },
    InferenceComplete {
        request: usize,
        node: NodeId,
    },
}

/// One dispatched event, for causality checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoggedEvent {
    pub time: f64,
    pub seq: u64,
    pub scheduled_at: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestOutcome {
    pub request_id: String,
    pub device_id: String,
    pub fog_id: String,
    pub inference_node: String,
    pub creation_time_s: f64,
    pub completion_time_s: f64,
    pub latency_s: f64,
    pub cloud_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub policy: PlacementPolicy,
    pub seed: u64,
    pub requests: usize,
    pub mean_latency_s: f64,
    pub p50_latency_s: f64,
    pub p95_latency_s: f64,
    pub cloud_bytes: u64,
    pub makespan_s: f64,
    /// Busy fraction of each inference-capable node over the makespan.
    pub utilization: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub summary: SimSummary,
    /// In workload order.
    pub requests: Vec<RequestOutcome>,
}

/// Nearest-rank percentile of a non-empty sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl SimReport {
    pub const CSV_HEADER: &'static str = "request_id,device_id,fog_id,inference_node,creation_time_s,completion_time_s,latency_s,cloud_bytes";

    pub fn write_requests_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.requests {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.request_id,
                r.device_id,
                r.fog_id,
                r.inference_node,
                r.creation_time_s,
                r.completion_time_s,
                r.latency_s,
                r.cloud_bytes
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

struct State<'a> {
    topology: &'a Topology,
    policy: PlacementPolicy,
    config: SimConfig,
    routes: Vec<Route>,
    link_free: Vec<f64>,
    node_free: Vec<f64>,
    node_busy: Vec<f64>,
    completion: Vec<Option<f64>>,
    queue: EventQueue<EventKind>,
}

impl State<'_> {
    fn send(&mut self, request: usize, link: LinkId, bytes: u64, result: bool) {
        let now = self.queue.now();
        let l = self.topology.links[link];
        let start = now.max(self.link_free[link]);
        let done_serializing = start + bytes as f64 / l.bandwidth;
        self.link_free[link] = done_serializing;
        self.queue.schedule(
            done_serializing + l.propagation_delay,
            EventKind::TransferComplete {
                request,
                link,
                result,
            },
        );
    }

    fn infer(&mut self, request: usize, node: NodeId) {
        let now = self.queue.now();
        let service = 1.0 / self.topology.nodes[node].compute_rate;
        let start = now.max(self.node_free[node]);
        self.node_free[node] = start + service;
        self.node_busy[node] += service;
        self.queue.schedule(
            start + service,
            EventKind::InferenceComplete { request, node },
        );
    }

    fn finish(&mut self, request: usize) {
        debug_assert!(
            self.completion[request].is_none(),
            "request completed twice"
        );
        self.completion[request] = Some(self.queue.now());
    }
}

fn validate_workload(topology: &Topology, workload: &[Request]) -> Result<Vec<Route>> {
    if workload.is_empty() {
        return Err(Error::domain("workload has no requests"));
    }
    let mut routes = Vec::with_capacity(workload.len());
    let mut last = f64::NEG_INFINITY;
    for (i, r) in workload.iter().enumerate() {
        let route = topology
            .node_index(&r.device_id)
            .and_then(|d| topology.route(d))
            .ok_or_else(|| {
                Error::config(
                    format!("workload[{i}].device_id"),
                    format!("unknown device {:?}", r.device_id),
                )
            })?;
        if r.payload_bytes == 0 {
            return Err(Error::config(
                format!("workload[{i}].payload_bytes"),
                "payload must be positive",
            ));
        }
        if !r.creation_time.is_finite() || r.creation_time < 0.0 {
            return Err(Error::config(
                format!("workload[{i}].creation_time_s"),
                "creation time must be finite and non-negative",
            ));
        }
        if r.creation_time < last {
            return Err(Error::domain(format!(
                "workload is not time-ordered at request {:?}",
                r.request_id
            )));
        }
        last = r.creation_time;
        routes.push(route);
    }
    Ok(routes)
}

/// Runs the workload under `policy`. The model has no stochastic elements;
/// `seed` is recorded in the report so runs can be traced back to the seed
/// that generated their workload.
pub fn run_simulation(
    topology: &Topology,
    policy: PlacementPolicy,
    workload: &[Request],
    seed: u64,
    config: SimConfig,
) -> Result<SimReport> {
    Ok(run_simulation_traced(topology, policy, workload, seed, config)?.0)
}

/// [`run_simulation`] plus the dispatched event log.
pub fn run_simulation_traced(
    topology: &Topology,
    policy: PlacementPolicy,
    workload: &[Request],
    seed: u64,
    config: SimConfig,
) -> Result<(SimReport, Vec<LoggedEvent>)> {
    let routes = validate_workload(topology, workload)?;
    let mut st = State {
        topology,
        policy,
        config,
        routes,
        link_free: vec![0.0; topology.links.len()],
        node_free: vec![0.0; topology.nodes.len()],
        node_busy: vec![0.0; topology.nodes.len()],
        completion: vec![None; workload.len()],
        queue: EventQueue::new(),
    };
    for (i, r) in workload.iter().enumerate() {
        st.queue
            .schedule(r.creation_time, EventKind::Arrival { request: i });
    }
    let mut log = Vec::new();
    while let Some(ev) = st.queue.pop() {
        log.push(LoggedEvent {
            time: ev.time,
            seq: ev.seq,
            scheduled_at: ev.scheduled_at,
            kind: ev.kind,
        });
        match ev.kind {
            EventKind::Arrival { request } => {
                let link = st.routes[request].device_link;
                st.send(request, link, workload[request].payload_bytes, false);
            }
            EventKind::TransferComplete {
                request,
                link,
                result,
            } => {
                let node = topology.links[link].to;
                let message = if result {
                    Message::ResultRecord
                } else {
                    Message::Payload
                };
                let route = st.routes[request];
                match (topology.nodes[node].tier, message, st.policy) {
                    (Tier::Ingestion, Message::Payload, _) => st.send(
                        request,
                        route.ingestion_link,
                        workload[request].payload_bytes,
                        false,
                    ),
                    (Tier::Fog, Message::Payload, PlacementPolicy::FogInference) => {
                        st.infer(request, node)
                    }
                    (Tier::Fog, Message::Payload, PlacementPolicy::CloudInference) => st.send(
                        request,
                        route.fog_link,
                        workload[request].payload_bytes,
                        false,
                    ),
                    (Tier::Cloud, Message::Payload, _) => st.infer(request, node),
                    (Tier::Cloud, Message::ResultRecord, _) => st.finish(request),
                    (tier, msg, _) => unreachable!("{msg:?} delivered to {tier} node"),
                }
            }
            EventKind::InferenceComplete { request, node } => {
                if topology.nodes[node].tier == Tier::Fog {
                    let link = st.routes[request].fog_link;
                    let bytes = st.config.result_record_bytes;
                    st.send(request, link, bytes, true);
                } else {
                    st.finish(request);
                }
            }
        }
    }

    let cloud_bytes_per = |r: &Request| match policy {
        PlacementPolicy::FogInference => config.result_record_bytes,
        PlacementPolicy::CloudInference => r.payload_bytes,
    };
    let mut outcomes = Vec::with_capacity(workload.len());
    for (i, r) in workload.iter().enumerate() {
        let completion = st.completion[i].expect("every request completes once the queue drains");
        let route = st.routes[i];
        let inference = match policy {
            PlacementPolicy::FogInference => route.fog,
            PlacementPolicy::CloudInference => route.cloud,
        };
        outcomes.push(RequestOutcome {
            request_id: r.request_id.clone(),
            device_id: r.device_id.clone(),
            fog_id: topology.nodes[route.fog].id.clone(),
            inference_node: topology.nodes[inference].id.clone(),
            creation_time_s: r.creation_time,
            completion_time_s: completion,
            latency_s: completion - r.creation_time,
            cloud_bytes: cloud_bytes_per(r),
        });
    }
    let mut latencies: Vec<f64> = outcomes.iter().map(|o| o.latency_s).collect();
    latencies.sort_by(f64::total_cmp);
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let first = workload
        .iter()
        .map(|r| r.creation_time)
        .fold(f64::INFINITY, f64::min);
    let last = outcomes
        .iter()
        .map(|o| o.completion_time_s)
        .fold(f64::NEG_INFINITY, f64::max);
    let makespan = last - first;
    let utilization = topology
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.tier, Tier::Fog | Tier::Cloud))
        .map(|(i, n)| {
            let u = if makespan > 0.0 {
                st.node_busy[i] / makespan
            } else {
                0.0
            };
            (n.id.clone(), u)
        })
        .collect();
    let summary = SimSummary {
        policy,
        seed,
        requests: outcomes.len(),
        mean_latency_s: mean,
        p50_latency_s: percentile(&latencies, 0.50),
        p95_latency_s: percentile(&latencies, 0.95),
        cloud_bytes: outcomes.iter().map(|o| o.cloud_bytes).sum(),
        makespan_s: makespan,
        utilization,
    };
    Ok((
        SimReport {
            summary,
            requests: outcomes,
        },
        log,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyComparison {
    pub fog: SimReport,
    pub cloud: SimReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub fog: SimSummary,
    pub cloud: SimSummary,
    /// `cloud - fog`; positive means fog placement is faster.
    pub mean_latency_delta_s: f64,
    pub p95_latency_delta_s: f64,
    /// `cloud - fog` backhaul bytes.
    pub cloud_bytes_delta: i128,
}

impl PolicyComparison {
    pub fn summary(&self) -> ComparisonSummary {
        ComparisonSummary {
            fog: self.fog.summary.clone(),
            cloud: self.cloud.summary.clone(),
            mean_latency_delta_s: self.mean_latency_delta(),
            p95_latency_delta_s: self.cloud.summary.p95_latency_s - self.fog.summary.p95_latency_s,
            cloud_bytes_delta: self.cloud_bytes_delta(),
        }
    }

    pub fn mean_latency_delta(&self) -> f64 {
        self.cloud.summary.mean_latency_s - self.fog.summary.mean_latency_s
    }

    pub fn cloud_bytes_delta(&self) -> i128 {
        i128::from(self.cloud.summary.cloud_bytes) - i128::from(self.fog.summary.cloud_bytes)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("comparison serializes")
    }
}

/// Both policies on the same workload.
pub fn compare_policies(
    topology: &Topology,
    workload: &[Request],
    seed: u64,
    config: SimConfig,
) -> Result<PolicyComparison> {
    Ok(PolicyComparison {
        fog: run_simulation(
            topology,
            PlacementPolicy::FogInference,
            workload,
            seed,
            config,
        )?,
        cloud: run_simulation(
            topology,
            PlacementPolicy::CloudInference,
            workload,
            seed,
            config,
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fogsim::topology::{build_topology, transfer_time, TopologyConfig};

    fn topology(
        fog_cloud_delay: f64,
        fog_cloud_bw: f64,
        fog_rate: f64,
        cloud_rate: f64,
    ) -> Topology {
        let json = format!(
            r#"{{
              "nodes": [
                {{"id": "d1", "tier": "device"}},
                {{"id": "in", "tier": "ingestion"}},
                {{"id": "fog", "tier": "fog", "compute_rate": {fog_rate}}},
                {{"id": "cloud", "tier": "cloud", "compute_rate": {cloud_rate}}}
              ],
              "links": [
                {{"from": "d1", "to": "in", "delay_s": 0.001, "bandwidth_Bps": 1e7}},
                {{"from": "in", "to": "fog", "delay_s": 0.002, "bandwidth_Bps": 1e8}},
                {{"from": "fog", "to": "cloud", "delay_s": {fog_cloud_delay}, "bandwidth_Bps": {fog_cloud_bw}}}
              ]
            }}"#
        );
        build_topology(&TopologyConfig::from_json(&json).unwrap()).unwrap()
    }

    fn request(id: &str, t: f64, bytes: u64) -> Request {
        Request {
            request_id: id.into(),
            device_id: "d1".into(),
            creation_time: t,
            payload_bytes: bytes,
        }
    }

    #[test]
    fn single_request_matches_hand_sum() {
        let topo = topology(0.05, 1e6, 20.0, 50.0);
        let req = [request("r", 1.0, 500_000)];
        let report = run_simulation(
            &topo,
            PlacementPolicy::FogInference,
            &req,
            0,
            SimConfig::default(),
        )
        .unwrap();
        let l = &topo.links;
        let expected = transfer_time(500_000, &l[0])
            + transfer_time(500_000, &l[1])
            + 1.0 / 20.0
            + transfer_time(256, &l[2]);
        assert!((report.requests[0].latency_s - expected).abs() < 1e-12);
        assert_eq!(report.summary.cloud_bytes, 256);

        let cloud = run_simulation(
            &topo,
            PlacementPolicy::CloudInference,
            &req,
            0,
            SimConfig::default(),
        )
        .unwrap();
        let expected = transfer_time(500_000, &l[0])
            + transfer_time(500_000, &l[1])
            + transfer_time(500_000, &l[2])
            + 1.0 / 50.0;
        assert!((cloud.requests[0].latency_s - expected).abs() < 1e-12);
        assert_eq!(cloud.summary.cloud_bytes, 500_000);
    }

    #[test]
    fn empty_and_unknown_workloads() {
        let topo = topology(0.05, 1e6, 20.0, 50.0);
        assert!(matches!(
            run_simulation(
                &topo,
                PlacementPolicy::FogInference,
                &[],
                0,
                SimConfig::default()
            ),
            Err(Error::Domain(_))
        ));
        let mut r = request("r", 0.0, 10);
        r.device_id = "ghost".into();
        assert!(matches!(
            run_simulation(
                &topo,
                PlacementPolicy::FogInference,
                &[r],
                0,
                SimConfig::default()
            ),
            Err(Error::Config { .. })
        ));
        let unordered = [request("a", 1.0, 10), request("b", 0.5, 10)];
        assert!(run_simulation(
            &topo,
            PlacementPolicy::FogInference,
            &unordered,
            0,
            SimConfig::default()
        )
        .is_err());
    }

    #[test]
    fn fifo_queueing_at_fog() {
        // Two simultaneous requests: the second waits one service time.
        let topo = topology(0.0, 1e12, 10.0, 10.0);
        let reqs = [request("a", 0.0, 1000), request("b", 0.0, 1000)];
        let rep = run_simulation(
            &topo,
            PlacementPolicy::FogInference,
            &reqs,
            0,
            SimConfig::default(),
        )
        .unwrap();
        let a = rep.requests[0].completion_time_s;
        let b = rep.requests[1].completion_time_s;
        assert!(b > a);
        assert!((rep.summary.utilization["fog"] * rep.summary.makespan_s - 0.2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_symmetry() {
        let topo = topology(0.0, 1e30, 25.0, 25.0);
        let reqs = [request("a", 0.0, 40_000), request("b", 0.3, 80_000)];
        let cmp = compare_policies(&topo, &reqs, 0, SimConfig::default()).unwrap();
        for (f, c) in cmp.fog.requests.iter().zip(&cmp.cloud.requests) {
            assert!((f.latency_s - c.latency_s).abs() < 1e-12);
        }
    }

    #[test]
    fn causality_and_conservation() {
        let topo = topology(0.02, 2e6, 15.0, 15.0);
        let reqs: Vec<Request> = (0..30)
            .map(|i| request(&format!("r{i}"), i as f64 * 0.01, 100_000 + i * 1000))
            .collect();
        for policy in [
            PlacementPolicy::FogInference,
            PlacementPolicy::CloudInference,
        ] {
            let (rep, log) =
                run_simulation_traced(&topo, policy, &reqs, 0, SimConfig::default()).unwrap();
            for pair in log.windows(2) {
                assert!(pair[1].time >= pair[0].time);
            }
            assert!(log.iter().all(|e| e.time >= e.scheduled_at));
            let ids: Vec<&str> = rep.requests.iter().map(|r| r.request_id.as_str()).collect();
            let expected: Vec<String> = (0..30).map(|i| format!("r{i}")).collect();
            assert_eq!(ids, expected.iter().map(String::as_str).collect::<Vec<_>>());
            assert!(rep.requests.iter().all(|r| r.latency_s > 0.0));
            let total: u64 = rep.requests.iter().map(|r| r.cloud_bytes).sum();
            assert_eq!(total, rep.summary.cloud_bytes);
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }
}
