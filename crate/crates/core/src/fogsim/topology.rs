use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Device,
    Ingestion,
    Fog,
    Cloud,
}

impl Tier {
    /// Tier a node of this tier forwards to.
    fn upstream(self) -> Option<Tier> {
        match self {
            Tier::Device => Some(Tier::Ingestion),
            Tier::Ingestion => Some(Tier::Fog),
            Tier::Fog => Some(Tier::Cloud),
            Tier::Cloud => None,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tier::Device => "device",
            Tier::Ingestion => "ingestion",
            Tier::Fog => "fog",
            Tier::Cloud => "cloud",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: String,
    pub tier: Tier,
    /// Images per second; only fog and cloud nodes run inference.
    #[serde(default)]
    pub compute_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub from: String,
    pub to: String,
    pub delay_s: f64,
    #[serde(rename = "bandwidth_Bps")]
    pub bandwidth_bps: f64,
}

/// On-disk topology description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeConfig>,
    pub links: Vec<LinkConfig>,
}

impl TopologyConfig {
    /// Parses JSON; errors carry the JSON path of the offending value.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let location = if path == "." {
                "$".to_string()
            } else {
                format!("$.{path}")
            };
            Error::config(location, e.inner().to_string())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }
}

pub type NodeId = usize;
pub type LinkId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub tier: Tier,
    pub compute_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub propagation_delay: f64,
    pub bandwidth: f64,
}

/// Store-and-forward time over an idle link.
pub fn transfer_time(payload_bytes: u64, link: &Link) -> f64 {
    link.propagation_delay + payload_bytes as f64 / link.bandwidth
}

/// Validated topology with one resolved next hop per non-cloud node.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    next_hop: Vec<Option<LinkId>>,
    index: HashMap<String, NodeId>,
    cloud: NodeId,
}

/// Node indices and links of one device's path to the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub device: NodeId,
    pub ingestion: NodeId,
    pub fog: NodeId,
    pub cloud: NodeId,
    pub device_link: LinkId,
    pub ingestion_link: LinkId,
    pub fog_link: LinkId,
}

pub fn build_topology(config: &TopologyConfig) -> Result<Topology> {
    let mut index = HashMap::new();
    let mut nodes = Vec::with_capacity(config.nodes.len());
    for (i, n) in config.nodes.iter().enumerate() {
        if n.id.is_empty() {
            return Err(Error::config(
                format!("$.nodes[{i}].id"),
                "node id is empty",
            ));
        }
        if index.insert(n.id.clone(), i).is_some() {
            return Err(Error::config(
                format!("$.nodes[{i}].id"),
                format!("duplicate node id {:?}", n.id),
            ));
        }
        let infers = matches!(n.tier, Tier::Fog | Tier::Cloud);
        if !n.compute_rate.is_finite() || n.compute_rate < 0.0 || (infers && n.compute_rate == 0.0)
        {
            return Err(Error::config(
                format!("$.nodes[{i}].compute_rate"),
                format!(
                    "{} node {:?} needs a {} finite compute rate, got {}",
                    n.tier,
                    n.id,
                    if infers { "positive" } else { "non-negative" },
                    n.compute_rate
                ),
            ));
        }
        nodes.push(Node {
            id: n.id.clone(),
            tier: n.tier,
            compute_rate: n.compute_rate,
        });
    }
    let clouds: Vec<NodeId> = (0..nodes.len())
        .filter(|&i| nodes[i].tier == Tier::Cloud)
        .collect();
    if clouds.len() != 1 {
        return Err(Error::config(
            "$.nodes",
            format!("exactly one cloud node is required, found {}", clouds.len()),
        ));
    }
    let cloud = clouds[0];

    let mut links = Vec::with_capacity(config.links.len());
    let mut next_hop: Vec<Option<LinkId>> = vec![None; nodes.len()];
    for (i, l) in config.links.iter().enumerate() {
        let lookup = |id: &str, field: &str| {
            index.get(id).copied().ok_or_else(|| {
                Error::config(
                    format!("$.links[{i}].{field}"),
                    format!("unknown node id {id:?}"),
                )
            })
        };
        let from = lookup(&l.from, "from")?;
        let to = lookup(&l.to, "to")?;
        if !l.delay_s.is_finite() || l.delay_s < 0.0 {
            return Err(Error::config(
                format!("$.links[{i}].delay_s"),
                format!("delay must be finite and non-negative, got {}", l.delay_s),
            ));
        }
        if !l.bandwidth_bps.is_finite() || l.bandwidth_bps <= 0.0 {
            return Err(Error::config(
                format!("$.links[{i}].bandwidth_Bps"),
                format!("bandwidth must be positive, got {}", l.bandwidth_bps),
            ));
        }
        let (ft, tt) = (nodes[from].tier, nodes[to].tier);
        if ft.upstream() != Some(tt) {
            return Err(Error::config(
                format!("$.links[{i}]"),
                format!("link {ft} {:?} -> {tt} {:?} does not follow device -> ingestion -> fog -> cloud", l.from, l.to),
            ));
        }
        if next_hop[from].is_some() {
            return Err(Error::config(
                format!("$.links[{i}].from"),
                format!("{ft} {:?} already routes to another {tt} node", l.from),
            ));
        }
        next_hop[from] = Some(links.len());
        links.push(Link {
            from,
            to,
            propagation_delay: l.delay_s,
            bandwidth: l.bandwidth_bps,
        });
    }
    for (i, n) in nodes.iter().enumerate() {
        if n.tier != Tier::Cloud && next_hop[i].is_none() {
            return Err(Error::config(
                format!("$.nodes[{i}]"),
                format!(
                    "{} {:?} has no route to a {} node",
                    n.tier,
                    n.id,
                    n.tier.upstream().expect("non-cloud tier")
                ),
            ));
        }
    }
    Ok(Topology {
        nodes,
        links,
        next_hop,
        index,
        cloud,
    })
}

impl Topology {
    pub fn node_index(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    pub fn cloud(&self) -> NodeId {
        self.cloud
    }

    /// Number of resolved next hops (one per non-cloud node).
    pub fn routes_resolved(&self) -> usize {
        self.next_hop.iter().flatten().count()
    }

    pub fn next_hop(&self, node: NodeId) -> Option<LinkId> {
        self.next_hop.get(node).copied().flatten()
    }

    pub fn route(&self, device: NodeId) -> Option<Route> {
        if self.nodes.get(device)?.tier != Tier::Device {
            return None;
        }
        let device_link = self.next_hop(device)?;
        let ingestion = self.links[device_link].to;
        let ingestion_link = self.next_hop(ingestion)?;
        let fog = self.links[ingestion_link].to;
        let fog_link = self.next_hop(fog)?;
        Some(Route {
            device,
            ingestion,
            fog,
            cloud: self.links[fog_link].to,
            device_link,
            ingestion_link,
            fog_link,
        })
    }

    pub fn devices(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].tier == Tier::Device)
            .collect()
    }

    pub fn node_ids_by_tier(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for n in &self.nodes {
            out.entry(n.tier.to_string())
                .or_default()
                .push(n.id.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_json() -> &'static str {
        r#"{
          "nodes": [
            {"id": "d1", "tier": "device"},
            {"id": "d2", "tier": "device"},
            {"id": "in", "tier": "ingestion"},
            {"id": "fog", "tier": "fog", "compute_rate": 20},
            {"id": "cloud", "tier": "cloud", "compute_rate": 50}
          ],
          "links": [
            {"from": "d1", "to": "in", "delay_s": 0.001, "bandwidth_Bps": 1e7},
            {"from": "d2", "to": "in", "delay_s": 0.001, "bandwidth_Bps": 1e7},
            {"from": "in", "to": "fog", "delay_s": 0.002, "bandwidth_Bps": 1e8},
            {"from": "fog", "to": "cloud", "delay_s": 0.05, "bandwidth_Bps": 1e6}
          ]
        }"#
    }

    fn location(err: Error) -> String {
        match err {
            Error::Config { location, .. } => location,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_topology_resolves() {
        let t = build_topology(&TopologyConfig::from_json(minimal_json()).unwrap()).unwrap();
        assert_eq!(t.routes_resolved(), 4);
        let r = t.route(t.node_index("d2").unwrap()).unwrap();
        assert_eq!(t.nodes[r.fog].id, "fog");
        assert_eq!(r.cloud, t.cloud());
    }

    #[test]
    fn dangling_route() {
        let text = minimal_json().replace(
            r#""from": "d2", "to": "in""#,
            r#""from": "d2", "to": "in9""#,
        );
        let err = build_topology(&TopologyConfig::from_json(&text).unwrap()).unwrap_err();
        assert_eq!(location(err), "$.links[1].to");
    }

    #[test]
    fn two_clouds() {
        let text = minimal_json().replace(
            r#"{"id": "d2", "tier": "device"}"#,
            r#"{"id": "d2", "tier": "cloud", "compute_rate": 1}"#,
        );
        let err = build_topology(&TopologyConfig::from_json(&text).unwrap()).unwrap_err();
        assert_eq!(location(err), "$.nodes");
    }

    #[test]
    fn duplicate_id_and_zero_bandwidth() {
        let text = minimal_json().replace(r#""id": "d2""#, r#""id": "d1""#);
        let err = build_topology(&TopologyConfig::from_json(&text).unwrap()).unwrap_err();
        assert_eq!(location(err), "$.nodes[1].id");

        let text = minimal_json().replace("1e8", "0");
        let err = build_topology(&TopologyConfig::from_json(&text).unwrap()).unwrap_err();
        assert_eq!(location(err), "$.links[2].bandwidth_Bps");
    }

    #[test]
    fn missing_route_and_wrong_tier() {
        let text = minimal_json().replace(
            r#"{"from": "d2", "to": "in", "delay_s": 0.001, "bandwidth_Bps": 1e7},"#,
            "",
        );
        let err = build_topology(&TopologyConfig::from_json(&text).unwrap()).unwrap_err();
        assert_eq!(location(err), "$.nodes[1]");

        let text = minimal_json().replace(
            r#""from": "d2", "to": "in""#,
            r#""from": "d2", "to": "fog""#,
        );
        let err = build_topology(&TopologyConfig::from_json(&text).unwrap()).unwrap_err();
        assert_eq!(location(err), "$.links[1]");
    }

    #[test]
    fn parse_errors_carry_json_path() {
        let text = minimal_json().replace(r#""tier": "fog""#, r#""tier": "edge""#);
        let err = TopologyConfig::from_json(&text).unwrap_err();
        assert_eq!(location(err), "$.nodes[3].tier");
    }

    #[test]
    fn transfer_time_cases() {
        let link = Link {
            from: 0,
            to: 1,
            propagation_delay: 0.01,
            bandwidth: 1e7,
        };
        assert!((transfer_time(1_000_000, &link) - 0.11).abs() < 1e-12);
        let instant = Link {
            propagation_delay: 0.0,
            ..link
        };
        assert_eq!(transfer_time(5_000, &instant), 5_000.0 / 1e7);
        let single = transfer_time(4_000, &link) - link.propagation_delay;
        let double = transfer_time(8_000, &link) - link.propagation_delay;
        assert!((double - 2.0 * single).abs() < 1e-15);
    }
}
